"""Shared fixtures and independent reference implementations used as test oracles."""

import math

import numpy as np
import pytest

from cmplan.kinematics import ArmModel


def fk_oracle(lengths, q):
    """End-effector pose by chaining 3x3 homogeneous transforms link by link."""
    T = np.eye(3)
    for length, angle in zip(lengths, q):
        c, s = math.cos(angle), math.sin(angle)
        T = T @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        T = T @ np.array([[1.0, 0.0, length], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return T[0, 2], T[1, 2], math.atan2(T[1, 0], T[0, 0])


def pose_matrix(x, y, theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, x], [s, c, y], [0.0, 0.0, 1.0]])


def displacement_oracle(pose, offset, target):
    """inv(T_target) @ T_pose @ T_offset, read back as (dx, dy, dtheta)."""
    M = np.linalg.inv(pose_matrix(*target)) @ pose_matrix(*pose) @ pose_matrix(*offset)
    return np.array([M[0, 2], M[1, 2], math.atan2(M[1, 0], M[0, 0])])


def central_difference(fn, q, h=1e-6):
    q = np.asarray(q, dtype=float)
    cols = []
    for i in range(q.size):
        e = np.zeros_like(q)
        e[i] = h
        cols.append((np.asarray(fn(q + e)) - np.asarray(fn(q - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def dense_capsule_clearance(arm, q, circles, per_link=200):
    """Clearance from densely sampled points along each link (no segment geometry)."""
    angles = np.cumsum(q)
    base = np.zeros(2)
    best = math.inf
    for length, a in zip(arm.link_lengths, angles):
        tip = base + length * np.array([math.cos(a), math.sin(a)])
        t = np.linspace(0.0, 1.0, per_link)[:, None]
        pts = base + t * (tip - base)
        for cx, cy, r in circles:
            best = min(best, float(np.min(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)) - r))
        base = tip
    return best - arm.link_radius


@pytest.fixture
def two_link():
    return ArmModel([1.0, 1.0], [[-math.pi, math.pi]] * 2)


@pytest.fixture
def seven_link():
    return ArmModel.uniform(7, 0.3, link_radius=0.03)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
