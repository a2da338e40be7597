"""Planar serial arm: forward kinematics, Jacobian and link geometry.

Joint ``i`` rotates link ``i`` relative to link ``i-1``; the base sits at the
origin. All functions accept either a single configuration of shape ``(n,)``
or a batch of shape ``(m, n)`` where noted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(theta):
    """Map angles into (-pi, pi]. Works elementwise on arrays."""
    wrapped = np.asarray(theta, dtype=float) - 2.0 * np.pi * np.ceil(
        (np.asarray(theta, dtype=float) - np.pi) / (2.0 * np.pi)
    )
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class PlanarPose:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @classmethod
    def identity(cls) -> "PlanarPose":
        return cls(0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def matrix(self) -> np.ndarray:
        """Homogeneous 3x3 transform."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class ArmModel:
    """Immutable planar arm description.

    ``joint_limits`` has shape ``(n, 2)`` holding ``[lo, hi]`` in radians.
    """

    link_lengths: np.ndarray
    joint_limits: np.ndarray
    link_radius: float = 0.0

    def __post_init__(self):
        lengths = np.array(self.link_lengths, dtype=float).reshape(-1)
        if lengths.size == 0:
            raise ValueError("link_lengths must be nonempty")
        limits = np.array(self.joint_limits, dtype=float)
        if limits.shape != (lengths.size, 2):
            raise ValueError(
                f"joint_limits must have shape ({lengths.size}, 2), got {limits.shape}"
            )
        for i, length in enumerate(lengths):
            if not length > 0:
                raise ValueError(f"link_lengths[{i}] must be > 0, got {length}")
        for i, (lo, hi) in enumerate(limits):
            if not lo < hi:
                raise ValueError(f"joint_limits[{i}] must satisfy lo < hi, got [{lo}, {hi}]")
        if not self.link_radius >= 0:
            raise ValueError(f"link_radius must be >= 0, got {self.link_radius}")
        lengths.setflags(write=False)
        limits.setflags(write=False)
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "joint_limits", limits)
        object.__setattr__(self, "link_radius", float(self.link_radius))

    @classmethod
    def uniform(cls, n: int, length: float = 1.0, link_radius: float = 0.0,
                limit: float = math.pi) -> "ArmModel":
        return cls(np.full(n, length), np.tile([-limit, limit], (n, 1)), link_radius)

    @property
    def n(self) -> int:
        return self.link_lengths.size

    @property
    def reach(self) -> float:
        return float(self.link_lengths.sum())

    @property
    def lower(self) -> np.ndarray:
        return self.joint_limits[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.joint_limits[:, 1]

    def clip(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def within_limits(self, q: np.ndarray, tol: float = 0.0) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def __eq__(self, other):
        if not isinstance(other, ArmModel):
            return NotImplemented
        return (
            np.array_equal(self.link_lengths, other.link_lengths)
            and np.array_equal(self.joint_limits, other.joint_limits)
            and self.link_radius == other.link_radius
        )

    def __hash__(self):
        return hash((self.link_lengths.tobytes(), self.joint_limits.tobytes(), self.link_radius))


def _check_dim(arm: ArmModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (arm.n,) or q.ndim > 2:
        raise ValueError(f"configuration must have trailing dimension {arm.n}, got shape {q.shape}")
    return q


def joint_points(arm: ArmModel, q) -> np.ndarray:
    """Positions of the base, every joint and the end effector.

    Returns shape ``(n + 1, 2)`` for one configuration or ``(m, n + 1, 2)``
    for a batch.
    """
    q = _check_dim(arm, q)
    cum = np.cumsum(q, axis=-1)
    steps = np.stack([arm.link_lengths * np.cos(cum), arm.link_lengths * np.sin(cum)], axis=-1)
    pts = np.cumsum(steps, axis=-2)
    zero = np.zeros(pts.shape[:-2] + (1, 2))
    return np.concatenate([zero, pts], axis=-2)


def link_segments(arm: ArmModel, q) -> np.ndarray:
    """Link segments as ``(..., n, 2, 2)``: ``seg[i, 0]`` start, ``seg[i, 1]`` end."""
    pts = joint_points(arm, q)
    return np.stack([pts[..., :-1, :], pts[..., 1:, :]], axis=-2)


def fk_array(arm: ArmModel, q) -> np.ndarray:
    """End-effector ``(x, y, theta)`` as an array; theta is wrapped.

    Accepts batches; returns ``(3,)`` or ``(m, 3)``.
    """
    q = _check_dim(arm, q)
    cum = np.cumsum(q, axis=-1)
    x = np.sum(arm.link_lengths * np.cos(cum), axis=-1)
    y = np.sum(arm.link_lengths * np.sin(cum), axis=-1)
    theta = wrap_angle(cum[..., -1])
    return np.stack([x, y, np.asarray(theta)], axis=-1)


def forward_kinematics(arm: ArmModel, q) -> PlanarPose:
    q = _check_dim(arm, q)
    if q.ndim != 1:
        raise ValueError("forward_kinematics takes a single configuration; use fk_array for batches")
    x, y, theta = fk_array(arm, q)
    return PlanarPose(x, y, theta)


def jacobian(arm: ArmModel, q) -> np.ndarray:
    """Analytic end-effector Jacobian, ``(3, n)`` or ``(m, 3, n)`` for batches.

    Rows are d(x, y, theta)/dq. The theta row is all ones; angle wrapping is a
    piecewise-constant offset and does not enter the derivative.
    """
    q = _check_dim(arm, q)
    cum = np.cumsum(q, axis=-1)
    sx = arm.link_lengths * np.sin(cum)
    cy = arm.link_lengths * np.cos(cum)
    # column j sums the contributions of links j..n-1
    jx = -np.flip(np.cumsum(np.flip(sx, axis=-1), axis=-1), axis=-1)
    jy = np.flip(np.cumsum(np.flip(cy, axis=-1), axis=-1), axis=-1)
    return np.stack([jx, jy, np.ones_like(jx)], axis=-2)
