"""Constraint functions F: C -> R^k and the adherence objective G = F^T F.

Every constraint set exposes single-configuration and batched evaluation.
Batched methods default to a Python loop; the concrete sets shipped here
override them with vectorised versions because the Monte-Carlo region
optimiser evaluates thousands of configurations per call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kinematics import ArmModel, PlanarPose, jacobian as arm_jacobian, wrap_angle

NUMERIC_JAC_STEP = 1e-6


@dataclass(frozen=True)
class TsrConstraint:
    """Planar task-space region.

    ``bounds`` is ``(3, 2)``: ``[lo, hi]`` for the displacement ``(dx, dy, dtheta)``
    of the offset end-effector frame, measured in the target frame. A row with
    ``lo == hi`` is an equality; ``±inf`` leaves a coordinate free.
    """

    target_pose: PlanarPose = field(default_factory=PlanarPose.identity)
    ee_offset: PlanarPose = field(default_factory=PlanarPose.identity)
    bounds: np.ndarray = field(default_factory=lambda: np.zeros((3, 2)))

    def __post_init__(self):
        for name in ("target_pose", "ee_offset"):
            value = getattr(self, name)
            if not isinstance(value, PlanarPose):
                object.__setattr__(self, name, PlanarPose(*value))
        bounds = np.array(self.bounds, dtype=float)
        if bounds.shape != (3, 2):
            raise ValueError(f"bounds must have shape (3, 2), got {bounds.shape}")
        for i, (lo, hi) in enumerate(bounds):
            if np.isnan(lo) or np.isnan(hi) or lo > hi:
                raise ValueError(f"bounds[{i}] must satisfy lo <= hi, got [{lo}, {hi}]")
        bounds.setflags(write=False)
        object.__setattr__(self, "bounds", bounds)

    def __eq__(self, other):
        if not isinstance(other, TsrConstraint):
            return NotImplemented
        return (self.target_pose == other.target_pose and self.ee_offset == other.ee_offset
                and np.array_equal(self.bounds, other.bounds))

    def __hash__(self):
        return hash((self.target_pose, self.ee_offset, self.bounds.tobytes()))


def _displacement(tsr: TsrConstraint, x, y, theta):
    """Vectorised displacement for raw (possibly unwrapped) pose components."""
    off, tgt = tsr.ee_offset, tsr.target_pose
    c, s = np.cos(theta), np.sin(theta)
    px = x + c * off.x - s * off.y - tgt.x
    py = y + s * off.x + c * off.y - tgt.y
    ct, st = math.cos(tgt.theta), math.sin(tgt.theta)
    dx = ct * px + st * py
    dy = -st * px + ct * py
    dth = wrap_angle(np.asarray(theta) + off.theta - tgt.theta)
    return np.stack([dx, dy, np.asarray(dth, dtype=float)], axis=-1)


def tsr_displacement(pose: PlanarPose, tsr: TsrConstraint) -> np.ndarray:
    """Displacement of ``pose * ee_offset`` relative to the target, in the target frame."""
    return _displacement(tsr, pose.x, pose.y, pose.theta)


def _clamp_residual(d: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    lo, hi = bounds[:, 0], bounds[:, 1]
    return np.where(d > hi, d - hi, np.where(d < lo, d - lo, 0.0))


def tsr_residual(pose: PlanarPose, tsr: TsrConstraint) -> np.ndarray:
    return _clamp_residual(tsr_displacement(pose, tsr), tsr.bounds)


class ConstraintSet:
    """Base class for F: R^n -> R^k.

    Subclasses implement ``_evaluate`` and, when ``analytic`` is true,
    ``_jacobian``. Otherwise the Jacobian falls back to central differences.
    """

    n: int
    k: int
    analytic: bool = True

    def _evaluate(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _jacobian(self, q: np.ndarray) -> np.ndarray:
        return numeric_jacobian(self._evaluate, q, self.k)

    def _check(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape[-1:] != (self.n,):
            raise ValueError(f"configuration must have trailing dimension {self.n}, got shape {q.shape}")
        return q

    def evaluate(self, q) -> np.ndarray:
        q = self._check(q)
        if q.ndim != 1:
            raise ValueError("evaluate takes one configuration; use evaluate_batch")
        return self._evaluate(q)

    def jacobian(self, q) -> np.ndarray:
        q = self._check(q)
        if q.ndim != 1:
            raise ValueError("jacobian takes one configuration; use jacobian_batch")
        return self._jacobian(q)

    def evaluate_batch(self, qs) -> np.ndarray:
        qs = self._check(qs).reshape(-1, self.n)
        if self.k == 0:
            return np.zeros((qs.shape[0], 0))
        return np.array([self._evaluate(q) for q in qs]).reshape(qs.shape[0], self.k)

    def jacobian_batch(self, qs) -> np.ndarray:
        qs = self._check(qs).reshape(-1, self.n)
        if self.k == 0:
            return np.zeros((qs.shape[0], 0, self.n))
        return np.array([self._jacobian(q) for q in qs]).reshape(qs.shape[0], self.k, self.n)

    def squared_residual(self, q) -> float:
        r = self.evaluate(q)
        return float(r @ r)

    def squared_residual_batch(self, qs) -> np.ndarray:
        r = self.evaluate_batch(qs)
        return np.einsum("ij,ij->i", r, r)

    def norm(self, q) -> float:
        return math.sqrt(self.squared_residual(q))


def numeric_jacobian(fn: Callable[[np.ndarray], np.ndarray], q: np.ndarray, k: int,
                     h: float = NUMERIC_JAC_STEP) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at ``q``."""
    q = np.asarray(q, dtype=float)
    jac = np.empty((k, q.size))
    for j in range(q.size):
        dq = np.zeros_like(q)
        dq[j] = h
        jac[:, j] = (np.asarray(fn(q + dq)) - np.asarray(fn(q - dq))) / (2 * h)
    return jac


class Unconstrained(ConstraintSet):
    """The empty constraint (k = 0); every configuration satisfies it."""

    def __init__(self, n: int):
        self.n = n
        self.k = 0

    def _evaluate(self, q):
        return np.zeros(0)

    def _jacobian(self, q):
        return np.zeros((0, self.n))


class LinearConstraint(ConstraintSet):
    """F(q) = A q - b."""

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(-1)
        self.k, self.n = self.A.shape
        if self.b.shape != (self.k,):
            raise ValueError(f"b must have shape ({self.k},), got {self.b.shape}")

    def _evaluate(self, q):
        return self.A @ q - self.b

    def _jacobian(self, q):
        return self.A.copy()

    def evaluate_batch(self, qs):
        qs = self._check(qs).reshape(-1, self.n)
        return qs @ self.A.T - self.b

    def jacobian_batch(self, qs):
        qs = self._check(qs).reshape(-1, self.n)
        return np.broadcast_to(self.A, (qs.shape[0],) + self.A.shape).copy()


class FunctionConstraint(ConstraintSet):
    """User-supplied residual, with an optional analytic Jacobian.

    Without ``jac`` the set is marked non-analytic and differentiated with
    central differences (h = 1e-6).
    """

    def __init__(self, n: int, k: int, fn: Callable[[np.ndarray], np.ndarray],
                 jac: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        self.n, self.k = n, k
        self._fn, self._jac = fn, jac
        self.analytic = jac is not None

    def _evaluate(self, q):
        return np.asarray(self._fn(q), dtype=float).reshape(self.k)

    def _jacobian(self, q):
        if self._jac is None:
            return numeric_jacobian(self._evaluate, q, self.k)
        return np.asarray(self._jac(q), dtype=float).reshape(self.k, self.n)


class TaskSpaceConstraint(ConstraintSet):
    """Residual of a planar TSR evaluated at the arm's end effector."""

    def __init__(self, arm: ArmModel, tsr: TsrConstraint):
        self.arm, self.tsr = arm, tsr
        self.n, self.k = arm.n, 3
        self._bounds = [tuple(row) for row in tsr.bounds.tolist()]

    def displacement_batch(self, qs) -> np.ndarray:
        qs = np.asarray(qs, dtype=float)
        cum = np.cumsum(qs, axis=-1)
        lengths = self.arm.link_lengths
        x = np.sum(lengths * np.cos(cum), axis=-1)
        y = np.sum(lengths * np.sin(cum), axis=-1)
        return _displacement(self.tsr, x, y, cum[..., -1])

    def _pose_terms(self, q):
        cum = np.cumsum(q)
        lc = self.arm.link_lengths * np.cos(cum)
        ls = self.arm.link_lengths * np.sin(cum)
        return cum, lc, ls

    def _displacement_one(self, x: float, y: float, theta: float):
        off, tgt = self.tsr.ee_offset, self.tsr.target_pose
        c, s = math.cos(theta), math.sin(theta)
        px = x + c * off.x - s * off.y - tgt.x
        py = y + s * off.x + c * off.y - tgt.y
        ct, st = math.cos(tgt.theta), math.sin(tgt.theta)
        dth = theta + off.theta - tgt.theta
        dth -= 2.0 * math.pi * math.ceil((dth - math.pi) / (2.0 * math.pi))
        return ct * px + st * py, -st * px + ct * py, dth

    def _evaluate(self, q):
        # single-configuration fast path; the batched version handles arrays
        cum, lc, ls = self._pose_terms(q)
        d = self._displacement_one(float(lc.sum()), float(ls.sum()), float(cum[-1]))
        out = np.zeros(3)
        for i, (lo, hi) in enumerate(self._bounds):
            if d[i] > hi:
                out[i] = d[i] - hi
            elif d[i] < lo:
                out[i] = d[i] - lo
        return out

    def evaluate_batch(self, qs):
        qs = self._check(qs).reshape(-1, self.n)
        return _clamp_residual(self.displacement_batch(qs), self.tsr.bounds)

    def _jacobian_impl(self, qs: np.ndarray) -> np.ndarray:
        # qs: (m, n)
        J = arm_jacobian(self.arm, qs)
        theta = np.cumsum(qs, axis=-1)[:, -1]
        off, tgt = self.tsr.ee_offset, self.tsr.target_pose
        c, s = np.cos(theta), np.sin(theta)
        # d/dtheta of R(theta) @ offset
        drx = -s * off.x - c * off.y
        dry = c * off.x - s * off.y
        jpx = J[:, 0, :] + drx[:, None] * J[:, 2, :]
        jpy = J[:, 1, :] + dry[:, None] * J[:, 2, :]
        ct, st = math.cos(tgt.theta), math.sin(tgt.theta)
        jd = np.stack([ct * jpx + st * jpy, -st * jpx + ct * jpy, J[:, 2, :]], axis=1)
        d = self.displacement_batch(qs)
        lo, hi = self.tsr.bounds[:, 0], self.tsr.bounds[:, 1]
        # boundary points take the derivative of the active side
        active = (d >= hi) | (d <= lo)
        return jd * active[:, :, None]

    def _jacobian(self, q):
        cum, lc, ls = self._pose_terms(q)
        theta = float(cum[-1])
        d = self._displacement_one(float(lc.sum()), float(ls.sum()), theta)
        off, tgt = self.tsr.ee_offset, self.tsr.target_pose
        jx = -np.cumsum(ls[::-1])[::-1]
        jy = np.cumsum(lc[::-1])[::-1]
        c, s = math.cos(theta), math.sin(theta)
        jpx = jx + (-s * off.x - c * off.y)
        jpy = jy + (c * off.x - s * off.y)
        ct, st = math.cos(tgt.theta), math.sin(tgt.theta)
        out = np.zeros((3, self.n))
        (lo0, hi0), (lo1, hi1), (lo2, hi2) = self._bounds
        if d[0] >= hi0 or d[0] <= lo0:
            out[0] = ct * jpx + st * jpy
        if d[1] >= hi1 or d[1] <= lo1:
            out[1] = -st * jpx + ct * jpy
        if d[2] >= hi2 or d[2] <= lo2:
            out[2] = 1.0
        return out

    def jacobian_batch(self, qs):
        qs = self._check(qs).reshape(-1, self.n)
        return self._jacobian_impl(qs)


class StackedConstraint(ConstraintSet):
    """Vertical concatenation of constraint sets sharing the same n."""

    def __init__(self, parts: Sequence[ConstraintSet]):
        parts = list(parts)
        if not parts:
            raise ValueError("cannot stack an empty list of constraints")
        n = parts[0].n
        for i, part in enumerate(parts):
            if part.n != n:
                raise ValueError(f"constraint {i} has n={part.n}, expected {n}")
        self.parts = parts
        self.n = n
        self.k = sum(p.k for p in parts)
        self.analytic = all(p.analytic for p in parts)

    def _evaluate(self, q):
        return np.concatenate([p.evaluate(q) for p in self.parts])

    def _jacobian(self, q):
        return np.vstack([p.jacobian(q) for p in self.parts])

    def evaluate_batch(self, qs):
        qs = self._check(qs).reshape(-1, self.n)
        return np.concatenate([p.evaluate_batch(qs) for p in self.parts], axis=1)

    def jacobian_batch(self, qs):
        qs = self._check(qs).reshape(-1, self.n)
        return np.concatenate([p.jacobian_batch(qs) for p in self.parts], axis=1)


def stack(constraints: Sequence[ConstraintSet]) -> ConstraintSet:
    return StackedConstraint(constraints)


def evaluate(F: ConstraintSet, q) -> np.ndarray:
    return F.evaluate(q)


def constraint_jacobian(F: ConstraintSet, q) -> np.ndarray:
    return F.jacobian(q)


def squared_residual(F: ConstraintSet, q) -> float:
    """G(q) = F(q)^T F(q)."""
    return F.squared_residual(q)
