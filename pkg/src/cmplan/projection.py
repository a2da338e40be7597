"""First-order gradient projection onto the constraint manifold."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constraints import ConstraintSet

MAX_HALVINGS = 8


@dataclass(frozen=True)
class ProjectionParams:
    epsilon: float = 1e-4
    max_iters: int = 100
    damping: float = 1e-9
    step_clamp: float = 0.5
    # "pinv" solves (J J^T + damping I) y = x; "literal" uses J^T (J J^T) x unchanged
    update: str = "pinv"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.damping >= 0:
            raise ValueError("damping must be >= 0")
        if not self.step_clamp > 0:
            raise ValueError("step_clamp must be > 0")
        if self.update not in ("pinv", "literal"):
            raise ValueError(f"unknown update rule {self.update!r}")


@dataclass
class ProjectionResult:
    q: np.ndarray
    success: bool
    iterations: int
    residual: float
    reason: Optional[str] = None

    def __bool__(self):
        return self.success


def _clip(q, limits):
    if limits is None:
        return q
    return np.clip(q, limits[:, 0], limits[:, 1])


def project(q, F: ConstraintSet, params: ProjectionParams = ProjectionParams(),
            limits: Optional[np.ndarray] = None) -> ProjectionResult:
    """Pull ``q`` onto ``{F = 0}`` with damped Gauss-Newton steps.

    Each iteration takes ``dq = -J^T (J J^T + damping I)^{-1} F(q)``, clamps
    its norm to ``step_clamp`` and halves it (up to 8 times) whenever the
    residual norm would grow. ``limits`` is an ``(n, 2)`` array of joint
    bounds applied after every step.

    Failure is reported through ``success=False`` with a reason of
    ``"max_iters"``, ``"singular"``, ``"stalled"`` or ``"nonfinite"``; the
    returned ``q`` is then the last iterate.
    """
    q = _clip(np.array(q, dtype=float), limits)
    if q.shape != (F.n,):
        raise ValueError(f"configuration must have shape ({F.n},), got {q.shape}")
    x = F.evaluate(q)
    r = math.sqrt(float(x @ x))
    iters = 0
    while r > params.epsilon:
        if iters >= params.max_iters:
            return ProjectionResult(q, False, iters, r, "max_iters")
        J = F.jacobian(q)
        if params.update == "literal":
            dq = -J.T @ (J @ J.T) @ x
        else:
            A = J @ J.T
            if params.damping > 0:
                A = A + params.damping * np.eye(A.shape[0])
            try:
                y = np.linalg.solve(A, x)
            except np.linalg.LinAlgError:
                return ProjectionResult(q, False, iters, r, "singular")
            dq = -J.T @ y
        if not np.all(np.isfinite(dq)):
            return ProjectionResult(q, False, iters, r, "nonfinite")
        step = float(np.linalg.norm(dq))
        if step > params.step_clamp:
            dq *= params.step_clamp / step
        for _ in range(MAX_HALVINGS + 1):
            q_new = _clip(q + dq, limits)
            x_new = F.evaluate(q_new)
            r_new = math.sqrt(float(x_new @ x_new))
            if r_new <= r:
                break
            dq = dq * 0.5
        else:
            return ProjectionResult(q, False, iters, r, "stalled")
        q, x, r = q_new, x_new, r_new
        iters += 1
    return ProjectionResult(q, True, iters, r)
