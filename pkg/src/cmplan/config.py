"""Planner configuration shared by scenarios, the CLI and the benchmark harness."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from .projection import ProjectionParams
from .regions import OptimizerParams


@dataclass(frozen=True)
class PlannerConfig:
    K: int = 5000
    goal_bias: float = 0.1
    step_size: float = 0.2
    connect_tol: Optional[float] = None  # None means one step_size
    resolution: float = 0.02
    epsilon_valid: float = 1e-3
    proj_eps: float = 1e-4
    proj_max_iters: int = 100
    proj_damping: float = 1e-9
    proj_step_clamp: float = 0.5
    proj_update: str = "pinv"
    simplify_attempts: int = 100
    goal_attempts: int = 32
    start_tolerance: float = 0.1
    beam_width: int = 4
    max_seq_len: int = 24
    temperature: float = 0.1
    scorer: str = "heuristic"
    eta: float = 0.05
    n_mc: int = 64
    delta_stop: float = 1e-3
    max_outer_iters: int = 200

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")
        if not self.step_size > 0:
            raise ValueError("step_size must be > 0")
        if self.connect_tol is not None and not self.connect_tol > 0:
            raise ValueError("connect_tol must be > 0")
        if not self.resolution > 0:
            raise ValueError("resolution must be > 0")
        if self.scorer not in ("heuristic", "roadmap"):
            raise ValueError("scorer must be 'heuristic' or 'roadmap'")
        # validate the nested parameter groups eagerly
        self.projection
        self.optimizer(0)

    @property
    def join_tol(self) -> float:
        return self.step_size if self.connect_tol is None else self.connect_tol

    @property
    def projection(self) -> ProjectionParams:
        return ProjectionParams(self.proj_eps, self.proj_max_iters, self.proj_damping,
                                self.proj_step_clamp, self.proj_update)

    def optimizer(self, seed: int) -> OptimizerParams:
        return OptimizerParams(self.eta, self.n_mc, self.delta_stop, self.max_outer_iters, seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PlannerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown planner keys: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, **kwargs) -> "PlannerConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})
