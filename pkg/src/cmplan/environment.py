"""2D workspace, capsule collision checks, edge validation and scenario files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Union

import numpy as np

from .config import PlannerConfig
from .constraints import ConstraintSet, TaskSpaceConstraint, TsrConstraint, Unconstrained, stack
from .errors import ScenarioError
from .kinematics import ArmModel, PlanarPose, link_segments

EPSILON_VALID = 1e-3


@dataclass(eq=False)
class Environment:
    """Circles ``(x, y, r)`` and axis-aligned boxes ``(xmin, ymin, xmax, ymax)``."""

    circles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        self.circles = np.array(self.circles, dtype=float).reshape(-1, 3)
        self.boxes = np.array(self.boxes, dtype=float).reshape(-1, 4)
        for i, (_, _, r) in enumerate(self.circles):
            if not r > 0:
                raise ValueError(f"obstacles: circle {i} radius must be > 0, got {r}")
        for i, (x0, y0, x1, y1) in enumerate(self.boxes):
            if not (x0 < x1 and y0 < y1):
                raise ValueError(f"obstacles: box {i} needs min < max on both axes")

    @property
    def empty(self) -> bool:
        return len(self.circles) == 0 and len(self.boxes) == 0

    def inflated(self, margin: float) -> "Environment":
        boxes = self.boxes + np.array([-margin, -margin, margin, margin])
        return Environment(self.circles + np.array([0.0, 0.0, margin]), boxes)

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return np.array_equal(self.circles, other.circles) and np.array_equal(self.boxes, other.boxes)


def _segment_point_distance(a, b, p):
    """Distances between segments ``a``-``b`` (shape ``(..., 2)``) and points ``p`` ``(c, 2)``.

    Returns shape ``(..., c)``.
    """
    ax, ay = a[..., 0, None], a[..., 1, None]
    dx, dy = b[..., 0, None] - ax, b[..., 1, None] - ay
    dd = dx * dx + dy * dy
    ex, ey = p[:, 0] - ax, p[:, 1] - ay
    t = np.clip((ex * dx + ey * dy) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    rx, ry = ex - t * dx, ey - t * dy
    return np.sqrt(rx * rx + ry * ry)


def _point_box_distance(p, boxes):
    """``p`` ``(..., 2)`` against boxes ``(b, 4)`` -> ``(..., b)``."""
    px, py = p[..., None, 0], p[..., None, 1]
    dx = np.maximum(np.maximum(boxes[:, 0] - px, 0.0), px - boxes[:, 2])
    dy = np.maximum(np.maximum(boxes[:, 1] - py, 0.0), py - boxes[:, 3])
    return np.hypot(dx, dy)


def _segment_hits_box(a, b, boxes):
    """Slab test; ``a``, ``b`` ``(..., 2)``, boxes ``(b, 4)`` -> bool ``(..., b)``."""
    tmin = np.zeros(a.shape[:-1] + (len(boxes),))
    tmax = np.ones_like(tmin)
    hit = np.ones_like(tmin, dtype=bool)
    for axis in range(2):
        a_ax = a[..., axis, None]
        d_ax = (b - a)[..., axis, None]
        lo, hi = boxes[:, axis], boxes[:, axis + 2]
        flat = d_ax == 0
        hit &= ~flat | ((a_ax >= lo) & (a_ax <= hi))
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo - a_ax) / d_ax
            t2 = (hi - a_ax) / d_ax
        t_lo = np.where(flat, -np.inf, np.minimum(t1, t2))
        t_hi = np.where(flat, np.inf, np.maximum(t1, t2))
        tmin = np.maximum(tmin, t_lo)
        tmax = np.minimum(tmax, t_hi)
    return hit & (tmin <= tmax)


def _segment_box_distance(a, b, boxes):
    corners = np.stack([boxes[:, [0, 1]], boxes[:, [2, 1]], boxes[:, [2, 3]], boxes[:, [0, 3]]], axis=1)
    # distances from each box corner to the segment: (..., b, 4)
    corner_d = _segment_point_distance(a, b, corners.reshape(-1, 2)).reshape(a.shape[:-1] + (len(boxes), 4))
    dist = np.minimum(
        np.minimum(_point_box_distance(a, boxes), _point_box_distance(b, boxes)),
        corner_d.min(axis=-1),
    )
    return np.where(_segment_hits_box(a, b, boxes), 0.0, dist)


def _circle_gaps(arm: ArmModel, qs: np.ndarray, circles: np.ndarray) -> np.ndarray:
    """Per-configuration minimum link-to-circle distance for a ``(m, n)`` batch."""
    cum = np.cumsum(qs, axis=1)
    x = np.zeros((qs.shape[0], qs.shape[1] + 1))
    y = np.zeros_like(x)
    np.cumsum(arm.link_lengths * np.cos(cum), axis=1, out=x[:, 1:])
    np.cumsum(arm.link_lengths * np.sin(cum), axis=1, out=y[:, 1:])
    ax, ay = x[:, :-1, None], y[:, :-1, None]
    dx, dy = x[:, 1:, None] - ax, y[:, 1:, None] - ay
    ex, ey = circles[:, 0] - ax, circles[:, 1] - ay
    # links have positive length, so dx*dx + dy*dy > 0
    t = np.clip((ex * dx + ey * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    rx, ry = ex - t * dx, ey - t * dy
    d = np.sqrt(rx * rx + ry * ry) - circles[:, 2]
    return d.reshape(qs.shape[0], -1).min(axis=1)


def clearance(arm: ArmModel, qs, env: Environment) -> np.ndarray:
    """Smallest capsule-to-obstacle gap per configuration; ``inf`` for an empty scene.

    ``qs`` may be ``(n,)`` or ``(m, n)``; returns a scalar array or shape ``(m,)``.
    """
    qs = np.asarray(qs, dtype=float)
    if not len(env.boxes) and qs.ndim in (1, 2) and qs.shape[-1] == arm.n:
        batch = np.atleast_2d(qs)
        if len(env.circles):
            gap = _circle_gaps(arm, batch, env.circles)
        else:
            gap = np.full(batch.shape[0], np.inf)
        gap = gap - arm.link_radius
        return gap if qs.ndim == 2 else gap[0]
    segs = link_segments(arm, qs)
    a, b = segs[..., 0, :], segs[..., 1, :]
    gaps = [np.full(a.shape[:-2], np.inf)]
    if len(env.circles):
        d = _segment_point_distance(a, b, env.circles[:, :2]) - env.circles[:, 2]
        gaps.append(d.min(axis=(-1, -2)))
    if len(env.boxes):
        gaps.append(_segment_box_distance(a, b, env.boxes).min(axis=(-1, -2)))
    return np.min(np.stack(gaps), axis=0) - arm.link_radius


def is_collision_free(arm: ArmModel, q, env: Environment) -> bool:
    if env.empty:
        return True
    return bool(clearance(arm, np.asarray(q, dtype=float), env) > 0)


def interpolate(q_a, q_b, resolution: float) -> np.ndarray:
    """Evenly spaced states from ``q_a`` to ``q_b`` with joint-space gaps <= ``resolution``."""
    q_a, q_b = np.asarray(q_a, dtype=float), np.asarray(q_b, dtype=float)
    diff = q_b - q_a
    steps = max(1, int(math.ceil(math.sqrt(float(diff @ diff)) / resolution)))
    t = (np.arange(steps + 1) / steps)[:, None]
    return q_a + t * diff


def states_valid(arm: ArmModel, qs, env: Environment, F: Optional[ConstraintSet],
                 epsilon_valid: float = EPSILON_VALID) -> bool:
    qs = np.atleast_2d(qs)
    if not env.empty and not np.all(clearance(arm, qs, env) > 0):
        return False
    if F is not None and F.k > 0:
        r = F.evaluate_batch(qs)
        if not np.all(np.einsum("ij,ij->i", r, r) <= epsilon_valid ** 2):
            return False
    return True


def segment_valid(arm: ArmModel, q_a, q_b, env: Environment, F: Optional[ConstraintSet],
                  resolution: float = 0.02, epsilon_valid: float = EPSILON_VALID) -> bool:
    """Check every interpolated state of the joint-space segment, endpoints included."""
    if not resolution > 0:
        raise ValueError("resolution must be > 0")
    return states_valid(arm, interpolate(q_a, q_b, resolution), env, F, epsilon_valid)


# --------------------------------------------------------------------------
# scenario files


@dataclass(eq=False)
class Scenario:
    arm: ArmModel
    env: Environment
    constraints: List[TsrConstraint]
    start: np.ndarray
    goal: Union[np.ndarray, TsrConstraint]
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    codebook: Optional[str] = None
    name: str = "scenario"
    base_dir: Optional[Path] = None

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        if self.start.shape != (self.arm.n,):
            raise ScenarioError(f"start: expected {self.arm.n} joint values, got {self.start.size}")
        if not self.arm.within_limits(self.start):
            raise ScenarioError("start: outside joint limits")
        if not isinstance(self.goal, TsrConstraint):
            self.goal = np.asarray(self.goal, dtype=float)
            if self.goal.shape != (self.arm.n,):
                raise ScenarioError(f"goal.config: expected {self.arm.n} joint values, got {self.goal.size}")
            if not self.arm.within_limits(self.goal):
                raise ScenarioError("goal.config: outside joint limits")

    @property
    def constraint(self) -> ConstraintSet:
        if not self.constraints:
            return Unconstrained(self.arm.n)
        parts = [TaskSpaceConstraint(self.arm, t) for t in self.constraints]
        return parts[0] if len(parts) == 1 else stack(parts)

    @property
    def codebook_path(self) -> Optional[Path]:
        if self.codebook is None:
            return None
        p = Path(self.codebook)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    def to_dict(self) -> dict:
        data = {
            "name": self.name,
            "arm": {
                "link_lengths": self.arm.link_lengths.tolist(),
                "joint_limits": self.arm.joint_limits.tolist(),
                "link_radius": self.arm.link_radius,
            },
            "obstacles": [{"type": "circle", "center": [c[0], c[1]], "radius": c[2]}
                          for c in self.env.circles.tolist()]
            + [{"type": "box", "min": [b[0], b[1]], "max": [b[2], b[3]]} for b in self.env.boxes.tolist()],
            "constraint": [_tsr_to_dict(t, "tsr") for t in self.constraints] or {"type": "none"},
            "start": self.start.tolist(),
            "goal": ({"tsr": _tsr_to_dict(self.goal)} if isinstance(self.goal, TsrConstraint)
                     else {"config": self.goal.tolist()}),
            "planner": self.planner.to_dict(),
        }
        if self.codebook is not None:
            data["codebook"] = self.codebook
        return data

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _bound_to_json(v: float):
    return None if math.isinf(v) else v


def _bound_from_json(v, sign: float) -> float:
    return sign * math.inf if v is None else float(v)


def _tsr_to_dict(tsr: TsrConstraint, kind: Optional[str] = None) -> dict:
    data = {} if kind is None else {"type": kind}
    data.update({
        "target": tsr.target_pose.as_array().tolist(),
        "offset": tsr.ee_offset.as_array().tolist(),
        "bounds": [[_bound_to_json(lo), _bound_to_json(hi)] for lo, hi in tsr.bounds.tolist()],
    })
    return data


def _pose(value, where: str) -> PlanarPose:
    if value is None:
        return PlanarPose.identity()
    if len(value) != 3:
        raise ScenarioError(f"{where}: expected [x, y, theta]")
    return PlanarPose(*value)


def _tsr_from_dict(data: dict, where: str) -> TsrConstraint:
    raw = data.get("bounds", [[0, 0]] * 3)
    if len(raw) != 3 or any(len(row) != 2 for row in raw):
        raise ScenarioError(f"{where}.bounds: expected three [lo, hi] pairs")
    bounds = [[_bound_from_json(lo, -1.0), _bound_from_json(hi, 1.0)] for lo, hi in raw]
    try:
        return TsrConstraint(_pose(data.get("target"), f"{where}.target"),
                             _pose(data.get("offset"), f"{where}.offset"), bounds)
    except ValueError as exc:
        raise ScenarioError(f"{where}.{exc}") from exc


def _parse_obstacles(items) -> Environment:
    circles, boxes = [], []
    for i, ob in enumerate(items):
        kind = ob.get("type")
        if kind == "circle":
            circles.append([*ob["center"], ob["radius"]])
        elif kind == "box":
            boxes.append([*ob["min"], *ob["max"]])
        else:
            raise ScenarioError(f"obstacles[{i}].type: unknown obstacle type {kind!r}")
    try:
        return Environment(circles, boxes)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc


def scenario_from_dict(data: dict, base_dir: Optional[Path] = None, name: str = "scenario") -> Scenario:
    try:
        arm_d = data["arm"]
        lengths = arm_d["link_lengths"]
    except KeyError as exc:
        raise ScenarioError(f"missing required field {exc.args[0]!r}") from exc
    limits = arm_d.get("joint_limits", [[-math.pi, math.pi]] * len(lengths))
    try:
        arm = ArmModel(lengths, limits, arm_d.get("link_radius", 0.0))
    except ValueError as exc:
        raise ScenarioError(f"arm.{exc}") from exc
    env = _parse_obstacles(data.get("obstacles", []))

    raw_c = data.get("constraint", {"type": "none"})
    raw_list = raw_c if isinstance(raw_c, list) else [raw_c]
    constraints = []
    for i, c in enumerate(raw_list):
        kind = c.get("type", "tsr")
        if kind == "none":
            continue
        if kind != "tsr":
            raise ScenarioError(f"constraint[{i}].type: unsupported constraint type {kind!r}")
        constraints.append(_tsr_from_dict(c, f"constraint[{i}]"))

    if "start" not in data:
        raise ScenarioError("missing required field 'start'")
    goal_d = data.get("goal")
    if not isinstance(goal_d, dict) or not ({"config", "tsr"} & set(goal_d)):
        raise ScenarioError("goal: expected {'config': [...]} or {'tsr': {...}}")
    goal = goal_d["config"] if "config" in goal_d else _tsr_from_dict(goal_d["tsr"], "goal.tsr")
    try:
        planner = PlannerConfig.from_dict(data.get("planner", {}))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"planner: {exc}") from exc
    return Scenario(arm, env, constraints, data["start"], goal, planner, data.get("codebook"),
                    data.get("name", name), base_dir)


def load_scenario(path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}:1: top level must be an object")
    return scenario_from_dict(data, path.parent, path.stem)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2))
