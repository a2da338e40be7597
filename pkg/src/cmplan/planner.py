"""Bidirectional constrained planner with projection-based tree extension.

Both trees extend toward the same projected sample every iteration; the
search stops as soon as the two newly reached states can be joined. Samples
come either from a Gaussian mixture over predicted regions or, for the
baseline, uniformly from the joint limits.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from .config import PlannerConfig
from .constraints import ConstraintSet, TaskSpaceConstraint, TsrConstraint, stack
from .environment import Environment, is_collision_free, segment_valid
from .errors import GoalSamplingError, NoSequenceError
from .kinematics import ArmModel
from .projection import ProjectionParams, project
from .regions import Codebook
from .sampling import (GmmSampler, beam_search, build_gmm, make_scorer,
                       optimize_sequence_regions)


class PlanningTree:
    """Growable array of configurations with parent links; node 0 is the root."""

    def __init__(self, root, kind: str):
        root = np.asarray(root, dtype=float)
        self._nodes = np.empty((64, root.size))
        self._nodes[0] = root
        self.size = 1
        self.parents: List[int] = [-1]
        self.kind = kind

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes[:self.size]

    @property
    def root(self) -> np.ndarray:
        return self._nodes[0]

    def __len__(self):
        return self.size

    def __getitem__(self, index: int) -> np.ndarray:
        return self._nodes[index]

    def add(self, q, parent: int) -> int:
        if self.size == len(self._nodes):
            self._nodes = np.concatenate([self._nodes, np.empty_like(self._nodes)])
        self._nodes[self.size] = q
        self.parents.append(parent)
        self.size += 1
        return self.size - 1

    def branch(self, index: int) -> List[int]:
        """Indices from ``index`` back to the root."""
        out = [index]
        while self.parents[out[-1]] >= 0:
            out.append(self.parents[out[-1]])
        return out

    def edges(self):
        return [(self.parents[i], i) for i in range(1, self.size)]


@dataclass
class PlanRequest:
    arm: ArmModel
    q_s: np.ndarray
    goal: Union[np.ndarray, TsrConstraint]
    constraint: ConstraintSet
    env: Environment = field(default_factory=Environment)
    config: PlannerConfig = field(default_factory=PlannerConfig)
    seed: int = 0
    time_limit: Optional[float] = None

    @property
    def projection(self) -> ProjectionParams:
        return self.config.projection

    def project(self, q):
        return project(q, self.constraint, self.config.projection, self.arm.joint_limits)

    def segment_ok(self, q_a, q_b) -> bool:
        return segment_valid(self.arm, q_a, q_b, self.env, self.constraint,
                             self.config.resolution, self.config.epsilon_valid)


@dataclass
class PlanResult:
    path: List[np.ndarray]
    success: bool
    vertices: int
    wall_time: float
    path_length: float
    iterations: int = 0
    reason: Optional[str] = None

    @classmethod
    def failure(cls, reason: str, vertices: int = 0, wall_time: float = 0.0,
                iterations: int = 0) -> "PlanResult":
        return cls([], False, vertices, wall_time, 0.0, iterations, reason)


def path_length(path) -> float:
    if len(path) < 2:
        return 0.0
    arr = np.asarray(path)
    return float(np.sum(np.linalg.norm(np.diff(arr, axis=0), axis=1)))


def nearest_node(tree: PlanningTree, q) -> int:
    d = np.sum((tree.nodes - np.asarray(q)) ** 2, axis=1)
    return int(np.argmin(d))


def constrained_extend(tree: PlanningTree, from_index: int, q_target, request: PlanRequest) -> int:
    """Grow ``tree`` from ``from_index`` toward ``q_target`` in projected steps.

    Stops at the target, on a projection failure, an invalid edge, or when a
    projected step fails to get strictly closer. Returns the last node added
    (``from_index`` if none was).
    """
    step = request.config.step_size
    q_target = np.asarray(q_target, dtype=float)
    cur = from_index
    q = tree[cur]
    d_prev = float(np.linalg.norm(q_target - q))
    while d_prev > 1e-12:
        if d_prev <= step:
            q_new = q_target.copy()
        else:
            q_new = q + (step / d_prev) * (q_target - q)
        res = request.project(q_new)
        if not res.success:
            break
        q_new = res.q
        d_new = float(np.linalg.norm(q_target - q_new))
        if d_new >= d_prev or not request.segment_ok(q, q_new):
            break
        cur = tree.add(q_new, cur)
        q, d_prev = tree[cur], d_new
    return cur


def connect(a, b, request: PlanRequest) -> bool:
    if np.linalg.norm(np.asarray(a) - np.asarray(b)) > request.config.join_tol:
        return False
    return request.segment_ok(a, b)


def extract_path(tree_a: PlanningTree, tree_b: PlanningTree, join_a: int, join_b: int) -> List[np.ndarray]:
    """Start-root to goal-root path through the join edge, whichever way the trees are swapped."""
    if tree_a.kind == "goal":
        tree_a, tree_b, join_a, join_b = tree_b, tree_a, join_b, join_a
    head = [tree_a[i].copy() for i in reversed(tree_a.branch(join_a))]
    tail = [tree_b[i].copy() for i in tree_b.branch(join_b)]
    if np.array_equal(head[-1], tail[0]):
        tail = tail[1:]
    return head + tail


def _steer(q_a, q_b, request: PlanRequest) -> Optional[List[np.ndarray]]:
    """Constraint-following states from ``q_a`` ending exactly at ``q_b``, or None."""
    if request.segment_ok(q_a, q_b):
        return [np.asarray(q_b, dtype=float)]
    step = request.config.step_size
    q = np.asarray(q_a, dtype=float)
    d_prev = float(np.linalg.norm(q_b - q))
    out = []
    for _ in range(int(2 * d_prev / step) + 10):
        if d_prev <= step:
            if request.segment_ok(q, q_b):
                out.append(np.asarray(q_b, dtype=float))
                return out
            return None
        res = request.project(q + (step / d_prev) * (q_b - q))
        if not res.success:
            return None
        d_new = float(np.linalg.norm(q_b - res.q))
        if d_new >= d_prev or not request.segment_ok(q, res.q):
            return None
        out.append(res.q)
        q, d_prev = res.q, d_new
    return None


def simplify(path, request: PlanRequest, rng: Optional[np.random.Generator] = None,
             attempts: Optional[int] = None) -> List[np.ndarray]:
    """Randomised shortcutting along constraint-following segments.

    A shortcut between waypoints ``i`` and ``j >= i + 2`` is accepted when it
    is valid and either strictly shorter, or no longer while using fewer
    waypoints. Endpoints never change.
    """
    rng = np.random.default_rng([request.seed, 1]) if rng is None else rng
    attempts = request.config.simplify_attempts if attempts is None else attempts
    path = [np.asarray(q, dtype=float) for q in path]
    for _ in range(attempts):
        if len(path) < 3:
            break
        i = int(rng.integers(0, len(path) - 2))
        j = int(rng.integers(i + 2, len(path)))
        seg = _steer(path[i], path[j], request)
        if seg is None:
            continue
        old = path_length(path[i:j + 1])
        new = path_length([path[i]] + seg)
        if new < old - 1e-12 or (new <= old + 1e-12 and len(seg) < j - i):
            path = path[:i + 1] + seg[:-1] + path[j:]
    return path


def sample_goal_from_tsr(tsr: TsrConstraint, arm: ArmModel, env: Environment,
                         constraint: ConstraintSet, rng: np.random.Generator,
                         attempts: int = 32, params: ProjectionParams = ProjectionParams()) -> np.ndarray:
    """Draw a goal pose inside ``tsr`` and solve for a valid configuration by projection.

    Coordinates with finite bounds are sampled uniformly and pinned; the rest
    stay free. A random seed configuration is projected onto the pinned pose
    together with the path constraint.
    """
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    lo, hi = tsr.bounds[:, 0], tsr.bounds[:, 1]
    finite = np.isfinite(lo) & np.isfinite(hi)
    goal_check = TaskSpaceConstraint(arm, tsr)
    for _ in range(attempts):
        disp = rng.uniform(np.where(finite, lo, 0.0), np.where(finite, hi, 0.0))
        pinned = np.where(finite[:, None], np.stack([disp, disp], axis=1),
                          np.array([-math.inf, math.inf]))
        F_goal = TaskSpaceConstraint(arm, TsrConstraint(tsr.target_pose, tsr.ee_offset, pinned))
        F_all = stack([F_goal, constraint]) if constraint.k else F_goal
        seed = rng.uniform(arm.lower, arm.upper)
        res = project(seed, F_all, params, arm.joint_limits)
        if not res.success:
            continue
        q = res.q
        if (constraint.norm(q) <= params.epsilon and goal_check.norm(q) <= params.epsilon
                and is_collision_free(arm, q, env)):
            return q
    raise GoalSamplingError(f"no valid goal configuration after {attempts} attempts")


def _intake(q, request: PlanRequest, label: str):
    """Project a start/goal configuration if slightly off the manifold."""
    q = np.asarray(q, dtype=float)
    res = request.project(q)
    if not res.success:
        return None, f"{label} projection failed ({res.reason})"
    if np.linalg.norm(res.q - q) > request.config.start_tolerance:
        return None, f"{label} is too far from the constraint manifold"
    if not is_collision_free(request.arm, res.q, request.env):
        return None, f"{label} is in collision"
    return res.q, None


def resolve_endpoints(request: PlanRequest, rng: np.random.Generator):
    """Validated ``(q_s, q_g, error)``; goal TSRs are turned into configurations."""
    q_s, err = _intake(request.q_s, request, "start")
    if q_s is None:
        return None, None, err
    if isinstance(request.goal, TsrConstraint):
        try:
            q_g = sample_goal_from_tsr(request.goal, request.arm, request.env, request.constraint,
                                       rng, request.config.goal_attempts, request.projection)
        except GoalSamplingError as exc:
            return q_s, None, str(exc)
        return q_s, q_g, None
    q_g, err = _intake(request.goal, request, "goal")
    return q_s, q_g, err


Sampler = Callable[[np.random.Generator, np.ndarray], np.ndarray]


def gmm_sampler(gmm: GmmSampler, goal_bias: float) -> Sampler:
    def draw(rng, goal_root):
        if goal_bias > 0 and rng.random() < goal_bias:
            return gmm.sample_component(gmm.nearest_component(goal_root), rng)
        return gmm.sample(rng)
    return draw


def uniform_sampler(arm: ArmModel, goal_bias: float) -> Sampler:
    def draw(rng, goal_root):
        if goal_bias > 0 and rng.random() < goal_bias:
            return goal_root.copy()
        return rng.uniform(arm.lower, arm.upper)
    return draw


def _search(request: PlanRequest, draw: Sampler, rng: np.random.Generator, q_s, q_g,
            t0: float) -> PlanResult:
    cfg = request.config
    if np.array_equal(q_s, q_g):
        return PlanResult([q_s.copy()], True, 0, time.perf_counter() - t0, 0.0, 0)
    tree_a, tree_b = PlanningTree(q_s, "start"), PlanningTree(q_g, "goal")
    goal_tree = tree_b
    deadline = None if request.time_limit is None else t0 + request.time_limit
    for k in range(cfg.K):
        if deadline is not None and time.perf_counter() > deadline:
            return PlanResult.failure("time limit", len(tree_a) + len(tree_b) - 2,
                                      time.perf_counter() - t0, k)
        res = request.project(draw(rng, goal_tree.root))
        if not res.success:
            continue
        q_rand = res.q
        reach_a = constrained_extend(tree_a, nearest_node(tree_a, q_rand), q_rand, request)
        reach_b = constrained_extend(tree_b, nearest_node(tree_b, q_rand), q_rand, request)
        if connect(tree_a[reach_a], tree_b[reach_b], request):
            vertices = len(tree_a) + len(tree_b) - 2
            raw = extract_path(tree_a, tree_b, reach_a, reach_b)
            path = simplify(raw, request)
            return PlanResult(path, True, vertices, time.perf_counter() - t0,
                              path_length(path), k + 1)
        tree_a, tree_b = tree_b, tree_a
    return PlanResult.failure("iteration budget exhausted", len(tree_a) + len(tree_b) - 2,
                              time.perf_counter() - t0, cfg.K)


def plan(request: PlanRequest, gmm: Optional[GmmSampler] = None,
         t0: Optional[float] = None) -> PlanResult:
    """Bidirectional search sampling from ``gmm`` (uniform over joint limits if None).

    With probability ``goal_bias`` a draw comes from the mixture component
    nearest the goal root instead (the goal root itself for uniform sampling).
    """
    t0 = time.perf_counter() if t0 is None else t0
    rng = np.random.default_rng(request.seed)
    q_s, q_g, err = resolve_endpoints(request, rng)
    if err is not None:
        return PlanResult.failure(err, wall_time=time.perf_counter() - t0)
    if gmm is None:
        draw = uniform_sampler(request.arm, request.config.goal_bias)
    else:
        draw = gmm_sampler(gmm, request.config.goal_bias)
    return _search(request, draw, rng, q_s, q_g, t0)


def baseline_plan(request: PlanRequest) -> PlanResult:
    return plan(request, None)


def plan_with_codebook(request: PlanRequest, codebook: Codebook, optimize: bool = False) -> PlanResult:
    """Full region-guided query: predict regions, optionally refine them, then search.

    Region prediction and refinement count toward the reported wall time.
    """
    t0 = time.perf_counter()
    cfg = request.config
    rng = np.random.default_rng(request.seed)
    q_s, q_g, err = resolve_endpoints(request, rng)
    if err is not None:
        return PlanResult.failure(err, wall_time=time.perf_counter() - t0)
    if np.array_equal(q_s, q_g):
        return _search(request, None, rng, q_s, q_g, t0)
    scorer = make_scorer(cfg.scorer, codebook, q_s, q_g, cfg.temperature)
    try:
        H = beam_search(scorer, cfg.beam_width, cfg.max_seq_len)
    except NoSequenceError as exc:
        return PlanResult.failure(str(exc), wall_time=time.perf_counter() - t0)
    if not H.regions:
        # nothing beats jumping straight to the goal token; no regions to sample from
        return _search(request, uniform_sampler(request.arm, cfg.goal_bias), rng, q_s, q_g, t0)
    latents = None
    if optimize:
        latents = optimize_sequence_regions(codebook, H, request.constraint, cfg.optimizer(request.seed))
    gmm = build_gmm(codebook, H, latents)
    return _search(request, gmm_sampler(gmm, cfg.goal_bias), rng, q_s, q_g, t0)
