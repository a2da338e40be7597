"""Benchmark harness: planner variants over scenario suites, metrics and reports.

Variants
    ``cvq``       region-guided sampling from the predicted mixture
    ``opt-cvq``   the same, with every predicted region refined first
    ``baseline``  uniform sampling over the joint limits
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .config import PlannerConfig
from .constraints import TsrConstraint, Unconstrained
from .environment import Environment, Scenario, is_collision_free, load_scenario, save_scenario, segment_valid
from .errors import NoSequenceError, ScenarioError
from .kinematics import ArmModel, PlanarPose
from .planner import PlanRequest, PlanResult, baseline_plan, path_length, plan_with_codebook, simplify
from .regions import Codebook, fit_codebook, update_distribution
from .sampling import beam_search, make_scorer

log = logging.getLogger(__name__)

VARIANTS = ("cvq", "opt-cvq", "baseline")
CSV_HEADER = ["scenario", "variant", "seed", "success", "time_s", "vertices", "path_length"]
HIST_HEADER = ["bin_lo", "bin_hi", "count_before", "count_after"]
DEFAULT_CUTOFF = 60.0


@dataclass
class TrialRow:
    scenario: str
    variant: str
    seed: int
    success: bool
    time_s: float
    vertices: int
    path_length: float
    error: Optional[str] = None

    def csv_fields(self) -> List[str]:
        return [self.scenario, self.variant, str(self.seed), "1" if self.success else "0",
                f"{self.time_s:.6f}", str(self.vertices), f"{self.path_length:.10g}"]


def _median(values):
    return statistics.median(values) if values else math.nan


def _mean(values):
    return statistics.fmean(values) if values else math.nan


def aggregate(rows: Sequence[TrialRow]) -> Dict[str, dict]:
    """Per-variant accuracy plus medians/means; vertex, length and time stats use successes only."""
    out = {}
    for variant in sorted({r.variant for r in rows}):
        sel = [r for r in rows if r.variant == variant]
        ok = [r for r in sel if r.success]
        out[variant] = {
            "trials": len(sel),
            "successes": len(ok),
            "accuracy": 100.0 * len(ok) / len(sel),
            "median_time_s": _median([r.time_s for r in ok]),
            "mean_time_s": _mean([r.time_s for r in ok]),
            "median_vertices": _median([r.vertices for r in ok]),
            "mean_vertices": _mean([r.vertices for r in ok]),
            "median_path_length": _median([r.path_length for r in ok]),
            "mean_path_length": _mean([r.path_length for r in ok]),
        }
    return out


@dataclass
class BenchReport:
    rows: List[TrialRow] = field(default_factory=list)
    cutoff_s: float = DEFAULT_CUTOFF

    @property
    def aggregates(self) -> Dict[str, dict]:
        return aggregate(self.rows)

    def to_dict(self) -> dict:
        return {"cutoff_s": self.cutoff_s, "rows": [asdict(r) for r in self.rows],
                "aggregates": self.aggregates}

    @classmethod
    def from_dict(cls, data: dict) -> "BenchReport":
        return cls([TrialRow(**r) for r in data["rows"]], data.get("cutoff_s", DEFAULT_CUTOFF))


def request_for(scenario: Scenario, seed: int, config: Optional[PlannerConfig] = None,
                time_limit: Optional[float] = None) -> PlanRequest:
    return PlanRequest(scenario.arm, scenario.start, scenario.goal, scenario.constraint, scenario.env,
                       config or scenario.planner, seed, time_limit)


def run_variant(scenario: Scenario, variant: str, seed: int, codebook: Optional[Codebook] = None,
                time_limit: Optional[float] = None, config: Optional[PlannerConfig] = None) -> PlanResult:
    request = request_for(scenario, seed, config, time_limit)
    if variant == "baseline":
        return baseline_plan(request)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if codebook is None:
        if scenario.codebook_path is None:
            raise ScenarioError(f"scenario {scenario.name!r} names no codebook; needed for {variant}")
        codebook = Codebook.load(scenario.codebook_path)
    return plan_with_codebook(request, codebook, optimize=(variant == "opt-cvq"))


def run_trial(scenario: Union[Scenario, str, Path], variant: str, seed: int,
              cutoff: float = DEFAULT_CUTOFF, codebook: Optional[Codebook] = None,
              on_result: Optional[Callable[[TrialRow, PlanResult], None]] = None) -> TrialRow:
    """One benchmark row; load or planning-setup errors become failed rows.

    ``on_result`` receives the row together with the full planner result,
    e.g. to keep the returned paths for re-validation.
    """
    name = scenario.name if isinstance(scenario, Scenario) else Path(scenario).stem
    t0 = time.perf_counter()
    try:
        if not isinstance(scenario, Scenario):
            scenario = load_scenario(scenario)
        result = run_variant(scenario, variant, seed, codebook, time_limit=cutoff)
    except (ScenarioError, OSError, ValueError) as exc:
        log.warning("trial %s/%s/%d failed to run: %s", name, variant, seed, exc)
        return TrialRow(name, variant, seed, False, time.perf_counter() - t0, 0, 0.0, str(exc))
    elapsed = result.wall_time
    success = result.success and elapsed <= cutoff
    row = TrialRow(name, variant, seed, success, elapsed, result.vertices,
                   result.path_length if success else 0.0,
                   None if success else (result.reason or "cutoff exceeded"))
    if on_result is not None:
        on_result(row, result)
    return row


def run_suite(scenarios: Sequence[Union[Scenario, str, Path]], planner_variants: Sequence[str] = VARIANTS,
              seeds: Iterable[int] = range(1), cutoff_seconds: float = DEFAULT_CUTOFF,
              progress: bool = False,
              on_result: Optional[Callable[[TrialRow, PlanResult], None]] = None) -> BenchReport:
    """Run every (scenario, variant, seed) combination serially, in input order."""
    if not scenarios or not planner_variants:
        raise ValueError("need at least one scenario and one variant")
    if not cutoff_seconds > 0:
        raise ValueError("cutoff must be > 0")
    seeds = list(seeds)
    report = BenchReport(cutoff_s=cutoff_seconds)
    for item in scenarios:
        codebook = None
        scenario = item
        if not isinstance(item, Scenario):
            try:
                scenario = load_scenario(item)
            except (ScenarioError, OSError) as exc:
                log.warning("could not load %s: %s", item, exc)
                for variant in planner_variants:
                    for seed in seeds:
                        report.rows.append(TrialRow(Path(item).stem, variant, seed, False, 0.0, 0, 0.0, str(exc)))
                continue
        if any(v != "baseline" for v in planner_variants) and scenario.codebook_path is not None:
            try:
                codebook = Codebook.load(scenario.codebook_path)
            except (OSError, ValueError, KeyError) as exc:
                log.warning("could not load codebook for %s: %s", scenario.name, exc)
        for variant in planner_variants:
            for seed in seeds:
                row = run_trial(scenario, variant, seed, cutoff_seconds, codebook, on_result)
                report.rows.append(row)
                if progress:
                    log.info("%s %s seed=%d success=%s vertices=%d time=%.3fs", row.scenario,
                             row.variant, row.seed, row.success, row.vertices, row.time_s)
    return report


# --------------------------------------------------------------------------
# histogram experiment


@dataclass
class RegionHistogram:
    region: int
    before: np.ndarray
    after: np.ndarray
    counts_before: np.ndarray
    counts_after: np.ndarray

    @property
    def mean_before(self) -> float:
        return float(self.before.mean())

    @property
    def mean_after(self) -> float:
        return float(self.after.mean())


@dataclass
class HistogramReport:
    scenario: str
    edges: np.ndarray
    regions: List[RegionHistogram]

    def pooled_counts(self):
        before = sum((r.counts_before for r in self.regions), np.zeros(len(self.edges) - 1, dtype=int))
        after = sum((r.counts_after for r in self.regions), np.zeros(len(self.edges) - 1, dtype=int))
        return before, after

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "edges": self.edges.tolist(),
            "regions": [{"region": r.region, "mean_before": r.mean_before, "mean_after": r.mean_after,
                         "counts_before": r.counts_before.tolist(),
                         "counts_after": r.counts_after.tolist()} for r in self.regions],
        }


def predicted_regions(scenario: Scenario, codebook: Codebook) -> List[int]:
    """Region indices the heuristic scorer predicts for the scenario's start and goal."""
    goal = scenario.goal
    if isinstance(goal, TsrConstraint):
        raise ValueError("histogram experiment needs a configuration goal")
    cfg = scenario.planner
    scorer = make_scorer(cfg.scorer, codebook, scenario.start, goal, cfg.temperature)
    return list(beam_search(scorer, cfg.beam_width, cfg.max_seq_len).regions)


def region_g_samples(codebook: Codebook, z, F, rng, samples: int) -> np.ndarray:
    g = codebook.decoder.decode(z)
    return F.squared_residual_batch(g.sample(rng.standard_normal((samples, codebook.n))))


def histogram_experiment(scenario: Scenario, seed: int = 0, bins: int = 30, samples: int = 10_000,
                         codebook: Optional[Codebook] = None,
                         regions: Optional[Sequence[int]] = None) -> HistogramReport:
    """G(q) samples for each predicted region before and after refinement, on shared bins."""
    if codebook is None:
        codebook = Codebook.load(scenario.codebook_path)
    F = scenario.constraint
    if regions is None:
        regions = predicted_regions(scenario, codebook)
    params = scenario.planner.optimizer(seed)
    raw = []
    for h in dict.fromkeys(regions):
        z0 = codebook.latent(h)
        z1 = update_distribution(codebook, z0, F, params, rng=np.random.default_rng([seed, h]))
        rng = np.random.default_rng([seed, h, 7])
        raw.append((h, region_g_samples(codebook, z0, F, rng, samples),
                    region_g_samples(codebook, z1, F, rng, samples)))
    pooled = np.concatenate([np.concatenate([b, a]) for _, b, a in raw]) if raw else np.zeros(1)
    edges = np.histogram_bin_edges(pooled, bins=bins)
    out = [RegionHistogram(h, b, a, np.histogram(b, edges)[0], np.histogram(a, edges)[0]) for h, b, a in raw]
    return HistogramReport(scenario.name, edges, out)


# --------------------------------------------------------------------------
# reports


def report_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in report.rows:
        writer.writerow(row.csv_fields())
    return buf.getvalue()


def emit_report(report: Union[BenchReport, HistogramReport], format: str, path) -> Path:
    """Write a benchmark report as ``csv`` or ``json``; histogram reports as ``csv`` or ``json`` too."""
    path = Path(path)
    if isinstance(report, HistogramReport):
        if format == "csv":
            before, after = report.pooled_counts()
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(HIST_HEADER)
            for lo, hi, cb, ca in zip(report.edges[:-1], report.edges[1:], before, after):
                writer.writerow([f"{lo:.10g}", f"{hi:.10g}", int(cb), int(ca)])
            text = buf.getvalue()
        elif format == "json":
            text = json.dumps(report.to_dict(), indent=2)
        else:
            raise ValueError(f"unknown format {format!r}")
    elif format == "csv":
        text = report_csv(report)
    elif format == "json":
        text = json.dumps(report.to_dict(), indent=2, allow_nan=True)
    else:
        raise ValueError(f"unknown format {format!r}")
    path.write_text(text)
    return path


def read_report_json(path) -> BenchReport:
    return BenchReport.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# benchmark suite generation


def densify(path, spacing: float) -> np.ndarray:
    pts = [np.asarray(path[0], dtype=float)]
    for a, b in zip(path[:-1], path[1:]):
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        steps = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        for t in np.arange(1, steps + 1) / steps:
            pts.append(a + t * (b - a))
    return np.array(pts)


def benchmark_arm() -> ArmModel:
    return ArmModel.uniform(7, length=0.3, link_radius=0.03)


def _orientation_tsr(theta: float, tol: float) -> TsrConstraint:
    return TsrConstraint(PlanarPose(0.0, 0.0, theta), PlanarPose.identity(),
                         [[-math.inf, math.inf], [-math.inf, math.inf], [-tol, tol]])


def _random_scene(rng: np.random.Generator) -> Environment:
    circles = []
    for _ in range(3):
        r = rng.uniform(0.15, 0.3)
        dist = rng.uniform(0.9, 1.8)
        ang = rng.uniform(-math.pi, math.pi)
        circles.append([dist * math.cos(ang), dist * math.sin(ang), r])
    return Environment(circles)


def _on_sheet(q: np.ndarray, theta: float) -> np.ndarray:
    return q + (theta - q.sum()) / q.size


def _free_config(arm, env, theta, tol, rng, spread=1.2, tries=1000):
    for _ in range(tries):
        q = _on_sheet(rng.uniform(-spread, spread, arm.n), theta + rng.uniform(-tol, tol))
        if arm.within_limits(q) and is_collision_free(arm, q, env):
            return q
    return None


def shortcut_hard(path, request: PlanRequest, rounds: int = 4, spacing: float = 0.1,
                  attempts: int = 300) -> List[np.ndarray]:
    """Repeated densify-then-shortcut passes; dense waypoints let shortcuts start mid-segment."""
    for r in range(rounds):
        dense = densify(path, spacing)
        path = simplify(dense, request, rng=np.random.default_rng([request.seed, 2, r]), attempts=attempts)
    return path


def training_paths(arm: ArmModel, env: Environment, q_s, q_g, rng: np.random.Generator,
                   query_runs: int = 8, extra_runs: int = 12, spacing: float = 0.1) -> List[np.ndarray]:
    """Unconstrained, heavily shortcut paths: repeated runs of the query plus random pairs.

    These stand in for the unconstrained trajectories a learned region model
    would be trained on. The random pairs in the same scene keep regions broad
    enough to cover corridors the query runs alone would miss.
    """
    cfg = PlannerConfig(K=3000, simplify_attempts=100, goal_bias=0.1)
    free = Unconstrained(arm.n)
    pairs = [(q_s, q_g)] * query_runs
    for _ in range(extra_runs):
        a = rng.uniform(-1.5, 1.5, arm.n)
        b = rng.uniform(-1.5, 1.5, arm.n)
        if is_collision_free(arm, a, env) and is_collision_free(arm, b, env):
            pairs.append((a, b))
    query, extra = [], []
    for i, (a, b) in enumerate(pairs):
        request = PlanRequest(arm, a, b, free, env, cfg, int(rng.integers(2 ** 31)))
        res = baseline_plan(request)
        if res.success:
            (query if i < query_runs else extra).append(densify(shortcut_hard(res.path, request), spacing))
    return query + extra


def generate_scenario(index: int, seed: int = 0, out_dir: Optional[Path] = None,
                      codebook_size: int = 24, tolerance: float = 0.3, verify: bool = True) -> Scenario:
    """Build one constrained benchmark scenario (and its codebook when ``out_dir`` is given).

    The arm is a 7-link planar chain holding its end-effector orientation fixed
    among three circular obstacles. The straight joint-space segment between
    start and goal is blocked, and the problem is checked to be solvable by the
    baseline planner before it is accepted.
    """
    rng = np.random.default_rng([seed, index])
    arm = benchmark_arm()
    while True:
        theta = float(rng.uniform(-math.pi, math.pi))
        env = _random_scene(rng)
        tsr = _orientation_tsr(theta, tolerance)
        q_s = _free_config(arm, env, theta, tolerance, rng)
        if q_s is None:
            continue
        goal = None
        for _ in range(200):
            v = rng.standard_normal(arm.n)
            v -= v.mean()
            q_g = q_s + v / np.linalg.norm(v) * rng.uniform(1.5, 3.0)
            q_g = _on_sheet(q_g, theta + rng.uniform(-tolerance, tolerance))
            if not (arm.within_limits(q_g) and is_collision_free(arm, q_g, env)):
                continue
            F = Scenario(arm, env, [tsr], q_s, q_g).constraint
            if segment_valid(arm, q_s, q_g, env, F):
                continue
            goal = q_g
            break
        if goal is None:
            continue
        scenario = Scenario(arm, env, [tsr], q_s, goal, PlannerConfig(scorer="roadmap"), name=f"scene_{index:02d}")
        if verify and not baseline_plan(request_for(scenario, 0)).success:
            continue
        break
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = training_paths(arm, env, scenario.start, scenario.goal, rng)
        book = fit_codebook(paths, codebook_size, seed=index)
        book_name = f"{scenario.name}.codebook.json"
        book.save(out_dir / book_name)
        (out_dir / f"{scenario.name}.paths.json").write_text(json.dumps([p.tolist() for p in paths]))
        scenario.codebook = book_name
        scenario.base_dir = out_dir
        save_scenario(scenario, out_dir / f"{scenario.name}.json")
    return scenario


def generate_suite(out_dir, count: int = 20, seed: int = 0) -> List[Path]:
    out_dir = Path(out_dir)
    files = []
    for i in range(count):
        sc = generate_scenario(i, seed, out_dir)
        files.append(out_dir / f"{sc.name}.json")
        log.info("generated %s", files[-1])
    return files


def suite_files(suite_dir) -> List[Path]:
    """Scenario files in a suite directory (codebooks and path datasets excluded)."""
    return sorted(p for p in Path(suite_dir).glob("*.json")
                  if not p.name.endswith((".codebook.json", ".paths.json")))
