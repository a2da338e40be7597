"""Command line entry point: ``cmplan plan|bench|hist|fit-codebook|make-suite``.

Exit codes: 0 success, 1 planner failure, 2 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import bench
from .config import PlannerConfig
from .environment import load_scenario
from .errors import ScenarioError
from .regions import Codebook, fit_codebook, load_paths

log = logging.getLogger("cmplan")

EXIT_OK, EXIT_PLAN_FAILED, EXIT_INPUT = 0, 1, 2


def _planner_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("planner overrides")
    g.add_argument("--K", type=int, help="iteration budget (default 5000)")
    g.add_argument("--goal-bias", type=float, help="probability of a goal-directed draw (default 0.1)")
    g.add_argument("--step-size", type=float, help="extension step in radians (default 0.2)")
    g.add_argument("--connect-tol", type=float, help="join distance between trees (default: step size)")
    g.add_argument("--proj-eps", type=float, help="projection tolerance on ||F|| (default 1e-4)")
    g.add_argument("--proj-max-iters", type=int, help="projection iteration cap (default 100)")
    g.add_argument("--beam-width", type=int, help="beam width for region prediction (default 4)")
    g.add_argument("--max-seq-len", type=int, help="maximum predicted sequence length (default 24)")
    g.add_argument("--scorer", choices=["heuristic", "roadmap"], help="region sequence scorer")


def _overrides(args) -> dict:
    return {
        "K": args.K, "goal_bias": args.goal_bias, "step_size": args.step_size,
        "connect_tol": args.connect_tol, "proj_eps": args.proj_eps,
        "proj_max_iters": args.proj_max_iters, "beam_width": args.beam_width,
        "max_seq_len": args.max_seq_len, "scorer": args.scorer,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmplan", description="Constrained motion planning with latent sampling regions.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="solve one scenario")
    p.add_argument("scenario", type=Path)
    p.add_argument("--variant", choices=bench.VARIANTS, default="opt-cvq")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--time-limit", type=float, default=None, help="wall-clock cutoff in seconds")
    p.add_argument("--out", type=Path, help="write the path as a JSON array of configurations")
    _planner_flags(p)

    b = sub.add_parser("bench", help="run a scenario suite")
    b.add_argument("suite", type=Path, help="directory of scenario JSON files")
    b.add_argument("--seeds", type=int, default=20, help="seeds 0..N-1 per scenario and variant")
    b.add_argument("--cutoff", type=float, default=bench.DEFAULT_CUTOFF, help="seconds per trial")
    b.add_argument("--variants", nargs="+", choices=bench.VARIANTS, default=list(bench.VARIANTS))
    b.add_argument("--out", type=Path, required=True, help="CSV report path")
    b.add_argument("--json", type=Path, help="optional JSON report with aggregates")

    h = sub.add_parser("hist", help="G(q) histograms before and after region refinement")
    h.add_argument("scenario", type=Path)
    h.add_argument("--out", type=Path, required=True)
    h.add_argument("--json", type=Path, help="per-region detail")
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--bins", type=int, default=30)
    h.add_argument("--samples", type=int, default=10_000)

    f = sub.add_parser("fit-codebook", help="k-means codebook from a path dataset")
    f.add_argument("paths", type=Path)
    f.add_argument("--n", type=int, required=True, help="number of regions")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", type=Path, required=True)

    m = sub.add_parser("make-suite", help="generate constrained benchmark scenarios")
    m.add_argument("out_dir", type=Path)
    m.add_argument("--count", type=int, default=20)
    m.add_argument("--seed", type=int, default=0)
    return parser


def cmd_plan(args) -> int:
    scenario = load_scenario(args.scenario)
    scenario.planner = scenario.planner.with_overrides(**_overrides(args))
    result = bench.run_variant(scenario, args.variant, args.seed, time_limit=args.time_limit)
    print(f"{scenario.name} {args.variant} seed={args.seed} success={result.success} "
          f"vertices={result.vertices} path_length={result.path_length:.4f} "
          f"time_s={result.wall_time:.3f}" + ("" if result.success else f" reason={result.reason}"))
    if not result.success:
        return EXIT_PLAN_FAILED
    if args.out:
        args.out.write_text(json.dumps([np.asarray(q).tolist() for q in result.path]))
    return EXIT_OK


def cmd_bench(args) -> int:
    files = bench.suite_files(args.suite)
    if not files:
        raise ScenarioError(f"{args.suite}: no scenario files")
    report = bench.run_suite(files, args.variants, range(args.seeds), args.cutoff, progress=True)
    bench.emit_report(report, "csv", args.out)
    if args.json:
        bench.emit_report(report, "json", args.json)
    for variant, agg in report.aggregates.items():
        print(f"{variant:9s} accuracy={agg['accuracy']:.1f}% median_vertices={agg['median_vertices']} "
              f"median_path_length={agg['median_path_length']:.3f} median_time_s={agg['median_time_s']:.3f}")
    return EXIT_OK


def cmd_hist(args) -> int:
    scenario = load_scenario(args.scenario)
    if scenario.codebook_path is None:
        raise ScenarioError(f"{args.scenario}: scenario names no codebook")
    hist = bench.histogram_experiment(scenario, args.seed, args.bins, args.samples)
    bench.emit_report(hist, "csv", args.out)
    if args.json:
        bench.emit_report(hist, "json", args.json)
    for r in hist.regions:
        print(f"region {r.region}: mean G {r.mean_before:.5g} -> {r.mean_after:.5g}")
    return EXIT_OK


def cmd_fit_codebook(args) -> int:
    paths = load_paths(args.paths)
    book = fit_codebook(paths, args.n, seed=args.seed)
    book.save(args.out)
    print(f"wrote {book.size} regions to {args.out}")
    return EXIT_OK


def cmd_make_suite(args) -> int:
    for path in bench.generate_suite(args.out_dir, args.count, args.seed):
        print(path)
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "bench": cmd_bench, "hist": cmd_hist,
            "fit-codebook": cmd_fit_codebook, "make-suite": cmd_make_suite}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
