"""Command-line entry point: run, compare, bench, keypoints, validate."""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .fusion import load_global_trajectory, save_global_trajectory, select_key_points
from .particles import ParticleField, PredictionConfig, ingest_point_cloud
from .geometry import Box
from .planner import plan
from .scenario_io import ScenarioError, apply_overrides, fusion_config, load_scenario_dict
from .sim import METHODS, Scenario, WorldState, run, sense

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def parse_seeds(text: str):
    """Seed lists: '3', '1,2,5' or '1..20' (inclusive range)."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def _add_common(p):
    p.add_argument("--scenario", required=True, help="scenario YAML file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a scenario key (dotted path)")
    p.add_argument("--strict", action="store_true",
                   help="exit 1 when a run freezes permanently or collides")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rasplan",
                                 description="risk-aware sampling planner toolkit")
    sub = ap.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_common(p_run)
    p_run.add_argument("--method", default="ras", help=f"one of {METHODS}")
    p_run.add_argument("--seeds", default="0", help="seed list, e.g. 0 or 1..20")

    p_cmp = sub.add_parser("compare", help="run several methods over shared seeds")
    _add_common(p_cmp)
    p_cmp.add_argument("--methods", default="ras,no_prediction",
                       help="comma list of methods (>= 2)")
    p_cmp.add_argument("--seeds", default="0", help="seed list")

    p_bench = sub.add_parser("bench", help="latency benchmark on a fixed snapshot")
    _add_common(p_bench)
    p_bench.add_argument("--cycles", type=int, default=200, help="planning cycles")
    p_bench.add_argument("--method", default="ras")

    p_kp = sub.add_parser("keypoints", help="extract key points from a trajectory file")
    p_kp.add_argument("--trajectory", required=True, help="global trajectory file")
    p_kp.add_argument("--out", default="keypoints.txt", help="output file")
    p_kp.add_argument("--scenario", default=None,
                      help="optional scenario supplying fusion parameters")
    p_kp.add_argument("--set", dest="overrides", action="append", default=[],
                      metavar="KEY=VALUE")

    p_val = sub.add_parser("validate", help="check a scenario file and print config")
    p_val.add_argument("--scenario", required=True)
    p_val.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE")
    return ap


def _load_scenario(args) -> Scenario:
    cfg = load_scenario_dict(args.scenario)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    return Scenario.from_dict(cfg)


def cmd_run(args) -> int:
    try:
        scenario = _load_scenario(args)
        seeds = parse_seeds(args.seeds)
        if args.method not in METHODS:
            raise ScenarioError(f"unknown method {args.method!r}")
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    summary = ["seed collision_count freezing_count flight_time reached_goal"]
    for seed in seeds:
        trace = out / f"trace_{args.method}_s{seed}.csv"
        metrics = run(scenario, args.method, seed, trace_path=trace)
        (out / f"metrics_{args.method}_s{seed}.txt").write_text(
            "\n".join(metrics.summary_lines()) + "\n")
        summary.append(f"{seed} {metrics.collision_count} {metrics.freezing_count} "
                       f"{metrics.flight_time:.9g} {str(metrics.reached_goal).lower()}")
        if metrics.collision_count or metrics.freezing_count:
            failures += 1
        print(f"seed {seed}: collisions={metrics.collision_count} "
              f"freezes={metrics.freezing_count} flight_time={metrics.flight_time:.2f}s "
              f"reached={metrics.reached_goal}")
    (out / f"summary_{args.method}.txt").write_text("\n".join(summary) + "\n")
    if args.strict and failures:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        scenario = _load_scenario(args)
        seeds = parse_seeds(args.seeds)
        methods = [m.strip() for m in args.methods.split(",") if m.strip()]
        if len(methods) < 2:
            raise ScenarioError("compare needs at least two methods")
        for m in methods:
            if m not in METHODS:
                raise ScenarioError(f"unknown method {m!r}")
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = f"{'method':<14}{'collisions':>12}{'freezes':>10}{'avg_flight_s':>14}"
    lines = [header]
    for m in methods:
        coll = frz = 0
        times = []
        for seed in seeds:
            metrics = run(scenario, m, seed,
                          trace_path=out / f"trace_{m}_s{seed}.csv")
            coll += metrics.collision_count
            frz += metrics.freezing_count
            times.append(metrics.flight_time)
        lines.append(f"{m:<14}{coll:>12}{frz:>10}{np.mean(times):>14.2f}")
    table = "\n".join(lines)
    (out / "compare.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        scenario = _load_scenario(args)
        if args.cycles <= 0:
            raise ScenarioError("--cycles must be positive")
        if args.method not in METHODS:
            raise ScenarioError(f"unknown method {args.method!r}")
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    # build one frozen field snapshot from the initial sensor view
    sc = scenario
    rng = np.random.default_rng(0)
    half = sc.map_cfg["half_extent"] * np.ones(3)
    fld = ParticleField(Box(sc.start.position - half, sc.start.position + half),
                        bin_size=sc.map_cfg["bin_size"])
    ing = PredictionConfig(sigma_v=sc.map_cfg["sigma_v"],
                           static_fraction=sc.map_cfg["static_fraction"],
                           particles_per_point=int(sc.map_cfg["particles_per_point"]))
    world = WorldState(sc, 0.0)
    goal = sc.goal if sc.goal is not None else sc.start.position + np.array([5.0, 0, 0])
    heading = goal - sc.start.position
    n_frames = max(1, int(np.ceil(5000 / max(
        len(sense(world, sc.start.position, heading)[0]), 1) / ing.particles_per_point)))
    for _ in range(n_frames):
        pts, vels = sense(world, sc.start.position, heading)
        fld = ingest_point_cloud(fld, pts, vels, ing, rng)

    latencies = []
    first = None
    for _ in range(args.cycles):
        t0 = time.perf_counter()
        result = plan(fld, sc.start, goal, None, sc.planner_cfg,
                      sc.sampler_cfg, sc.risk_cfg, start_time=0.0)
        latencies.append((time.perf_counter() - t0) * 1e6)
        if first is None:
            first = result
    arr = np.asarray(latencies)
    print(f"particles: {len(fld)}")
    print(f"cycles: {args.cycles}")
    print(f"min_us: {arr.min():.1f}")
    print(f"median_us: {np.median(arr):.1f}")
    print(f"p99_us: {np.percentile(arr, 99):.1f}")
    print(f"max_us: {arr.max():.1f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.txt").write_text(
        f"particles={len(fld)}\ncycles={args.cycles}\nmin_us={arr.min():.1f}\n"
        f"median_us={np.median(arr):.1f}\np99_us={np.percentile(arr, 99):.1f}\n"
        f"max_us={arr.max():.1f}\n")
    return EXIT_OK


def cmd_keypoints(args) -> int:
    try:
        g = load_global_trajectory(args.trajectory)
        if args.scenario:
            cfg = load_scenario_dict(args.scenario)
            if args.overrides:
                cfg = apply_overrides(cfg, args.overrides)
            fcfg = fusion_config(cfg)
        else:
            from .fusion import FusionConfig
            fcfg = FusionConfig()
        key = select_key_points(g, fcfg)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    save_global_trajectory(g, args.out, indices=key.indices)
    print(f"trajectory points: {len(g)}")
    print(f"key points: {len(key)}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_scenario_dict(args.scenario)
        if args.overrides:
            cfg = apply_overrides(cfg, args.overrides)
        scenario = Scenario.from_dict(cfg)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"scenario: {scenario.name}")
    print(f"obstacles: {len(scenario.obstacles)} "
          f"({sum(1 for o in scenario.obstacles if o.dynamic)} dynamic)")
    print(f"planner: k={scenario.planner_cfg.k_pieces} delta={scenario.planner_cfg.delta} "
          f"lambdas={scenario.planner_cfg.lambdas}")
    print(f"limits: v_max={scenario.v_max} a_max={scenario.a_max}")
    print("ok")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "compare": cmd_compare,
        "bench": cmd_bench,
        "keypoints": cmd_keypoints,
        "validate": cmd_validate,
    }
    return handlers[args.verb](args)


if __name__ == "__main__":
    sys.exit(main())
