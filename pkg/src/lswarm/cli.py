"""Command-line front end: plan, lut build/verify, run, compare.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path


from .avoidance import LookupTable, build_lut, verify_lut
from .coverage import CameraModel
from .environment import ParseError, ValidationError, fixture_path, load_model
from .lawnmower import InfeasibleAltitude, PlanConfig, plan, save_waypoints
from .sim import MetricsRecord, Scenario, default_camera, run

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


@dataclass
class RunReport:
    """Everything a finished run hands back: metrics plus emitted files."""

    scenario: str
    mode: str
    seed: int
    metrics: MetricsRecord
    files: list = field(default_factory=list)

    def validate(self):
        missing = [str(p) for p in self.files if not Path(p).exists()]
        if missing:
            raise FileNotFoundError(f"report references missing files: {missing}")
        return self


def _load_camera(path):
    if path is None:
        return default_camera()
    return CameraModel.from_dict(json.loads(Path(path).read_text()))


def _resolve_model(spec):
    p = Path(spec)
    if p.exists():
        return load_model(p)
    return load_model(fixture_path(spec))


def cmd_plan(args):
    try:
        model = _resolve_model(args.model)
        cam = _load_camera(args.camera)
        cfg = PlanConfig(clearance=args.clearance, row_factor=args.row_factor,
                         n_agents=args.agents, agent_radius=args.radius)
        t0 = time.perf_counter()
        paths = plan(model, cam, cfg)
        elapsed_ms = (time.perf_counter() - t0) * 1000.0
    except (ParseError, ValidationError, InfeasibleAltitude, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    save_waypoints(paths, args.out)
    n_wp = sum(len(p.waypoints) for p in paths)
    print(f"model={model.name} agents={len(paths)} waypoints={n_wp}")
    print(f"planning wall-clock: {elapsed_ms:.1f} ms")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_lut_build(args):
    try:
        cam = _load_camera(args.camera)
        lut = build_lut(cam, h_ref=args.h_ref, tau=args.tau, dt=args.dt,
                        step_deg=args.step_deg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        lut.save(args.out)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"rows={len(lut)} step={lut.step_deg} deg h_ref={lut.h_ref} m")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_lut_verify(args):
    try:
        lut = LookupTable.load(args.file)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    problems = verify_lut(lut, samples=args.samples, seed=args.seed)
    if problems:
        for p in problems:
            print(f"mismatch: {p}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"verified {args.samples} rows of {len(lut)}: ok")
    return EXIT_OK


def cmd_run(args):
    try:
        scenario = Scenario.from_json(args.scenario)
        if args.mode:
            scenario = scenario.with_overrides(mode=args.mode)
        if args.seed is not None:
            scenario = scenario.with_overrides(seed=args.seed)
    except (ParseError, ValidationError, ValueError, OSError, KeyError) as exc:
        print(f"error: invalid scenario: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        trace, metrics = run(scenario, workers=args.workers)
    except Exception as exc:  # pragma: no cover - defensive
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / f"{scenario.name}_{scenario.mode}_{scenario.seed}.csv"
    metrics_path = out_dir / f"{scenario.name}_{scenario.mode}_{scenario.seed}.json"
    trace.to_csv(trace_path)
    metrics_path.write_text(json.dumps(metrics.to_dict(), indent=1) + "\n")
    report = RunReport(scenario=scenario.name, mode=scenario.mode,
                       seed=scenario.seed, metrics=metrics,
                       files=[trace_path, metrics_path]).validate()
    print(f"scenario={report.scenario} mode={report.mode} seed={report.seed}"
          f" workers={args.workers}")
    _print_metrics(report.metrics)
    for path in report.files:
        print(f"wrote {path}")
    return EXIT_OK


def _print_metrics(m):
    if m.overlap_ratio is not None:
        print(f"overlap ratio: {m.overlap_ratio:.4f}"
              f" (resolution-constrained {m.overlap_ratio_res:.4f},"
              f" loss {m.coverage_loss:.4f})")
    print(f"collisions: agent-agent={m.agent_agent_collisions}"
          f" agent-building={m.agent_building_collisions}"
          f" agent-obstacle={m.agent_obstacle_collisions}")
    if m.min_agent_separation not in (None, float("inf")):
        print(f"min agent separation: {m.min_agent_separation:.3f} m")
    if m.uncovered_fraction is not None:
        print(f"planner uncovered fraction: {m.uncovered_fraction:.4f}")
    print(f"step time: mean {m.mean_step_ms:.2f} ms, max {m.max_step_ms:.2f} ms")


def _parse_sweep(spec):
    key, _, vals = spec.partition("=")
    key = key.strip()
    if key not in ("obstacles", "agents") or not vals:
        raise ValueError("sweep must look like obstacles=10,25,40 or agents=10,50")
    return key, [int(v) for v in vals.split(",")]


def cmd_compare(args):
    try:
        scenario = Scenario.from_json(args.scenario)
        if args.seed is not None:
            scenario = scenario.with_overrides(seed=args.seed)
        key, points = _parse_sweep(args.sweep)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    rows = []
    for count in points:
        row = {"count": count}
        for mode in ("orca", "lswarm"):
            sc = scenario.with_overrides(mode=mode)
            if key == "obstacles":
                sc = sc.with_overrides(obstacle_count=count)
            else:
                sc = sc.with_overrides(agent_count=count)
            try:
                _, metrics = run(sc, workers=args.workers)
            except Exception as exc:  # pragma: no cover - defensive
                print(f"error: sweep point {count} ({mode}) failed: {exc}",
                      file=sys.stderr)
                return EXIT_RUNTIME
            ratio = metrics.overlap_ratio_res
            row[f"{mode}_ratio"] = None if ratio is None else round(ratio, 4)
            row[f"{mode}_step_ms"] = round(metrics.mean_step_ms, 3)
        rows.append(row)
    header = ["count", "orca_ratio", "lswarm_ratio", "orca_step_ms", "lswarm_step_ms"]
    print(",".join(header))
    for row in rows:
        print(",".join(str(row.get(h, "")) for h in header))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        lines = [",".join(header)]
        lines += [",".join(str(row.get(h, "")) for h in header) for row in rows]
        out.write_text("\n".join(lines) + "\n")
        print(f"wrote {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lswarm",
        description="Coverage-constrained swarm avoidance: plan, tabulate, simulate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="generate coverage waypoints")
    p.add_argument("--model", required=True, help="model file or bundled fixture name")
    p.add_argument("--camera", help="camera JSON (defaults to the bundled camera)")
    p.add_argument("--agents", type=int, default=1)
    p.add_argument("--clearance", type=float, default=2.0)
    p.add_argument("--row-factor", type=float, default=1.0)
    p.add_argument("--radius", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("lut", help="build or verify the overlap table")
    lut_sub = p.add_subparsers(dest="lut_command", required=True)
    b = lut_sub.add_parser("build")
    b.add_argument("--camera")
    b.add_argument("--h-ref", type=float, default=5.0)
    b.add_argument("--tau", type=float, default=2.0)
    b.add_argument("--dt", type=float, default=None)
    b.add_argument("--step-deg", type=float, default=1.0)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_lut_build)
    v = lut_sub.add_parser("verify")
    v.add_argument("--file", required=True)
    v.add_argument("--samples", type=int, default=50)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_lut_verify)

    p = sub.add_parser("run", help="simulate a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--mode", choices=["orca", "lswarm"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="sweep a count and compare both modes")
    p.add_argument("--scenario", required=True)
    p.add_argument("--sweep", required=True, help="obstacles=10,25,40 or agents=10,50")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
