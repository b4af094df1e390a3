"""Command-line front end: validate scenario files and run missions.

Exit codes: 0 clean, 1 validation violations or an aborted run, 2 unreadable
or structurally broken input files.
"""

from __future__ import annotations

import argparse
import sys

from .scenario import ScenarioError, load_scenario, validate_scenario
from .sim import SimulationConfig, run as run_simulation, save_logs
from .solvers import BACKENDS


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmcover",
        description="Energy-aware multi-UAV coverage mission planner and simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a scenario file and report violations")
    p_val.add_argument("scenario", help="path to the scenario JSON file")

    p_run = sub.add_parser("run", help="simulate a mission and write the logs")
    p_run.add_argument("scenario", help="path to the scenario JSON file")
    p_run.add_argument("--out", default="out", help="output directory (default: ./out)")
    p_run.add_argument("--max-steps", type=int, default=None,
                       help="override the scenario's step cap")
    p_run.add_argument("--time-limit", type=float, default=None,
                       help="per-solve time limit in seconds")
    p_run.add_argument("--solver", choices=BACKENDS, default="fallback",
                       help="solver backend (default: fallback)")
    p_run.add_argument("--seed", type=int, default=None,
                       help="seed recorded in the summary (runs are deterministic)")
    return parser


def _load(path: str):
    try:
        return load_scenario(path)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(2)


def cmd_validate(args) -> int:
    scenario = _load(args.scenario)
    violations = validate_scenario(scenario)
    if violations:
        print(f"{len(violations)} violation(s) in {args.scenario}:")
        for line in violations:
            print(f"  - {line}")
        return 1
    print(f"{args.scenario}: OK ({len(scenario.vehicles)} vehicle(s), "
          f"{len(scenario.waypoints)} waypoint(s), {len(scenario.obstacles)} obstacle(s))")
    return 0


def cmd_run(args) -> int:
    scenario = _load(args.scenario)
    violations = validate_scenario(scenario)
    if violations:
        print(f"refusing to run: {len(violations)} validation violation(s):",
              file=sys.stderr)
        for line in violations:
            print(f"  - {line}", file=sys.stderr)
        return 1
    config = SimulationConfig(
        max_steps=args.max_steps,
        solver_backend=args.solver,
        solve_time_limit=args.time_limit,
        seed=args.seed,
    )
    simlog = run_simulation(scenario, config)
    paths = save_logs(simlog, args.out)
    summary = simlog.summary
    print(f"scenario          : {summary['scenario']}")
    print(f"termination       : {summary['termination_reason']}")
    print(f"steps             : {summary['steps_run']}")
    print(f"coverage          : {summary['waypoints_covered']}/{summary['waypoints_total']}")
    print(f"all landed        : {summary['all_landed']}")
    for aid, info in summary["agents"].items():
        print(f"  {aid}: mode={info['final_mode']} dod={info['final_dod']:.4f} "
              f"home_distance={info['home_distance']:.2f} m")
    print(f"safety violations : {len(summary['safety_violations'])}")
    print(f"artifacts         : {', '.join(str(p) for p in paths.values())}")
    if summary["aborted"]:
        print(f"aborted: {summary['diagnostic']}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "validate":
        return cmd_validate(args)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
