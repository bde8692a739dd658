"""Command-line entry points: simulate, bench, oracle-check.

Exit codes: 0 success, 1 solver failure, 2 invalid arguments. Log verbosity is
controlled by the LEXPLAN_LOG environment variable (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .bench import (
    BenchmarkGrid,
    export_run,
    oracle_check,
    run_benchmark,
    write_benchmark_csv,
)
from .receding import GameRunError, run_game
from .scenario_io import ScenarioFormatError, load_scenario, write_scenario
from .scenarios import build_city, build_highway, build_overtaking, with_config

log = logging.getLogger("lexplan")

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_INVALID_ARGS = 2


def _setup_logging():
    level = os.environ.get("LEXPLAN_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s %(levelname)s %(message)s")


def _resolve_scenario(name: str, K: int | None):
    if name.startswith("file:"):
        if K is not None:
            raise ValueError("--K applies only to the built-in overtaking scenario")
        return load_scenario(name[len("file:") :])
    if name == "overtaking":
        return build_overtaking(K if K is not None else 2)
    if name in ("highway", "city"):
        if K is not None:
            raise ValueError("--K applies only to the built-in overtaking scenario")
        return build_highway() if name == "highway" else build_city()
    raise ValueError(f"unknown scenario {name!r}; use highway, city, overtaking or file:<path>")


def _cmd_simulate(args) -> int:
    try:
        scenario = _resolve_scenario(args.scenario, args.K)
    except (ValueError, OSError, ScenarioFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID_ARGS
    if args.L is not None:
        scenario = with_config(scenario, max_rounds=args.L)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scenario(scenario, out / "scenario.json")
    try:
        run = run_game(scenario)
    except GameRunError as err:
        log.error("simulation failed: %s", err)
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    traj_path, metrics_path = export_run(run, out)
    total = sum(m.solve_time_s for m in run.stage_metrics)
    print(
        f"{scenario.name}: {run.n_stages} stages, {len(run.executed[0])} steps, "
        f"solve time {total:.2f}s -> {traj_path}, {metrics_path}"
    )
    return EXIT_OK


def _parse_int_list(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def _cmd_bench(args) -> int:
    try:
        grid = BenchmarkGrid(
            k_values=_parse_int_list(args.K), l_values=_parse_int_list(args.L), runs=args.runs, seed=args.seed
        )
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID_ARGS
    records = run_benchmark(grid, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_benchmark_csv(records, out / "benchmark.csv")
    for r in records:
        print(
            f"K={r.K} L={r.L}: t_solve={r.t_solve_mean * 1e3:.1f}ms "
            f"l1_next_iter={r.l1_next_iter:.3e} stages={r.stages}"
        )
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    results = oracle_check(runs=args.runs, seed=args.seed)
    failures = [r for r in results if not r["ok"]]
    for r in results:
        status = "ok" if r["ok"] else "MISMATCH"
        print(f"seed {r['seed']}: {status}")
    if failures:
        print(f"{len(failures)}/{len(results)} instances mismatched", file=sys.stderr)
        return EXIT_SOLVER_FAILURE
    print(f"all {len(results)} instances consistent with the brute-force oracle")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lexplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one receding-horizon game and export CSVs")
    sim.add_argument("--scenario", required=True, help="highway | city | overtaking | file:<path>")
    sim.add_argument("--K", type=int, default=None, help="preference depth (overtaking only)")
    sim.add_argument("--L", type=int, default=None, help="override the IBR iteration cap")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=_cmd_simulate)

    bench = sub.add_parser("bench", help="run the Monte Carlo benchmark grid")
    bench.add_argument("--K", default="2,3", help="comma-separated preference depths")
    bench.add_argument("--L", default="1,2,3,5,10,20", help="comma-separated iteration caps")
    bench.add_argument("--runs", type=int, default=20)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", required=True, help="output directory")
    bench.add_argument("--workers", type=int, default=1, help="parallel runs (timings valid only with 1)")
    bench.set_defaults(func=_cmd_bench)

    oracle = sub.add_parser("oracle-check", help="compare IBR against the brute-force oracle")
    oracle.add_argument("--runs", type=int, default=10)
    oracle.add_argument("--seed", type=int, default=0)
    oracle.set_defaults(func=_cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
