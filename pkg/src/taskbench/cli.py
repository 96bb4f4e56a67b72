"""Command-line driver: single runs, sweep matrices and the verify suite."""

import argparse
import csv
import json
import os
import sys

from . import solvers, tracing, verify
from .config import (
    BALANCE_MODES, ConfigError, RunConfig, SOLVERS, STRATEGIES, YIELD_MODES,
)
from .runtime import StarvationError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_STARVATION = 2


def _add_run_flags(parser):
    parser.add_argument("--solver", choices=SOLVERS)
    parser.add_argument("--threading-model", dest="strategy", choices=STRATEGIES)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--grid-exp", type=int, help="patches per axis M = 3**k")
    parser.add_argument("--patch-size", type=int, help="volumes per patch axis")
    parser.add_argument("--balance", choices=BALANCE_MODES)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--cfl", type=float)
    parser.add_argument("--ready-cap", type=int)
    parser.add_argument("--merge-fraction", type=float)
    parser.add_argument("--max-merge-batches", type=int)
    parser.add_argument("--yield-mode", choices=YIELD_MODES)
    parser.add_argument("--partitions", type=int,
                        help="override the partition count (default: thread count)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="taskbench",
        description="Task-scheduling strategy benchmark on a patch-based "
                    "2D Euler finite-volume solver.")
    sub = parser.add_subparsers(dest="command")

    run = sub.add_parser("run", help="run one configuration")
    _add_run_flags(run)
    run.add_argument("--trace", dest="trace_path", metavar="PATH",
                     help="event CSV output (default trace.csv)")
    run.add_argument("--summary", dest="summary_path", metavar="PATH",
                     help="summary JSON output (default summary.json)")

    sweep = sub.add_parser("sweep", help="run a threads x strategy x balance matrix")
    _add_run_flags(sweep)
    sweep.add_argument("--threads-list", default="1,2,4,8",
                       help="comma-separated thread counts")
    sweep.add_argument("--combos",
                       default="bsp-native,enclave-native,enclave-hold-back,"
                               "enclave-backfill",
                       help="comma-separated solver-strategy combinations")
    sweep.add_argument("--balances", default="well,ill",
                       help="comma-separated balance modes")
    sweep.add_argument("--out", default="results.csv", help="sweep CSV path")

    sub.add_parser("verify", help="run the oracle and invariant suite")
    return parser


def _config_from_args(args, parser):
    kwargs = {}
    for field in ("solver", "strategy", "threads", "grid_exp", "patch_size",
                  "balance", "steps", "cfl", "ready_cap", "merge_fraction",
                  "max_merge_batches", "yield_mode", "partitions",
                  "trace_path", "summary_path"):
        value = getattr(args, field, None)
        if value is not None:
            kwargs[field] = value
    try:
        return RunConfig(**kwargs)
    except ConfigError as exc:
        parser.error(str(exc))


def parse_config(argv):
    """Parse run-command flags into a RunConfig (defaults when argv is empty)."""
    parser = build_parser()
    args = parser.parse_args(["run", *argv])
    return _config_from_args(args, parser)


def _summary_payload(config, result):
    state = result.state
    return {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "checksum": result.checksum,
        "elapsed_ns": result.elapsed_ns,
        "enclave_cells": state.enclave_count,
        "skeleton_cells": state.skeleton_count,
        "final_dt": state.dt,
        **result.summary.to_dict(),
    }


def cmd_run(config: RunConfig) -> int:
    try:
        result = solvers.run_config(config)
    except StarvationError as exc:
        print(f"taskbench: aborted: {exc}", file=sys.stderr)
        return EXIT_STARVATION
    except Exception as exc:
        print(f"taskbench: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    summary_path = config.summary_path or "summary.json"
    trace_path = config.trace_path or "trace.csv"
    try:
        with open(summary_path, "w") as fh:
            json.dump(_summary_payload(config, result), fh, indent=2)
            fh.write("\n")
        tracing.write_events_csv(result.events, trace_path)
    except OSError as exc:
        print(f"taskbench: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_ERROR
    per_patch = result.time_per_step_per_patch_ns
    print(f"solver={config.solver} strategy={config.strategy} "
          f"threads={config.threads} steps={config.steps} "
          f"time/step/patch={per_patch:.0f} ns checksum={result.checksum[:16]}")
    return EXIT_OK


SWEEP_COLUMNS = ["config_hash", "solver", "strategy", "threads", "balance",
                 "grid_exp", "patch_size", "steps", "status",
                 "time_per_step_per_patch_ns", "checksum", "error"]


def _existing_hashes(path):
    if not os.path.exists(path):
        return set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return {row["config_hash"] for row in reader}


def sweep_cells(base: RunConfig, threads_list, combos, balances):
    for balance in balances:
        for combo in combos:
            solver, _, strategy = combo.partition("-")
            for threads in threads_list:
                yield RunConfig(**{**base.to_dict(),
                                   "solver": solver, "strategy": strategy,
                                   "threads": threads, "balance": balance,
                                   "trace_path": None, "summary_path": None})


def cmd_sweep(base: RunConfig, threads_list, combos, balances, out_path) -> int:
    done = _existing_hashes(out_path)
    new_file = not os.path.exists(out_path)
    failures = 0
    with open(out_path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        if new_file:
            writer.writeheader()
        for config in sweep_cells(base, threads_list, combos, balances):
            chash = config.config_hash()
            if chash in done:
                continue
            row = {
                "config_hash": chash, "solver": config.solver,
                "strategy": config.strategy, "threads": config.threads,
                "balance": config.balance, "grid_exp": config.grid_exp,
                "patch_size": config.patch_size, "steps": config.steps,
                "status": "ok", "time_per_step_per_patch_ns": "",
                "checksum": "", "error": "",
            }
            try:
                result = solvers.run_config(config)
                row["time_per_step_per_patch_ns"] = (
                    f"{result.time_per_step_per_patch_ns:.1f}")
                row["checksum"] = result.checksum
            except Exception as exc:
                row["status"] = "error"
                row["error"] = str(exc)
                failures += 1
            writer.writerow(row)
            fh.flush()
            print(f"  {config.solver}-{config.strategy} threads={config.threads} "
                  f"balance={config.balance}: {row['status']}")
    return EXIT_ERROR if failures else EXIT_OK


def cmd_verify() -> int:
    results = verify.run_all()
    width = max(len(name) for name, _, _ in results)
    failed = 0
    for name, ok, detail in results:
        mark = "PASS" if ok else "FAIL"
        if not ok:
            failed += 1
        print(f"{mark}  {name:<{width}}  {detail}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_ERROR if failed else EXIT_OK


def _parse_int_list(text):
    return [int(part) for part in text.split(",") if part]


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    if not argv or argv[0].startswith("-"):
        argv = ["run", *argv]
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify":
        return cmd_verify()
    config = _config_from_args(args, parser)
    if args.command == "run":
        return cmd_run(config)
    try:
        threads_list = _parse_int_list(args.threads_list)
        combos = [c.strip() for c in args.combos.split(",") if c.strip()]
        balances = [b.strip() for b in args.balances.split(",") if b.strip()]
        for combo in combos:
            solver, _, strategy = combo.partition("-")
            if solver not in SOLVERS or strategy not in STRATEGIES:
                parser.error(
                    f"bad combo {combo!r}: expected <solver>-<strategy> with "
                    f"solver in {list(SOLVERS)} and strategy in {list(STRATEGIES)}")
        for balance in balances:
            if balance not in BALANCE_MODES:
                parser.error(f"bad balance {balance!r}: expected one of "
                             f"{list(BALANCE_MODES)}")
    except ValueError as exc:
        parser.error(str(exc))
    return cmd_sweep(config, threads_list, combos, balances, args.out)


if __name__ == "__main__":
    sys.exit(main())
