"""Command-line entry points: run, sweep, check-gradients, write-config.

Exit codes: 0 success, 1 planner failure (failed episode, unreachable goal,
gradient mismatch), 2 bad input (unreadable or invalid documents, usage).
"""
import argparse
import csv
import io
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from .config import (
    PlannerConfig,
    Scenario,
    SweepSpec,
    apply_override,
    dump_config,
    load_config,
    load_scenario,
    load_sweep,
)
from .diagnostics import TOLERANCE, gradient_suite
from .errors import ConfigError, PlannerError
from .logging_setup import configure_logging
from .services.simulator import ablate_easa, dump_metrics, dump_timing, run_episode
from .storage import write_text_atomic

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BAD_INPUT = 2

SUMMARY_COLUMNS = (
    "value", "seed", "outcome", "success", "flight_time", "path_length",
    "min_clearance", "max_speed", "hazard_min_speed", "error",
)


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _load_config(path: Optional[str]) -> PlannerConfig:
    return load_config(path) if path else PlannerConfig()


def _load_scenario(path: str, seed: Optional[int]) -> Scenario:
    scenario = load_scenario(path)
    if scenario.map.file is not None and not Path(scenario.map.file).is_absolute():
        resolved = str(Path(path).parent / scenario.map.file)
        scenario = scenario.model_copy(update={"map": scenario.map.model_copy(update={"file": resolved})})
    if seed is not None:
        scenario = scenario.model_copy(update={"map": scenario.map.model_copy(update={"seed": seed})})
    return scenario


def _write_episode(out: Path, log, metrics, suffix: str = "") -> None:
    write_text_atomic(out / f"flight_log{suffix}.csv", log.to_csv())
    write_text_atomic(out / f"metrics{suffix}.yaml", dump_metrics(metrics))
    write_text_atomic(out / f"timing{suffix}.yaml", dump_timing(log))


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    scenario = _load_scenario(args.scenario, args.seed)
    out = Path(args.out)
    print(f"🚀 Running {scenario.name} (seed {scenario.map.seed})")
    if args.ablate_easa:
        result = ablate_easa(scenario, config)
        _write_episode(out, *result.easa_on, suffix="_on")
        _write_episode(out, *result.easa_off, suffix="_off")
        write_text_atomic(out / "comparison.yaml", yaml.safe_dump(result.comparison(), sort_keys=False))
        metrics = result.easa_on[1]
        print(f"📊 risk penalty on: {metrics.outcome.value}, off: {result.easa_off[1].outcome.value}")
    else:
        log, metrics = run_episode(scenario, config)
        _write_episode(out, log, metrics)
    if metrics.success:
        print(f"✅ Reached the goal in {metrics.flight_time:.2f}s, min clearance {metrics.min_clearance:.3f}m")
        return EXIT_OK
    print(f"❌ Episode ended with {metrics.outcome.value} after {metrics.flight_time:.2f}s")
    return EXIT_FAILURE


def _sweep_cell(task: Tuple[PlannerConfig, Scenario, str, Any, int]) -> Dict[str, Any]:
    config, scenario, parameter, value, seed = task
    row: Dict[str, Any] = {"value": value, "seed": seed}
    try:
        root, dotted = parameter.split(".", 1)
        if root == "scenario":
            scenario = apply_override(scenario, dotted, value)
        else:
            config = apply_override(config, dotted, value)
        scenario = scenario.model_copy(update={"map": scenario.map.model_copy(update={"seed": seed})})
        _, metrics = run_episode(scenario, config)
    except (PlannerError, ValueError) as e:
        row.update({"outcome": "error", "success": False, "error": str(e)})
        return row
    data = metrics.to_dict()
    row.update({key: data.get(key) for key in SUMMARY_COLUMNS if key in data})
    row["metrics"] = dump_metrics(metrics)
    return row


def _medians(rows: List[Dict[str, Any]], values: Sequence[Any]) -> Dict[str, Dict[str, Any]]:
    summary = {}
    for value in values:
        cell = [row for row in rows if row["value"] == value]
        flown = [row for row in cell if row.get("success")]
        summary[str(value)] = {
            "runs": len(cell),
            "successes": len(flown),
            "median_flight_time": statistics.median(row["flight_time"] for row in flown) if flown else None,
            "median_path_length": statistics.median(row["path_length"] for row in flown) if flown else None,
            "min_clearance": min((row["min_clearance"] for row in flown), default=None),
        }
    return summary


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    sweep: SweepSpec = load_sweep(args.sweep)
    scenario = _load_scenario(args.scenario, None)
    out = Path(args.out)
    tasks = [(config, scenario, sweep.parameter, value, seed) for value in sweep.values for seed in sweep.seeds]
    print(f"🧮 Sweeping {sweep.parameter} over {len(sweep.values)} values x {len(sweep.seeds)} seeds")

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_cell, tasks))
    else:
        rows = [_sweep_cell(task) for task in tasks]

    for row in rows:
        text = row.pop("metrics", None)
        if text is not None:
            write_text_atomic(out / "cells" / f"{row['value']}_seed{row['seed']}.yaml", text)

    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    write_text_atomic(out / "summary.csv", buffer.getvalue())
    medians = _medians(rows, sweep.values)
    write_text_atomic(out / "medians.yaml", yaml.safe_dump(medians, sort_keys=False))

    for value, cell in medians.items():
        median = cell["median_flight_time"]
        shown = f"{median:.2f}s" if median is not None else "n/a"
        print(f"  {sweep.parameter}={value}: {cell['successes']}/{cell['runs']} succeeded, median flight time {shown}")
    failures = sum(1 for row in rows if row.get("outcome") == "error")
    if failures:
        print(f"⚠️ {failures} cell(s) failed to run, see summary.csv")
    print(f"✅ Sweep written to {out}")
    return EXIT_OK


def cmd_check_gradients(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    results = gradient_suite(config, trials=args.trials, seed=args.seed or 0, inject_sign_flip=args.inject_sign_flip)
    worst = 0.0
    for term, check in results.items():
        status = "ok" if check.max_error <= TOLERANCE else "MISMATCH"
        print(f"  {term:4s} max relative error {check.max_error:.3e} (coordinate {check.index}) {status}")
        worst = max(worst, check.max_error)
    if worst > TOLERANCE:
        print(f"❌ Gradient check failed: worst error {worst:.3e} > {TOLERANCE:g}")
        return EXIT_FAILURE
    print(f"✅ All gradients match within {TOLERANCE:g}")
    return EXIT_OK


def cmd_write_config(args: argparse.Namespace) -> int:
    text = dump_config(_load_config(args.config))
    if args.out:
        write_text_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptive_planner", description="Risk-aware multi-layer quadrotor planner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="fly one scenario and write the flight log and metrics")
    run.add_argument("--config", help="planner config (defaults when omitted)")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, help="override the map seed")
    run.add_argument("--ablate-easa", action="store_true", help="also fly without the risk penalty")
    run.set_defaults(handler=cmd_run)

    sweep = sub.add_parser("sweep", help="run a parameter x seed grid and summarize it")
    sweep.add_argument("--config")
    sweep.add_argument("--scenario", required=True, help="base scenario the sweep overrides")
    sweep.add_argument("--sweep", required=True, help="sweep document")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--jobs", type=positive_int, default=1)
    sweep.set_defaults(handler=cmd_sweep)

    check = sub.add_parser("check-gradients", help="finite-difference check of every cost term")
    check.add_argument("--config")
    check.add_argument("--trials", type=positive_int, default=50)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    check.set_defaults(handler=cmd_check_gradients)

    write = sub.add_parser("write-config", help="write the effective config document")
    write.add_argument("--config")
    write.add_argument("--out")
    write.set_defaults(handler=cmd_write_config)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except PlannerError as e:
        print(f"planner failure: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
