"""Command-line entry point: ``trapsim run|paired|sweep|report``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .engine import InvariantViolation, dumps_json, run, run_paired_results, sweep
from .protocol import Mode, ProtocolMode
from .scenario import ScenarioError, load_scenario, parse_duration

log = logging.getLogger("trapsim")

PUBLISHED_TABLE4 = {
    "baseline": {"tx_actions": 29, "success_rate": 0.31, "throughput_per_min": 0.15},
    "trap": {"tx_actions": 21, "success_rate": 1.00, "throughput_per_min": 0.35},
}


def _seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("TRAPSIM_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ScenarioError(f"TRAPSIM_SEED is not an integer: {env!r}") from None
    return 0


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _load(args: argparse.Namespace):
    scenario = load_scenario(args.scenario)
    mode = None
    if getattr(args, "mode", None):
        mode = ProtocolMode(Mode(args.mode), scenario.mode.backoff_range_us)
    duration = None
    if getattr(args, "duration", None) is not None:
        try:
            duration = parse_duration(args.duration)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
    if mode is None and duration is None:
        return scenario
    return scenario.with_overrides(mode=mode, duration_us=duration)


def _write(path: str | None, text: str) -> None:
    if path is None:
        return
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True)
    p.write_text(text)


def _default_summary(args: argparse.Namespace) -> str:
    return args.summary or f"{args.command}_summary.json"


def _arm_path(path: str, arm: str) -> str:
    p = Path(path)
    return str(p.with_name(f"{p.stem}_{arm}{p.suffix}"))


def cmd_run(args: argparse.Namespace) -> dict[str, Any]:
    scenario = _load(args)
    seed = _seed(args)
    result = run(scenario, seed)
    if args.trace:
        _write(args.trace, result.trace.to_csv())
    return {
        "command": "run",
        "scenario": scenario.name,
        "seed": seed,
        "mode": scenario.mode.kind.value,
        "metrics": result.metrics.to_dict(),
    }


def cmd_paired(args: argparse.Namespace) -> dict[str, Any]:
    scenario = _load(args)
    seed = _seed(args)
    trap, base = run_paired_results(scenario, seed)
    if args.trace:
        _write(_arm_path(args.trace, "trap"), trap.trace.to_csv())
        _write(_arm_path(args.trace, "baseline"), base.trace.to_csv())
    return {
        "command": "paired",
        "scenario": scenario.name,
        "seed": seed,
        "trap_mode": trap.scenario.mode.kind.value,
        "trap": trap.metrics.to_dict(),
        "baseline": base.metrics.to_dict(),
    }


def _parse_grid(items: Sequence[str]) -> dict[str, list[Any]]:
    grid: dict[str, list[Any]] = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ScenarioError(f"grid entry must look like path=v1,v2: {item!r}")
        grid[key] = [json.loads(v) if _is_json(v) else v for v in values.split(",")]
    if not grid:
        raise ScenarioError("sweep needs at least one --grid entry")
    return grid


def _is_json(text: str) -> bool:
    try:
        json.loads(text)
    except ValueError:
        return False
    return True


def cmd_sweep(args: argparse.Namespace) -> dict[str, Any]:
    scenario = _load(args)
    grid = _parse_grid(args.grid)
    rows = sweep(scenario, grid, args.seeds, base_seed=_seed(args))
    return {
        "command": "sweep",
        "scenario": scenario.name,
        "base_seed": _seed(args),
        "seeds": args.seeds,
        "grid": grid,
        "rows": rows,
    }


def report_table4(paths: Sequence[str | Path]) -> str:
    """Side-by-side mean/std of paired summaries against the published table."""
    summaries = []
    for p in paths:
        data = json.loads(Path(p).read_text())
        if "trap" not in data or "baseline" not in data:
            raise ScenarioError(f"{p} is not a paired summary")
        summaries.append(data)
    summaries.sort(key=lambda d: d.get("seed", 0))

    def stats(arm: str, field: str, scale: float = 1.0) -> tuple[float, float]:
        vals = [d[arm][field] for d in summaries if d[arm][field] is not None]
        if not vals:
            return float("nan"), 0.0
        arr = np.asarray(vals, dtype=float) * scale
        return float(arr.mean()), float(arr.std())

    rows = [
        ("Transmission actions", "tx_actions", 1.0, "{:.1f} ± {:.1f}", "{:g}"),
        ("Successful reception rate [%]", "success_rate", 100.0, "{:.1f} ± {:.1f}", "{:g}"),
        ("Network throughput [p/min]", "throughput_per_min", 1.0, "{:.3f} ± {:.3f}", "{:g}"),
    ]
    lines = [f"Comparison with and without TRAP ({len(summaries)} paired run(s))", ""]
    header = f"{'':32s}{'simulated':>22s}{'published':>11s}"
    for arm, title in (("baseline", "Without TRAP"), ("trap", "With TRAP")):
        lines.append(title)
        lines.append(header)
        for label, field, scale, fmt, pfmt in rows:
            mean, std = stats(arm, field, scale)
            ref = PUBLISHED_TABLE4[arm][field] * scale
            lines.append(f"  {label:30s}{fmt.format(mean, std):>22s}{pfmt.format(ref):>11s}")
        lines.append("")
    wins = sum(
        d["trap"]["throughput_per_min"] > d["baseline"]["throughput_per_min"] for d in summaries
    )
    lines.append(f"TRAP throughput above baseline in {wins}/{len(summaries)} run(s)")
    return "\n".join(lines) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trapsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--scenario", default="table3.json",
                       help="scenario JSON path or shipped scenario name")
        p.add_argument("--seed", type=_u64, default=None,
                       help="run seed (falls back to $TRAPSIM_SEED, then 0)")
        p.add_argument("--duration", help="override simulated duration, e.g. 60m, 90s, 1h")
        p.add_argument("--summary", help="summary JSON path")
        p.add_argument("--quiet", action="store_true", help="do not echo the summary")

    p_run = sub.add_parser("run", help="simulate one protocol mode")
    common(p_run)
    p_run.add_argument("--mode", choices=[m.value for m in Mode])
    p_run.add_argument("--trace", help="trace CSV path")

    p_pair = sub.add_parser("paired", help="TRAP vs baseline on the same energy input")
    common(p_pair)
    p_pair.add_argument("--mode", choices=["trap", "csma"], help="TRAP arm variant")
    p_pair.add_argument("--trace", help="trace CSV path; _trap/_baseline suffixes are added")

    p_sweep = sub.add_parser("sweep", help="grid of scenario parameters x seeds")
    common(p_sweep)
    p_sweep.add_argument("--mode", choices=[m.value for m in Mode])
    p_sweep.add_argument("--grid", action="append", default=[],
                         help="dotted.path=v1,v2 (repeatable), e.g. nodes.1.freq_hz=12000,39000")
    p_sweep.add_argument("--seeds", type=int, default=1, help="seeds per grid cell")

    p_rep = sub.add_parser("report", help="Table IV style report from paired summaries")
    p_rep.add_argument("summaries", nargs="+")
    p_rep.add_argument("--output", help="also write the report to this file")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            text = report_table4(args.summaries)
            _write(args.output, text)
            sys.stdout.write(text)
            return 0
        handler = {"run": cmd_run, "paired": cmd_paired, "sweep": cmd_sweep}[args.command]
        summary = handler(args)
        text = dumps_json(summary)
        _write(_default_summary(args), text)
        if not args.quiet:
            sys.stdout.write(text)
        return 0
    except (ScenarioError, OSError, json.JSONDecodeError) as exc:
        print(f"trapsim: error: {exc}", file=sys.stderr)
        return 1
    except InvariantViolation as exc:
        print(f"trapsim: internal invariant violated: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
