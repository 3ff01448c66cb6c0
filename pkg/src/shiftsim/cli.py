"""Command line: ``shiftsim simulate`` and ``shiftsim compare``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .decision import POLICIES
from .errors import ShiftSimError
from .scenario import parse_scenario
from .simengine import EngineConfig, RunResult, fmt_number, run

EXIT_OK = 0
EXIT_USAGE = 2

COMPARE_HEADER = "policy,total_revenue,total_penalties,total_outage_s,kpi_violation_s,reconfig_ops"


class _UsageError(Exception):
    pass


def _prepare_out(out_dir) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
    if not os.access(out, os.W_OK | os.X_OK):
        raise _UsageError(f"output directory {out} is not writable")
    return out


def write_outputs(result: RunResult, out: Path) -> None:
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2) + "\n", encoding="utf-8")
    (out / "events.log").write_text(result.events_text(), encoding="utf-8")
    (out / "timeseries.csv").write_text(result.timeseries_text(), encoding="utf-8")


def _config(duration_override: Optional[float]) -> EngineConfig:
    if duration_override is not None and duration_override <= 0:
        raise _UsageError("--duration-override must be positive")
    return EngineConfig(duration_override=duration_override)


def _load(scenario_path):
    try:
        return parse_scenario(scenario_path)
    except FileNotFoundError:
        raise _UsageError(f"scenario file not found: {scenario_path}") from None


def cmd_simulate(scenario_path, seed: int, policy: str, out_dir, duration_override: Optional[float] = None) -> int:
    """Run one policy and write summary.json, events.log and timeseries.csv."""
    try:
        if policy not in POLICIES:
            raise _UsageError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")
        config = _config(duration_override)
        out = _prepare_out(out_dir)
        scenario = _load(scenario_path)
        result = run(scenario, seed, policy, config)
        write_outputs(result, out)
    except (_UsageError, ShiftSimError, OSError) as exc:
        print(f"shiftsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def compare_rows(results: Sequence[RunResult]) -> List[str]:
    rows = [COMPARE_HEADER]
    for r in results:
        m = r.report
        rows.append(",".join([r.policy, fmt_number(m.total_revenue), fmt_number(m.total_penalties),
                              fmt_number(m.total_outage_s), fmt_number(m.kpi_violation_s), str(m.reconfig_ops)]))
    return rows


def cmd_compare(scenario_path, seed: int, policies: Sequence[str], out_dir,
                duration_override: Optional[float] = None) -> int:
    """Run every policy with the same seed; one subdirectory per policy plus compare.csv."""
    try:
        policies = list(policies)
        if len(policies) < 2:
            raise _UsageError("compare needs at least two policies")
        unknown = [p for p in policies if p not in POLICIES]
        if unknown:
            raise _UsageError(f"unknown policies {unknown}; choose from {', '.join(POLICIES)}")
        if len(set(policies)) != len(policies):
            raise _UsageError("policies must be distinct")
        config = _config(duration_override)
        out = _prepare_out(out_dir)
        scenario = _load(scenario_path)
        results = []
        for policy in policies:
            result = run(scenario, seed, policy, config)
            sub = _prepare_out(out / policy)
            write_outputs(result, sub)
            results.append(result)
        (out / "compare.csv").write_text("\n".join(compare_rows(results)) + "\n", encoding="utf-8")
    except (_UsageError, ShiftSimError, OSError) as exc:
        print(f"shiftsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shiftsim", description="Service shifting simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="scenario YAML file or bundled fixture name")
    common.add_argument("--seed", type=int, default=1)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--duration-override", type=float, default=None, help="simulated seconds")
    sim = sub.add_parser("simulate", parents=[common], help="run one policy")
    sim.add_argument("--policy", default="payoff", help=f"one of {', '.join(POLICIES)}")
    cmp_ = sub.add_parser("compare", parents=[common], help="run several policies with the same seed")
    cmp_.add_argument("--policies", required=True, help="comma-separated policy list")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "simulate":
        return cmd_simulate(args.scenario, args.seed, args.policy, args.out, args.duration_override)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    return cmd_compare(args.scenario, args.seed, policies, args.out, args.duration_override)


if __name__ == "__main__":
    sys.exit(main())
