"""Command-line entry point.  Exit codes: 0 clean, 1 violations, 2 config error."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .adversary import STRATEGIES
from .checks import recheck
from .config import ConfigError
from .engine import CorruptionSpec
from .trace import read_trace


def _adversaries(values: list[str] | None) -> list[str]:
    if not values or values == ["all"]:
        return sorted(STRATEGIES)
    out = []
    for v in values:
        out += [x for x in v.split(",") if x]
    bad = [a for a in out if a not in STRATEGIES]
    if bad:
        raise ConfigError([f"unknown adversary {a!r}; choose from {sorted(STRATEGIES)}" for a in bad])
    return out


def cmd_run(args) -> int:
    cfg = ex.config_or_default(args.config)
    params = json.loads(args.params) if args.params else {}
    corruption = None if args.clean else CorruptionSpec(
        spurious_messages=args.spurious_messages, spurious_instances=args.spurious_instances, preset=args.preset)
    scenario = ex.Scenario(
        config=cfg,
        adversaries=_adversaries(args.adversary),
        seeds=ex.parse_seeds(args.seeds),
        duration_cycles=args.duration_cycles,
        coherent_from_cycles=args.coherent_from_cycles,
        corruption=corruption,
        adversary_params=params,
        trace=args.trace,
    )
    out = Path(args.out) if args.out else None
    reports = ex.run_matrix(scenario, out, gzip_traces=not args.plain)
    sys.stdout.write(ex.reports_csv(reports))
    if args.percentiles:
        sys.stdout.write(ex.percentile_table(reports))
    return ex.exit_code(reports)


def cmd_check(args) -> int:
    trace = read_trace(args.trace)
    report = recheck(trace)
    json.dump(report.to_json(), sys.stdout, sort_keys=True, indent=1 if args.pretty else None)
    sys.stdout.write("\n")
    return ex.exit_code([report])


def cmd_report(args) -> int:
    directory = Path(args.dir)
    if not directory.is_dir():
        raise ConfigError([f"{directory} is not a directory"])
    reports = ex.load_reports(directory)
    text = ex.reports_csv(reports)
    (directory / "summary.csv").write_text(text)
    sys.stdout.write(text)
    return ex.exit_code(reports)


def cmd_experiment(args) -> int:
    reports, code = ex.run_experiment(args.scenario, args.out)
    if reports:
        sys.stdout.write(ex.percentile_table(reports))
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pulsesync", description="Byzantine self-stabilizing pulse synchronization simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a seed range against one or more adversaries")
    r.add_argument("--config", help="JSON config file (n, f, cycle, d, delta, rho_num, rho_den, epsilon, seed)")
    r.add_argument("--adversary", action="append", help="strategy name, comma list or 'all' (repeatable)")
    r.add_argument("--seeds", default="0..9", help="inclusive range A..B")
    r.add_argument("--duration-cycles", type=int, default=12)
    r.add_argument("--coherent-from-cycles", type=int, default=0)
    r.add_argument("--out", help="directory for traces, reports and summary.csv")
    r.add_argument("--trace", action=argparse.BooleanOptionalAction, default=True,
                   help="record every event (--no-trace keeps pulses and instances only)")
    r.add_argument("--plain", action="store_true", help="write uncompressed .jsonl traces")
    r.add_argument("--clean", action="store_true", help="start from clean states instead of corrupted ones")
    r.add_argument("--preset", default="random", choices=["random", "antisync"])
    r.add_argument("--spurious-messages", type=int, default=20)
    r.add_argument("--spurious-instances", type=int, default=3)
    r.add_argument("--params", help="strategy parameters as a JSON object")
    r.add_argument("--percentiles", action="store_true", help="also print the percentile table")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("check", help="re-run validators on a stored trace")
    c.add_argument("trace")
    c.add_argument("--pretty", action="store_true")
    c.set_defaults(func=cmd_check)

    rp = sub.add_parser("report", help="aggregate a run directory into CSV")
    rp.add_argument("dir")
    rp.set_defaults(func=cmd_report)

    e = sub.add_parser("experiment", help="run a scenario file")
    e.add_argument("scenario")
    e.add_argument("--out")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return ex.EXIT_CONFIG
    except (json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ex.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
