"""Batch driver: run matrices of (adversary, seed), write traces and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .adversary import STRATEGIES, make_strategy
from .checks import CSV_HEADER, RunReport, convergence_deadline, join_check, measure, recheck
from .config import ConfigError, SimConfig, config_from_dict, load_config
from .engine import CorruptionSpec, FaultPlan, Simulator
from .trace import read_trace

log = logging.getLogger(__name__)

EXIT_OK, EXIT_VIOLATIONS, EXIT_CONFIG = 0, 1, 2


def parse_seeds(text: str) -> list[int]:
    """``"A..B"`` (inclusive), ``"A"`` or a comma list."""
    text = str(text).strip()
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError([f"bad seed range {text!r}; expected A..B"]) from None


@dataclass
class Scenario:
    config: SimConfig
    adversaries: list[str]
    seeds: list[int]
    duration_cycles: int = 12
    coherent_from_cycles: int = 0
    corruption: CorruptionSpec | None = field(default_factory=CorruptionSpec)
    adversary_params: dict = field(default_factory=dict)
    # (node, recover_at in cycles)
    recovering: list[tuple[int, float]] = field(default_factory=list)
    byzantine: list[int] | None = None
    trace: bool = True

    @classmethod
    def from_json(cls, doc: dict) -> "Scenario":
        if not isinstance(doc, dict):
            raise ConfigError(["scenario must be a JSON object"])
        known = {"config", "adversaries", "seeds", "duration_cycles", "coherent_from_cycles", "corruption",
                 "adversary_params", "recovering", "byzantine", "trace"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError([f"unknown scenario field {k!r}" for k in unknown])
        cfg = config_from_dict(doc.get("config", {"n": 4, "f": 1, "cycle": 50_000}))
        advs = doc.get("adversaries", sorted(STRATEGIES))
        bad = [a for a in advs if a not in STRATEGIES]
        if bad:
            raise ConfigError([f"unknown adversary {a!r}" for a in bad])
        seeds = doc.get("seeds", "0..9")
        seeds = parse_seeds(seeds) if isinstance(seeds, str) else [int(s) for s in seeds]
        corruption = doc.get("corruption", {})
        return cls(
            config=cfg,
            adversaries=list(advs),
            seeds=seeds,
            duration_cycles=doc.get("duration_cycles", 12),
            coherent_from_cycles=doc.get("coherent_from_cycles", 0),
            corruption=None if corruption is None else CorruptionSpec(**corruption),
            adversary_params=doc.get("adversary_params", {}),
            recovering=[tuple(x) for x in doc.get("recovering", [])],
            byzantine=doc.get("byzantine"),
            trace=doc.get("trace", True),
        )

    def plan(self, cfg: SimConfig) -> FaultPlan:
        recovering = tuple((int(q), int(at * cfg.cycle)) for q, at in self.recovering)
        if self.byzantine is not None:
            byz = frozenset(self.byzantine)
        else:
            byz = frozenset(range(cfg.n - cfg.f + len(recovering), cfg.n))
        return FaultPlan(
            byzantine=byz,
            recovering=recovering,
            corruption=self.corruption,
            coherent_from=self.coherent_from_cycles * cfg.cycle,
        )


def run_one(cfg: SimConfig, plan: FaultPlan, adversary: str, duration: int, params: dict | None = None,
            record_events: bool = True, trace_path: Path | None = None):
    """One simulation plus its report.  Returns ``(report, trace)``."""
    sim = Simulator(cfg, plan, make_strategy(adversary, params), duration, record_events=record_events)
    trace = sim.run()
    deadline = convergence_deadline(cfg, plan.coherent_from)
    report = measure(trace, cfg, deadline=deadline)
    for q, at in plan.recovering:
        if not join_check(trace, cfg, q, at):
            report.violations.append({"name": "join failed", "t": at + cfg.delta_node, "node": q, "detail": {}})
    trace.summary = report.to_json()
    if trace_path is not None:
        trace.write(trace_path)
    return report, trace


def reports_csv(reports: list[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(reports, key=lambda r: (r.adversary, r.seed)):
        w.writerow(r.csv_row())
    return buf.getvalue()


def _percentile(values: list[float], p: float):
    if not values:
        return None
    values = sorted(values)
    k = max(0, min(len(values) - 1, -(-len(values) * p // 100) - 1))
    return values[int(k)]


def percentile_table(reports: list[RunReport]) -> str:
    rows = ["adversary        metric           P50       P90       P99      P100"]
    by_adv: dict[str, list[RunReport]] = {}
    for r in reports:
        by_adv.setdefault(r.adversary, []).append(r)
    for adv in sorted(by_adv):
        rs = by_adv[adv]
        metrics = {
            "converged_at": [r.converged_at for r in rs if r.converged_at is not None],
            "sigma_observed": [r.sigma_observed for r in rs if r.sigma_observed is not None],
            "group_spread": [g for r in rs for g in r.group_spreads],
            "min_cycle_gap": [r.min_gap for r in rs if r.min_gap is not None],
            "max_cycle_gap": [r.max_gap for r in rs if r.max_gap is not None],
        }
        for name, vals in metrics.items():
            cells = [_percentile(vals, p) for p in (50, 90, 99, 100)]
            rows.append(f"{adv:<16} {name:<15}" + "".join(f"{'-' if c is None else c:>10}" for c in cells))
    return "\n".join(rows) + "\n"


def run_matrix(scenario: Scenario, out: Path | None = None, gzip_traces: bool = True) -> list[RunReport]:
    reports = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for adv in scenario.adversaries:
        for seed in scenario.seeds:
            cfg = scenario.config.with_seed(seed)
            plan = scenario.plan(cfg)
            duration = scenario.duration_cycles * cfg.cycle
            path = None
            if out is not None and scenario.trace:
                path = out / f"{adv}-{seed}.jsonl{'.gz' if gzip_traces else ''}"
            report, _ = run_one(cfg, plan, adv, duration, scenario.adversary_params, record_events=scenario.trace,
                                trace_path=path)
            if out is not None:
                (out / f"{adv}-{seed}.report.json").write_text(json.dumps(report.to_json(), sort_keys=True) + "\n")
            if report.violations:
                log.info("%s seed %d: %s", adv, seed, sorted({v["name"] for v in report.violations}))
            reports.append(report)
    if out is not None:
        write_summary(reports, out)
    return reports


def write_summary(reports: list[RunReport], out: Path):
    (out / "summary.csv").write_text(reports_csv(reports))
    (out / "percentiles.txt").write_text(percentile_table(reports))


def exit_code(reports: list[RunReport]) -> int:
    return EXIT_VIOLATIONS if any(r.violations for r in reports) else EXIT_OK


def run_experiment(scenario_file: str | Path, out: str | Path | None = None):
    """Run a scenario file.  Returns ``(reports, exit_code)``; a bad scenario
    yields ``([], 2)``."""
    try:
        doc = json.loads(Path(scenario_file).read_text())
        scenario = Scenario.from_json(doc)
        problems = scenario.plan(scenario.config).check(scenario.config)
        if problems:
            raise ConfigError(problems)
    except (ConfigError, json.JSONDecodeError, OSError, TypeError) as exc:
        log.error("scenario rejected: %s", exc)
        return [], EXIT_CONFIG
    reports = run_matrix(scenario, Path(out) if out is not None else None)
    return reports, exit_code(reports)


def load_reports(directory: str | Path) -> list[RunReport]:
    """Reports stored next to traces; traces without a report are re-checked."""
    directory = Path(directory)
    reports = []
    seen = set()
    for path in sorted(directory.glob("*.report.json")):
        doc = json.loads(path.read_text())
        reports.append(_report_from_json(doc))
        seen.add(path.name[: -len(".report.json")])
    for path in sorted(directory.glob("*.jsonl*")):
        stem = path.name.split(".jsonl")[0]
        if stem in seen:
            continue
        reports.append(recheck(read_trace(path)))
    return reports


def _report_from_json(doc: dict) -> RunReport:
    return RunReport(
        seed=doc["seed"],
        adversary=doc["adversary"],
        converged_at=doc["converged_at"],
        sigma_observed=doc["sigma_observed"],
        group_spreads=doc["group_spreads"],
        cycle_lengths={int(k): v for k, v in doc["cycle_lengths"].items()},
        violations=doc["violations"],
        config=doc["config"],
        instances=doc.get("instances", 0),
    )


def config_or_default(path: str | None) -> SimConfig:
    if path is None:
        from .config import DEFAULT_CONFIG
        return DEFAULT_CONFIG
    return load_config(path)
