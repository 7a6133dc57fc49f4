"""Predicates and metrics over a finished run's pulse history.

Everything here reads pulse times only (real ticks) and never looks at node
state, so a stored trace can be re-checked without re-running it.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import asdict, dataclass, field

from . import agreement as ag
from .config import SimConfig, agreement_duration
from .trace import Trace

INF = math.inf


def phi(pulses: list[int], t: int) -> float:
    """Elapsed real time since the last pulse at or before ``t``; inf if none."""
    i = bisect_right(pulses, t)
    if i == 0:
        return INF
    return t - pulses[i - 1]


def _history(trace_or_pulses) -> dict[int, list[int]]:
    return trace_or_pulses.pulses if isinstance(trace_or_pulses, Trace) else trace_or_pulses


def is_synchronized(trace, t: int, correct, cfg: SimConfig) -> bool:
    hist = _history(trace)
    sigma = cfg.sigma
    now = [phi(hist.get(q, []), t) for q in correct]
    if any(x > cfg.cycle_max for x in now):
        return False
    before = None
    for a in range(len(now)):
        for b in range(a + 1, len(now)):
            diff = abs(now[a] - now[b])
            if diff <= sigma:
                continue
            if not cfg.cycle_min - sigma <= diff <= cfg.cycle_max:
                return False
            if before is None:
                before = [phi(hist.get(q, []), t - sigma) for q in correct]
            # both inf: neither pulsed before t - sigma, so no lookback witness
            if math.isinf(before[a]) or math.isinf(before[b]) or abs(before[a] - before[b]) > sigma:
                return False
    return True


def sample_times(trace, correct, cfg: SimConfig, end: int, start: int = 0) -> list[int]:
    hist = _history(trace)
    sigma = cfg.sigma
    first = max(start, sigma)
    times = set(range(first, end + 1, sigma))
    for q in correct:
        for p in hist.get(q, []):
            # phi differences change at pulses, the lookback at p + sigma, and
            # the cycle_max bound is first exceeded at p + cycle_max + 1
            for t in (p, p + sigma, p + cfg.cycle_max + 1):
                if first <= t <= end:
                    times.add(t)
    times.add(end)
    return sorted(t for t in times if t >= first)


def find_convergence(trace, cfg: SimConfig, correct=None, end: int | None = None, start: int = 0) -> int | None:
    """Earliest sample from which the system is synchronized at every later sample."""
    if correct is None:
        correct = trace.meta["correct"]
    if end is None:
        end = trace.end
    samples = sample_times(trace, correct, cfg, end, start)
    found = None
    for t in reversed(samples):
        if not is_synchronized(trace, t, correct, cfg):
            break
        found = t
    return found


def convergence_deadline(cfg: SimConfig, coherent_from: int) -> int:
    if coherent_from == 0:
        return 4 * cfg.cycle
    return coherent_from + 4 * cfg.cycle + cfg.cycle_max


@dataclass
class RunReport:
    seed: int
    adversary: str
    converged_at: int | None
    sigma_observed: int | None
    group_spreads: list[int] = field(default_factory=list)
    cycle_lengths: dict[int, list[int]] = field(default_factory=dict)
    violations: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    instances: int = 0

    @property
    def gaps(self) -> list[int]:
        return [g for v in self.cycle_lengths.values() for g in v]

    @property
    def min_gap(self) -> int | None:
        return min(self.gaps) if self.gaps else None

    @property
    def max_gap(self) -> int | None:
        return max(self.gaps) if self.gaps else None

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["cycle_lengths"] = {str(k): v for k, v in sorted(self.cycle_lengths.items())}
        doc["min_gap"] = self.min_gap
        doc["max_gap"] = self.max_gap
        return doc

    def csv_row(self) -> list:
        def blank(x):
            return "" if x is None else x
        return [self.seed, self.adversary, blank(self.converged_at), blank(self.sigma_observed),
                blank(self.min_gap), blank(self.max_gap), len(self.violations)]


CSV_HEADER = ["seed", "adversary", "converged_at", "sigma_observed", "min_cycle_gap", "max_cycle_gap", "violations"]


def pulse_groups(hist: dict[int, list[int]], correct, cfg: SimConfig, start: int, end: int) -> list[list[tuple[int, int]]]:
    """Split pulses in ``[start, end]`` into groups of width below cycle_min/2.

    The first and last groups are dropped when some correct node is missing
    from them, since they may be cut by the window edges."""
    events = sorted((t, q) for q in correct for t in hist.get(q, []) if start <= t <= end)
    groups: list[list[tuple[int, int]]] = []
    width = cfg.cycle_min // 2
    for t, q in events:
        if groups and t - groups[-1][0][0] <= width:
            groups[-1].append((t, q))
        else:
            groups.append([(t, q)])
    members = set(correct)
    if groups and {q for _, q in groups[-1]} != members:
        groups.pop()
    if groups and {q for _, q in groups[0]} != members:
        groups.pop(0)
    return groups


def measure(trace: Trace, cfg: SimConfig, correct=None, deadline: int | None = None,
            start: int = 0) -> RunReport:
    meta = trace.meta
    if correct is None:
        correct = meta["correct"]
    end = trace.end
    hist = trace.pulses
    report = RunReport(seed=cfg.seed, adversary=meta.get("adversary", "?"), converged_at=None,
                       sigma_observed=None, config=cfg.raw(), instances=len(trace.instances))
    v = report.violations

    for doc in trace.instances:
        for name in doc["violations"]:
            v.append({"name": name, "instance": doc["id"], "t": doc["closed_at"], "node": doc["initiator"],
                      "detail": {"schedule": doc["schedule"], "t1": doc["t1"], "t2": doc["t2"]}})

    t_star = find_convergence(trace, cfg, correct, end, start)
    report.converged_at = t_star
    if t_star is None:
        v.append({"name": "no convergence", "t": end, "node": None,
                  "detail": {"pulses": {str(q): hist.get(q, [])[-3:] for q in correct}}})
        return report
    if deadline is not None and t_star > deadline:
        v.append({"name": "convergence after deadline", "t": t_star, "node": None, "detail": {"deadline": deadline}})

    post = t_star - cfg.sigma
    groups = pulse_groups(hist, correct, cfg, post, end)
    for g in groups:
        times = [t for t, _ in g]
        nodes = [q for _, q in g]
        report.group_spreads.append(max(times) - min(times))
        if len(nodes) != len(set(nodes)):
            v.append({"name": "two pulses in one group", "t": min(times), "node": None, "detail": {"group": g}})
        if max(times) - min(times) > cfg.sigma:
            v.append({"name": "group spread above sigma", "t": min(times), "node": None, "detail": {"group": g}})
    report.sigma_observed = max(report.group_spreads) if report.group_spreads else None

    for q in correct:
        mine = [t for t in hist.get(q, []) if t >= post]
        gaps = [b - a for a, b in zip(mine, mine[1:])]
        report.cycle_lengths[q] = gaps
        for a, b in zip(mine, mine[1:]):
            if b - a < cfg.cycle_min:
                v.append({"name": "gap below cycle_min", "t": a, "node": q, "detail": {"pulses": [a, b]}})
            if b - a > cfg.cycle_max:
                v.append({"name": "gap above cycle_max", "t": a, "node": q, "detail": {"pulses": [a, b]}})
        # windows of length cycle_max with no pulse at the edges of the checked span
        first = mine[0] if mine else None
        if first is None or first - t_star > cfg.cycle_max:
            v.append({"name": "no pulse in cycle_max window", "t": t_star, "node": q, "detail": {"first": first}})
        if mine and end - mine[-1] > cfg.cycle_max:
            v.append({"name": "no pulse in cycle_max window", "t": mine[-1], "node": q, "detail": {"end": end}})
    return report


def join_check(trace, cfg: SimConfig, recovering: int, recover_at: int, by: int | None = None,
               correct=None, end: int | None = None) -> bool:
    """Whether the recovering node is synchronized with the correct nodes at every
    sample from ``by`` (default recover_at + delta_node) to the end of the trace."""
    if correct is None:
        correct = [q for q in trace.meta["correct"] if q != recovering]
    if by is None:
        by = recover_at + cfg.delta_node
    if end is None:
        end = trace.end
    group = sorted(set(correct) | {recovering})
    if by > end:
        return False
    return all(is_synchronized(trace, t, group, cfg) for t in sample_times(trace, group, cfg, end, by))


def config_of(trace: Trace) -> SimConfig:
    raw = dict(trace.meta["config"])
    cfg = SimConfig(**raw)
    byz = trace.meta.get("derived", {}).get("byz_dur")
    if byz is not None and byz != agreement_duration(cfg.f, cfg.d):
        cfg = SimConfig(**raw, byz_dur_override=byz)
    return cfg


def recheck(trace: Trace) -> RunReport:
    """Re-validate every stored instance from scratch and re-measure."""
    cfg = config_of(trace)
    insts = [ag.AgreementInstance.from_json(doc) for doc in trace.instances]
    last: dict[int, ag.AgreementInstance] = {}
    for inst, doc in zip(insts, trace.instances):
        if inst.closed:
            doc["violations"] = ag.validate_instance(inst, cfg, last.get(inst.initiator))
        if inst.outcome is ag.Outcome.DECIDED:
            last[inst.initiator] = inst
    plan = trace.meta.get("plan", {})
    deadline = convergence_deadline(cfg, plan.get("coherent_from", 0))
    return measure(trace, cfg, deadline=deadline)
