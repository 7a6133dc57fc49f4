"""Contract model of the self-stabilizing Byzantine agreement primitive.

The primitive itself is not implemented.  Each instance computes the feasible
region its timeliness properties allow (decision times, recording times), lets
the adversary pick any point inside it, and rejects choices outside it.
:func:`validate_instance` re-checks a realized schedule from scratch.

All times in this module are real-time ticks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

from .config import SimConfig
from .messages import NodeId

log = logging.getLogger(__name__)


class SeparationViolation(RuntimeError):
    pass


class Case(str, Enum):
    VALIDITY = "validity"          # correct initiator, all correct invoked within d of its send
    GENERAL = "general"            # only the agreement properties apply
    PRECOHERENT = "precoherent"    # opened before the system is coherent
    SPURIOUS = "spurious"          # left over in the corrupted initial state


class Outcome(str, Enum):
    DECIDED = "decided"
    BOTTOM = "bottom"
    NO_DECISION = "no_decision"


@dataclass(frozen=True)
class DecisionRecord:
    node: NodeId
    decide_at: int
    recording: int

    def to_json(self):
        return [self.node, self.decide_at, self.recording]


@dataclass
class AgreementInstance:
    initiator: NodeId
    seq: int
    opened_at: int
    invocations: dict[NodeId, int] = field(default_factory=dict)
    # invocations that arrived after the window closed, or from nodes not yet correct
    late: dict[NodeId, int] = field(default_factory=dict)
    correct_initiator: bool = False
    t0: int | None = None
    case: Case | None = None
    closed_at: int | None = None
    outcome: Outcome | None = None
    schedule: dict[NodeId, DecisionRecord] = field(default_factory=dict)
    bottom: dict[NodeId, int] = field(default_factory=dict)
    rejections: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def id(self) -> str:
        return f"{self.initiator}:{self.seq}"

    @property
    def t1(self) -> int | None:
        return min(self.invocations.values()) if self.invocations else None

    @property
    def t2(self) -> int | None:
        return max(self.invocations.values()) if self.invocations else None

    @property
    def closed(self) -> bool:
        return self.closed_at is not None

    @property
    def single_invoker(self) -> bool:
        return len(self.invocations) == 1

    def last_activity(self) -> int:
        times = [r.decide_at for r in self.schedule.values()] + list(self.bottom.values())
        times += list(self.invocations.values())
        return max(times) if times else self.opened_at

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "initiator": self.initiator,
            "seq": self.seq,
            "case": self.case.value if self.case else None,
            "correct_initiator": self.correct_initiator,
            "t0": self.t0,
            "t1": self.t1,
            "t2": self.t2,
            "opened_at": self.opened_at,
            "closed_at": self.closed_at,
            "invocations": sorted(self.invocations.items()),
            "late": sorted(self.late.items()),
            "outcome": self.outcome.value if self.outcome else None,
            "schedule": [self.schedule[k].to_json() for k in sorted(self.schedule)],
            "bottom": sorted(self.bottom.items()),
            "single_invoker": self.single_invoker,
            "rejections": list(self.rejections),
            "violations": list(self.violations),
            "notes": list(self.notes),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AgreementInstance":
        inst = cls(
            initiator=doc["initiator"],
            seq=doc["seq"],
            opened_at=doc["opened_at"],
            invocations={k: v for k, v in doc["invocations"]},
            late={k: v for k, v in doc["late"]},
            correct_initiator=doc["correct_initiator"],
            t0=doc["t0"],
            case=Case(doc["case"]) if doc["case"] else None,
            closed_at=doc["closed_at"],
            outcome=Outcome(doc["outcome"]) if doc["outcome"] else None,
            schedule={r[0]: DecisionRecord(*r) for r in doc["schedule"]},
            bottom={k: v for k, v in doc["bottom"]},
            rejections=list(doc["rejections"]),
            violations=list(doc["violations"]),
            notes=list(doc.get("notes", [])),
        )
        return inst


@dataclass(frozen=True)
class EnvelopeBounds:
    """Feasible region for one instance's schedule."""

    case: Case
    nodes: tuple[NodeId, ...]
    close_at: int
    rec_lo: int
    rec_hi: int
    dec_lo: int
    dec_hi: int
    dec_spread: int | None
    rec_spread: int | None
    byz_dur: int
    may_bottom: bool
    t0: int | None = None
    t1: int | None = None
    t2: int | None = None


@dataclass
class AdversaryChoice:
    outcome: Outcome
    # node -> (decide_at, recording)
    schedule: dict[NodeId, tuple[int, int]] = field(default_factory=dict)
    # node -> delivery time of the bottom value
    bottom: dict[NodeId, int] = field(default_factory=dict)


def envelope_bounds(inst: AgreementInstance, cfg: SimConfig, nodes, close_at: int) -> EnvelopeBounds:
    d = cfg.d
    nodes = tuple(sorted(nodes))
    case = inst.case
    if case in (Case.PRECOHERENT, Case.SPURIOUS):
        return EnvelopeBounds(
            case, nodes, close_at,
            rec_lo=close_at - cfg.byz_dur, rec_hi=close_at + cfg.byz_dur,
            dec_lo=close_at, dec_hi=close_at + cfg.byz_dur,
            dec_spread=None, rec_spread=None, byz_dur=cfg.byz_dur,
            may_bottom=True, t0=inst.t0, t1=inst.t1, t2=inst.t2,
        )
    t1, t2 = inst.t1, inst.t2
    if case is Case.VALIDITY:
        t0 = inst.t0
        return EnvelopeBounds(
            case, nodes, close_at,
            rec_lo=max(t1 - 2 * d, t0 - d), rec_hi=t2,
            dec_lo=max(close_at, t1 + 1, t0), dec_hi=t0 + 3 * d,
            dec_spread=2 * d, rec_spread=5 * d, byz_dur=cfg.byz_dur,
            may_bottom=False, t0=t0, t1=t1, t2=t2,
        )
    return EnvelopeBounds(
        case, nodes, close_at,
        rec_lo=t1 - 2 * d, rec_hi=t2,
        dec_lo=max(close_at, t1 + 1), dec_hi=t2 + cfg.byz_dur,
        dec_spread=3 * d, rec_spread=5 * d, byz_dur=cfg.byz_dur,
        may_bottom=True, t0=inst.t0, t1=t1, t2=t2,
    )


def centroid(b: EnvelopeBounds) -> AdversaryChoice:
    """A canonical interior point: one common recording time and decision time."""
    rec = (b.rec_lo + b.rec_hi) // 2
    if b.case in (Case.PRECOHERENT, Case.SPURIOUS):
        rec = b.close_at
    lo = max(b.dec_lo, rec)
    hi = min(b.dec_hi, rec + b.byz_dur, lo + (b.dec_spread if b.dec_spread is not None else 3 * b.byz_dur))
    dec = (lo + hi) // 2 if b.case is Case.VALIDITY else min(lo + (hi - lo) // 8, hi)
    return AdversaryChoice(Outcome.DECIDED, {q: (dec, rec) for q in b.nodes})


def check_choice(b: EnvelopeBounds, choice: AdversaryChoice) -> list[str]:
    """Reasons a choice lies outside the envelope (empty means accepted)."""
    problems = []
    if choice.outcome is Outcome.NO_DECISION:
        if b.case not in (Case.PRECOHERENT, Case.SPURIOUS):
            problems.append("no-decision not allowed with a correct invoker")
        return problems
    if choice.outcome is Outcome.BOTTOM:
        if not b.may_bottom:
            problems.append("bottom not allowed in validity case")
        for q, at in choice.bottom.items():
            if q not in b.nodes:
                problems.append(f"bottom delivered to non-recipient {q}")
            elif not b.close_at <= at <= b.close_at + b.byz_dur:
                problems.append(f"bottom at {q} outside termination window")
        return problems
    if set(choice.schedule) != set(b.nodes):
        problems.append("agreement: decided value must reach every correct node")
        return problems
    decs = [v[0] for v in choice.schedule.values()]
    recs = [v[1] for v in choice.schedule.values()]
    for q, (dec, rec) in sorted(choice.schedule.items()):
        if not b.rec_lo <= rec <= b.rec_hi:
            problems.append(f"recording at {q} outside [{b.rec_lo},{b.rec_hi}]")
        if not b.dec_lo <= dec <= b.dec_hi:
            problems.append(f"decision at {q} outside [{b.dec_lo},{b.dec_hi}]")
        if not rec <= dec <= rec + b.byz_dur:
            problems.append(f"decision at {q} not within byz_dur after its recording")
    if b.dec_spread is not None and max(decs) - min(decs) > b.dec_spread:
        problems.append("decision spread too wide")
    if b.rec_spread is not None and max(recs) - min(recs) > b.rec_spread:
        problems.append("recording spread too wide")
    return problems


def schedule_decisions(inst: AgreementInstance, bounds: EnvelopeBounds, choice: AdversaryChoice | None):
    """Fix the instance's outcome from the adversary's choice, or from the
    centroid when the choice is outside the envelope.  Returns the schedule."""
    if choice is None:
        choice = centroid(bounds)
    problems = check_choice(bounds, choice)
    if problems:
        inst.rejections.extend(problems)
        log.debug("instance %s: adversary choice rejected: %s", inst.id, problems)
        choice = centroid(bounds)
    inst.outcome = choice.outcome
    if choice.outcome is Outcome.DECIDED:
        inst.schedule = {q: DecisionRecord(q, dec, rec) for q, (dec, rec) in sorted(choice.schedule.items())}
    elif choice.outcome is Outcome.BOTTOM:
        inst.bottom = dict(sorted(choice.bottom.items()))
    inst.closed_at = bounds.close_at
    return inst.schedule


def validate_instance(inst: AgreementInstance, cfg: SimConfig, previous: AgreementInstance | None = None) -> list[str]:
    """Re-check a closed instance against the timeliness properties.

    Violation names: ``1a``..``1d``, ``validity``, ``separation``,
    ``agreement`` and ``no correct invoker``, each suffixed " violated"
    except the last.
    """
    d = cfg.d
    found: list[str] = []

    def flag(name):
        if name not in found:
            found.append(name)

    if inst.case in (Case.PRECOHERENT, Case.SPURIOUS):
        for r in inst.schedule.values():
            if not r.recording <= r.decide_at <= r.recording + cfg.byz_dur:
                flag("1d violated")
        return found
    if inst.outcome is Outcome.DECIDED:
        if not inst.invocations:
            flag("no correct invoker")
            return found
        recs = [r.recording for r in inst.schedule.values()]
        decs = [r.decide_at for r in inst.schedule.values()]
        spread = 2 * d if inst.case is Case.VALIDITY else 3 * d
        if decs and max(decs) - min(decs) > spread:
            flag("1a violated")
        if recs and max(recs) - min(recs) > 5 * d:
            flag("1b violated")
        t1, t2 = inst.t1, inst.t2
        if any(not t1 - 2 * d <= r <= t2 for r in recs):
            flag("1c violated")
        if any(not r.recording <= r.decide_at <= r.recording + cfg.byz_dur for r in inst.schedule.values()):
            flag("1d violated")
        if inst.case is Case.VALIDITY:
            t0 = inst.t0
            if any(not (t0 - d <= r.recording <= r.decide_at <= t0 + 3 * d and t0 <= r.decide_at)
                   for r in inst.schedule.values()):
                flag("validity violated")
    elif inst.outcome is Outcome.BOTTOM and inst.case is Case.VALIDITY:
        flag("validity violated")
    if previous is not None and _separation_applies(previous, inst):
        if not previous.t2 + 5 * d < inst.t1:
            flag("separation violated")
        for q, r in inst.schedule.items():
            prev = previous.schedule.get(q)
            if prev is not None and not prev.decide_at + 5 * d < inst.t1 < r.decide_at:
                flag("separation violated")
    return found


def _separation_applies(prev: AgreementInstance, inst: AgreementInstance) -> bool:
    coherent = (Case.VALIDITY, Case.GENERAL)
    return (
        prev.case in coherent and inst.case in coherent
        and prev.outcome is Outcome.DECIDED and inst.outcome is Outcome.DECIDED
        and prev.initiator == inst.initiator
    )


class AgreementRegistry:
    """All instances of a run, indexed by initiator."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.instances: list[AgreementInstance] = []
        self.by_initiator: dict[NodeId, list[AgreementInstance]] = {}

    def current(self, initiator: NodeId) -> AgreementInstance | None:
        lst = self.by_initiator.get(initiator)
        return lst[-1] if lst else None

    def previous_of(self, inst: AgreementInstance) -> AgreementInstance | None:
        lst = self.by_initiator.get(inst.initiator, [])
        i = lst.index(inst)
        for prev in reversed(lst[:i]):
            if prev.outcome is Outcome.DECIDED:
                return prev
        return None

    def open_instance(self, initiator: NodeId, t: int) -> AgreementInstance:
        """Create a new instance; refuses one that would break separation."""
        cur = self.current(initiator)
        if cur is not None and cur.invocations and not cur.t2 + 5 * self.cfg.d < t:
            raise SeparationViolation(
                f"instance for {initiator} at {t} within 5d of previous instance {cur.id} (t2={cur.t2})"
            )
        if cur is not None and not cur.last_activity() + 5 * self.cfg.d < t:
            raise SeparationViolation(f"instance for {initiator} at {t} overlaps {cur.id}")
        inst = AgreementInstance(initiator, len(self.by_initiator.get(initiator, [])), opened_at=t)
        self.instances.append(inst)
        self.by_initiator.setdefault(initiator, []).append(inst)
        return inst

    def attach(self, inst: AgreementInstance) -> AgreementInstance:
        """Register an externally built instance (spurious initial state)."""
        inst.seq = len(self.by_initiator.get(inst.initiator, []))
        self.instances.append(inst)
        self.by_initiator.setdefault(inst.initiator, []).append(inst)
        return inst

    def invoke(self, node: NodeId, initiator: NodeId, t: int, correct: bool = True):
        """Route one invocation.  Returns ``(action, instance)`` where action is
        ``"open"``, ``"join"``, ``"late"`` or ``"ignored"``.

        Invocations inside an open window join it.  Invocations that would
        break separation with the current instance are absorbed into it as late
        joiners: they never extend its invocation window.
        """
        d = self.cfg.d
        cur = self.current(initiator)
        if cur is not None and not cur.closed and cur.invocations and t <= cur.t1 + d:
            if correct:
                cur.invocations.setdefault(node, t)
            else:
                cur.late.setdefault(node, t)
            return "join", cur
        if cur is not None and (
            not cur.closed
            or (cur.invocations and t <= cur.t2 + 5 * d)
            or t <= cur.last_activity() + 5 * d
        ):
            cur.late.setdefault(node, t)
            return "late", cur
        if not correct:
            return "ignored", None
        inst = self.open_instance(initiator, t)
        inst.invocations[node] = t
        return "open", inst

    def validate_all(self) -> dict[str, list[str]]:
        out = {}
        for inst in self.instances:
            if not inst.closed:
                continue
            inst.violations = validate_instance(inst, self.cfg, self.previous_of(inst))
            out[inst.id] = inst.violations
        return out
