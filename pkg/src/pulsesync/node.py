"""Agreement-based pulse synchronization, one node as an event-driven machine.

Each handler corresponds to one block of the algorithm (A..G).  Handlers take
the node's current *local* clock reading and never look at real time; the
simulator converts.  Every handler returns a :class:`ProtocolOutput` telling the
simulator what to broadcast, which agreements to invoke and whether a pulse
was invoked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .config import SimConfig
from .messages import PROPOSE, RESET, Message, NodeId, support


class ContractViolation(RuntimeError):
    """The agreement oracle handed a node something its contract forbids."""


@dataclass
class InitiatorRecord:
    last_invoke: int | None = None
    last_decide: int | None = None


@dataclass
class PendingSupport:
    proposers: frozenset[NodeId]
    received_at: int


@dataclass
class NodeState:
    id: NodeId
    # countdown value and the local time at which it held that value; the
    # background process decrements it, so the current reading is derived
    cc: int
    cc_at: int
    proposers: dict[NodeId, int] = field(default_factory=dict)
    recent: dict[NodeId, int] = field(default_factory=dict)
    latest: int = 0
    last_sp_sent: int | None = None
    last_pulse: int | None = None
    per_initiator: dict[NodeId, InitiatorRecord] = field(default_factory=dict)
    pending_sp: dict[NodeId, PendingSupport] = field(default_factory=dict)

    @classmethod
    def fresh(cls, node: NodeId, cfg: SimConfig, now: int) -> "NodeState":
        return cls(id=node, cc=cfg.cycle, cc_at=now, latest=now - cfg.cycle)

    def countdown(self, now: int) -> int:
        return max(self.cc - (now - self.cc_at), 0)

    def expiry(self) -> int:
        """Local time at which the countdown reaches zero."""
        return self.cc_at + self.cc

    def snapshot(self) -> dict:
        return {
            "cc": self.cc,
            "cc_at": self.cc_at,
            "proposers": sorted(self.proposers.items()),
            "recent": sorted(self.recent.items()),
            "latest": self.latest,
            "last_sp_sent": self.last_sp_sent,
            "last_pulse": self.last_pulse,
            "per_initiator": sorted(
                (k, v.last_invoke, v.last_decide) for k, v in self.per_initiator.items()
            ),
            "pending_sp": sorted((k, sorted(v.proposers), v.received_at) for k, v in self.pending_sp.items()),
        }


@dataclass
class ProtocolOutput:
    broadcasts: list[Message] = field(default_factory=list)
    invocations: list[NodeId] = field(default_factory=list)
    pulse: bool = False
    clamps: list[str] = field(default_factory=list)
    discarded: int = 0

    def merge(self, other: "ProtocolOutput") -> "ProtocolOutput":
        self.broadcasts.extend(other.broadcasts)
        self.invocations.extend(other.invocations)
        self.pulse = self.pulse or other.pulse
        self.clamps.extend(other.clamps)
        self.discarded += other.discarded
        return self


class PulseNode:
    """Protocol logic bound to one node's state and the shared constants."""

    def __init__(self, cfg: SimConfig, state: NodeState):
        self.cfg = cfg
        self.state = state
        d = cfg.d
        self.recent_ttl = 2 * d + cfg.epsilon
        self.data_ttl = cfg.cycle + 2 * d
        self.sp_spacing = cfg.cycle - 8 * d
        self.invoke_spacing = cfg.cycle - 11 * d
        self.pulse_spacing = cfg.byz_dur + 6 * d

    @property
    def id(self) -> NodeId:
        return self.state.id

    # Block A
    def on_countdown_expiry(self, now: int) -> ProtocolOutput:
        s = self.state
        out = ProtocolOutput()
        if s.countdown(now) != 0:
            return out
        s.cc, s.cc_at = self.cfg.cycle, now
        out.broadcasts.append(PROPOSE)
        return out

    # Block B
    def on_propose_pulse(self, sender: NodeId, now: int) -> ProtocolOutput:
        s = self.state
        if sender not in s.recent:
            # a later message from the same sender replaces the older reference
            s.proposers[sender] = now
        return ProtocolOutput()

    # Block C
    def try_support(self, now: int) -> ProtocolOutput:
        s = self.state
        out = ProtocolOutput()
        if s.id not in s.proposers or len(s.proposers) < self.cfg.quorum:
            return out
        if s.last_sp_sent is not None and now - s.last_sp_sent < self.sp_spacing:
            return out
        out.broadcasts.append(support(s.proposers))
        s.last_sp_sent = now
        return out

    # Block D
    def on_support_pulse(self, sender: NodeId, proposers_p, now: int) -> ProtocolOutput:
        s = self.state
        out = ProtocolOutput()
        n = self.cfg.n
        if proposers_p is None or any(
            not isinstance(p, int) or isinstance(p, bool) or not 0 <= p < n for p in proposers_p
        ):
            out.discarded = 1
            return out
        s.pending_sp[sender] = PendingSupport(frozenset(proposers_p), now)
        return out.merge(self.check_pending(now))

    def invoke_allowed(self, initiator: NodeId, now: int) -> bool:
        rec = self.state.per_initiator.get(initiator)
        if rec is None:
            return True
        for last in (rec.last_invoke, rec.last_decide):
            if last is not None and now - last < self.invoke_spacing:
                return False
        return True

    def backing(self, proposers_p: frozenset[NodeId]) -> int:
        s = self.state
        return sum(1 for p in proposers_p if p in s.proposers or p in s.recent)

    def check_pending(self, now: int) -> ProtocolOutput:
        """Re-evaluate every support message still inside its d-long watch window."""
        s = self.state
        out = ProtocolOutput()
        for sender in sorted(s.pending_sp):
            entry = s.pending_sp[sender]
            if now - entry.received_at > self.cfg.d:
                del s.pending_sp[sender]
                continue
            if not self.invoke_allowed(sender, now):
                continue
            if self.backing(entry.proposers) >= self.cfg.f + 1:
                out.invocations.append(sender)
                s.per_initiator.setdefault(sender, InitiatorRecord()).last_invoke = now
                del s.pending_sp[sender]
        return out

    # Block E
    def on_decision(self, initiator: NodeId, tau_p: int, now: int) -> ProtocolOutput:
        s = self.state
        if tau_p > now:
            raise ContractViolation(f"node {s.id}: recording time {tau_p} after decision time {now}")
        out = ProtocolOutput()
        s.per_initiator.setdefault(initiator, InitiatorRecord()).last_decide = now
        if tau_p < s.latest:
            return out
        s.latest = tau_p
        if s.last_pulse is None or s.last_pulse < now - self.pulse_spacing:
            out.pulse = True
            s.last_pulse = now
        s.cc, s.cc_at = self.cfg.cycle - (now - tau_p), now
        out.broadcasts.append(RESET)
        s.proposers.pop(s.id, None)
        return out

    # Block F
    def on_reset(self, sender: NodeId, now: int) -> ProtocolOutput:
        s = self.state
        s.proposers.pop(sender, None)
        s.recent[sender] = now
        return ProtocolOutput()

    # Block G
    def cleanup(self, now: int) -> ProtocolOutput:
        """Decay and clamp.  Timestamps later than ``now`` can only come from a
        corrupted state and are treated as expired."""
        s = self.state
        cfg = self.cfg
        out = ProtocolOutput()
        for sender, at in list(s.recent.items()):
            if now - at >= self.recent_ttl or at > now:
                del s.recent[sender]
        if not 0 <= s.cc <= cfg.cycle or s.cc_at > now:
            s.cc, s.cc_at = cfg.cycle, now
            out.clamps.append("cc")
        if not now - cfg.cycle <= s.latest <= now:
            s.latest = now - cfg.cycle
            out.clamps.append("latest")
        ttl = self.data_ttl
        for sender, at in list(s.proposers.items()):
            if now - at > ttl or at > now:
                del s.proposers[sender]
        for sender, entry in list(s.pending_sp.items()):
            if now - entry.received_at > ttl or entry.received_at > now:
                del s.pending_sp[sender]
        for initiator, rec in list(s.per_initiator.items()):
            if rec.last_invoke is not None and not 0 <= now - rec.last_invoke <= ttl:
                rec.last_invoke = None
            if rec.last_decide is not None and not 0 <= now - rec.last_decide <= ttl:
                rec.last_decide = None
            if rec.last_invoke is None and rec.last_decide is None:
                del s.per_initiator[initiator]
        if s.last_sp_sent is not None and not 0 <= now - s.last_sp_sent <= ttl:
            s.last_sp_sent = None
        if s.last_pulse is not None and not 0 <= now - s.last_pulse <= ttl:
            s.last_pulse = None
        return out

    def next_wakeup(self, now: int) -> int | None:
        """Earliest future local time at which a time guard could enable Block C or D."""
        s = self.state
        times = []
        if (
            s.last_sp_sent is not None
            and s.id in s.proposers
            and len(s.proposers) >= self.cfg.quorum
            and now - s.last_sp_sent < self.sp_spacing
        ):
            times.append(s.last_sp_sent + self.sp_spacing)
        for sender, entry in s.pending_sp.items():
            rec = s.per_initiator.get(sender)
            if rec is None or self.backing(entry.proposers) < self.cfg.f + 1:
                continue
            lasts = [x for x in (rec.last_invoke, rec.last_decide) if x is not None]
            if not lasts:
                continue
            ready = max(lasts) + self.invoke_spacing
            if now < ready <= entry.received_at + self.cfg.d:
                times.append(ready)
        return min(times) if times else None

    def after_event(self, now: int) -> ProtocolOutput:
        """Conditions re-checked after every state change."""
        out = self.try_support(now)
        return out.merge(self.check_pending(now))
