"""Byzantine strategies.

A strategy controls every faulty node's outgoing traffic, the pre-coherence
network, and where inside each agreement envelope the decisions land.  It is
a deterministic function of what faulty nodes can observe plus its own seeded
random stream, so every counterexample replays.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .agreement import AdversaryChoice, AgreementInstance, Case, EnvelopeBounds, Outcome, centroid
from .config import SimConfig
from .messages import PROPOSE, RESET, Envelope, Kind, Message, NodeId, support


@dataclass
class AdversaryView:
    """What the faulty nodes know.  Correct nodes' private state is never exposed;
    since every message goes to all nodes, faulty nodes see every broadcast."""

    cfg: SimConfig
    now: int = 0
    faulty: frozenset[NodeId] = frozenset()
    correct: tuple[NodeId, ...] = ()
    coherent_from: int = 0
    trigger: Envelope | None = None
    history: deque = field(default_factory=lambda: deque(maxlen=512))
    last_seen: dict[tuple[Kind, NodeId], int] = field(default_factory=dict)
    open_instances: list[AgreementInstance] = field(default_factory=list)

    def observe(self, env: Envelope):
        key = (env.msg.kind, env.sender)
        # one record per broadcast, not per faulty receiver
        if self.last_seen.get(key) != env.deliver_at:
            self.history.append((env.deliver_at, env))
        self.last_seen[key] = env.deliver_at

    def send(self, sender: NodeId, receivers, msg: Message, delay: int | dict, at: int | None = None):
        at = self.now if at is None else at
        out = []
        for r in receivers:
            dl = delay[r] if isinstance(delay, dict) else delay
            out.append(Envelope(sender, r, msg, at, at + dl))
        return out


class Strategy:
    name = "Base"
    # period of unprompted act() calls in ticks; None means only on observations
    tick_every: int | None = None

    def __init__(self, **params):
        self.params = params
        self.cfg: SimConfig | None = None

    def setup(self, cfg: SimConfig, faulty, correct):
        self.cfg = cfg
        self.d = cfg.d

    def act(self, view: AdversaryView, rng) -> list[Envelope]:
        return []

    def choose_schedule(self, instance: AgreementInstance, bounds: EnvelopeBounds) -> AdversaryChoice:
        return centroid(bounds)

    def precoherence_delay(self, env: Envelope, rng) -> int | None:
        """Delay for a non-faulty sender's message before coherence; None drops it."""
        if rng.random() < self.params.get("drop_prob", 0.25):
            return None
        return rng.randint(1, 4 * self.d)


class Silent(Strategy):
    name = "Silent"


class RandomFlood(Strategy):
    name = "RandomFlood"

    def setup(self, cfg, faulty, correct):
        super().setup(cfg, faulty, correct)
        self.tick_every = self.params.get("tick", 2 * cfg.d)
        self.rate = self.params.get("rate", 0.25)
        self.max_delay = self.params.get("max_delay", 2 * cfg.d)

    def act(self, view, rng):
        if view.trigger is not None:
            return []
        n = view.cfg.n
        out = []
        for b in sorted(view.faulty):
            if rng.random() >= self.rate:
                continue
            kind = rng.choice((Kind.PROPOSE, Kind.SUPPORT, Kind.RESET))
            if kind is Kind.SUPPORT:
                msg = support(x for x in range(n) if rng.random() < 0.6)
            else:
                msg = PROPOSE if kind is Kind.PROPOSE else RESET
            receivers = [r for r in range(n) if rng.random() < 0.7]
            delays = {r: rng.randint(1, self.max_delay) for r in receivers}
            out += view.send(b, receivers, msg, delays)
        return out


class _Bursty(Strategy):
    """Shared bookkeeping: react once per burst of correct broadcasts of a kind."""

    burst_gap_d = 5

    def setup(self, cfg, faulty, correct):
        super().setup(cfg, faulty, correct)
        self._burst: dict[Kind, int] = {}

    def new_burst(self, view: AdversaryView) -> bool:
        kind = view.trigger.msg.kind
        last = self._burst.get(kind)
        if last is not None and view.now - last < self.burst_gap_d * self.d:
            return False
        self._burst[kind] = view.now
        return True


def split_groups(nodes) -> tuple[list[NodeId], list[NodeId]]:
    nodes = sorted(nodes)
    return nodes[0::2], nodes[1::2]


def skewed_choice(bounds: EnvelopeBounds, late: bool) -> AdversaryChoice:
    """Split recipients across the recording extremes; the early-recording half
    decides last.  With ``late`` the decisions are pushed to the byz_dur edge."""
    a, b = split_groups(bounds.nodes)
    rec_a, rec_b = bounds.rec_lo, bounds.rec_hi
    if bounds.rec_spread is not None:
        rec_b = min(rec_b, rec_a + bounds.rec_spread)
    spread = bounds.dec_spread if bounds.dec_spread is not None else 3 * bounds.byz_dur
    if late:
        dec_a = min(rec_a + bounds.byz_dur, bounds.dec_hi)
        dec_b = max(rec_b, bounds.dec_lo, dec_a - spread)
    else:
        dec_b = max(bounds.dec_lo, rec_b)
        dec_a = min(bounds.dec_hi, rec_a + bounds.byz_dur, dec_b + spread)
    sched = {q: (dec_a, rec_a) for q in a}
    sched.update({q: (dec_b, rec_b) for q in b})
    return AdversaryChoice(Outcome.DECIDED, sched)


def stale_choice(bounds: EnvelopeBounds) -> AdversaryChoice:
    """Outside coherence: half the nodes get the oldest recording allowed, the
    other half the newest, as far apart in decision time as possible."""
    a, b = split_groups(bounds.nodes)
    sched = {q: (bounds.dec_lo, bounds.dec_lo - bounds.byz_dur) for q in a}
    sched.update({q: (bounds.dec_hi, bounds.dec_hi) for q in b})
    return AdversaryChoice(Outcome.DECIDED, sched)


class LatestSkew(_Bursty):
    """Maximize disagreement on ``latest`` by exploring the recording-time extremes,
    and keep faulty initiators in play right after every reset burst."""

    name = "LatestSkew"

    def act(self, view, rng):
        env = view.trigger
        if env is None or env.sender in view.faulty:
            return []
        kind = env.msg.kind
        if kind is Kind.RESET and self.new_burst(view):
            everyone = range(view.cfg.n)
            out = []
            for b in sorted(view.faulty):
                out += view.send(b, view.correct, support(everyone), 1)
            return out
        if kind is Kind.PROPOSE and self.new_burst(view):
            out = []
            for b in sorted(view.faulty):
                out += view.send(b, range(view.cfg.n), PROPOSE, 1)
            return out
        return []

    def choose_schedule(self, instance, bounds):
        if bounds.case in (Case.PRECOHERENT, Case.SPURIOUS):
            return stale_choice(bounds)
        # when to push decisions to the byz_dur edge: "odd" instances, "always" or "never"
        mode = self.params.get("late", "odd")
        late = bounds.case is Case.GENERAL and (mode == "always" or (mode == "odd" and instance.seq % 2 == 1))
        return skewed_choice(bounds, late)


class AntiSync(_Bursty):
    """Timed messages aimed at the refractory edges, trying to split the correct
    nodes into two groups pulsing half a cycle apart."""

    name = "AntiSync"

    def setup(self, cfg, faulty, correct):
        super().setup(cfg, faulty, correct)
        self.group_a, self.group_b = split_groups(correct)

    def act(self, view, rng):
        env = view.trigger
        if env is None or env.sender in view.faulty:
            return []
        cfg = view.cfg
        d = cfg.d
        now = view.now
        everyone = range(cfg.n)
        kind = env.msg.kind
        out = []
        if kind is Kind.PROPOSE and self.new_burst(view):
            # asymmetric proposers: only one group counts the faulty proposal
            for b in sorted(view.faulty):
                out += view.send(b, self.group_a, PROPOSE, 1)
        elif kind is Kind.SUPPORT and self.new_burst(view):
            for b in sorted(view.faulty):
                # right before the C2 spacing lets the correct nodes support again
                edge = now + cfg.cycle - 8 * d - 1
                out += view.send(b, everyone, PROPOSE, 1, at=edge)
                out += view.send(b, view.correct, support(everyone), 1, at=edge)
                # right after the invoke spacing lets correct nodes back this initiator again
                edge = now + cfg.cycle - 11 * d + 1
                out += view.send(b, self.group_b, support(everyone), 1, at=edge)
        elif kind is Kind.RESET and self.new_burst(view):
            for b in sorted(view.faulty):
                # one group still has the resetters in recent, the other just dropped them
                out += view.send(b, self.group_a, support(everyone), 2 * d)
                out += view.send(b, self.group_b, support(everyone), 2 * d + cfg.epsilon + 1)
                # the pulse-separation edge
                edge = now + cfg.byz_dur + 6 * d - d
                out += view.send(b, everyone, support(everyone), 1, at=edge)
        return out

    def choose_schedule(self, instance, bounds):
        if bounds.case is Case.VALIDITY:
            return skewed_choice(bounds, late=False)
        if bounds.case in (Case.PRECOHERENT, Case.SPURIOUS):
            return stale_choice(bounds)
        if instance.seq % 2 == 1 and bounds.may_bottom:
            a, _ = split_groups(bounds.nodes)
            return AdversaryChoice(Outcome.BOTTOM, bottom={q: bounds.close_at for q in a})
        return skewed_choice(bounds, late=instance.seq % 4 == 2)

    def precoherence_delay(self, env, rng):
        # keep the two groups apart until the network must behave
        if (env.sender in self.group_a) != (env.receiver in self.group_a):
            return None
        return rng.randint(1, 3 * self.d)


class EquivocatingSP(_Bursty):
    """Support messages carrying a different proposers set for each receiver."""

    name = "EquivocatingSP"

    def act(self, view, rng):
        env = view.trigger
        if env is None or env.sender in view.faulty or env.msg.kind is not Kind.PROPOSE:
            return []
        if not self.new_burst(view):
            return []
        n = view.cfg.n
        k = view.cfg.quorum - 1
        out = []
        for b in sorted(view.faulty):
            out += view.send(b, range(n), PROPOSE, 1)
            others = [x for x in range(n) if x != b]
            for i, r in enumerate(sorted(view.correct)):
                idx = others.index(r) if r in others else i
                start = min(idx, len(others) - k)
                props = {b, *others[start:start + k]}
                out += view.send(b, [r], support(props), view.cfg.d // 2 + i)
        return out


STRATEGIES = {cls.name: cls for cls in (Silent, RandomFlood, AntiSync, LatestSkew, EquivocatingSP)}


def make_strategy(name: str, params: dict | None = None) -> Strategy:
    try:
        cls = STRATEGIES[name]
    except KeyError:
        raise ValueError(f"unknown adversary {name!r}; choose from {sorted(STRATEGIES)}") from None
    return cls(**(params or {}))
