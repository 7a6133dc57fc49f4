"""Deterministic discrete-event executive.

One global heap ordered by ``(real time, insertion seq)``.  Handlers run
atomically at delivery (processing time is folded into ``d``).  Every random
draw comes from a named stream derived from the config seed, so a run is a pure
function of ``(cfg, plan, adversary, duration)``.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import agreement as ag
from .adversary import AdversaryView, Strategy, make_strategy
from .clock import Clock
from .config import ConfigError, SimConfig, validate_config
from .messages import Envelope, Kind, Message, NodeId, support
from .node import ContractViolation, InitiatorRecord, NodeState, PendingSupport, PulseNode, ProtocolOutput
from .trace import Trace

DELIVER, TIMER, WAKE, DECIDE, BOTTOM, CLOSE, ADVERSARY, RECOVER = range(8)


class SimulationAborted(RuntimeError):
    def __init__(self, message: str, instance: str | None = None):
        super().__init__(message)
        self.instance = instance


@dataclass(frozen=True)
class CorruptionSpec:
    """How the initial (or recovery) state is scrambled."""

    states: bool = True
    spurious_messages: int = 0
    spurious_instances: int = 0
    # "random": independent arbitrary states; "antisync": the two-group
    # construction where spurious proposals trigger one half while the other
    # half sits in its refractory windows
    preset: str = "random"

    @classmethod
    def from_json(cls, doc: dict | None) -> "CorruptionSpec | None":
        if doc is None:
            return None
        return cls(**doc)


CLEAN = None


@dataclass(frozen=True)
class FaultPlan:
    byzantine: frozenset[NodeId] = frozenset()
    # node -> real time at which it stops being faulty
    recovering: tuple[tuple[NodeId, int], ...] = ()
    corruption: CorruptionSpec | None = None
    coherent_from: int = 0
    # state a recovering node comes back with: "corrupt" or "copy" (of the lowest correct node)
    recover_state: str = "corrupt"

    def recover_at(self, q: NodeId) -> int | None:
        for node, at in self.recovering:
            if node == q:
                return at
        return None

    def faulty_at(self, q: NodeId, t: int) -> bool:
        if q in self.byzantine:
            return True
        at = self.recover_at(q)
        return at is not None and t < at

    def check(self, cfg: SimConfig) -> list[str]:
        out = []
        nodes = set(self.byzantine) | {q for q, _ in self.recovering}
        if any(not 0 <= q < cfg.n for q in nodes):
            out.append("fault plan names a node outside [0, n)")
        if len(nodes) > cfg.f:
            out.append(f"fault plan has {len(nodes)} faulty nodes, more than f={cfg.f}")
        if self.coherent_from < 0:
            out.append("coherent_from must be non-negative")
        if self.recover_state not in ("corrupt", "copy"):
            out.append("recover_state must be 'corrupt' or 'copy'")
        return out


def default_plan(cfg: SimConfig, corruption: CorruptionSpec | None = CorruptionSpec(), coherent_from: int = 0) -> FaultPlan:
    """The last f nodes are Byzantine."""
    return FaultPlan(
        byzantine=frozenset(range(cfg.n - cfg.f, cfg.n)),
        corruption=corruption,
        coherent_from=coherent_from,
    )


def _stream(seed: int, label: str) -> random.Random:
    return random.Random(f"{seed}:{label}")


def corrupt_state(node: NodeId, cfg: SimConfig, now: int, rng: random.Random, spec: CorruptionSpec,
                  role: str = "random") -> NodeState:
    """An arbitrary state over the ranges the decay and clamp rules must handle."""
    C, n, d = cfg.cycle, cfg.n, cfg.d

    def stamp():
        return now - rng.randint(-C, 2 * C)

    def maybe_stamp():
        return None if rng.random() < 0.3 else stamp()

    state = NodeState(id=node, cc=rng.randint(-2 * C, 2 * C), cc_at=now,
                      latest=now + rng.randint(-3 * C, C))
    members = list(range(n))
    rng.shuffle(members)
    for q in members:
        u = rng.random()
        if u < 0.35:
            state.proposers[q] = stamp()
        elif u < 0.6:
            state.recent[q] = stamp()
    state.last_sp_sent = maybe_stamp()
    state.last_pulse = maybe_stamp()
    for q in range(n):
        if rng.random() < 0.4:
            state.per_initiator[q] = InitiatorRecord(maybe_stamp(), maybe_stamp())
        if rng.random() < 0.3:
            props = frozenset(x for x in range(n) if rng.random() < 0.6)
            state.pending_sp[q] = PendingSupport(props, now - rng.randint(-d, 2 * d))
    if role == "trigger":
        # spurious proposals from everyone, countdown about to expire
        state.cc = rng.randint(0, 2 * d)
        state.proposers = {q: now - rng.randint(0, d // 2) for q in range(n) if q != node}
        state.recent = {}
        state.last_sp_sent = None
        state.per_initiator = {}
        state.pending_sp = {q: PendingSupport(frozenset(range(n)), now) for q in range(n) if q != node}
        state.latest = now - C + rng.randint(0, 2 * d)
    elif role == "refractory":
        # just pulsed and supported: ignores the other half for a while
        state.cc = C // 2 + rng.randint(-2 * d, 2 * d)
        state.last_pulse = now - rng.randint(0, 2 * d)
        state.last_sp_sent = now - rng.randint(0, 2 * d)
        state.latest = now - rng.randint(0, d)
        state.proposers = {}
        state.recent = {q: now for q in range(n)}
        state.per_initiator = {q: InitiatorRecord(now - rng.randint(0, d), now - rng.randint(0, d)) for q in range(n)}
        state.pending_sp = {}
    return state


def corrupt(states: dict[NodeId, NodeState], cfg: SimConfig, spec: CorruptionSpec | None, rng: random.Random,
            now: dict[NodeId, int]) -> None:
    """Scramble the given node states in place."""
    if spec is None or not spec.states:
        return
    nodes = sorted(states)
    roles = {}
    if spec.preset == "antisync":
        for i, q in enumerate(nodes):
            roles[q] = "trigger" if i % 2 == 0 else "refractory"
    for q in nodes:
        states[q] = corrupt_state(q, cfg, now[q], rng, spec, roles.get(q, "random"))


class Simulator:
    def __init__(self, cfg: SimConfig, plan: FaultPlan, adversary: Strategy | str, duration: int,
                 record_events: bool = True):
        problems = validate_config(cfg) + plan.check(cfg)
        if problems:
            raise ConfigError(problems)
        if isinstance(adversary, str):
            adversary = make_strategy(adversary)
        self.cfg = cfg
        self.plan = plan
        self.adversary = adversary
        self.duration = duration
        self.d = cfg.d
        seed = cfg.seed
        self.rng_net = _stream(seed, "network")
        self.rng_adv = _stream(seed, "adversary")
        self.rng_corrupt = _stream(seed, "corrupt")
        rng_clock = _stream(seed, "clock")
        self.clocks = {}
        for q in range(cfg.n):
            rate = Fraction(1)
            if cfg.rho:
                k = 1000
                rate = 1 + cfg.rho * Fraction(rng_clock.randint(-k, k), k)
            self.clocks[q] = Clock(q, rate, rng_clock.randrange(0, 10**9))
        self.registry = ag.AgreementRegistry(cfg)
        self.nodes: dict[NodeId, PulseNode] = {}
        self.heap: list = []
        self._seq = 0
        self.timer_gen = {q: 0 for q in range(cfg.n)}
        self.wakes: set[tuple[NodeId, int]] = set()
        self.sp_sends: dict[NodeId, int] = {}
        self.injected_precoherent = {}
        correct = tuple(q for q in range(cfg.n) if q not in plan.byzantine and plan.recover_at(q) is None)
        self.view = AdversaryView(cfg=cfg, coherent_from=plan.coherent_from, correct=correct)
        adversary.setup(cfg, frozenset(q for q in range(cfg.n) if q not in correct), correct)
        self.trace = Trace(
            meta={
                "config": cfg.raw(),
                "derived": cfg.derived(),
                "plan": {
                    "byzantine": sorted(plan.byzantine),
                    "recovering": [list(x) for x in plan.recovering],
                    "coherent_from": plan.coherent_from,
                    "corruption": None if plan.corruption is None else vars(plan.corruption),
                    "recover_state": plan.recover_state,
                },
                "adversary": adversary.name,
                "adversary_params": adversary.params,
                "duration": duration,
                "correct": list(correct),
            },
            record_events=record_events,
        )
        self.now = 0

    # membership

    def faulty(self, q: NodeId, t: int) -> bool:
        return self.plan.faulty_at(q, t)

    def is_correct(self, q: NodeId, t: int) -> bool:
        if q in self.plan.byzantine:
            return False
        at = self.plan.recover_at(q)
        return at is None or t >= at + self.cfg.delta_node

    def correct_nodes(self, t: int) -> list[NodeId]:
        return [q for q in range(self.cfg.n) if self.is_correct(q, t)]

    def nonfaulty_nodes(self, t: int) -> list[NodeId]:
        return [q for q in range(self.cfg.n) if not self.faulty(q, t)]

    # queue

    def push(self, at: int, kind: int, payload):
        heapq.heappush(self.heap, (at, self._seq, kind, payload))
        self._seq += 1

    def send(self, env: Envelope):
        self.push(env.deliver_at, DELIVER, env)

    # setup

    def _start(self):
        cfg, plan = self.cfg, self.plan
        live = [q for q in range(cfg.n) if not self.faulty(q, 0)]
        states = {q: NodeState.fresh(q, cfg, self.clocks[q].local_of(0)) for q in live}
        corrupt(states, cfg, plan.corruption, self.rng_corrupt, {q: self.clocks[q].local_of(0) for q in live})
        for q in live:
            self.nodes[q] = PulseNode(cfg, states[q])
            self.trace.event(0, "init", q, states[q].snapshot())
            self.push(0, WAKE, q)
            self.wakes.add((q, 0))
        spec = plan.corruption
        if spec is not None:
            self._spurious(spec)
        for q, at in plan.recovering:
            self.push(at, RECOVER, q)
        if self.adversary.tick_every:
            self.push(0, ADVERSARY, None)

    def _spurious(self, spec: CorruptionSpec):
        cfg, rng = self.cfg, self.rng_corrupt
        n, d = cfg.n, cfg.d
        horizon = self.plan.coherent_from + d
        for _ in range(rng.randint(0, spec.spurious_messages) if spec.spurious_messages else 0):
            kind = rng.choice((Kind.PROPOSE, Kind.SUPPORT, Kind.RESET))
            msg = support(x for x in range(n) if rng.random() < 0.6) if kind is Kind.SUPPORT else Message(kind)
            env = Envelope(rng.randrange(n), rng.randrange(n), msg, 0, rng.randint(1, horizon))
            self.trace.event(0, "spurious_message", env.receiver, env.to_json())
            self.send(env)
        for _ in range(rng.randint(0, spec.spurious_instances) if spec.spurious_instances else 0):
            initiator = rng.randrange(n)
            if self.registry.current(initiator) is not None:
                continue
            inst = ag.AgreementInstance(initiator, 0, opened_at=0, case=ag.Case.SPURIOUS)
            inst.correct_initiator = self.is_correct(initiator, 0)
            self.registry.attach(inst)
            recipients = [q for q in self.nonfaulty_nodes(0) if rng.random() < 0.7]
            if recipients:
                sched = {}
                for q in recipients:
                    dec = rng.randint(1, cfg.byz_dur)
                    sched[q] = (dec, dec - rng.randint(0, cfg.byz_dur))
                choice = ag.AdversaryChoice(ag.Outcome.DECIDED, sched)
                bounds = ag.EnvelopeBounds(ag.Case.SPURIOUS, tuple(sorted(recipients)), 0, -cfg.byz_dur,
                                           cfg.byz_dur, 0, cfg.byz_dur, None, None, cfg.byz_dur, True)
            else:
                choice = ag.AdversaryChoice(ag.Outcome.NO_DECISION)
                bounds = ag.EnvelopeBounds(ag.Case.SPURIOUS, (), 0, 0, 0, 0, 0, None, None, cfg.byz_dur, True)
            ag.schedule_decisions(inst, bounds, choice)
            self._push_decisions(inst)

    # main loop

    def run(self) -> Trace:
        self._start()
        heap = self.heap
        end = self.duration
        try:
            while heap and heap[0][0] <= end:
                at, _, kind, payload = heapq.heappop(heap)
                self.now = at
                if kind == DELIVER:
                    self._deliver(payload, at)
                elif kind == TIMER:
                    q, gen = payload
                    if gen == self.timer_gen[q] and q in self.nodes and not self.faulty(q, at):
                        self._step(q, at, lambda pn, now: pn.on_countdown_expiry(now))
                elif kind == WAKE:
                    self.wakes.discard((payload, at))
                    if payload in self.nodes and not self.faulty(payload, at):
                        self._step(payload, at, None)
                elif kind == DECIDE:
                    self._decide(payload, at)
                elif kind == BOTTOM:
                    inst, q = payload
                    self.trace.event(at, "bottom", q, {"instance": inst.id})
                elif kind == CLOSE:
                    self._close(payload, at)
                elif kind == ADVERSARY:
                    self._adversary_act(at, None)
                    self.push(at + self.adversary.tick_every, ADVERSARY, None)
                elif kind == RECOVER:
                    self._recover(payload, at)
        except ContractViolation as exc:
            raise SimulationAborted(str(exc)) from exc
        self.trace.end = end
        self.registry.validate_all()
        for inst in self.registry.instances:
            self.trace.add_instance(inst)
        return self.trace

    # node events

    def _step(self, q: NodeId, t: int, handler):
        pn = self.nodes[q]
        now = self.clocks[q].local_of(t)
        out = pn.cleanup(now)
        if handler is not None:
            out.merge(handler(pn, now))
        out.merge(pn.after_event(now))
        out.merge(pn.cleanup(now))
        self._apply(q, t, out)
        self._reschedule(q, t, now)

    def _apply(self, q: NodeId, t: int, out: ProtocolOutput):
        trace = self.trace
        for c in out.clamps:
            trace.event(t, "clamp", q, c)
        if out.discarded:
            trace.event(t, "discard", q, out.discarded)
        if out.pulse:
            trace.pulse(t, q)
        for msg in out.broadcasts:
            self._broadcast(q, msg, t)
        for initiator in out.invocations:
            self._invoke(q, initiator, t)

    def _reschedule(self, q: NodeId, t: int, now: int):
        pn = self.nodes[q]
        clock = self.clocks[q]
        s = pn.state
        expiry = max(clock.first_real_reaching(s.expiry()), t)
        key = (s.cc, s.cc_at)
        if getattr(pn, "_timer_key", None) != key:
            pn._timer_key = key
            self.timer_gen[q] += 1
            self.push(expiry, TIMER, (q, self.timer_gen[q]))
        wake = pn.next_wakeup(now)
        if wake is not None:
            wt = max(clock.first_real_reaching(wake), t + 1)
            if (q, wt) not in self.wakes:
                self.wakes.add((q, wt))
                self.push(wt, WAKE, q)

    def _broadcast(self, q: NodeId, msg: Message, t: int):
        if msg.kind is Kind.SUPPORT:
            self.sp_sends[q] = t
        self.trace.event(t, "send", q, msg.to_json())
        coherent = t >= self.plan.coherent_from
        d = self.d
        for r in range(self.cfg.n):
            env = Envelope(q, r, msg, t, t)
            if coherent:
                delay = self.rng_net.randint(1, d)
            else:
                delay = self.adversary.precoherence_delay(env, self.rng_net)
                if delay is None:
                    self.trace.event(t, "drop", r, {"sender": q})
                    continue
                delay = max(1, min(delay, self.plan.coherent_from + d - t))
            self.send(Envelope(q, r, msg, t, t + delay))

    def _deliver(self, env: Envelope, t: int):
        r = env.receiver
        if self.faulty(r, t):
            view = self.view
            view.observe(env)
            if env.sender not in view.faulty:
                self._adversary_act(t, env)
            return
        if r not in self.nodes:
            return
        kind = env.msg.kind
        self.trace.event(t, "deliver", r, {"sender": env.sender, "kind": kind.value})
        p = env.sender
        if kind is Kind.PROPOSE:
            self._step(r, t, lambda pn, now: pn.on_propose_pulse(p, now))
        elif kind is Kind.SUPPORT:
            props = env.msg.proposers
            self._step(r, t, lambda pn, now: pn.on_support_pulse(p, props, now))
        else:
            self._step(r, t, lambda pn, now: pn.on_reset(p, now))

    def _recover(self, q: NodeId, t: int):
        cfg = self.cfg
        now = self.clocks[q].local_of(t)
        if self.plan.recover_state == "copy":
            src = min(x for x in self.nodes if not self.faulty(x, t))
            other = self.nodes[src].state
            src_now = self.clocks[src].local_of(t)
            shift = now - src_now
            state = NodeState(
                id=q,
                cc=other.cc,
                cc_at=other.cc_at + shift,
                proposers={k: v + shift for k, v in other.proposers.items()},
                recent={k: v + shift for k, v in other.recent.items()},
                latest=other.latest + shift,
                last_sp_sent=None if other.last_sp_sent is None else other.last_sp_sent + shift,
                last_pulse=None if other.last_pulse is None else other.last_pulse + shift,
                per_initiator={k: InitiatorRecord(*(None if x is None else x + shift for x in (v.last_invoke, v.last_decide)))
                               for k, v in other.per_initiator.items()},
                pending_sp={k: PendingSupport(v.proposers, v.received_at + shift) for k, v in other.pending_sp.items()},
            )
            if src in state.proposers:
                state.proposers[q] = state.proposers.pop(src)
            if src in state.recent:
                state.recent[q] = state.recent[src]
        else:
            state = corrupt_state(q, cfg, now, self.rng_corrupt, self.plan.corruption or CorruptionSpec())
        self.nodes[q] = PulseNode(cfg, state)
        self.trace.event(t, "recover", q, state.snapshot())
        self._step(q, t, None)

    # agreement

    def _invoke(self, q: NodeId, initiator: NodeId, t: int):
        correct = self.is_correct(q, t)
        action, inst = self.registry.invoke(q, initiator, t, correct=correct)
        self.trace.event(t, "invoke", q, {"initiator": initiator, "action": action,
                                          "instance": None if inst is None else inst.id})
        if action == "open":
            inst.correct_initiator = self.is_correct(initiator, t)
            if t < self.plan.coherent_from:
                inst.case = ag.Case.PRECOHERENT
            t0 = self.sp_sends.get(initiator)
            if inst.correct_initiator and t0 is not None and t - self.d <= t0 <= t:
                inst.t0 = t0
            self.push(t + self.d, CLOSE, inst)
        if action in ("open", "join") and not inst.closed:
            if all(x in inst.invocations for x in self.correct_nodes(t)):
                self._close(inst, t)

    def _classify(self, inst: ag.AgreementInstance, t: int) -> ag.Case:
        if inst.case is ag.Case.PRECOHERENT:
            return inst.case
        t0 = inst.t0
        if not inst.correct_initiator or t0 is None or t0 < self.plan.coherent_from:
            return ag.Case.GENERAL
        correct = self.correct_nodes(t)
        if not all(q in inst.invocations and t0 <= inst.invocations[q] <= t0 + self.d for q in correct):
            return ag.Case.GENERAL
        lst = self.registry.by_initiator[inst.initiator]
        i = lst.index(inst)
        if i > 0:
            prev = lst[i - 1]
            if not prev.last_activity() <= t0 - 6 * self.d:
                inst.notes.append("spacing precondition failed")
                return ag.Case.GENERAL
        return ag.Case.VALIDITY

    def _close(self, inst: ag.AgreementInstance, t: int):
        if inst.closed:
            return
        inst.case = self._classify(inst, t)
        recipients = self.nonfaulty_nodes(t)
        bounds = ag.envelope_bounds(inst, self.cfg, recipients, t)
        choice = self.adversary.choose_schedule(inst, bounds)
        ag.schedule_decisions(inst, bounds, choice)
        if inst.rejections:
            self.trace.event(t, "reject", inst.initiator, {"instance": inst.id, "reasons": inst.rejections})
        self.trace.event(t, "close", inst.initiator, {"instance": inst.id, "case": inst.case.value,
                                                     "outcome": inst.outcome.value})
        self._push_decisions(inst)

    def _push_decisions(self, inst: ag.AgreementInstance):
        for q, rec in inst.schedule.items():
            self.push(rec.decide_at, DECIDE, (inst, rec))
        for q, at in inst.bottom.items():
            self.push(at, BOTTOM, (inst, q))

    def _decide(self, payload, t: int):
        inst, rec = payload
        q = rec.node
        if q not in self.nodes or self.faulty(q, t):
            return
        clock = self.clocks[q]
        tau_p = clock.local_of(rec.recording)
        self.trace.event(t, "decide", q, {"instance": inst.id, "recording": rec.recording})
        try:
            self._step(q, t, lambda pn, now: pn.on_decision(inst.initiator, tau_p, now))
        except ContractViolation as exc:
            raise SimulationAborted(str(exc), inst.id) from exc

    # adversary

    def _adversary_act(self, t: int, trigger: Envelope | None):
        view = self.view
        view.now = t
        view.trigger = trigger
        view.faulty = frozenset(q for q in range(self.cfg.n) if self.faulty(q, t))
        view.open_instances = [i for i in self.registry.instances[-8:] if not i.closed]
        for env in self.adversary.act(view, self.rng_adv):
            self._inject(env, t)

    def _inject(self, env: Envelope, t: int):
        cfg = self.cfg
        ok = 0 <= env.receiver < cfg.n and env.sent_at >= t and env.deliver_at >= env.sent_at
        forged = not self.faulty(env.sender, env.sent_at)
        if ok and forged:
            # identities are only forgeable while the network is faulty
            window = env.sent_at // cfg.cycle
            used = self.injected_precoherent.get(window, 0)
            ok = (env.deliver_at <= self.plan.coherent_from + cfg.d and env.sent_at < self.plan.coherent_from
                  and used < 10 * cfg.n)
            if ok:
                self.injected_precoherent[window] = used + 1
        if env.msg.kind is Kind.SUPPORT and env.msg.proposers is None:
            ok = False
        if not ok:
            self.trace.event(t, "inject_refused", env.sender, env.to_json())
            return
        self.trace.event(t, "inject", env.sender, env.to_json())
        self.send(env)


def run(cfg: SimConfig, plan: FaultPlan, adversary: Strategy | str, duration: int, record_events: bool = True) -> Trace:
    return Simulator(cfg, plan, adversary, duration, record_events=record_events).run()
