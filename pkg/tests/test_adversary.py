import random

import pytest

from pulsesync import agreement as ag
from pulsesync.adversary import STRATEGIES, AdversaryView, make_strategy
from pulsesync.config import DEFAULT_CONFIG as CFG
from pulsesync.messages import PROPOSE, Envelope, Kind, support
from pulsesync.node import NodeState, PulseNode

D = CFG.d
FAULTY = frozenset({3})
CORRECT = (0, 1, 2)


def view(now, trigger):
    v = AdversaryView(cfg=CFG, now=now, faulty=FAULTY, correct=CORRECT, trigger=trigger)
    return v


def strategy(name, **params):
    s = make_strategy(name, params)
    s.setup(CFG, FAULTY, CORRECT)
    return s


def test_registry_names():
    assert sorted(STRATEGIES) == ["AntiSync", "EquivocatingSP", "LatestSkew", "RandomFlood", "Silent"]
    with pytest.raises(ValueError):
        make_strategy("Nope")


@pytest.mark.parametrize("trigger", [None, Envelope(0, 3, PROPOSE, 0, 10)])
def test_silent_does_nothing(trigger):
    assert strategy("Silent").act(view(10, trigger), random.Random(1)) == []


def test_equivocating_support_sets():
    s = strategy("EquivocatingSP")
    out = s.act(view(10, Envelope(0, 3, PROPOSE, 0, 10)), random.Random(1))
    sp = {e.receiver: e.msg.proposers for e in out if e.msg.kind is Kind.SUPPORT}
    assert sp[0] == {3, 0, 1}
    assert sp[2] == {3, 1, 2}
    assert all(e.sender == 3 for e in out)
    # both pass the credibility check only with an f+1 intersection
    assert len(sp[0] & {0, 1}) >= CFG.f + 1 and len(sp[2] & {1, 2}) >= CFG.f + 1


def test_antisync_edge_does_not_trigger_support():
    t = 500_000
    s = strategy("AntiSync")
    out = s.act(view(t, Envelope(0, 3, support({0, 1, 2}), t - 10, t)), random.Random(1))
    edge = t + CFG.cycle - 8 * D - 1
    pps = [e for e in out if e.msg.kind is Kind.PROPOSE and e.sent_at == edge and e.receiver == 0]
    assert pps
    # node 0 sent its SP at t and already counts itself and node 1 as proposers
    state = NodeState.fresh(0, CFG, t)
    state.last_sp_sent = t
    pn = PulseNode(CFG, state)
    now = pps[0].deliver_at - 1
    state.proposers = {0: now, 1: now}
    pn.on_propose_pulse(3, now)
    assert len(state.proposers) == CFG.quorum
    assert pn.try_support(now).broadcasts == []
    assert pn.try_support(t + CFG.cycle - 8 * D).broadcasts != []


def test_latest_skew_recording_extremes():
    t1 = 500_000
    inst = ag.AgreementInstance(3, 0, t1, invocations={0: t1, 1: t1 + 800, 2: t1 + 400}, case=ag.Case.GENERAL)
    b = ag.envelope_bounds(inst, CFG, (0, 1, 2), t1 + D)
    choice = strategy("LatestSkew").choose_schedule(inst, b)
    recs = {q: rec for q, (_, rec) in choice.schedule.items()}
    assert set(recs.values()) == {t1 - 2 * D, t1 + 800}
    assert ag.check_choice(b, choice) == []
    decs = [dec for dec, _ in choice.schedule.values()]
    assert max(decs) - min(decs) <= 3 * D


def test_silent_schedule_is_centroid():
    inst = ag.AgreementInstance(3, 0, 1000, invocations={0: 1000}, case=ag.Case.GENERAL)
    b = ag.envelope_bounds(inst, CFG, (0, 1, 2), 2000)
    assert strategy("Silent").choose_schedule(inst, b) == ag.centroid(b)


@pytest.mark.parametrize("name", sorted(STRATEGIES))
@pytest.mark.parametrize("case", [ag.Case.GENERAL, ag.Case.VALIDITY, ag.Case.PRECOHERENT])
def test_every_strategy_stays_in_envelope(name, case):
    for seq in range(4):
        t0 = 300_000
        inst = ag.AgreementInstance(0, seq, t0, invocations={0: t0 + 10, 1: t0 + 600, 2: t0 + 900}, case=case,
                                    t0=t0)
        b = ag.envelope_bounds(inst, CFG, (0, 1, 2), t0 + 900)
        assert ag.check_choice(b, strategy(name).choose_schedule(inst, b)) == []


@pytest.mark.parametrize("name", sorted(STRATEGIES))
def test_injections_carry_faulty_senders(name):
    s = strategy(name)
    rng = random.Random(7)
    for kind_msg in (PROPOSE, support({0, 1, 2})):
        for t in range(0, 200_000, 7000):
            out = s.act(view(t, Envelope(1, 3, kind_msg, t - 5, t)), rng)
            out += s.act(view(t, None), rng)
            assert all(e.sender in FAULTY for e in out)
            assert all(e.deliver_at >= e.sent_at >= t for e in out)
