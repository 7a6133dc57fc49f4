import random

import pytest
from hypothesis import given, settings, strategies as st

from pulsesync.config import DEFAULT_CONFIG as CFG
from pulsesync.engine import CorruptionSpec, corrupt_state
from pulsesync.messages import PROPOSE, RESET, Kind
from pulsesync.node import ContractViolation, InitiatorRecord, NodeState, PulseNode

import oracles

D = CFG.d
Q = 0  # the node under test


def node(now=100_000, **kw):
    state = NodeState.fresh(Q, CFG, now)
    for k, v in kw.items():
        setattr(state, k, v)
    return PulseNode(CFG, state)


# Block A

def test_expiry_resets_and_proposes():
    pn = node(cc=0, cc_at=100_000)
    out = pn.on_countdown_expiry(100_000)
    assert out.broadcasts == [PROPOSE]
    assert pn.state.cc == 50_000 and pn.state.countdown(100_000) == 50_000


def test_expiry_guard():
    pn = node(cc=1, cc_at=100_000)
    assert pn.on_countdown_expiry(100_000).broadcasts == []
    assert pn.state.cc == 1


def test_consecutive_expiries_cycle_apart():
    pn = node(cc=0, cc_at=0)
    times = []
    now = 0
    for _ in range(3):
        now = pn.state.expiry()
        assert pn.on_countdown_expiry(now).broadcasts == [PROPOSE]
        times.append(now)
    assert [b - a for a, b in zip(times, times[1:])] == [CFG.cycle, CFG.cycle]


# Block B

def test_propose_adds_sender():
    pn = node()
    pn.on_propose_pulse(2, 100_000)
    assert 2 in pn.state.proposers


def test_propose_from_recent_ignored():
    pn = node(recent={2: 99_500})
    pn.on_propose_pulse(2, 100_000)
    assert 2 not in pn.state.proposers


def test_propose_refreshes_timestamp():
    pn = node(proposers={2: 90_000})
    pn.on_propose_pulse(2, 100_000)
    assert pn.state.proposers == {2: 100_000}


# Block C

def test_support_after_spacing():
    now = 200_000
    spacing = CFG.cycle - 8 * D
    assert spacing == 42_000
    pn = node(now, proposers={Q: now, 1: now, 3: now}, last_sp_sent=now - spacing)
    out = pn.try_support(now)
    assert [m.kind for m in out.broadcasts] == [Kind.SUPPORT]
    assert out.broadcasts[0].proposers == {Q, 1, 3}
    assert pn.state.last_sp_sent == now
    # one tick too early
    pn = node(now, proposers={Q: now, 1: now, 3: now}, last_sp_sent=now - spacing + 1)
    assert pn.try_support(now).broadcasts == []


def test_support_requires_self():
    pn = node(proposers={1: 100_000, 2: 100_000, 3: 100_000})
    assert pn.try_support(100_000).broadcasts == []


def test_support_requires_quorum():
    pn = node(proposers={Q: 100_000, 1: 100_000})
    assert pn.try_support(100_000).broadcasts == []


# Block D

P = 3


def test_invoke_on_credible_support():
    pn = node(proposers={1: 100_000}, recent={Q: 100_000})
    assert len({1, Q} & {P, 1, Q}) == 2
    out = pn.on_support_pulse(P, {P, 1, Q}, 100_000)
    assert out.invocations == [P]
    assert pn.state.per_initiator[P].last_invoke == 100_000
    assert P not in pn.state.pending_sp


def test_no_invoke_within_spacing_of_decision():
    now = 100_000
    pn = node(proposers={1: now}, recent={Q: now}, per_initiator={P: InitiatorRecord(None, now - 10_000)})
    assert CFG.cycle - 11 * D == 39_000
    assert pn.on_support_pulse(P, {P, 1, Q}, now).invocations == []
    # the guard expires while the entry is still inside its d-long window
    pn = node(proposers={1: now}, recent={Q: now},
              per_initiator={P: InitiatorRecord(None, now - 39_000 + 500)})
    assert pn.on_support_pulse(P, {P, 1, Q}, now).invocations == []
    assert pn.next_wakeup(now) == now + 500
    assert pn.after_event(now + 500).invocations == [P]


def test_invoke_when_backing_grows_inside_window():
    now = 100_000
    pn = node(proposers={1: now})
    assert pn.on_support_pulse(P, {P, 1, Q}, now).invocations == []
    later = now + D // 2
    pn.on_propose_pulse(Q, later)
    assert pn.after_event(later).invocations == [P]


def test_pending_dropped_after_window():
    now = 100_000
    pn = node(proposers={1: now})
    pn.on_support_pulse(P, {P, 1, Q}, now)
    pn.on_propose_pulse(Q, now + D + 1)
    assert pn.after_event(now + D + 1).invocations == []
    assert P not in pn.state.pending_sp


def test_malformed_support_discarded():
    pn = node(proposers={1: 100_000, Q: 100_000})
    out = pn.on_support_pulse(P, {1, 99}, 100_000)
    assert out.discarded == 1 and out.invocations == []
    assert P not in pn.state.pending_sp


# Block E

def test_decision_resets_countdown():
    now, tau_p = 100_000, 98_000
    pn = node(now, latest=60_000)
    out = pn.on_decision(P, tau_p, now)
    assert pn.state.cc == oracles.e6_countdown(CFG.cycle, now, tau_p) == 48_000
    assert pn.state.latest == 98_000
    assert out.broadcasts == [RESET] and out.pulse


def test_stale_decision_only_records():
    now = 100_000
    pn = node(now, latest=99_000, proposers={Q: now})
    before = pn.state.snapshot()
    out = pn.on_decision(P, 98_000, now)
    assert out.broadcasts == [] and not out.pulse
    after = pn.state.snapshot()
    assert after["per_initiator"] == [(P, None, now)]
    after["per_initiator"] = before["per_initiator"]
    assert after == before


def test_pulse_separation():
    now = 100_000
    assert CFG.byz_dur + 6 * D == 41_000
    pn = node(now, latest=0, last_pulse=now - 40_000, proposers={Q: now})
    out = pn.on_decision(P, 99_000, now)
    assert not out.pulse and out.broadcasts == [RESET]
    assert pn.state.cc == 49_000 and Q not in pn.state.proposers
    pn = node(now, latest=0, last_pulse=now - 41_001)
    assert pn.on_decision(P, 99_000, now).pulse


def test_equal_recording_retriggers():
    pn = node(latest=99_000)
    assert pn.on_decision(P, 99_000, 100_000).broadcasts == [RESET]


def test_future_recording_is_contract_violation():
    with pytest.raises(ContractViolation):
        node().on_decision(P, 100_001, 100_000)


# Block F

def test_reset_moves_to_recent():
    pn = node(proposers={2: 99_000})
    pn.on_reset(2, 100_000)
    assert 2 not in pn.state.proposers and pn.state.recent[2] == 100_000


def test_reset_from_non_proposer_still_recent():
    pn = node()
    pn.on_reset(2, 100_000)
    assert pn.state.recent == {2: 100_000}


def test_reset_refreshes_recent():
    pn = node(recent={2: 99_000})
    pn.on_reset(2, 100_000)
    assert pn.state.recent == {2: 100_000}


# Block G

def test_cleanup_clamps_countdown():
    pn = node(cc=-5)
    assert "cc" in pn.cleanup(100_000).clamps
    assert pn.state.cc == CFG.cycle


def test_cleanup_clamps_latest():
    pn = node(latest=250_000)
    assert "latest" in pn.cleanup(100_000).clamps
    assert pn.state.latest == 50_000


def test_recent_decay_boundary():
    ttl = 2 * D + CFG.epsilon
    pn = node(recent={1: 100_000 - ttl, 2: 100_000 - ttl + 1})
    pn.cleanup(100_000)
    assert pn.state.recent == {2: 100_000 - ttl + 1}


def test_old_data_deleted():
    ttl = CFG.cycle + 2 * D
    now = 200_000
    pn = node(now, proposers={1: now - ttl - 1, 2: now - ttl}, last_sp_sent=now - ttl - 1,
              per_initiator={3: InitiatorRecord(now - ttl - 1, None)})
    pn.cleanup(now)
    assert pn.state.proposers == {2: now - ttl}
    assert pn.state.last_sp_sent is None and pn.state.per_initiator == {}


# property: invariants after arbitrary event sequences from corrupted states

events = st.lists(
    st.tuples(
        st.sampled_from(["pp", "sp", "reset", "decide", "timer", "idle"]),
        st.integers(0, 3),
        st.integers(1, 3 * D),
        st.frozensets(st.integers(0, 3)),
        st.integers(0, CFG.byz_dur),
    ),
    max_size=60,
)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32), events)
def test_invariants_hold_after_cleanup(seed, evs):
    rng = random.Random(seed)
    now = 10**6
    pn = PulseNode(CFG, corrupt_state(Q, CFG, now, rng, CorruptionSpec()))
    last_sp = None
    invokes: dict[int, int] = {}
    for kind, who, step, props, lag in evs:
        now += step
        pn.cleanup(now)
        if kind == "pp":
            out = pn.on_propose_pulse(who, now)
        elif kind == "sp":
            out = pn.on_support_pulse(who, props, now)
        elif kind == "reset":
            out = pn.on_reset(who, now)
        elif kind == "decide":
            out = pn.on_decision(who, now - lag, now)
        elif kind == "timer":
            out = pn.on_countdown_expiry(now)
        else:
            out = pn.cleanup(now)
        out.merge(pn.after_event(now))
        pn.cleanup(now)
        s = pn.state
        assert 0 <= s.countdown(now) <= CFG.cycle and 0 <= s.cc <= CFG.cycle
        assert now - CFG.cycle <= s.latest <= now
        assert all(now - at < 2 * D + CFG.epsilon for at in s.recent.values())
        assert all(now - at <= CFG.cycle + 2 * D for at in s.proposers.values())
        assert all(now - e.received_at <= CFG.cycle + 2 * D for e in s.pending_sp.values())
        assert not set(s.proposers) & set(s.recent)
        for msg in out.broadcasts:
            if msg.kind is Kind.SUPPORT:
                assert last_sp is None or now - last_sp >= CFG.cycle - 8 * D
                last_sp = now
        for p in out.invocations:
            assert p not in invokes or now - invokes[p] >= CFG.cycle - 11 * D
            invokes[p] = now
