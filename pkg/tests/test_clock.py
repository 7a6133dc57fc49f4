from fractions import Fraction

from hypothesis import given, strategies as st

from pulsesync.clock import Clock, local_of, real_of

import oracles


def test_identity_clock():
    c = Clock(0)
    assert local_of(c, 12345) == 12345
    assert real_of(c, 12345) == 12345


def test_drift_one_ppm():
    c = Clock(0, Fraction(1) + Fraction(1, 10**6))
    assert c.local_of(10**6) == 10**6 + 1


def test_ties_to_even():
    c = Clock(0, Fraction(3, 2))
    assert c.local_of(1) == 2   # 1.5
    assert c.local_of(3) == 4   # 4.5


rates = st.fractions(Fraction(999, 1000), Fraction(1001, 1000)).filter(lambda r: r > 0)


@given(rates, st.integers(0, 10**9), st.integers(0, 10**9))
def test_round_trip_within_one_tick(rate, offset, t):
    c = Clock(0, rate, offset)
    assert c.local_of(t) == oracles.local_time(offset, rate, t)
    assert abs(c.real_of(c.local_of(t)) - t) <= 1


@given(rates, st.integers(0, 10**6), st.integers(0, 10**8))
def test_monotone_and_first_reaching(rate, offset, t):
    c = Clock(0, rate, offset)
    assert c.local_of(t + 1) >= c.local_of(t)
    tau = c.local_of(t)
    first = c.first_real_reaching(tau)
    assert c.local_of(first) >= tau
    assert c.local_of(first - 1) < tau
