"""Exactness and conversion tests for the timebase."""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcsq.timebase import (
    ZS_PER_NS,
    ZS_PER_US,
    ZS_PER_S,
    BoundaryIter,
    ClockConfigError,
    NodeClock,
    cycle_boundary,
    format_time,
    local_cycle_index,
    parse_time,
    ser_time,
)

US = ZS_PER_US
IDEAL = NodeClock()


def boundary_oracle(clock: NodeClock, cycle_len: int, k: int) -> int:
    """Independent rational-arithmetic boundary: floor via Fraction."""
    exact = Fraction(k * cycle_len) * (1 + clock.frequency_error)
    import math

    return clock.phase_offset + math.floor(exact)


def test_unit_is_a_trillionth_of_a_ns():
    assert ZS_PER_NS == 10**12
    assert parse_time("1ns") == 10**12
    assert parse_time("10us") == 10 * US


def test_parse_time_exact_decimals():
    assert parse_time("2.5ms") == 25 * 10**17
    assert parse_time("0.5us") == 5 * 10**14
    assert parse_time(42) == 42
    assert parse_time("42") == 42
    with pytest.raises(ValueError):
        parse_time("0.0000000000001ns")  # below the grid
    with pytest.raises(ValueError):
        parse_time("")


def test_format_time_round_trips():
    for text in ("10us", "1ns", "2500us", "1s"):
        t = parse_time(text)
        assert parse_time(format_time(t)) == t
    assert format_time(0) == "0s"
    assert format_time(7) == "7zs"


def test_ideal_boundaries_are_exact_multiples():
    assert cycle_boundary(IDEAL, 10 * US, 0) == 0
    assert cycle_boundary(IDEAL, 10 * US, 3) == 30 * US
    assert cycle_boundary(IDEAL, 10 * US, 10**9) == 10**9 * 10 * US


def test_hundred_ppm_lag_matches_rational_oracle():
    # Free-running clock at +100 ppm, 10 us cycles: after 1e5 cycles (1 s of
    # local time) the boundary lags ideal by 100 ppm of 1 s = 100 us.
    clock = NodeClock("free_running", Fraction(1, 10**4))
    k = 10**5
    b = cycle_boundary(clock, 10 * US, k)
    ideal = k * 10 * US
    assert b == boundary_oracle(clock, 10 * US, k)
    assert abs((b - ideal) - 100 * US) <= 1


def test_negative_error_leads_ideal():
    clock = NodeClock("free_running", Fraction(-1, 10**4))
    k = 10**5
    b = cycle_boundary(clock, 10 * US, k)
    assert b == boundary_oracle(clock, 10 * US, k)
    assert abs((k * 10 * US - b) - 100 * US) <= 1


def test_boundary_instant_belongs_to_new_cycle():
    clock = NodeClock("ptp", phase_offset=13 * ZS_PER_NS)
    b5 = cycle_boundary(clock, 10 * US, 5)
    assert local_cycle_index(clock, 10 * US, b5) == (5, 0)
    assert local_cycle_index(clock, 10 * US, b5 - 1)[0] == 4


def test_local_cycle_index_offsets():
    idx, off = local_cycle_index(IDEAL, 10 * US, 25 * US)
    assert (idx, off) == (2, 5 * US)
    idx, off = local_cycle_index(IDEAL, 10 * US, 0)
    assert (idx, off) == (0, 0)


@given(
    k=st.integers(min_value=0, max_value=10**7),
    cycle=st.integers(min_value=2, max_value=10**17),
    num=st.integers(min_value=-100, max_value=100),
    phase=st.integers(min_value=-(10**16), max_value=10**16),
)
def test_round_trip_boundary_then_index(k, cycle, num, phase):
    clock = NodeClock("free_running", Fraction(num, 10**6), phase)
    b = cycle_boundary(clock, cycle, k)
    assert local_cycle_index(clock, cycle, b) == (k, 0)


@given(
    cycle=st.integers(min_value=2, max_value=10**17),
    num=st.integers(min_value=-100, max_value=100),
    ks=st.lists(st.integers(min_value=0, max_value=10**9), min_size=2, max_size=6),
)
def test_boundaries_monotone(cycle, num, ks):
    clock = NodeClock("free_running", Fraction(num, 10**6))
    ks = sorted(set(ks))
    bs = [cycle_boundary(clock, cycle, k) for k in ks]
    assert bs == sorted(bs)
    if len(ks) >= 2 and cycle > 1:
        assert len(set(bs)) == len(bs)


def test_repeated_addition_equals_multiplication():
    # CycleLength exactness: accumulating k additions of the duration equals
    # one multiplication, for ideal clocks, with no drift ever.
    cycle = 10 * US + 1  # deliberately not a round number
    acc = 0
    for _ in range(10**5):
        acc += cycle
    assert acc == 10**5 * cycle
    # and by doubling up to 1e9 without a 1e9-iteration loop
    acc, reps = cycle, 1
    while reps < 10**9:
        acc, reps = acc + acc, reps * 2
    assert acc == reps * cycle


@settings(max_examples=30)
@given(
    k0=st.integers(min_value=0, max_value=10**6),
    steps=st.integers(min_value=1, max_value=50),
    cycle=st.integers(min_value=2, max_value=10**17),
    num=st.integers(min_value=-100, max_value=100),
)
def test_boundary_iter_matches_closed_form(k0, steps, cycle, num):
    clock = NodeClock("free_running", Fraction(num, 10**6), phase_offset=7)
    it = BoundaryIter(clock, cycle, k0)
    assert it.current() == cycle_boundary(clock, cycle, k0)
    for i in range(1, steps + 1):
        assert it.advance() == cycle_boundary(clock, cycle, k0 + i)
    assert it.k == k0 + steps


def test_ser_time_examples():
    assert ser_time(1500, 100 * 10**9) == parse_time("0.12us")
    assert ser_time(64, 100 * 10**9) == parse_time("0.00512us")
    assert ser_time(1500, 10 * 10**9) == parse_time("1.2us")


def test_regime_validation():
    NodeClock("synce", Fraction(1, 10**11))
    with pytest.raises(ClockConfigError):
        NodeClock("synce", Fraction(2, 10**11))
    NodeClock("free_running", Fraction(1, 10**4))
    with pytest.raises(ClockConfigError):
        NodeClock("free_running", Fraction(2, 10**4))
    NodeClock("ptp", phase_offset=9 * ZS_PER_NS)
    with pytest.raises(ClockConfigError):
        NodeClock("ptp", phase_offset=30 * ZS_PER_NS)
    with pytest.raises(ClockConfigError):
        NodeClock("ideal", phase_offset=1)
    with pytest.raises(ClockConfigError):
        NodeClock("sidereal")


def test_second_is_representable_headroom():
    # >= 96-bit magnitudes must be exact; a full second is ~2^70 units and a
    # 100-hour horizon still fits with room to spare.
    t = 360000 * ZS_PER_S
    assert t.bit_length() < 96
    assert t + 1 - 1 == t
