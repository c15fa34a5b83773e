"""Planner tests: tag recipes, analytic bounds, booking, admission."""

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcsq import controlplane as cp
from pcsq.mapping import run_probe_handshake
from pcsq.timebase import ZS_PER_S, parse_time
from pcsq.topology import Link, Node, Topology

US = parse_time("1us")
MS = parse_time("1ms")
T = 10 * US
G = 10**9
N = 15


def mk_chain(props, rate=10 * G):
    # Forward links carry the flows; reverse links exist for probe replies.
    nodes = [Node(i) for i in range(len(props) + 1)]
    links = [Link(i, i, i + 1, rate, p) for i, p in enumerate(props)]
    links += [
        Link(len(props) + i, i + 1, i, rate, p) for i, p in enumerate(props)
    ]
    return Topology(nodes, links)


def mk_flow(**kw):
    base = dict(
        flow_id="f",
        path=(0, 1),
        rate_bps=10**6,
        packet_size=250,
    )
    base.update(kw)
    return cp.FlowSpec(**base)


# --- tag recipes ------------------------------------------------------------


def test_deadline_division_examples():
    with pytest.raises(cp.InfeasibleOffset):
        cp.tags_deadline_division(10 * MS, 4 * MS, 6, T, N)
    assert cp.tags_deadline_division(640 * US, 40 * US, 6, T, N) == (10,) * 6
    with pytest.raises(cp.InfeasibleDeadline):
        cp.tags_deadline_division(215 * US, 200 * US, 2, T, N)


def test_stop_and_go_and_fixed_stack():
    assert cp.tags_stop_and_go(3) == (1, 1, 1)
    assert cp.tags_stop_and_go(1) == (1,)
    assert cp.tags_fixed_stack([2, 3, 2], 3) == (2, 3, 2)
    assert cp.tags_fixed_stack([1, 1, 1], 3) == cp.tags_stop_and_go(3)
    with pytest.raises(ValueError):
        cp.tags_fixed_stack([2, 3], 3)
    with pytest.raises(ValueError):
        cp.tags_fixed_stack([2, 15, 2], 3)
    with pytest.raises(ValueError):
        cp.tags_fixed_stack([2, 0, 2], 3)


def test_rank_lstf():
    assert cp.rank_lstf(5 * MS, 1 * MS) == 6 * MS


# --- analytic bounds --------------------------------------------------------


def test_bounds_csqf_examples():
    d_min, d_max, jit = cp.bounds_csqf(parse_time("7.5ms"), 6, T)
    assert d_max == parse_time("7.57ms")
    assert d_min == parse_time("7.55ms")
    assert jit == parse_time("20us")
    d_min, d_max, jit = cp.bounds_csqf(0, 1, T)
    assert d_max - d_min == 2 * T


def test_bounds_csqf_jitter_always_two_cycles():
    for h in range(1, 9):
        for cycle in (US, 10 * US, 137 * US):
            assert cp.bounds_csqf(123456, h, cycle)[2] == 2 * cycle


def test_bounds_csqf_fixed_stack_shift():
    # Larger offsets move both edges by (sum(stack) - h) cycles, jitter same.
    base = cp.bounds_csqf(MS, 3, T)
    damped = cp.bounds_csqf(MS, 3, T, total_offset=2 + 3 + 2)
    extra = (7 - 3) * T
    assert damped[0] - base[0] == extra
    assert damped[1] - base[1] == extra
    assert damped[2] == base[2]


def test_sp_aggregate_bound():
    assert cp.bound_sp_aggregate(Fraction(1, 9), 10, 0, US) is cp.UNBOUNDED
    assert cp.bound_sp_aggregate(Fraction(99, 100), 1, 3 * US, US) == 4 * US
    tau = parse_time("1.2us")
    assert cp.bound_sp_aggregate(Fraction(1, 5), 4, 0, tau) == 12 * US


@settings(max_examples=100)
@given(
    num=st.integers(min_value=0, max_value=50),
    den=st.integers(min_value=51, max_value=200),
    h=st.integers(min_value=1, max_value=12),
    delta=st.integers(min_value=0, max_value=10**9),
    tau=st.integers(min_value=1, max_value=10**9),
)
def test_sp_aggregate_matches_direct_formula(num, den, h, delta, tau):
    alpha = Fraction(num, den)
    got = cp.bound_sp_aggregate(alpha, h, delta, tau)
    if h > 1 and alpha >= Fraction(1, h - 1):
        assert got is cp.UNBOUNDED
    else:
        want = math.ceil(Fraction((delta + tau) * h, 1) / (1 - (h - 1) * alpha))
        assert got == want


def test_netcalc_bound():
    assert cp.bound_netcalc(10**6, 0, 10 * G, T) == T
    assert cp.bound_netcalc(10**6, 12500, 10 * G, T) == 20 * US
    with pytest.raises(cp.UnstableError):
        cp.bound_netcalc(2 * G, 1500, G, T)


# --- admission --------------------------------------------------------------


def tables_for(topo):
    return run_probe_handshake(topo, T, N)


def test_admit_periodic_flow_idle_fast_path():
    # 250 B every 0.5 ms across two 100 Gbps hops: the period walks an
    # arithmetic coset of three slots, each booked once per ring pass.
    topo = mk_chain([20 * US, 20 * US], rate=100 * G)
    ledger = cp.ResourceLedger(topo, T, num_queues=N)
    flow = mk_flow(
        flow_id="probe", path=(0, 1, 2), rate_bps=4 * 10**6,
        period=parse_time("0.5ms"),
    )
    plan = cp.admit(flow, topo, ledger, tables_for(topo))
    assert plan.admitted and plan.shaped
    assert plan.release_quota == ((0, 250), (5, 250), (10, 250))
    assert plan.shaping_cycles == 1 and plan.window_shift == 0
    assert [s.cycle_offset for s in plan.sids] == [1, 1]
    assert plan.d_min == 40 * US + T
    assert plan.d_max == 40 * US + 4 * T
    assert plan.jitter == 2 * T
    assert ledger.slot_bytes == {
        (0, 1): 250, (0, 6): 250, (0, 11): 250,
        (1, 4): 250, (1, 9): 250, (1, 14): 250,
    }
    ledger.check_conservation()


def test_admit_burst_shaping_cycles():
    topo = mk_chain([20 * US])
    ledger = cp.ResourceLedger(topo, T)
    bursty = mk_flow(
        flow_id="tb", packet_size=1500, burst_bytes=10500,
        shaper_burst_bytes=6000,
    )
    smooth = mk_flow(flow_id="one", packet_size=1500)
    p_burst = cp.admit(bursty, topo, ledger)
    p_one = cp.admit(smooth, topo, ledger)
    assert p_burst.admitted and p_one.admitted
    assert p_burst.shaping_cycles == 2
    assert p_one.shaping_cycles == 1
    assert p_burst.d_max - p_one.d_max == T
    assert len(p_burst.release_quota) == 2
    assert all(q == 6000 for _, q in p_burst.release_quota)


def test_admit_sustained_rate_widens_window():
    topo = mk_chain([20 * US])
    ledger = cp.ResourceLedger(topo, T)
    flow = mk_flow(flow_id="tb", packet_size=1500, rate_bps=100 * 10**6)
    plan = cp.admit(flow, topo, ledger)
    # 100 Mbit/s needs 1875 B per ring pass; one 1500 B slot is not enough.
    assert plan.admitted and plan.shaping_cycles == 2


def test_admit_slot_overflow_is_atomic():
    topo = mk_chain([20 * US], rate=G)
    ledger = cp.ResourceLedger(topo, T, rate_cap=Fraction(1))
    assert ledger.slot_budget[0] == 1062
    a = mk_flow(
        flow_id="a", packet_size=1000, rate_bps=400 * 10**6, period=2 * T
    )
    assert cp.admit(a, topo, ledger).admitted
    before = ledger.snapshot()
    b = mk_flow(
        flow_id="b", packet_size=1000, rate_bps=400 * 10**6, period=2 * T
    )
    plan = cp.admit(b, topo, ledger)
    assert not plan.admitted
    assert plan.reason == cp.REJECT_SLOT_OVERFLOW
    assert ledger.snapshot() == before
    ledger.check_conservation()


def test_admit_rate_cap_tier():
    topo = mk_chain([20 * US])
    ledger = cp.ResourceLedger(topo, T)  # default cap: 12% of 10 Gbit/s
    a = mk_flow(flow_id="a", packet_size=875, rate_bps=700 * 10**6, period=T)
    assert cp.admit(a, topo, ledger, tables_for(topo)).admitted
    b = mk_flow(flow_id="b", packet_size=750, rate_bps=600 * 10**6, period=T)
    plan = cp.admit(b, topo, ledger, tables_for(topo))
    assert not plan.admitted and plan.reason == cp.REJECT_RATE_CAP


def test_admit_deadline_division_and_decrement():
    topo = mk_chain([100 * US, 100 * US])
    tables = tables_for(topo)

    loose = mk_flow(flow_id="loose", path=(0, 1, 2), deadline=640 * US)
    plan = cp.admit(loose, topo, cp.ResourceLedger(topo, T), tables)
    assert plan.admitted
    assert [s.cycle_offset for s in plan.sids] == [1, 1]
    assert plan.d_max == 240 * US

    mid = mk_flow(flow_id="mid", path=(0, 1, 2), deadline=300 * US)
    plan = cp.admit(mid, topo, cp.ResourceLedger(topo, T), tables)
    assert plan.admitted
    # The uniform split gives 5 cycles per hop, whose worst case lands past
    # the deadline; one decrement settles it exactly on 300 us.
    assert [s.cycle_offset for s in plan.sids] == [4, 4]
    assert plan.d_max == 300 * US

    tight = mk_flow(flow_id="tight", path=(0, 1, 2), deadline=215 * US)
    plan = cp.admit(tight, topo, cp.ResourceLedger(topo, T), tables)
    assert not plan.admitted and plan.reason == cp.REJECT_DEADLINE


def test_admit_rejects_straddling_hop():
    ok = mk_chain([100 * US, 100 * US])
    plan = cp.admit(
        mk_flow(path=(0, 1, 2)), ok, cp.ResourceLedger(ok, T), tables_for(ok)
    )
    assert plan.admitted
    # 105 us of wire shifts the whole arrival window (8.5 us of budgeted
    # drain at 10 Gbit/s) across a cycle edge at the middle node.
    bad = mk_chain([105 * US, 100 * US])
    plan = cp.admit(
        mk_flow(path=(0, 1, 2)), bad, cp.ResourceLedger(bad, T), tables_for(bad)
    )
    assert not plan.admitted and plan.reason == cp.REJECT_ALIGNMENT


def test_admit_jitter_bound_gate():
    topo = mk_chain([20 * US])
    plan = cp.admit(
        mk_flow(jitter_bound=15 * US), topo, cp.ResourceLedger(topo, T)
    )
    assert not plan.admitted and plan.reason == cp.REJECT_JITTER


def test_admit_unalignable_period():
    topo = mk_chain([20 * US])
    plan = cp.admit(
        mk_flow(period=7 * US), topo, cp.ResourceLedger(topo, T)
    )
    assert not plan.admitted and plan.reason == cp.REJECT_PERIOD


def test_admit_burst_window_too_wide():
    topo = mk_chain([20 * US])
    flow = mk_flow(packet_size=1500, burst_bytes=30000, shaper_burst_bytes=1500)
    plan = cp.admit(flow, topo, cp.ResourceLedger(topo, T))
    assert not plan.admitted and plan.reason == cp.REJECT_BURST_WINDOW


def test_admit_shaper_burst_over_budget():
    topo = mk_chain([20 * US], rate=G)  # budget 1062 bytes per cycle
    flow = mk_flow(packet_size=1200, burst_bytes=1200, shaper_burst_bytes=1200)
    plan = cp.admit(flow, topo, cp.ResourceLedger(topo, T))
    assert not plan.admitted and plan.reason == cp.REJECT_SHAPER_BURST


def test_admit_first_fit_window_shift():
    topo = mk_chain([20 * US], rate=G)
    ledger = cp.ResourceLedger(topo, T)
    a = mk_flow(flow_id="a", packet_size=1000, rate_bps=60 * 10**6,
                period=N * T)
    b = mk_flow(flow_id="b", packet_size=1000, rate_bps=60 * 10**6,
                period=N * T)
    pa = cp.admit(a, topo, ledger)
    pb = cp.admit(b, topo, ledger)
    assert pa.admitted and pa.window_shift == 0
    assert pa.release_quota == ((0, 1000),)
    assert pb.admitted and pb.window_shift == 1
    assert pb.release_quota == ((1, 1000),)
    assert pb.d_max - pa.d_max == T
    assert ledger.slot_bytes == {(0, 1): 1000, (0, 2): 1000}


def test_admit_unlocked_flow_gets_full_ring_allowance():
    topo = mk_chain([20 * US])
    flow = mk_flow(flow_id="jittery", packet_size=1500, slot_locked=False)
    plan = cp.admit(flow, topo, cp.ResourceLedger(topo, T))
    assert plan.admitted
    assert plan.d_max == 20 * US + (1 + 1 + N) * T
    assert plan.jitter == (2 + N) * T


def test_plan_unchecked_matches_formula_bounds():
    topo = mk_chain([100 * US, 100 * US])
    plan = cp.plan_unchecked(mk_flow(path=(0, 1, 2)), topo, T)
    assert plan.admitted and not plan.shaped
    assert plan.release_quota == ()
    assert [s.cycle_offset for s in plan.sids] == [1, 1]
    assert (plan.d_min, plan.d_max, plan.jitter) == cp.bounds_csqf(
        200 * US, 2, T
    )


@settings(max_examples=60, deadline=None)
@given(
    choices=st.lists(
        st.tuples(
            st.sampled_from([200, 500, 1000]),
            st.sampled_from([1, 2, 3, 5, 15]),  # period in cycles
            st.sampled_from([0, 3, 7]),  # phase in us
        ),
        min_size=1,
        max_size=8,
    )
)
def test_ledger_conservation_under_admission_storm(choices):
    topo = mk_chain([20 * US], rate=G)
    ledger = cp.ResourceLedger(topo, T, rate_cap=Fraction(1))
    for i, (size, period_cycles, phase_us) in enumerate(choices):
        period = period_cycles * T
        rate = size * 8 * ZS_PER_S // period
        flow = mk_flow(
            flow_id=f"f{i}", packet_size=size, rate_bps=max(rate, 1),
            period=period, phase=phase_us * US,
        )
        before = ledger.snapshot()
        plan = cp.admit(flow, topo, ledger)
        ledger.check_conservation()
        if not plan.admitted:
            assert ledger.snapshot() == before
