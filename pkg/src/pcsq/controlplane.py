"""Flow planning: cycle tags, per-slot byte booking, and delay bounds.

Everything here runs before the event cores start (or between epochs); the
cores never mutate the ledger.  A flow request turns into a PathPlan:

  * a per-hop list of cycle offsets (the tag each hop's enqueue consumes),
  * a set of ingress release slots with per-visit byte quotas, which the
    ingress shaper enforces so that bursts enter the ring at the pace the
    booking assumed, and
  * closed-form min/max delay and jitter for the whole path, shaping
    included.

Booking is exact, not heuristic: the planner walks the flow's bytes through
the ring slot it occupies at every hop (using the learned cycle-mapping
tables to cross links) and reserves that amount in each (link, slot) bucket.
A flow is admitted only if every touched bucket has room and every link's
reserved rate stays under the configured cap.  Rejection is atomic; the
ledger is untouched.

Two placement modes cover the supported arrival contracts:

  * periodic: one packet every `period`.  If the period is a multiple of the
    cycle length the releases form an arithmetic coset of slots; otherwise
    the period must divide the hypercycle and the slot loads are enumerated.
  * burst window: `ceil(burst/shaper_burst)` consecutive slots, each quota
    `shaper_burst` bytes (widened if the sustained rate needs more room).

Planning assumes the relation between each flow's emission phase and the
slot grid is stable over the run; clock slip over the horizon is folded into
the alignment margin, and a hop is rejected outright if a full transmit
window (budget drain plus slip) cannot land inside a single downstream
cycle.  Without that check, re-quantization at a hop would stretch the
two-cycle jitter band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .packet import CLASS_BE, CLASS_TS, SidEntry
from .scheduler import NUM_BE_PRIORITIES, ts_byte_budget
from .timebase import (
    SimTime,
    ZS_PER_S,
    cycle_boundary,
    local_cycle_index,
    ser_time,
)
from .topology import Topology

DEFAULT_RATE_CAP = Fraction(12, 100)

UNBOUNDED = float("inf")

REJECT_RATE_CAP = "rate_cap"
REJECT_SLOT_OVERFLOW = "slot_overflow"
REJECT_DEADLINE = "infeasible_deadline"
REJECT_ALIGNMENT = "unstable_alignment"
REJECT_PERIOD = "unalignable_period"
REJECT_BURST_WINDOW = "burst_window_too_wide"
REJECT_SHAPER_BURST = "shaper_burst_over_budget"
REJECT_JITTER = "jitter_bound_exceeded"


class InfeasibleDeadline(ValueError):
    """Even an all-ones tag stack cannot meet the requested deadline."""


class InfeasibleOffset(ValueError):
    """Uniform deadline division yields an offset the ring cannot encode."""


class UnstableError(ValueError):
    """Service rate below the arrival rate; no finite backlog bound exists."""


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class FlowSpec:
    """Arrival contract and service targets for one flow.

    `burst_bytes` is the largest back-to-back byte clump the source may emit
    (token bucket depth); `shaper_burst_bytes` is how much of it the ingress
    releases per reserved slot.  Both default to one packet.  `slot_locked`
    declares that emissions hold a fixed phase against the slot grid (true
    for the periodic generators here); unlocked flows get the conservative
    full-ring shaping allowance instead.
    """

    flow_id: str
    path: tuple[int, ...]
    rate_bps: int
    packet_size: int
    burst_bytes: int = 0
    shaper_burst_bytes: int = 0
    period: SimTime | None = None
    phase: SimTime = 0
    deadline: SimTime | None = None
    jitter_bound: SimTime | None = None
    cls: str = CLASS_TS
    be_priority: int = 0
    slot_locked: bool = True

    def __post_init__(self) -> None:
        if self.cls not in (CLASS_TS, CLASS_BE):
            raise ValueError(f"flow {self.flow_id}: unknown class {self.cls!r}")
        if len(self.path) < 2:
            raise ValueError(f"flow {self.flow_id}: path needs >= 2 nodes")
        if self.packet_size <= 0:
            raise ValueError(f"flow {self.flow_id}: packet_size must be positive")
        if self.rate_bps <= 0:
            raise ValueError(f"flow {self.flow_id}: rate_bps must be positive")
        if self.period is not None and self.period <= 0:
            raise ValueError(f"flow {self.flow_id}: period must be positive")
        if self.deadline is not None and self.deadline <= 0:
            raise ValueError(f"flow {self.flow_id}: deadline must be positive")
        if not 0 <= self.be_priority < NUM_BE_PRIORITIES:
            raise ValueError(f"flow {self.flow_id}: be_priority out of range")
        if self.burst_bytes == 0:
            object.__setattr__(self, "burst_bytes", self.packet_size)
        if self.shaper_burst_bytes == 0:
            object.__setattr__(self, "shaper_burst_bytes", self.packet_size)
        if self.burst_bytes < self.packet_size:
            raise ValueError(f"flow {self.flow_id}: burst smaller than a packet")
        if self.shaper_burst_bytes < self.packet_size:
            raise ValueError(
                f"flow {self.flow_id}: shaper burst smaller than a packet"
            )


# --- cycle-tag recipes ------------------------------------------------------


def tags_stop_and_go(hop_count: int) -> tuple[int, ...]:
    """Every hop forwards in the very next cycle."""
    if hop_count < 1:
        raise ValueError("hop_count must be >= 1")
    return (1,) * hop_count


def tags_deadline_division(
    deadline: SimTime,
    path_delay: SimTime,
    hop_count: int,
    cycle_len: SimTime,
    num_queues: int = 15,
) -> tuple[int, ...]:
    """Uniform per-hop postponement: floor(((deadline - path_delay)/h)/T).

    Offsets the ring cannot encode are an error, never wrapped: wrapping
    would silently change which cycle serves the packet.
    """
    if hop_count < 1:
        raise ValueError("hop_count must be >= 1")
    delta = ((deadline - path_delay) // hop_count) // cycle_len
    if delta < 1:
        raise InfeasibleDeadline(
            f"deadline leaves {delta} cycles per hop; need at least 1"
        )
    if delta >= num_queues:
        raise InfeasibleOffset(
            f"per-hop offset {delta} does not fit a ring of {num_queues}"
        )
    return (int(delta),) * hop_count


def tags_fixed_stack(
    stack: tuple[int, ...] | list[int], hop_count: int, num_queues: int = 15
) -> tuple[int, ...]:
    """Use a caller-supplied per-hop offset stack verbatim."""
    if len(stack) != hop_count:
        raise ValueError(f"stack length {len(stack)} != hop count {hop_count}")
    for off in stack:
        if not 1 <= off < num_queues:
            raise ValueError(f"offset {off} outside [1, {num_queues})")
    return tuple(stack)


def rank_lstf(slack: SimTime, arrival_time: SimTime) -> SimTime:
    """Least-slack-first rank: remaining slack plus arrival instant."""
    return slack + arrival_time


# --- analytic bounds --------------------------------------------------------


def bounds_csqf(
    ldpd_sum: SimTime,
    hop_count: int,
    cycle_len: SimTime,
    total_offset: int | None = None,
) -> tuple[SimTime, SimTime, SimTime]:
    """(D_min, D_max, jitter) for a tagged path, shaping excluded.

    With per-hop offsets summing to `total_offset` (default: one per hop),
    delivery lands within (total_offset +/- 1) cycles of the fixed wire and
    processing latency, so the jitter band is two cycles regardless of hop
    count or load.
    """
    if hop_count < 1:
        raise ValueError("hop_count must be >= 1")
    if cycle_len <= 0:
        raise ValueError("cycle_len must be positive")
    if total_offset is None:
        total_offset = hop_count
    d_max = ldpd_sum + (total_offset + 1) * cycle_len
    d_min = ldpd_sum + (total_offset - 1) * cycle_len
    return d_min, d_max, 2 * cycle_len


def bound_sp_aggregate(
    alpha: Fraction, hop_count: int, proc_jitter: SimTime, max_ser: SimTime
):
    """Worst-case delay of aggregate strict priority over `hop_count` hops.

    `alpha` is the top-class utilization share.  Returns UNBOUNDED once
    alpha reaches 1/(hop_count - 1); a single hop never diverges.  Pass
    alpha as a Fraction (or int/str) so the threshold comparison is exact.
    """
    alpha = Fraction(alpha)
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    if hop_count < 1:
        raise ValueError("hop_count must be >= 1")
    if hop_count > 1 and alpha >= Fraction(1, hop_count - 1):
        return UNBOUNDED
    value = Fraction((proc_jitter + max_ser) * hop_count) / (
        1 - (hop_count - 1) * alpha
    )
    return math.ceil(value)


def bound_netcalc(
    rate_bps: int, burst_bytes: int, service_rate_bps: int, cycle_len: SimTime
) -> SimTime:
    """Delay bound for one port serving a token-bucket arrival.

    The port guarantees `service_rate_bps` with a one-cycle service lag, so
    the worst horizontal gap between the curves is the lag plus the burst
    drain time.
    """
    if service_rate_bps < rate_bps:
        raise UnstableError(
            f"service rate {service_rate_bps} below arrival rate {rate_bps}"
        )
    return cycle_len + ser_time(burst_bytes, service_rate_bps)


# --- resource ledger --------------------------------------------------------


class ResourceLedger:
    """Reserved bytes per (link, ring slot) plus reserved rate per link.

    The slot budget equals the per-cycle byte budget the enqueue check
    enforces, so a booking that fits here is a booking the data plane can
    actually serve.  Single-writer: only the planner mutates it.
    """

    def __init__(
        self,
        topology: Topology,
        cycle_len: SimTime,
        *,
        num_queues: int = 15,
        be_gap: Fraction = Fraction(15, 100),
        rate_cap: Fraction = DEFAULT_RATE_CAP,
    ):
        self.topology = topology
        self.cycle_len = cycle_len
        self.num_queues = num_queues
        self.rate_cap = Fraction(rate_cap)
        self.slot_budget = {
            lid: ts_byte_budget(link.rate_bps, cycle_len, be_gap)
            for lid, link in topology.links.items()
        }
        self.slot_bytes: dict[tuple[int, int], int] = {}
        self.link_rate: dict[int, int] = {}

    def slot_used(self, link_id: int, slot: int) -> int:
        return self.slot_bytes.get((link_id, slot), 0)

    def rate_room(self, link_id: int) -> Fraction:
        cap = self.rate_cap * self.topology.links[link_id].rate_bps
        return cap - self.link_rate.get(link_id, 0)

    def fits(self, claims: dict[tuple[int, int], int]) -> bool:
        return all(
            self.slot_used(lid, slot) + nbytes <= self.slot_budget[lid]
            for (lid, slot), nbytes in claims.items()
        )

    def reserve(
        self, claims: dict[tuple[int, int], int], rates: dict[int, int]
    ) -> None:
        assert self.fits(claims), "reserve() without a prior fits() check"
        for key, nbytes in claims.items():
            self.slot_bytes[key] = self.slot_bytes.get(key, 0) + nbytes
        for lid, rate in rates.items():
            self.link_rate[lid] = self.link_rate.get(lid, 0) + rate

    def release(
        self, claims: dict[tuple[int, int], int], rates: dict[int, int]
    ) -> None:
        for key, nbytes in claims.items():
            left = self.slot_bytes[key] - nbytes
            if left < 0:
                raise ValueError(f"releasing more than reserved at {key}")
            if left:
                self.slot_bytes[key] = left
            else:
                del self.slot_bytes[key]
        for lid, rate in rates.items():
            left = self.link_rate[lid] - rate
            if left < 0:
                raise ValueError(f"releasing more rate than reserved on {lid}")
            if left:
                self.link_rate[lid] = left
            else:
                del self.link_rate[lid]

    def check_conservation(self) -> None:
        for (lid, slot), nbytes in self.slot_bytes.items():
            if not 0 <= nbytes <= self.slot_budget[lid]:
                raise AssertionError(
                    f"slot ({lid}, {slot}) holds {nbytes} of "
                    f"{self.slot_budget[lid]}"
                )
        for lid, rate in self.link_rate.items():
            cap = self.rate_cap * self.topology.links[lid].rate_bps
            if not 0 <= rate <= cap:
                raise AssertionError(f"link {lid} reserves {rate} of cap {cap}")

    def snapshot(self) -> tuple[dict, dict]:
        return dict(self.slot_bytes), dict(self.link_rate)


# --- path plans -------------------------------------------------------------


@dataclass(frozen=True)
class PathPlan:
    """Outcome of planning one flow.

    `release_quota` lists (ingress slot, bytes per visit) pairs; the ingress
    shaper releases queued packets only at boundaries of those slots, up to
    the quota.  Empty for unshaped plans (rejected flows, or runs with
    admission disabled).
    """

    flow_id: str
    path: tuple[int, ...]
    sids: tuple[SidEntry, ...]
    admitted: bool
    reason: str = ""
    d_min: SimTime = 0
    d_max: SimTime = 0
    jitter: SimTime = 0
    deadline: SimTime | None = None
    release_quota: tuple[tuple[int, int], ...] = ()
    window_shift: int = 0
    shaping_cycles: int = 0
    shaped: bool = False

    @classmethod
    def rejected(cls, flow: FlowSpec, reason: str) -> "PathPlan":
        return cls(
            flow_id=flow.flow_id,
            path=flow.path,
            sids=(),
            admitted=False,
            reason=reason,
            deadline=flow.deadline,
        )


def _release_index(clock, cycle_len: SimTime, t: SimTime) -> int:
    """Index of the first cycle boundary at or after t."""
    k, off = local_cycle_index(clock, cycle_len, t)
    return k if off == 0 else k + 1


def _path_fixed_delay(topology: Topology, links) -> SimTime:
    return sum(
        link.prop_delay + topology.nodes[link.dst].proc_delay for link in links
    )


def plan_unchecked(
    flow: FlowSpec,
    topology: Topology,
    cycle_len: SimTime,
    fixed_stack: tuple[int, ...] | None = None,
    num_queues: int = 15,
) -> PathPlan:
    """Plan without booking or shaping (admission disabled, baselines)."""
    links = topology.path_links(flow.path)
    h = len(links)
    deltas = (
        tags_fixed_stack(fixed_stack, h, num_queues)
        if fixed_stack is not None
        else tags_stop_and_go(h)
    )
    ldpd = _path_fixed_delay(topology, links)
    d_min, d_max, jitter = bounds_csqf(ldpd, h, cycle_len, sum(deltas))
    sids = tuple(
        SidEntry(link.link_id, delta) for link, delta in zip(links, deltas)
    )
    return PathPlan(
        flow_id=flow.flow_id,
        path=flow.path,
        sids=sids,
        admitted=True,
        d_min=d_min,
        d_max=d_max,
        jitter=jitter,
        deadline=flow.deadline,
    )


def _ingress_slot_map(
    flow: FlowSpec, ledger: ResourceLedger, clock
) -> tuple[dict[int, int], int, str]:
    """(slot -> bytes per visit, shaping window cycles, reject reason)."""
    T = ledger.cycle_len
    N = ledger.num_queues
    bp = flow.shaper_burst_bytes
    m = _ceil_div(flow.burst_bytes, bp)
    if flow.period is not None and m == 1:
        # One shaper release per period; each visited slot absorbs the whole
        # per-period clump (a plain CBR flow's clump is one packet).
        per_visit = flow.burst_bytes
        s0 = _release_index(clock, T, flow.phase) % N
        if flow.period % T == 0:
            step = (flow.period // T) % N
            slots = {(s0 + j * step) % N for j in range(N)}
            return {s: per_visit for s in sorted(slots)}, 1, ""
        if (N * T) % flow.period == 0:
            emissions = (N * T) // flow.period
            slot_map: dict[int, int] = {}
            for j in range(emissions):
                k = _release_index(clock, T, flow.phase + j * flow.period)
                slot_map[k % N] = slot_map.get(k % N, 0) + per_visit
            return dict(sorted(slot_map.items())), 1, ""
        return {}, 0, REJECT_PERIOD
    # Burst window: consecutive slots draining shaper_burst bytes each.  The
    # window widens if the sustained rate alone needs more room per pass of
    # the ring than the burst does.
    m = max(m, _ceil_div(flow.rate_bps * N * T, 8 * ZS_PER_S * bp))
    if m > N:
        return {}, 0, REJECT_BURST_WINDOW
    s0 = _release_index(clock, T, flow.phase) % N
    return {(s0 + i) % N: bp for i in range(m)}, m, ""


def _alignment_ok(
    flow: FlowSpec,
    topology: Topology,
    ledger: ResourceLedger,
    links,
    tables,
    horizon: SimTime,
) -> bool:
    """Every transmit window must land inside one downstream cycle.

    Checked once per hop with a representative cycle one hypercycle past the
    flow start; different slots displace the window by whole local cycles,
    which the slip margin absorbs.
    """
    T = ledger.cycle_len
    N = ledger.num_queues
    ingress_clock = topology.nodes[flow.path[0]].clock
    if horizon and abs(ingress_clock.frequency_error) * horizon >= T:
        return False
    k = _release_index(ingress_clock, T, flow.phase) + N + 1
    for link in links[:-1]:
        src = topology.nodes[link.src]
        dst = topology.nodes[link.dst]
        slip = math.ceil(
            Fraction(horizon)
            * (abs(src.clock.frequency_error) + abs(dst.clock.frequency_error))
        )
        start = cycle_boundary(src.clock, T, k) + link.prop_delay + dst.proc_delay
        drain = _ceil_div(
            ledger.slot_budget[link.link_id] * 8 * ZS_PER_S, link.rate_bps
        )
        c_lo, _ = local_cycle_index(dst.clock, T, start - slip)
        c_hi, _ = local_cycle_index(dst.clock, T, start + drain + slip)
        if c_lo != c_hi:
            return False
        if tables is not None:
            want = (tables[link.src].lookup(link.dst, k) - 1) % N
            assert c_lo % N == want, (
                f"probe table and clock geometry disagree on link "
                f"{link.link_id}: arrival slot {c_lo % N} vs {want}"
            )
        k = c_lo + 1
    return True


def _chain_claims(
    links,
    tables,
    slot_map: dict[int, int],
    deltas: tuple[int, ...],
    shift: int,
    num_queues: int,
) -> dict[tuple[int, int], int]:
    """Map the ingress slot loads through every hop of the path."""
    N = num_queues
    claims: dict[tuple[int, int], int] = {}
    for slot, nbytes in slot_map.items():
        cur = (slot + shift + deltas[0]) % N
        key = (links[0].link_id, cur)
        claims[key] = claims.get(key, 0) + nbytes
        for i in range(1, len(links)):
            upstream = links[i - 1]
            arrival = (tables[upstream.src].lookup(upstream.dst, cur) - 1) % N
            cur = (arrival + deltas[i]) % N
            key = (links[i].link_id, cur)
            claims[key] = claims.get(key, 0) + nbytes
    return claims


def admit(
    flow: FlowSpec,
    topology: Topology,
    ledger: ResourceLedger,
    tables=None,
    *,
    horizon: SimTime = 0,
    fixed_stack: tuple[int, ...] | None = None,
) -> PathPlan:
    """Plan and book one flow; rejection leaves the ledger untouched.

    Tag choice: a caller-supplied stack wins; otherwise a deadline is split
    uniformly across hops when the ring can encode the result, falling back
    to next-cycle forwarding.  Placement then searches window shifts (and,
    under a deadline, smaller uniform offsets) in first-fit order.
    """
    if flow.cls != CLASS_TS:
        raise ValueError("only time-sensitive flows are admitted")
    links = topology.path_links(flow.path)
    h = len(links)
    if h > 1 and tables is None:
        raise ValueError("multi-hop admission needs cycle-mapping tables")
    T = ledger.cycle_len
    N = ledger.num_queues

    for link in links:
        if flow.rate_bps > ledger.rate_room(link.link_id):
            return PathPlan.rejected(flow, REJECT_RATE_CAP)

    if flow.shaper_burst_bytes > min(
        ledger.slot_budget[link.link_id] for link in links
    ):
        return PathPlan.rejected(flow, REJECT_SHAPER_BURST)

    ingress_clock = topology.nodes[flow.path[0]].clock
    slot_map, shaping_cycles, reason = _ingress_slot_map(flow, ledger, ingress_clock)
    if reason:
        return PathPlan.rejected(flow, reason)

    if flow.slot_locked:
        fold_cycles = shaping_cycles
        spread_cycles = shaping_cycles - 1
    else:
        fold_cycles = N
        spread_cycles = N
    jitter = (2 + spread_cycles) * T
    if flow.jitter_bound is not None and jitter > flow.jitter_bound:
        return PathPlan.rejected(flow, REJECT_JITTER)

    if not _alignment_ok(flow, topology, ledger, links, tables, horizon):
        return PathPlan.rejected(flow, REJECT_ALIGNMENT)

    ldpd = _path_fixed_delay(topology, links)
    if fixed_stack is not None:
        candidates = [tags_fixed_stack(fixed_stack, h, N)]
    elif flow.deadline is not None:
        try:
            top = tags_deadline_division(flow.deadline, ldpd, h, T, N)[0]
        except InfeasibleOffset:
            top = 1
        except InfeasibleDeadline:
            return PathPlan.rejected(flow, REJECT_DEADLINE)
        candidates = [(delta,) * h for delta in range(top, 0, -1)]
    else:
        candidates = [tags_stop_and_go(h)]

    rates = {link.link_id: flow.rate_bps for link in links}
    deadline_blocked = False
    for deltas in candidates:
        for shift in range(N):
            claims = _chain_claims(links, tables, slot_map, deltas, shift, N)
            if not ledger.fits(claims):
                continue
            d_max = ldpd + (sum(deltas) + 1 + shift + fold_cycles) * T
            if flow.deadline is not None and d_max > flow.deadline:
                deadline_blocked = True
                break  # larger shifts only add delay; try smaller offsets
            d_min = ldpd + (sum(deltas) - 1) * T
            ledger.reserve(claims, rates)
            sids = tuple(
                SidEntry(link.link_id, delta)
                for link, delta in zip(links, deltas)
            )
            quota = tuple(
                sorted(((s + shift) % N, b) for s, b in slot_map.items())
            )
            return PathPlan(
                flow_id=flow.flow_id,
                path=flow.path,
                sids=sids,
                admitted=True,
                d_min=d_min,
                d_max=d_max,
                jitter=jitter,
                deadline=flow.deadline,
                release_quota=quota,
                window_shift=shift,
                shaping_cycles=shaping_cycles,
                shaped=True,
            )
    reason = REJECT_DEADLINE if deadline_blocked else REJECT_SLOT_OVERFLOW
    return PathPlan.rejected(flow, reason)
