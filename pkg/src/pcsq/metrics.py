"""Post-run measurement and verification.

Turns a finished run into per-flow and per-port statistics, checks observed
delays against the planned bounds, checks output smoothness on recorded
links, and writes the on-disk reports (packet CSV, text summary, plan JSON).

Conventions, applied uniformly:

* Warm-up: packets created before ``warmup_hypercycles * N * cycle_len`` are
  excluded from every per-packet statistic (delay, jitter, deadline misses,
  shift counts, bound checks).  Runs without a cycle length have no warm-up.
* Jitter is max minus min end-to-end delay over the measured packets: None
  ("undefined") when nothing was measured, 0 for a single packet.
* Flows without a per-packet log (unrecorded background streams) fall back
  to whole-run delay aggregates; statistics that need per-packet data are
  None for them.
* Bound checks allow the observed minimum to undershoot the planned floor
  by one packet serialization time per hop (a packet may start anywhere
  inside its cycle), and the same slack widens the jitter allowance.  A
  shifted packet may exceed the ceiling by one cycle per shift; it is
  flagged as shifted, not as a violation.
* All times are integer zeptoseconds, in memory and on disk.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Iterable

from .controlplane import PathPlan
from .engine import NO_DEADLINE, RunResult, Scenario
from .scheduler import ts_byte_budget
from .timebase import SimTime, ZS_PER_S, ser_time
from .topology import Topology
from .traffic import check_span_smoothness


def warmup_end(sc: Scenario) -> SimTime:
    return sc.warmup_hypercycles * sc.num_queues * sc.cycle_len


# --- aggregates ---------------------------------------------------------------


@dataclass
class FlowStats:
    flow_id: str
    parent_id: str
    cls: str
    generated: int
    delivered: int
    dropped: dict[str, int]
    resident: int
    measured: int
    delay_min: SimTime | None
    delay_max: SimTime | None
    delay_sum: SimTime
    jitter: SimTime | None
    deadline_misses: int | None
    shifted_packets: int | None
    max_shift: int | None
    from_log: bool

    @property
    def mean_delay(self) -> Fraction | None:
        if self.measured == 0:
            return None
        return Fraction(self.delay_sum, self.measured)


@dataclass
class PortStats:
    link_id: int
    src: int
    dst: int
    ts_tx_bytes: int
    ts_tx_pkts: int
    be_tx_bytes: int
    be_tx_pkts: int
    shifts: int
    drops: dict[str, int]
    max_queue_bytes: int
    max_queue_pkts: int
    utilization: Fraction


@dataclass
class BoundCheck:
    flow_id: str
    checked: bool
    measured: int
    obs_min: SimTime | None
    obs_max: SimTime | None
    obs_jitter: SimTime | None  # over unshifted packets
    shifted_packets: int
    drops: int
    plan_d_min: SimTime
    plan_d_max: SimTime
    plan_jitter: SimTime
    tolerance: SimTime
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class SmoothCheck:
    link_id: int
    window: SimTime
    limit_bits: int
    worst_bits: int
    ok: bool
    window_start: SimTime


@dataclass
class MetricsSnapshot:
    warmup_end: SimTime
    flows: dict[str, FlowStats]
    ports: list[PortStats]
    bounds: dict[str, BoundCheck]
    smoothness: dict[int, SmoothCheck]

    @property
    def violations(self) -> list[str]:
        out = []
        for b in self.bounds.values():
            for v in b.violations:
                out.append(f"flow {b.flow_id}: {v}")
        for s in self.smoothness.values():
            if not s.ok:
                out.append(
                    f"link {s.link_id}: smoothness {s.worst_bits} bits "
                    f"> {s.limit_bits} in one window"
                )
        return out

    @property
    def clean(self) -> bool:
        return not self.violations


def _flow_stats(res: RunResult, we: SimTime) -> dict[str, FlowStats]:
    raw = res.raw
    out: dict[str, FlowStats] = {}
    for f in res.prepared.flows:
        i = f.idx
        drops = sum(raw.dropped[i].values())
        assert raw.generated[i] == raw.delivered[i] + drops + raw.resident[i]
        log = raw.deliveries[i]
        if log is not None:
            created, delivered_at, shifted, _seqs = log
            dmin = dmax = None
            dsum = 0
            measured = 0
            misses = 0
            n_shift = 0
            max_shift = 0
            has_deadline = f.deadline < NO_DEADLINE
            for c, d, sh in zip(created, delivered_at, shifted):
                if c < we:
                    continue
                delay = d - c
                measured += 1
                dsum += delay
                if dmin is None or delay < dmin:
                    dmin = delay
                if dmax is None or delay > dmax:
                    dmax = delay
                if has_deadline and delay > f.deadline:
                    misses += 1
                if sh:
                    n_shift += 1
                    if sh > max_shift:
                        max_shift = sh
            jitter = None if measured == 0 else dmax - dmin
            out[f.flow_id] = FlowStats(
                f.flow_id, f.parent_id, f.cls,
                raw.generated[i], raw.delivered[i], dict(raw.dropped[i]),
                raw.resident[i], measured, dmin, dmax, dsum, jitter,
                misses, n_shift, max_shift, True,
            )
        else:
            n = raw.delivered[i]
            dmin = raw.delay_min[i] if n else None
            dmax = raw.delay_max[i] if n else None
            jitter = None if n == 0 else dmax - dmin
            out[f.flow_id] = FlowStats(
                f.flow_id, f.parent_id, f.cls,
                raw.generated[i], n, dict(raw.dropped[i]),
                raw.resident[i], n, dmin, dmax, raw.delay_sum[i], jitter,
                None, None, None, False,
            )
    return out


def _port_stats(res: RunResult) -> list[PortStats]:
    sc = res.scenario
    rotating = sc.scheduler in ("pcsq", "cq")
    out = []
    for pc, st in zip(res.prepared.ports, res.raw.port_stats):
        if rotating:
            # The enqueue-side byte budget is the hard ceiling on what any
            # cycle queue may ever hold; holding this here catches drift
            # between scheduler accounting and core bookkeeping.
            budget = ts_byte_budget(pc.rate_bps, sc.cycle_len, sc.be_gap)
            assert st["max_queue_bytes"] <= budget, (
                f"link {pc.link_id}: queue held {st['max_queue_bytes']} "
                f"bytes, budget {budget}"
            )
        tx_bytes = st["ts_tx_bytes"] + st["be_tx_bytes"]
        out.append(
            PortStats(
                link_id=pc.link_id,
                src=res.prepared.nodes[pc.src_node].node_id,
                dst=res.prepared.nodes[pc.dst_node].node_id,
                ts_tx_bytes=st["ts_tx_bytes"],
                ts_tx_pkts=st["ts_tx_pkts"],
                be_tx_bytes=st["be_tx_bytes"],
                be_tx_pkts=st["be_tx_pkts"],
                shifts=st["shifts"],
                drops=dict(st["drops"]),
                max_queue_bytes=st["max_queue_bytes"],
                max_queue_pkts=st["max_queue_pkts"],
                utilization=Fraction(
                    8 * tx_bytes * ZS_PER_S, pc.rate_bps * res.prepared.horizon
                ),
            )
        )
    return out


# --- bound conformance --------------------------------------------------------


def bound_tolerance(plan: PathPlan, packet_size: int, topo: Topology) -> SimTime:
    """One max-packet serialization time per hop of the planned path."""
    return sum(
        ser_time(packet_size, topo.links[e.out_port].rate_bps)
        for e in plan.sids
    )


def check_flow_bounds(
    plan: PathPlan,
    tolerance: SimTime,
    cycle_len: SimTime,
    wu_end: SimTime,
    packets: Iterable[tuple[SimTime, SimTime, int]],
    deadline: SimTime | None = None,
    drops: int = 0,
) -> BoundCheck:
    """Check (created, delivered, shift count) triples against one plan."""
    measured = 0
    obs_min = obs_max = None
    un_min = un_max = None  # over unshifted packets only
    shifted_pkts = 0
    viol: list[str] = []
    for c, d, sh in packets:
        if c < wu_end:
            continue
        delay = d - c
        measured += 1
        if obs_min is None or delay < obs_min:
            obs_min = delay
        if obs_max is None or delay > obs_max:
            obs_max = delay
        if delay < plan.d_min - tolerance:
            viol.append(
                f"min_delay: {delay} < {plan.d_min} - {tolerance}"
            )
        if sh:
            shifted_pkts += 1
            # One extra cycle of lateness is sanctioned per shift the
            # packet absorbed; anything beyond that is a real violation.
            if delay > plan.d_max + sh * cycle_len:
                viol.append(
                    f"max_delay: {delay} > {plan.d_max} + {sh} shifts"
                )
        else:
            if delay > plan.d_max:
                viol.append(f"max_delay: {delay} > {plan.d_max}")
            if un_min is None or delay < un_min:
                un_min = delay
            if un_max is None or delay > un_max:
                un_max = delay
        if deadline is not None and delay > deadline:
            viol.append(f"deadline: {delay} > {deadline}")
    obs_jitter = None
    if un_min is not None:
        obs_jitter = un_max - un_min
        if obs_jitter > plan.jitter + tolerance:
            viol.append(
                f"jitter: {obs_jitter} > {plan.jitter} + {tolerance}"
            )
    if drops:
        viol.append(f"dropped: {drops} admitted packets lost")
    return BoundCheck(
        flow_id=plan.flow_id,
        checked=measured > 0,
        measured=measured,
        obs_min=obs_min,
        obs_max=obs_max,
        obs_jitter=obs_jitter,
        shifted_packets=shifted_pkts,
        drops=drops,
        plan_d_min=plan.d_min,
        plan_d_max=plan.d_max,
        plan_jitter=plan.jitter,
        tolerance=tolerance,
        violations=tuple(viol),
    )


def verify_bounds(
    res: RunResult, wu_end: SimTime | None = None
) -> dict[str, BoundCheck]:
    """Bound conformance for every admitted flow; others are exempt."""
    sc = res.scenario
    if wu_end is None:
        wu_end = warmup_end(sc)
    spec_of = {f.flow_id: f for f in sc.flows}
    rt_of = {f.flow_id: f for f in res.prepared.flows}
    out: dict[str, BoundCheck] = {}
    for fid, plan in res.plans.items():
        if not plan.admitted:
            continue
        f = rt_of[fid]
        log = res.raw.deliveries[f.idx]
        assert log is not None, f"admitted flow {fid} was not recorded"
        out[fid] = check_flow_bounds(
            plan,
            bound_tolerance(plan, spec_of[fid].packet_size, sc.topology),
            sc.cycle_len,
            wu_end,
            zip(log[0], log[1], log[2]),
            deadline=spec_of[fid].deadline,
            drops=sum(res.raw.dropped[f.idx].values()),
        )
    return out


# --- smoothness ---------------------------------------------------------------


def verify_smoothness(res: RunResult) -> dict[int, SmoothCheck]:
    """Sliding-window bit check on each recorded link's TS output.

    The window is one cycle; the limit is the cycle's time-sensitive byte
    allocation (with no BE gap that is the full line-rate window capacity).
    Only packets serialized entirely inside a window count, which makes the
    per-cycle drain structurally conformant while still exposing unsmoothed
    bursts that a priority scheduler lets through back to back.
    """
    sc = res.scenario
    T = sc.cycle_len
    if T <= 0:
        return {}
    out: dict[int, SmoothCheck] = {}
    for pi, times in sorted(res.raw.tx_times.items()):
        pc = res.prepared.ports[pi]
        trace = list(zip(times, res.raw.tx_sizes[pi]))
        assert all(a[0] <= b[0] for a, b in zip(trace, trace[1:]))
        limit_bits = 8 * ts_byte_budget(pc.rate_bps, T, sc.be_gap)
        rep = check_span_smoothness(trace, T, limit_bits, pc.rate_bps)
        out[pc.link_id] = SmoothCheck(
            link_id=pc.link_id,
            window=T,
            limit_bits=limit_bits,
            worst_bits=rep.worst_bits,
            ok=rep.ok,
            window_start=rep.window_start,
        )
    return out


def finalize(res: RunResult) -> MetricsSnapshot:
    """All measurements and checks for one run, in one pass."""
    we = warmup_end(res.scenario)
    return MetricsSnapshot(
        warmup_end=we,
        flows=_flow_stats(res, we),
        ports=_port_stats(res),
        bounds=verify_bounds(res, we),
        smoothness=verify_smoothness(res),
    )


# --- on-disk formats ----------------------------------------------------------

# packets.csv: one row per delivered or dropped packet of every recorded
# flow, delivered rows first (in delivery order), then dropped rows (in drop
# order), flows in preparation order.  Columns:
#   flow_id      flow (or expanded stream) label
#   packet_id    emission sequence number within the flow, from 0
#   src, dst     ingress and egress node ids of the flow's path
#   created_at   emission instant, integer zeptoseconds
#   delivered_at arrival instant at the egress node; empty for drops
#   delay        delivered_at - created_at; empty for drops
#   shifted      how many one-cycle shifts the packet absorbed; empty for drops
#   drop_reason  reason label; empty for delivered rows
PACKET_FIELDS = (
    "flow_id", "packet_id", "src", "dst",
    "created_at", "delivered_at", "delay", "shifted", "drop_reason",
)


def write_packets_csv(fp: IO[str], res: RunResult) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(PACKET_FIELDS)
    nodes = res.prepared.nodes
    ports = res.prepared.ports
    for f in res.prepared.flows:
        log = res.raw.deliveries[f.idx]
        if log is None:
            continue
        src = nodes[f.ingress_node].node_id
        dst = nodes[ports[f.hops[-1][0]].dst_node].node_id
        created, delivered_at, shifted, seqs = log
        for c, d, sh, sq in zip(created, delivered_at, shifted, seqs):
            w.writerow((f.flow_id, sq, src, dst, c, d, d - c, sh, ""))
        dlog = res.raw.drop_log[f.idx]
        for sq, c, reason in zip(dlog[0], dlog[1], dlog[2]):
            w.writerow((f.flow_id, sq, src, dst, c, "", "", "", reason))


def read_packets_csv(
    fp: IO[str],
) -> dict[str, list[tuple[SimTime, SimTime, int, str]]]:
    """Rows back as flow_id -> [(created, delivered, shifted, drop_reason)].

    Delivered timestamps and shift counts are -1 on drop rows.
    """
    r = csv.reader(fp)
    header = next(r)
    if tuple(header) != PACKET_FIELDS:
        raise ValueError(f"unexpected CSV header: {header}")
    out: dict[str, list[tuple[SimTime, SimTime, int, str]]] = {}
    for row in r:
        fid, _sq, _src, _dst, c, d, _delay, sh, reason = row
        out.setdefault(fid, []).append(
            (int(c), int(d) if d else -1, int(sh) if sh else -1, reason)
        )
    return out


def _us(v: SimTime) -> str:
    return f"{v / 1e15:.3f}us"


def _flow_line(st: FlowStats) -> str:
    drops = sum(st.dropped.values())
    parts = [
        f"generated={st.generated}",
        f"delivered={st.delivered}",
        f"dropped={drops}",
        f"resident={st.resident}",
        f"measured={st.measured}",
    ]
    if st.measured:
        mean = st.delay_sum // st.measured
        parts.append(f"delay_min={st.delay_min} ({_us(st.delay_min)})")
        parts.append(f"delay_mean={mean} ({_us(mean)})")
        parts.append(f"delay_max={st.delay_max} ({_us(st.delay_max)})")
        parts.append(f"jitter={st.jitter} ({_us(st.jitter)})")
    else:
        parts.append("jitter=undefined")
    if st.deadline_misses is not None:
        parts.append(f"deadline_misses={st.deadline_misses}")
    if st.shifted_packets is not None:
        parts.append(f"shifted={st.shifted_packets}")
    if drops:
        by = ",".join(f"{k}:{v}" for k, v in sorted(st.dropped.items()))
        parts.append(f"drop_reasons={by}")
    return " ".join(parts)


def write_summary(fp: IO[str], snap: MetricsSnapshot, res: RunResult) -> None:
    """Aggregate report; every value also appears in machine-usable form.

    Times are integer zeptoseconds with a microsecond rendering in
    parentheses; utilization is a fraction of link capacity over the whole
    horizon.
    """
    sc = res.scenario
    w = fp.write
    w("run\n")
    if sc.name:
        w(f"  name={sc.name}\n")
    w(f"  scheduler={sc.scheduler} admission={sc.admission} seed={sc.seed}\n")
    w(
        f"  cycle_len={sc.cycle_len} num_queues={sc.num_queues}"
        f" horizon={sc.horizon}\n"
    )
    w(
        f"  events={res.raw.event_count}"
        f" boundaries={res.raw.boundary_count}"
        f" warmup_end={snap.warmup_end}\n"
    )
    w("flows\n")
    for st in snap.flows.values():
        w(f"  {st.flow_id} [{st.cls}] {_flow_line(st)}\n")
    parents: dict[str, list[FlowStats]] = {}
    for st in snap.flows.values():
        if st.parent_id != st.flow_id:
            parents.setdefault(st.parent_id, []).append(st)
    if parents:
        w("flow groups\n")
        for pid, group in parents.items():
            tot_gen = sum(s.generated for s in group)
            tot_del = sum(s.delivered for s in group)
            tot_drop = sum(sum(s.dropped.values()) for s in group)
            mins = [s.delay_min for s in group if s.delay_min is not None]
            maxs = [s.delay_max for s in group if s.delay_max is not None]
            line = (
                f"  {pid} streams={len(group)} generated={tot_gen}"
                f" delivered={tot_del} dropped={tot_drop}"
            )
            if mins:
                line += f" delay_min={min(mins)} delay_max={max(maxs)}"
            w(line + "\n")
    w("ports\n")
    for ps in snap.ports:
        drops = sum(ps.drops.values())
        w(
            f"  link={ps.link_id} {ps.src}->{ps.dst}"
            f" ts_tx={ps.ts_tx_bytes}B/{ps.ts_tx_pkts}p"
            f" be_tx={ps.be_tx_bytes}B/{ps.be_tx_pkts}p"
            f" shifts={ps.shifts} drops={drops}"
            f" max_queue={ps.max_queue_bytes}B/{ps.max_queue_pkts}p"
            f" util={float(ps.utilization):.6f}\n"
        )
    if snap.bounds:
        w("bounds\n")
        for b in snap.bounds.values():
            if not b.checked:
                w(f"  {b.flow_id} no packets measured\n")
                continue
            status = "ok" if b.ok else "VIOLATED"
            line = (
                f"  {b.flow_id} {status} measured={b.measured}"
                f" obs=[{b.obs_min},{b.obs_max}]"
                f" plan=[{b.plan_d_min},{b.plan_d_max}]"
                f" tolerance={b.tolerance}"
            )
            if b.obs_jitter is not None:
                line += f" jitter={b.obs_jitter}<=plan {b.plan_jitter}"
            if b.shifted_packets:
                line += f" shifted={b.shifted_packets}"
            w(line + "\n")
            for v in b.violations:
                w(f"    violation {v}\n")
    if snap.smoothness:
        w("smoothness\n")
        for s in snap.smoothness.values():
            status = "ok" if s.ok else "FAIL"
            w(
                f"  link={s.link_id} {status} worst_bits={s.worst_bits}"
                f" limit_bits={s.limit_bits} window={s.window}"
                f" at={s.window_start}\n"
            )
    w("verdict\n")
    if snap.clean:
        w("  clean\n")
    else:
        for v in snap.violations:
            w(f"  {v}\n")


def plans_as_dict(res: RunResult) -> list[dict[str, object]]:
    out = []
    for plan in res.plans.values():
        out.append(
            {
                "flow_id": plan.flow_id,
                "path": list(plan.path),
                "admitted": plan.admitted,
                "reason": plan.reason,
                "sids": [
                    {"out_port": e.out_port, "cycle_offset": e.cycle_offset}
                    for e in plan.sids
                ],
                "d_min": plan.d_min,
                "d_max": plan.d_max,
                "jitter": plan.jitter,
                "deadline": plan.deadline,
                "shaped": plan.shaped,
                "release_quota": [list(q) for q in plan.release_quota],
                "window_shift": plan.window_shift,
                "shaping_cycles": plan.shaping_cycles,
            }
        )
    return out


def write_plans_json(fp: IO[str], res: RunResult) -> None:
    json.dump(plans_as_dict(res), fp, indent=2)
    fp.write("\n")
