"""Pure-Python event core.

One binary heap, five event kinds, exact integer time.  Events are tuples
``(time, kind, node, a, seq, payload)``; the first five fields form the
ordering key, so at one instant a node processes boundaries first, then
shaper releases, then arrivals, then transmit completions, then emissions.
The pop sequence is asserted monotone when validation is on.

A transmit completion is only ever scheduled at a strictly later instant
(serialization time is positive).  When an emission itself frees work for an
idle wire, the port is serviced inline instead, which is equivalent: by the
time any emission at t runs, every same-instant arrival has already been
processed.

The compiled core is the same algorithm over flat state and must match this
one bit for bit; any change here needs a mirrored change there, guarded by
the cross-core equality tests.
"""

from __future__ import annotations

from collections import deque
from heapq import heappop, heappush

from .engine import PreparedSim, RawRun
from .packet import CLASS_TS, DROPPED, Packet
from .scheduler import CqPort, PcsqPort, SpPort
from .timebase import BoundaryIter, cycle_boundary, local_cycle_index

BOUNDARY = 0
RELEASE = 1
ARRIVAL = 2
WAKE = 3
EMISSION = 4


class _ShaperState:
    __slots__ = ("q", "last_k", "used_at_k", "pending")

    def __init__(self) -> None:
        self.q: deque[Packet] = deque()
        self.last_k = -1
        self.used_at_k = 0
        self.pending = False


def simulate(prep: PreparedSim) -> RawRun:
    rotating = prep.scheduler in ("pcsq", "cq")
    edf = prep.scheduler == "sp_edf"
    T = prep.cycle_len
    N = prep.num_queues
    horizon = prep.horizon
    nodes = prep.nodes
    flows = prep.flows
    validate = prep.validate

    ports: list = []
    for pc in prep.ports:
        if rotating:
            kind = PcsqPort if prep.scheduler == "pcsq" else CqPort
            ports.append(
                kind(
                    pc.link_id,
                    pc.rate_bps,
                    T,
                    num_queues=N,
                    queue_cap_packets=prep.queue_cap_packets,
                    be_gap=prep.be_gap,
                )
            )
        else:
            ports.append(SpPort(pc.link_id, pc.rate_bps, edf=edf))

    biters: list[BoundaryIter | None] = [None] * len(nodes)
    next_boundary: list[int] = [0] * len(nodes)
    if rotating:
        for nc in nodes:
            k0, _ = local_cycle_index(nc.clock, T, 0)
            bi = BoundaryIter(nc.clock, T, k0 + 1)
            biters[nc.idx] = bi
            next_boundary[nc.idx] = bi.current()
            for pi in nc.out_ports:
                ports[pi].curr_abs = k0

    nflows = len(flows)
    generated = [0] * nflows
    delivered = [0] * nflows
    dropped: list[dict[str, int]] = [{} for _ in range(nflows)]
    delay_sum = [0] * nflows
    delay_min = [-1] * nflows
    delay_max = [0] * nflows
    deliveries: list[tuple[list[int], list[int], bytearray, list[int]] | None] = [
        ([], [], bytearray(), []) if f.record else None for f in flows
    ]
    drop_log: list[tuple[list[int], list[int], list[str]] | None] = [
        ([], [], []) if f.record else None for f in flows
    ]
    shaper: list[_ShaperState | None] = [
        _ShaperState() if f.shaped else None for f in flows
    ]
    emis_seq = [0] * nflows

    src_node = [pc.src_node for pc in prep.ports]
    dst_node = [pc.dst_node for pc in prep.ports]
    arr_lag = [pc.prop_delay + pc.dst_proc for pc in prep.ports]
    tx_times: dict[int, list[int]] = {}
    tx_sizes: dict[int, list[int]] = {}
    for pc in prep.ports:
        if pc.record_tx:
            tx_times[pc.idx] = []
            tx_sizes[pc.idx] = []

    heap: list = []
    seq = 0
    event_count = 0
    boundary_count = 0
    last_key = (-1, -1, -1, -1, -1)

    def push(t: int, kind: int, node: int, a: int, payload) -> None:
        nonlocal seq
        heappush(heap, (t, kind, node, a, seq, payload))
        seq += 1

    def schedule_tx(pi: int, pkt: Packet, fin: int) -> None:
        push(fin + arr_lag[pi], ARRIVAL, dst_node[pi], pi, pkt)
        rec = tx_times.get(pi)
        if rec is not None and pkt.cls == CLASS_TS:
            rec.append(fin)
            tx_sizes[pi].append(pkt.size)

    def deliver(fi: int, pkt: Packet, t: int) -> None:
        delivered[fi] += 1
        d = t - pkt.created_at
        delay_sum[fi] += d
        if d > delay_max[fi]:
            delay_max[fi] = d
        if delay_min[fi] < 0 or d < delay_min[fi]:
            delay_min[fi] = d
        rec = deliveries[fi]
        if rec is not None:
            rec[0].append(pkt.created_at)
            rec[1].append(t)
            rec[2].append(min(pkt.shifted, 255))
            rec[3].append(pkt.seq)

    def drop(fi: int, pkt: Packet, reason: str) -> None:
        dropped[fi][reason] = dropped[fi].get(reason, 0) + 1
        rec = drop_log[fi]
        if rec is not None:
            rec[0].append(pkt.seq)
            rec[1].append(pkt.created_at)
            rec[2].append(reason)

    def enqueue_hop(pkt: Packet, t: int) -> int:
        """Route to the next hop's port, or deliver.

        Returns the port index when the port may now have sendable work the
        boundary drain will not pick up (BE, or any strict-priority
        enqueue), else -1.
        """
        fi = pkt.flow_id
        f = flows[fi]
        hops = f.hops
        if pkt.hop == len(hops):
            deliver(fi, pkt, t)
            return -1
        pi, off = hops[pkt.hop]
        pkt.hop += 1
        pkt.arrival = t
        port = ports[pi]
        if rotating:
            if pkt.cls == CLASS_TS:
                res = port.enqueue_ts(pkt, off)
                if res.outcome == DROPPED:
                    drop(fi, pkt, res.reason)
                return -1
            res = port.enqueue_be(pkt)
            if res.outcome == DROPPED:
                drop(fi, pkt, res.reason)
                return -1
            return pi
        if edf:
            pkt.slack = pkt.created_at + pkt.deadline - t
        res = port.enqueue(pkt, t)
        if res.outcome == DROPPED:
            drop(fi, pkt, res.reason)
            return -1
        return pi

    def service(pi: int, t: int) -> None:
        """Start one transmission on an idle wire, if anything is eligible."""
        port = ports[pi]
        if port.wire_free_at > t:
            return
        if rotating:
            item = port.be_next(t, next_boundary[src_node[pi]])
            if item is None:
                return
            pkt, _start, fin = item
        else:
            nxt = port.pop_next(t)
            if nxt is None:
                return
            pkt, _wait = nxt
            fin = t + port.ser(pkt.size)
            port.wire_free_at = fin
            port.record_tx(pkt)
        schedule_tx(pi, pkt, fin)
        push(fin, WAKE, src_node[pi], pi, None)

    def schedule_release(f, fst: _ShaperState, k_from: int) -> None:
        k = k_from
        slots = f.slots
        for _ in range(N):
            if k % N in slots:
                break
            k += 1
        push(
            cycle_boundary(nodes[f.ingress_node].clock, T, k),
            RELEASE,
            f.ingress_node,
            f.idx,
            k,
        )
        fst.pending = True

    def do_release(f, fst: _ShaperState, k: int, t: int) -> None:
        fst.pending = False
        quota = f.slots[k % N]
        used = fst.used_at_k if fst.last_k == k else 0
        if validate:
            assert ports[f.hops[0][0]].curr_abs == k, (
                f"flow {f.flow_id}: release at cycle {k} but ingress port "
                f"serves {ports[f.hops[0][0]].curr_abs}"
            )
        q = fst.q
        while q and used + q[0].size <= quota:
            pkt = q.popleft()
            used += pkt.size
            enqueue_hop(pkt, t)
        fst.last_k = k
        fst.used_at_k = used
        if q:
            schedule_release(f, fst, k + 1)

    if rotating:
        for nc in nodes:
            # Nodes without egress ports have nothing to rotate or drain.
            if nc.out_ports:
                push(next_boundary[nc.idx], BOUNDARY, nc.idx, 0, None)
    for f in flows:
        first = next(f.emitter, None)
        if first is not None and first[0] < horizon:
            push(first[0], EMISSION, f.ingress_node, f.idx, first[1])

    while heap and heap[0][0] < horizon:
        ev = heappop(heap)
        t, kind, node, a, _, payload = ev
        if validate:
            key = ev[:5]
            assert key >= last_key, f"event order violated: {key} < {last_key}"
            last_key = key
        event_count += 1

        if kind == BOUNDARY:
            boundary_count += 1
            bi = biters[node]
            k_new = bi.k
            end = bi.advance()
            next_boundary[node] = end
            push(end, BOUNDARY, node, 0, None)
            for pi in nodes[node].out_ports:
                port = ports[pi]
                port.rotate(k_new)
                batch = port.drain_current(t)
                if batch:
                    for pkt, _start, fin in batch:
                        schedule_tx(pi, pkt, fin)
                    push(batch[-1][2], WAKE, node, pi, None)
                else:
                    service(pi, t)

        elif kind == RELEASE:
            do_release(flows[a], shaper[a], payload, t)

        elif kind == ARRIVAL:
            pi = enqueue_hop(payload, t)
            if pi >= 0:
                # Wake after every same-instant arrival has been enqueued.
                push(t, WAKE, node, pi, None)

        elif kind == WAKE:
            service(a, t)

        else:  # EMISSION
            f = flows[a]
            pkt = Packet(
                flow_id=a,
                seq=emis_seq[a],
                size=payload,
                cls=f.cls,
                be_priority=f.be_priority,
                sid_stack=f.hops,
                created_at=t,
                deadline=f.deadline,
            )
            emis_seq[a] += 1
            generated[a] += 1
            fst = shaper[a]
            if fst is not None:
                fst.q.append(pkt)
                if not fst.pending:
                    k, off = local_cycle_index(nodes[node].clock, T, t)
                    if (
                        off == 0
                        and k % N in f.slots
                        and (
                            fst.last_k != k
                            or fst.used_at_k + pkt.size <= f.slots[k % N]
                        )
                    ):
                        # Emission exactly on a reserved boundary: release
                        # now; the release instant for cycle k is this one.
                        do_release(f, fst, k, t)
                    else:
                        schedule_release(f, fst, k + 1)
            else:
                pi = enqueue_hop(pkt, t)
                if pi >= 0:
                    service(pi, t)
            nxt = next(f.emitter, None)
            if nxt is not None and nxt[0] < horizon:
                if validate:
                    assert nxt[0] >= t, f"flow {f.flow_id}: emissions regress"
                push(nxt[0], EMISSION, node, a, nxt[1])

    resident = [0] * nflows
    for fst in shaper:
        if fst is not None:
            for pkt in fst.q:
                resident[pkt.flow_id] += 1
    for ev in heap:
        if ev[1] == ARRIVAL:
            resident[ev[5].flow_id] += 1
    for port in ports:
        if rotating:
            for q in port.queues:
                for pkt in q:
                    resident[pkt.flow_id] += 1
            for bq in port.be_queues:
                for pkt in bq:
                    resident[pkt.flow_id] += 1
        else:
            for cq in port.classes:
                for pkt in cq:
                    resident[pkt.flow_id] += 1
            for _, _, pkt in port._rank_heap:
                resident[pkt.flow_id] += 1

    port_stats: list[dict[str, object]] = []
    for pc, port in zip(prep.ports, ports):
        if rotating:
            port_stats.append(
                {
                    "link_id": pc.link_id,
                    "ts_tx_bytes": port.stat_ts_tx_bytes,
                    "ts_tx_pkts": port.stat_ts_tx_pkts,
                    "be_tx_bytes": port.stat_be_tx_bytes,
                    "be_tx_pkts": port.stat_be_tx_pkts,
                    "shifts": port.stat_shifts,
                    "drops": dict(port.stat_drops),
                    "max_queue_bytes": port.stat_max_queue_bytes,
                    "max_queue_pkts": port.stat_max_queue_pkts,
                    "enqueued_pkts": port.stat_enqueued_pkts,
                }
            )
        else:
            port_stats.append(
                {
                    "link_id": pc.link_id,
                    "ts_tx_bytes": port.stat_ts_tx_bytes,
                    "ts_tx_pkts": port.stat_ts_tx_pkts,
                    "be_tx_bytes": port.stat_be_tx_bytes,
                    "be_tx_pkts": port.stat_be_tx_pkts,
                    "shifts": 0,
                    "drops": dict(port.stat_drops),
                    "max_queue_bytes": max(port.stat_max_class_bytes),
                    "max_queue_pkts": 0,
                    "enqueued_pkts": port.stat_enqueued_pkts,
                }
            )

    return RawRun(
        generated=generated,
        delivered=delivered,
        dropped=dropped,
        resident=resident,
        delay_sum=delay_sum,
        delay_min=delay_min,
        delay_max=delay_max,
        deliveries=deliveries,
        drop_log=drop_log,
        tx_times=tx_times,
        tx_sizes=tx_sizes,
        port_stats=port_stats,
        event_count=event_count,
        boundary_count=boundary_count,
    )
