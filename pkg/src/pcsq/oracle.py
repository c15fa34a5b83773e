"""Independent small-instance executor used to certify the event cores.

This is a deliberately different implementation of the same semantics: all
emissions are materialized up front and the run advances by rescanning
everything for the next instant, then processing that instant phase by
phase (boundaries, releases, arrivals, port service, emissions).  There is
no event heap, no wake bookkeeping and no shared port code; capacity rules,
the one-shift rule, strict priority, shaper quotas and deadline ranking are
restated here in the plainest possible form.

Instances are capped tight (3 nodes, 100 packets): the rescan is quadratic
and the point is cross-checking the cores, not speed.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .engine import PreparedSim
from .packet import (
    CLASS_TS,
    DROP_BE_OVERFLOW,
    DROP_CLASS_CAP,
    DROP_TARGET_AND_NEXT_FULL,
)
from .timebase import ZS_PER_S, cycle_boundary, local_cycle_index

MAX_NODES = 3
MAX_PACKETS = 100

_BE_PRIOS = 7
_SP_CLASSES = 8
_SP_TS = 7
_SP_CLASS_CAP = 64 * 2**20
_BE_QUEUE_CAP = 2**20


class InstanceTooLarge(ValueError):
    """The instance exceeds what the oracle is allowed to hand-execute."""


@dataclass
class OracleRun:
    generated: list[int]
    delivered: list[int]
    dropped: list[dict[str, int]]
    resident: list[int]
    deliveries: list[tuple[list[int], list[int], bytearray, list[int]]]
    drop_log: list[tuple[list[int], list[int], list[str]]]


class _Pkt:
    __slots__ = (
        "flow",
        "seq",
        "size",
        "cls",
        "prio",
        "hop",
        "created",
        "deadline",
        "shifted",
    )

    def __init__(self, flow, seq, size, cls, prio, created, deadline):
        self.flow = flow
        self.seq = seq
        self.size = size
        self.cls = cls
        self.prio = prio
        self.hop = 0
        self.created = created
        self.deadline = deadline
        self.shifted = 0


class _RotPort:
    def __init__(self, rate, cycle_len, num_queues, cap_pkts, be_gap, force_next):
        self.rate = rate
        self.n = num_queues
        self.cap_pkts = cap_pkts
        cap_bytes = (rate * cycle_len) // (8 * ZS_PER_S)
        self.budget = int(cap_bytes * (1 - be_gap))
        self.force_next = force_next  # calendar baseline ignores the tag
        self.qs = [[] for _ in range(num_queues)]
        self.qbytes = [0] * num_queues
        self.be = [[] for _ in range(_BE_PRIOS)]
        self.be_bytes = [0] * _BE_PRIOS
        self.curr = 0
        self.wire_free = 0

    def room(self, qid, size):
        return (
            qid != self.curr % self.n
            and len(self.qs[qid]) < self.cap_pkts
            and self.qbytes[qid] + size <= self.budget
        )


class _SpPortO:
    def __init__(self, rate, edf):
        self.rate = rate
        self.edf = edf
        self.classes = [[] for _ in range(_SP_CLASSES)]
        self.cbytes = [0] * _SP_CLASSES
        self.ranked = []  # (rank, tie, pkt), popped by min
        self.tie = 0
        self.wire_free = 0


def oracle_schedule(prep: PreparedSim) -> OracleRun:
    if len(prep.nodes) > MAX_NODES:
        raise InstanceTooLarge(f"{len(prep.nodes)} nodes > {MAX_NODES}")
    rotating = prep.scheduler in ("pcsq", "cq")
    edf = prep.scheduler == "sp_edf"
    T = prep.cycle_len
    N = prep.num_queues
    horizon = prep.horizon
    flows = prep.flows
    nf = len(flows)

    emissions: list[list[tuple[int, int]]] = []
    total = 0
    for f in flows:
        mine = []
        for t, size in f.emitter:
            if t >= horizon:
                break
            mine.append((t, size))
            total += 1
            if total > MAX_PACKETS:
                raise InstanceTooLarge(f"more than {MAX_PACKETS} packets")
        emissions.append(mine)
    eptr = [0] * nf

    ports: list = []
    for pc in prep.ports:
        if rotating:
            ports.append(
                _RotPort(
                    pc.rate_bps,
                    T,
                    N,
                    prep.queue_cap_packets,
                    prep.be_gap,
                    prep.scheduler == "cq",
                )
            )
        else:
            ports.append(_SpPortO(pc.rate_bps, edf))

    next_k = [0] * len(prep.nodes)
    has_ports = [bool(nc.out_ports) for nc in prep.nodes]
    if rotating:
        for nc in prep.nodes:
            k0, _ = local_cycle_index(nc.clock, T, 0)
            next_k[nc.idx] = k0 + 1
            for pi in nc.out_ports:
                ports[pi].curr = k0

    # Shaper: queue, last released cycle, bytes used there, pending (t, k).
    sh_q: list[list[_Pkt] | None] = [[] if f.shaped else None for f in flows]
    sh_last = [-1] * nf
    sh_used = [0] * nf
    sh_pending: list[tuple[int, int] | None] = [None] * nf

    transit: list[tuple[int, int, int, int, _Pkt]] = []
    send_seq = 0

    generated = [0] * nf
    delivered = [0] * nf
    dropped: list[dict[str, int]] = [{} for _ in range(nf)]
    deliveries: list[tuple[list[int], list[int], bytearray, list[int]]] = [
        ([], [], bytearray(), []) for _ in range(nf)
    ]
    drop_log: list[tuple[list[int], list[int], list[str]]] = [
        ([], [], []) for _ in range(nf)
    ]

    def ser(port, size):
        return (size * 8 * ZS_PER_S) // port.rate

    def boundary_time(ni):
        return cycle_boundary(prep.nodes[ni].clock, T, next_k[ni])

    def drop(pkt, reason):
        fi = pkt.flow
        dropped[fi][reason] = dropped[fi].get(reason, 0) + 1
        drop_log[fi][0].append(pkt.seq)
        drop_log[fi][1].append(pkt.created)
        drop_log[fi][2].append(reason)

    def send(pi, pkt, fin):
        nonlocal send_seq
        pc = prep.ports[pi]
        transit.append((fin + pc.prop_delay + pc.dst_proc, pc.dst_node, pi, send_seq, pkt))
        send_seq += 1

    def enqueue(pkt: _Pkt, t: int) -> int | None:
        """Place at the next hop (or deliver).

        Returns the port index only when the wire may now have new sendable
        work, mirroring when the event cores schedule a wake.
        """
        fi = pkt.flow
        f = flows[fi]
        if pkt.hop == len(f.hops):
            delivered[fi] += 1
            deliveries[fi][0].append(pkt.created)
            deliveries[fi][1].append(t)
            deliveries[fi][2].append(min(pkt.shifted, 255))
            deliveries[fi][3].append(pkt.seq)
            return None
        pi, off = f.hops[pkt.hop]
        pkt.hop += 1
        port = ports[pi]
        if rotating:
            if pkt.cls == CLASS_TS:
                if port.force_next:
                    off = 1
                qid = (port.curr + off) % N
                if not port.room(qid, pkt.size):
                    qid = (port.curr + off + 1) % N
                    if not port.room(qid, pkt.size):
                        drop(pkt, DROP_TARGET_AND_NEXT_FULL)
                        return None
                    pkt.shifted += 1
                port.qs[qid].append(pkt)
                port.qbytes[qid] += pkt.size
                return None  # drained at boundaries, never wire-serviced
            if port.be_bytes[pkt.prio] + pkt.size > _BE_QUEUE_CAP:
                drop(pkt, DROP_BE_OVERFLOW)
                return None
            port.be[pkt.prio].append(pkt)
            port.be_bytes[pkt.prio] += pkt.size
            return pi
        cls = _SP_TS if pkt.cls == CLASS_TS else _SP_TS - 1 - pkt.prio
        if port.cbytes[cls] + pkt.size > _SP_CLASS_CAP:
            drop(pkt, DROP_CLASS_CAP)
            return None
        if cls == _SP_TS and edf:
            port.ranked.append((pkt.created + pkt.deadline, port.tie, pkt))
            port.tie += 1
        else:
            port.classes[cls].append(pkt)
        port.cbytes[cls] += pkt.size
        return pi

    def service_one(pi: int, t: int) -> None:
        """Start at most one transmission on an idle wire."""
        port = ports[pi]
        if port.wire_free > t:
            return
        if rotating:
            for prio in range(_BE_PRIOS):
                if port.be[prio]:
                    head = port.be[prio][0]
                    fin = max(t, port.wire_free) + ser(port, head.size)
                    if fin > boundary_time(prep.ports[pi].src_node):
                        return
                    port.be[prio].pop(0)
                    port.be_bytes[prio] -= head.size
                    port.wire_free = fin
                    send(pi, head, fin)
                    return
            return
        pkt = None
        if port.ranked:
            best = min(port.ranked)
            port.ranked.remove(best)
            pkt = best[2]
            port.cbytes[_SP_TS] -= pkt.size
        else:
            for cls in range(_SP_CLASSES - 1, -1, -1):
                if port.classes[cls]:
                    pkt = port.classes[cls].pop(0)
                    port.cbytes[cls] -= pkt.size
                    break
        if pkt is None:
            return
        fin = t + ser(port, pkt.size)
        port.wire_free = fin
        send(pi, pkt, fin)

    def schedule_release(fi: int, k_from: int) -> None:
        f = flows[fi]
        k = k_from
        for _ in range(N):
            if k % N in f.slots:
                break
            k += 1
        t_rel = cycle_boundary(prep.nodes[f.ingress_node].clock, T, k)
        sh_pending[fi] = (t_rel, k)

    def do_release(fi: int, k: int, t: int) -> None:
        f = flows[fi]
        sh_pending[fi] = None
        quota = f.slots[k % N]
        used = sh_used[fi] if sh_last[fi] == k else 0
        q = sh_q[fi]
        while q and used + q[0].size <= quota:
            pkt = q.pop(0)
            used += pkt.size
            enqueue(pkt, t)
        sh_last[fi] = k
        sh_used[fi] = used
        if q:
            schedule_release(fi, k + 1)

    t_prev = -1
    while True:
        cands = []
        if rotating:
            for ni in range(len(prep.nodes)):
                if has_ports[ni]:
                    cands.append(boundary_time(ni))
        for fi in range(nf):
            if sh_pending[fi] is not None:
                cands.append(sh_pending[fi][0])
        for entry in transit:
            cands.append(entry[0])
        for pi, port in enumerate(ports):
            if port.wire_free > t_prev:
                if rotating:
                    work = any(port.be)
                else:
                    work = bool(port.ranked) or any(port.classes)
                if work:
                    cands.append(port.wire_free)
        for fi in range(nf):
            if eptr[fi] < len(emissions[fi]):
                cands.append(emissions[fi][eptr[fi]][0])
        if not cands:
            break
        t = min(cands)
        if t >= horizon:
            break
        t_prev = t

        if rotating:
            for nc in prep.nodes:
                if has_ports[nc.idx] and boundary_time(nc.idx) == t:
                    k_new = next_k[nc.idx]
                    next_k[nc.idx] = k_new + 1
                    for pi in nc.out_ports:
                        port = ports[pi]
                        assert not port.qs[port.curr % N], (
                            "old serving queue not drained"
                        )
                        port.curr = k_new
                        q = port.qs[port.curr % N]
                        if q:
                            at = t
                            for pkt in q:
                                at += ser(port, pkt.size)
                                send(pi, pkt, at)
                            port.qs[port.curr % N] = []
                            port.qbytes[port.curr % N] = 0
                            port.wire_free = at
                        else:
                            service_one(pi, t)

        rels = sorted(
            (flows[fi].ingress_node, fi)
            for fi in range(nf)
            if sh_pending[fi] is not None and sh_pending[fi][0] == t
        )
        for _, fi in rels:
            do_release(fi, sh_pending[fi][1], t)

        due = sorted(
            (e for e in transit if e[0] == t), key=lambda e: (e[1], e[2], e[3])
        )
        if due:
            transit = [e for e in transit if e[0] != t]
            for _, _, _, _, pkt in due:
                enqueue(pkt, t)
        for pi in range(len(ports)):
            service_one(pi, t)

        emits = sorted(
            (flows[fi].ingress_node, fi)
            for fi in range(nf)
            if eptr[fi] < len(emissions[fi]) and emissions[fi][eptr[fi]][0] == t
        )
        for ni, fi in emits:
            f = flows[fi]
            while (
                eptr[fi] < len(emissions[fi])
                and emissions[fi][eptr[fi]][0] == t
            ):
                _, size = emissions[fi][eptr[fi]]
                eptr[fi] += 1
                generated[fi] += 1
                pkt = _Pkt(
                    fi, generated[fi] - 1, size, f.cls, f.be_priority, t,
                    f.deadline,
                )
                if sh_q[fi] is not None:
                    sh_q[fi].append(pkt)
                    if sh_pending[fi] is None:
                        k, off = local_cycle_index(
                            prep.nodes[ni].clock, T, t
                        )
                        if (
                            off == 0
                            and k % N in f.slots
                            and (
                                sh_last[fi] != k
                                or sh_used[fi] + size <= f.slots[k % N]
                            )
                        ):
                            do_release(fi, k, t)
                        else:
                            schedule_release(fi, k + 1)
                else:
                    pi = enqueue(pkt, t)
                    if pi is not None:
                        service_one(pi, t)

    resident = [generated[i] - delivered[i] - sum(dropped[i].values()) for i in range(nf)]
    return OracleRun(
        generated=generated,
        delivered=delivered,
        dropped=dropped,
        resident=resident,
        deliveries=deliveries,
        drop_log=drop_log,
    )
