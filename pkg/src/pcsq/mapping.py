"""Inter-node cycle mapping learned from a two-probe handshake per link.

Neighbors run free rotations of the same N queues but their cycle counters
are unrelated, so a sender needs to know which remote cycle its local cycle X
lands in.  Each node sends one request probe per adjacent directed edge,
stamped with the cycle in which the probe was transmitted; the receiver
replies in the first cycle after reception, stamping its own transmit cycle.
The originator then holds one relation (neighbor, X) -> Y per neighbor, and
because both counters advance one step per cycle the relation is
shift-equivariant: X+k maps to Y+k (mod N).  A network of n mapping-capable
nodes therefore holds at most n*(n-1) entries.

Stamps travel as 4-bit values 1..15 for N = 15 (0 is reserved), generalized
to ceil(log2(N+1)) bits: stamp = (cycle index mod N) + 1.

The handshake arithmetic below is closed-form over the timebase (links are
lossless and probes are sent on an idle control plane before data starts).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, log2

from .timebase import (
    NodeClock,
    SimTime,
    cycle_boundary,
    local_cycle_index,
    ser_time,
)
from .topology import Topology

PROBE_SIZE_BYTES = 64


class MappingError(ValueError):
    pass


def stamp_bits(num_queues: int) -> int:
    """Bits needed to carry a stamp: 4 for the 15-queue default."""
    return ceil(log2(num_queues + 1))


def encode_stamp(cycle_index: int, num_queues: int) -> int:
    return (cycle_index % num_queues) + 1


def decode_stamp(stamp: int, num_queues: int) -> int:
    if not 1 <= stamp <= num_queues:
        raise MappingError(f"stamp {stamp} outside 1..{num_queues}")
    return stamp - 1


@dataclass(frozen=True, slots=True)
class ProbePacket:
    origin: int
    neighbor: int
    link_id: int
    direction: str  # "request" | "reply"
    stamp: int  # 1..N encoding of the sender's transmit cycle


@dataclass(slots=True)
class MappingEntry:
    local_cycle: int  # X of the learned exemplar
    remote_cycle: int  # Y of the learned exemplar
    offset: int  # (Y - X) mod N
    delay_cycles: int  # one-way whole-cycle estimate from the round trip


class CycleMappingTable:
    """Per-node table: neighbor id -> learned relation."""

    def __init__(self, node_id: int, num_queues: int):
        self.node_id = node_id
        self.num_queues = num_queues
        self.entries: dict[int, MappingEntry] = {}

    def learn(
        self, neighbor: int, local_cycle: int, remote_cycle: int, delay_cycles: int
    ) -> None:
        n = self.num_queues
        offset = (remote_cycle - local_cycle) % n
        prev = self.entries.get(neighbor)
        if prev is not None and (prev.offset, prev.delay_cycles) != (
            offset,
            delay_cycles,
        ):
            raise MappingError(
                f"node {self.node_id}: re-probe of neighbor {neighbor} changed "
                f"relation {prev.offset}->{offset}"
            )
        self.entries[neighbor] = MappingEntry(
            local_cycle % n, remote_cycle % n, offset, delay_cycles
        )

    def lookup(self, neighbor: int, local_cycle: int) -> int:
        """Remote cycle for any local cycle, by shift-equivariance."""
        e = self.entries[neighbor]
        return (local_cycle + e.offset) % self.num_queues


def initiate_probes(topology: Topology) -> list[ProbePacket]:
    """One request per adjacent directed edge: 2|E| probes for |E| pairs."""
    probes = []
    for link in topology.links.values():
        probes.append(
            ProbePacket(
                origin=link.src,
                neighbor=link.dst,
                link_id=link.link_id,
                direction="request",
                stamp=0,  # stamped at transmission
            )
        )
    return probes


def run_probe_handshake(
    topology: Topology,
    cycle_len: SimTime,
    num_queues: int,
    start: SimTime = 0,
) -> dict[int, CycleMappingTable]:
    """Execute the handshake for every directed link; returns node tables.

    Request: transmitted at the origin's first boundary at or after
    ``start``.  Reply: transmitted at the neighbor's first boundary after the
    request is fully received.  Both stamps carry the transmit cycle.  The
    one-way delay estimate halves the whole-cycle round trip observed by the
    origin.
    """
    tables = {nid: CycleMappingTable(nid, num_queues) for nid in topology.nodes}
    for link in topology.links.values():
        src = topology.nodes[link.src]
        dst = topology.nodes[link.dst]
        back = topology.link_between(link.dst, link.src)
        ser_fwd = ser_time(PROBE_SIZE_BYTES, link.rate_bps)
        ser_back = ser_time(PROBE_SIZE_BYTES, back.rate_bps)

        k_req, off = _cycle_at_or_after(src.clock, cycle_len, start)
        t_req = cycle_boundary(src.clock, cycle_len, k_req)
        stamp_x = encode_stamp(k_req, num_queues)

        t_recv = t_req + ser_fwd + link.prop_delay + dst.proc_delay
        c_recv, _ = local_cycle_index(dst.clock, cycle_len, t_recv)
        k_rep = c_recv + 1  # first cycle after reception
        t_rep = cycle_boundary(dst.clock, cycle_len, k_rep)
        stamp_y = encode_stamp(k_rep, num_queues)

        t_back = t_rep + ser_back + back.prop_delay + src.proc_delay
        r_cycle, _ = local_cycle_index(src.clock, cycle_len, t_back)
        delay_cycles = (r_cycle - k_req) // 2

        tables[link.src].learn(
            link.dst,
            decode_stamp(stamp_x, num_queues),
            decode_stamp(stamp_y, num_queues),
            delay_cycles,
        )
    return tables


def _cycle_at_or_after(
    clock: NodeClock, cycle_len: SimTime, t: SimTime
) -> tuple[int, SimTime]:
    k, off = local_cycle_index(clock, cycle_len, t)
    if off > 0:
        k += 1
        off = 0
    return k, off


def path_cycle_relation(
    tables: dict[int, CycleMappingTable],
    node_path: list[int],
    cycle_len: SimTime,
    local_cycle: int = 0,
) -> tuple[int, SimTime]:
    """Compose per-link relations along a path.

    Returns the remote cycle index at the last node for ``local_cycle`` at the
    first, plus the path-delay estimate (whole cycles, as SimTime): for the
    relation X -> Y -> Z this is the cycle-mapped Z and the (Z - X)
    estimate.  Shift-equivariance carries over: composing on X+k yields the
    composed value +k.
    """
    if len(node_path) < 2:
        raise MappingError("path needs at least two nodes")
    cycle = local_cycle
    delay_cycles = 0
    for a, b in zip(node_path, node_path[1:]):
        table = tables[a]
        if b not in table.entries:
            raise MappingError(f"no mapping entry {a}->{b}")
        cycle = table.lookup(b, cycle)
        delay_cycles += table.entries[b].delay_cycles
    return cycle, delay_cycles * cycle_len
