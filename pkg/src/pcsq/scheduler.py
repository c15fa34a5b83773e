"""Port schedulers: rotating cycle queues plus the two baselines.

``PcsqPort`` is the reference implementation of the two data-plane loops:

* enqueue: a time-sensitive packet arriving while the port serves queue
  ``currQ`` goes to ``(currQ + sid) % N``; if that queue is the serving queue
  or full, it falls back once to ``(currQ + sid + 1) % N`` under the same
  room test, else it is dropped.  "Full" means either the per-queue packet
  cap S or the per-queue byte budget; the byte budget is what guarantees a
  queue always drains within one cycle, so occupancy can never exceed
  ``byte_capacity * (1 - be_gap_fraction)`` bytes.
* dequeue: at every cycle boundary the port advances ``currQ`` (asserting the
  queue it leaves behind is empty) and transmits the new queue back-to-back.
  Best-effort traffic rides only the idle remainder of a cycle and only when
  the head packet fits before the next boundary, which keeps the wire free at
  every boundary without preemption.

Best-effort starvation note: the gap reservation is honored in whole packets.
If ``be_gap_fraction * byte_capacity`` is smaller than the head BE packet the
gap window of a fully-budgeted cycle cannot be used, so the long-run BE floor
of ``gap * capacity`` per cycle holds when the gap window fits an integral
number of backlogged BE packets.

``SpPort`` is a strict-priority baseline (eight FIFO classes, TS in the top
class, work-conserving, tail-drop at a per-class byte cap), with an optional
least-slack ordering of the TS class.  ``CqPort`` is the rotating baseline
without cycle programmability: every TS packet goes to ``(currQ + 1) % N``
and rotation follows the node's uncorrected local clock.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction
from heapq import heappop, heappush

from .packet import (
    DROP_BE_OVERFLOW,
    DROP_CLASS_CAP,
    DROP_TARGET_AND_NEXT_FULL,
    DROPPED,
    ENQUEUED,
    SHIFTED,
    EnqueueResult,
    Packet,
)
from .timebase import SimTime, ZS_PER_S

NUM_BE_PRIORITIES = 7
DEFAULT_BE_QUEUE_CAP = 2**20  # 1 MiB per BE priority queue


def byte_capacity(rate_bps: int, cycle_len: SimTime) -> int:
    """Bytes a link can carry in one cycle (exact for the supported rates)."""
    return (rate_bps * cycle_len) // (8 * ZS_PER_S)


def ts_byte_budget(rate_bps: int, cycle_len: SimTime, be_gap: Fraction) -> int:
    cap = byte_capacity(rate_bps, cycle_len)
    return int(cap * (1 - be_gap))


class PcsqPort:
    __slots__ = (
        "port_id",
        "num_queues",
        "queue_cap_packets",
        "rate",
        "cycle_len",
        "ts_budget",
        "be_queue_cap",
        "queues",
        "queue_bytes",
        "be_queues",
        "be_bytes",
        "curr_abs",
        "wire_free_at",
        "stat_max_queue_bytes",
        "stat_max_queue_pkts",
        "stat_shifts",
        "stat_drops",
        "stat_ts_tx_bytes",
        "stat_be_tx_bytes",
        "stat_ts_tx_pkts",
        "stat_be_tx_pkts",
        "stat_enqueued_pkts",
    )

    def __init__(
        self,
        port_id: int,
        rate_bps: int,
        cycle_len: SimTime,
        num_queues: int = 15,
        queue_cap_packets: int = 64,
        be_gap: Fraction = Fraction(15, 100),
        be_queue_cap: int = DEFAULT_BE_QUEUE_CAP,
    ):
        if num_queues < 2:
            raise ValueError("need at least two cycle queues")
        self.port_id = port_id
        self.num_queues = num_queues
        self.queue_cap_packets = queue_cap_packets
        self.rate = rate_bps
        self.cycle_len = cycle_len
        self.ts_budget = ts_byte_budget(rate_bps, cycle_len, be_gap)
        self.be_queue_cap = be_queue_cap
        self.queues: list[list[Packet]] = [[] for _ in range(num_queues)]
        self.queue_bytes = [0] * num_queues
        self.be_queues: list[deque[Packet]] = [
            deque() for _ in range(NUM_BE_PRIORITIES)
        ]
        self.be_bytes = [0] * NUM_BE_PRIORITIES
        self.curr_abs = 0
        self.wire_free_at: SimTime = 0
        self.stat_max_queue_bytes = 0
        self.stat_max_queue_pkts = 0
        self.stat_shifts = 0
        self.stat_drops: dict[str, int] = {}
        self.stat_ts_tx_bytes = 0
        self.stat_be_tx_bytes = 0
        self.stat_ts_tx_pkts = 0
        self.stat_be_tx_pkts = 0
        self.stat_enqueued_pkts = 0

    # -- helpers ---------------------------------------------------------

    def ser(self, size: int) -> SimTime:
        return (size * 8 * ZS_PER_S) // self.rate

    @property
    def curr_q(self) -> int:
        return self.curr_abs % self.num_queues

    def _has_room(self, qid: int, size: int) -> bool:
        return (
            qid != self.curr_q
            and len(self.queues[qid]) < self.queue_cap_packets
            and self.queue_bytes[qid] + size <= self.ts_budget
        )

    def _drop(self, reason: str) -> EnqueueResult:
        self.stat_drops[reason] = self.stat_drops.get(reason, 0) + 1
        return EnqueueResult(DROPPED, reason=reason)

    # -- enqueue side ----------------------------------------------------

    def enqueue_ts(self, pkt: Packet, sid: int) -> EnqueueResult:
        """Place a TS packet relative to the serving queue (one-shift rule)."""
        n = self.num_queues
        curr = self.curr_q
        qid = (curr + sid) % n
        if self._has_room(qid, pkt.size):
            outcome = ENQUEUED
        else:
            qid = (curr + sid + 1) % n
            if not self._has_room(qid, pkt.size):
                return self._drop(DROP_TARGET_AND_NEXT_FULL)
            outcome = SHIFTED
            pkt.shifted += 1
            self.stat_shifts += 1
        q = self.queues[qid]
        q.append(pkt)
        b = self.queue_bytes[qid] + pkt.size
        self.queue_bytes[qid] = b
        self.stat_enqueued_pkts += 1
        if b > self.stat_max_queue_bytes:
            self.stat_max_queue_bytes = b
        if len(q) > self.stat_max_queue_pkts:
            self.stat_max_queue_pkts = len(q)
        return EnqueueResult(outcome, qid=qid)

    def enqueue_be(self, pkt: Packet) -> EnqueueResult:
        prio = pkt.be_priority
        if self.be_bytes[prio] + pkt.size > self.be_queue_cap:
            return self._drop(DROP_BE_OVERFLOW)
        self.be_queues[prio].append(pkt)
        self.be_bytes[prio] += pkt.size
        return EnqueueResult(ENQUEUED, qid=-1 - prio)

    # -- dequeue side ----------------------------------------------------

    def rotate(self, k_abs: int) -> None:
        """Advance the serving queue at a boundary; the old one must be empty."""
        old = self.curr_q
        if self.queues[old]:
            raise AssertionError(
                f"port {self.port_id}: queue {old} not drained at rotation "
                f"(cycle {k_abs}, {len(self.queues[old])} packets resident)"
            )
        self.curr_abs = k_abs

    def drain_current(self, now: SimTime) -> list[tuple[Packet, SimTime, SimTime]]:
        """Transmit the whole serving queue back-to-back starting at ``now``."""
        qid = self.curr_q
        q = self.queues[qid]
        if not q:
            return []
        out = []
        t = now
        for pkt in q:
            fin = t + self.ser(pkt.size)
            out.append((pkt, t, fin))
            t = fin
            self.stat_ts_tx_bytes += pkt.size
            self.stat_ts_tx_pkts += 1
        self.queues[qid] = []
        self.queue_bytes[qid] = 0
        self.wire_free_at = t
        return out

    def be_next(
        self, now: SimTime, cycle_end: SimTime
    ) -> tuple[Packet, SimTime, SimTime] | None:
        """Pop one BE packet in strict priority if its head fits the cycle.

        Only the head of the strongest non-empty priority is considered; a
        head too large for the idle remainder blocks weaker queues too.
        """
        t = max(now, self.wire_free_at)
        qi = next((i for i in range(NUM_BE_PRIORITIES) if self.be_queues[i]), -1)
        if qi < 0:
            return None
        head = self.be_queues[qi][0]
        fin = t + self.ser(head.size)
        if fin > cycle_end:
            return None
        self.be_queues[qi].popleft()
        self.be_bytes[qi] -= head.size
        self.stat_be_tx_bytes += head.size
        self.stat_be_tx_pkts += 1
        self.wire_free_at = fin
        return (head, t, fin)

    def be_fill(
        self, now: SimTime, cycle_end: SimTime
    ) -> list[tuple[Packet, SimTime, SimTime]]:
        """Send BE in strict priority while each head packet fits the cycle."""
        out = []
        while (item := self.be_next(now, cycle_end)) is not None:
            out.append(item)
        return out


class CqPort(PcsqPort):
    """Rotating queues without programmability: everything goes next cycle."""

    __slots__ = ()

    def enqueue_ts(self, pkt: Packet, sid: int) -> EnqueueResult:
        return super().enqueue_ts(pkt, 1)


class SpPort:
    """Eight-class strict-priority FIFO port (work-conserving baseline).

    TS rides class 7; BE priorities 0..6 map onto classes 0..6.  With
    ``edf=True`` the TS class dequeues by least (slack + arrival) rank
    instead of FIFO, FIFO order breaking rank ties.
    """

    NUM_CLASSES = 8
    TS_CLASS = 7

    __slots__ = (
        "port_id",
        "rate",
        "class_byte_cap",
        "edf",
        "classes",
        "class_bytes",
        "_rank_heap",
        "_tie",
        "wire_free_at",
        "busy",
        "stat_max_class_bytes",
        "stat_drops",
        "stat_tx_bytes",
        "stat_tx_pkts",
        "stat_ts_tx_bytes",
        "stat_be_tx_bytes",
        "stat_ts_tx_pkts",
        "stat_be_tx_pkts",
        "stat_enqueued_pkts",
    )

    def __init__(
        self,
        port_id: int,
        rate_bps: int,
        class_byte_cap: int = 64 * 2**20,
        edf: bool = False,
    ):
        self.port_id = port_id
        self.rate = rate_bps
        self.class_byte_cap = class_byte_cap
        self.edf = edf
        self.classes: list[deque[Packet]] = [
            deque() for _ in range(self.NUM_CLASSES)
        ]
        self.class_bytes = [0] * self.NUM_CLASSES
        self._rank_heap: list[tuple[SimTime, int, Packet]] = []
        self._tie = 0
        self.wire_free_at: SimTime = 0
        self.busy = False
        self.stat_max_class_bytes = [0] * self.NUM_CLASSES
        self.stat_drops: dict[str, int] = {}
        self.stat_tx_bytes = 0
        self.stat_tx_pkts = 0
        self.stat_ts_tx_bytes = 0
        self.stat_be_tx_bytes = 0
        self.stat_ts_tx_pkts = 0
        self.stat_be_tx_pkts = 0
        self.stat_enqueued_pkts = 0

    def ser(self, size: int) -> SimTime:
        return (size * 8 * ZS_PER_S) // self.rate

    def enqueue(self, pkt: Packet, now: SimTime) -> EnqueueResult:
        # BE priority 0 is the strongest everywhere; here that means the
        # highest class index below TS.
        cls = self.TS_CLASS if pkt.cls == "ts" else self.TS_CLASS - 1 - pkt.be_priority
        if self.class_bytes[cls] + pkt.size > self.class_byte_cap:
            self.stat_drops[DROP_CLASS_CAP] = (
                self.stat_drops.get(DROP_CLASS_CAP, 0) + 1
            )
            return EnqueueResult(DROPPED, reason=DROP_CLASS_CAP)
        if cls == self.TS_CLASS and self.edf:
            rank = pkt.slack + now
            self._tie += 1
            heappush(self._rank_heap, (rank, self._tie, pkt))
        else:
            self.classes[cls].append(pkt)
        b = self.class_bytes[cls] + pkt.size
        self.class_bytes[cls] = b
        self.stat_enqueued_pkts += 1
        if b > self.stat_max_class_bytes[cls]:
            self.stat_max_class_bytes[cls] = b
        return EnqueueResult(ENQUEUED, qid=cls)

    def pop_next(self, now: SimTime) -> tuple[Packet, SimTime] | None:
        """Highest-priority head packet and its wait so far, if any."""
        if self.edf and (self._rank_heap or self.classes[self.TS_CLASS]):
            if self._rank_heap:
                _, _, pkt = heappop(self._rank_heap)
                self.class_bytes[self.TS_CLASS] -= pkt.size
                return pkt, now - pkt.arrival
        for cls in range(self.NUM_CLASSES - 1, -1, -1):
            if self.classes[cls]:
                pkt = self.classes[cls].popleft()
                self.class_bytes[cls] -= pkt.size
                return pkt, now - pkt.arrival
        return None

    def record_tx(self, pkt: Packet) -> None:
        self.stat_tx_bytes += pkt.size
        self.stat_tx_pkts += 1
        if pkt.cls == "ts":
            self.stat_ts_tx_bytes += pkt.size
            self.stat_ts_tx_pkts += 1
        else:
            self.stat_be_tx_bytes += pkt.size
            self.stat_be_tx_pkts += 1
