"""Packet and per-hop tag types shared by control plane, engine and cores."""

from __future__ import annotations

from dataclasses import dataclass, field

from .timebase import SimTime

CLASS_TS = "ts"
CLASS_BE = "be"

# Drop reasons (stable strings; they appear in CSV output).
DROP_TARGET_AND_NEXT_FULL = "target_and_next_full"
DROP_BE_OVERFLOW = "be_overflow"
DROP_CLASS_CAP = "class_cap"


@dataclass(frozen=True, slots=True)
class SidEntry:
    """One hop's forwarding instruction: output port and cycle offset.

    The offset is relative to the rotating current queue at arrival, in
    [0, N); each hop consumes exactly one entry.
    """

    out_port: int
    cycle_offset: int


@dataclass(slots=True)
class Packet:
    flow_id: int
    seq: int
    size: int
    cls: str = CLASS_TS
    be_priority: int = 0
    sid_stack: tuple[SidEntry, ...] = ()
    hop: int = 0
    created_at: SimTime = 0
    deadline: SimTime = 0
    slack: SimTime = 0
    shifted: int = 0
    arrival: SimTime = 0  # arrival time at the node currently holding it

    def next_entry(self) -> SidEntry:
        return self.sid_stack[self.hop]


@dataclass(slots=True)
class EnqueueResult:
    outcome: str  # "enqueued" | "shifted" | "dropped"
    qid: int = -1
    reason: str = ""


ENQUEUED = "enqueued"
SHIFTED = "shifted"
DROPPED = "dropped"
