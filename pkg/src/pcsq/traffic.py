"""Deterministic traffic generators and exact window checkers.

Generators yield (time, size) pairs, never Packet objects; the engine owns
packet identity.  All arithmetic is integer-exact in zeptoseconds, so a
(config, seed) pair reproduces the same emission schedule on any platform.

Seed derivation: every generator gets its own PRNG stream, seeded with the
first eight bytes of sha256("<run_seed>/<label>") where the label is the
flow id (plus "/<k>" for fan-out sub-streams).  Python's salted hash() is
never used.

The token bucket is greedy: each burst is emitted at the earliest instant
the bucket holds enough bytes, which makes the offered load equal the
configured rate and keeps the output conformant to (rate, burst) over every
window by construction.  Burst sizes and packet sizes are drawn per burst,
so the steady-state burst cadence wanders instead of locking to one period.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Iterator

from .timebase import SimTime, ZS_PER_S, ser_time

KIND_TOKEN_BUCKET = "token_bucket"
KIND_PERIODIC_CBR = "periodic_cbr"
KIND_VIDEO_BURST = "video_burst"
KIND_BE_BACKGROUND = "be_background"

GENERATOR_KINDS = (
    KIND_TOKEN_BUCKET,
    KIND_PERIODIC_CBR,
    KIND_VIDEO_BURST,
    KIND_BE_BACKGROUND,
)


def derive_seed(run_seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{run_seed}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class GeneratorSpec:
    """Emission law for one flow (or one BE aggregate).

    packet_size is the fixed size, or the upper end of the draw range when
    min_packet_size is set.  burst_packets caps how many packets a token
    bucket clumps into one burst; frame_bytes drives the frame splitter.
    """

    kind: str
    flow_id: str
    packet_size: int
    rate_bps: int = 0
    burst_bytes: int = 0
    burst_packets: int = 1
    min_packet_size: int = 0
    period: SimTime | None = None
    phase: SimTime = 0
    frame_bytes: int = 0
    mtu: int = 1500
    streams: int = 1

    def __post_init__(self) -> None:
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")
        if self.packet_size <= 0:
            raise ValueError("packet_size must be positive")
        if self.kind == KIND_PERIODIC_CBR:
            if not self.period or self.period <= 0:
                raise ValueError("periodic_cbr needs a positive period")
        if self.kind == KIND_VIDEO_BURST:
            if not self.period or self.period <= 0:
                raise ValueError("video_burst needs a positive period")
            if self.frame_bytes <= 0:
                raise ValueError("video_burst needs frame_bytes")
        if self.kind in (KIND_TOKEN_BUCKET, KIND_BE_BACKGROUND):
            if self.rate_bps <= 0:
                raise ValueError(f"{self.kind} needs a positive rate")
        if self.kind == KIND_TOKEN_BUCKET:
            burst = self.burst_bytes or self.packet_size
            if burst < self.packet_size:
                raise ValueError("bucket smaller than one packet")
        if self.min_packet_size and not (
            0 < self.min_packet_size <= self.packet_size
        ):
            raise ValueError("min_packet_size must be in (0, packet_size]")
        if self.streams < 1:
            raise ValueError("streams must be >= 1")


Emission = tuple[SimTime, int]


def make_emitter(spec: GeneratorSpec, seed: int) -> Iterator[Emission]:
    if spec.kind == KIND_PERIODIC_CBR:
        return _periodic(spec.phase, spec.period, spec.packet_size)
    if spec.kind == KIND_VIDEO_BURST:
        return _frames(spec.phase, spec.period, spec.frame_bytes, spec.mtu)
    if spec.kind == KIND_TOKEN_BUCKET:
        return _token_bucket(spec, seed)
    raise ValueError(
        f"{spec.kind} expands to sub-streams; use be_streams()"
    )


def _periodic(phase: SimTime, period: SimTime, size: int) -> Iterator[Emission]:
    i = 0
    while True:
        yield phase + i * period, size
        i += 1


def _frames(
    phase: SimTime, period: SimTime, frame_bytes: int, mtu: int
) -> Iterator[Emission]:
    full, rem = divmod(frame_bytes, mtu)
    sizes = [mtu] * full + ([rem] if rem else [])
    i = 0
    while True:
        t = phase + i * period
        for s in sizes:
            yield t, s
        i += 1


def _token_bucket(spec: GeneratorSpec, seed: int) -> Iterator[Emission]:
    rng = random.Random(seed)
    bucket = spec.burst_bytes or spec.packet_size
    # Token level in bit-zeptoseconds (level * 8 * ZS_PER_S), so accrual at
    # rate_bps needs no division.
    scale = 8 * ZS_PER_S
    level = bucket * scale
    cap = bucket * scale
    t = spec.phase
    while True:
        want = rng.randint(1, spec.burst_packets)
        sizes = []
        total = 0
        for _ in range(want):
            if spec.min_packet_size:
                s = rng.randint(spec.min_packet_size, spec.packet_size)
            else:
                s = spec.packet_size
            if total + s > bucket:
                break
            sizes.append(s)
            total += s
        # sizes is never empty: the bucket holds at least one packet_size.
        need = total * scale
        if need > level:
            wait = _ceil_div(need - level, spec.rate_bps)
            t += wait
            level = min(cap, level + wait * spec.rate_bps)
        level -= need
        for s in sizes:
            yield t, s


def be_streams(
    spec: GeneratorSpec, run_seed: int
) -> list[tuple[str, Iterator[Emission]]]:
    """Expand a best-effort aggregate into per-stream token buckets.

    The aggregate rate splits evenly; stream k starts k/streams of an MTU
    period later so the streams do not pulse in lockstep.
    """
    if spec.kind != KIND_BE_BACKGROUND:
        raise ValueError("be_streams() expects a be_background spec")
    per_rate = spec.rate_bps // spec.streams
    mtu_period = _ceil_div(spec.packet_size * 8 * ZS_PER_S, per_rate)
    out = []
    for k in range(spec.streams):
        label = f"{spec.flow_id}/{k}"
        sub = GeneratorSpec(
            kind=KIND_TOKEN_BUCKET,
            flow_id=label,
            packet_size=spec.packet_size,
            rate_bps=per_rate,
            burst_bytes=spec.burst_bytes or spec.packet_size,
            burst_packets=spec.burst_packets,
            min_packet_size=spec.min_packet_size,
            phase=spec.phase + (k * mtu_period) // spec.streams,
        )
        out.append((label, _token_bucket(sub, derive_seed(run_seed, label))))
    return out


# --- exact window checkers --------------------------------------------------


@dataclass(frozen=True)
class CurveReport:
    ok: bool
    excess_bits: int
    window_start: SimTime
    window_end: SimTime


def check_arrival_curve(
    trace: list[Emission], rate_bps: int, burst_bytes: int
) -> CurveReport:
    """Verify bits(t1, t2] <= rate*(t2-t1) + 8*burst over every window.

    Exact over all window pairs via a running minimum of the drift
    g(k) = 8*ZS*S_k - rate*t_k; the worst window is reported in the
    original time scale.  The trace must be time-sorted (time, bytes).
    """
    if not trace:
        return CurveReport(True, 0, 0, 0)
    scale = 8 * ZS_PER_S
    allow = burst_bytes * scale
    cum = 0
    best_g = -rate_bps * trace[0][0]  # virtual origin just before packet 0
    best_t = trace[0][0]
    worst = 0
    w_lo = w_hi = trace[0][0]
    last_t = None
    for t, size in trace:
        if last_t is not None and t < last_t:
            raise ValueError("trace must be time-sorted")
        last_t = t
        cum += size
        g = scale * cum - rate_bps * t
        excess = g - best_g - allow
        if excess > worst:
            worst = excess
            w_lo, w_hi = best_t, t
        if g < best_g:
            best_g = g
            best_t = t
    return CurveReport(worst <= 0, max(worst, 0), w_lo, w_hi)


@dataclass(frozen=True)
class SmoothnessReport:
    ok: bool
    worst_bits: int
    limit_bits: int
    window_start: SimTime


def check_smoothness(
    trace: list[Emission], window: SimTime, limit_bits: int
) -> SmoothnessReport:
    """Max bits inside any half-open window [x, x+window) of the trace.

    The supremum over all x is reached with the window opening at an event
    instant, so a two-pointer sweep over event-aligned windows is exact.
    """
    worst = 0
    start = 0
    total = 0
    j = 0
    for i, (t, _) in enumerate(trace):
        while j < len(trace) and trace[j][0] < t + window:
            total += trace[j][1]
            j += 1
        if total * 8 > worst:
            worst = total * 8
            start = t
        total -= trace[i][1]
    return SmoothnessReport(worst <= limit_bits, worst, limit_bits, start)


def check_span_smoothness(
    trace: list[Emission], window: SimTime, limit_bits: int, rate_bps: int
) -> SmoothnessReport:
    """Max bits of packets serialized entirely inside any [x, x+window).

    Entries are (last-bit instant, size) from one wire at rate_bps, so the
    spans are disjoint and last-bit order equals first-bit order.  Only
    whole packets count; one straddling an edge belongs to a neighbouring
    window.  The supremum is reached with the window closing right at some
    packet's last bit, so scanning those windows is exhaustive.
    """
    starts = [t - ser_time(size, rate_bps) for t, size in trace]
    worst = 0
    start_at = 0
    total = 0
    i = 0
    for j, (fin, size) in enumerate(trace):
        total += size
        x = fin - window + 1  # earliest window with fin inside
        while i <= j and starts[i] < x:
            total -= trace[i][1]
            i += 1
        if total * 8 > worst:
            worst = total * 8
            start_at = x
    return SmoothnessReport(worst <= limit_bits, worst, limit_bits, start_at)
