"""Exact simulation time and per-node clock models.

All simulation timestamps are integer counts of a fixed unit of 10**-12 ns
(one zeptosecond, 10**-21 s).  Python integers are unbounded, so arithmetic on
SimTime values is exact by construction; the only place any rounding happens
is the single floor applied when converting between a node's local clock and
global time, and the single floor in ``ser_time`` when a link rate does not
divide the bit duration.  Nothing ever accumulates rounding error: the k-th
cycle boundary is computed from k by one multiplication and one floor, never
by summing per-cycle increments of a rounded length.

A node clock is an oscillator with a rational frequency error ``e`` and a
phase offset.  A clock with e > 0 runs slow: each of its nominal cycles lasts
``cycle_len * (1 + e)`` in global time, so its k-th boundary lags the ideal
boundary by ~e * k * cycle_len.  The boundary instant itself belongs to the
new cycle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

SimTime = int
CycleLength = int

# Unit ladder (all exact integers).
ZS_PER_NS = 10**12
ZS_PER_US = 10**15
ZS_PER_MS = 10**18
ZS_PER_S = 10**21

_UNIT_FACTORS = {
    "zs": 1,
    "fs": 10**6,
    "ps": 10**9,
    "ns": ZS_PER_NS,
    "us": ZS_PER_US,
    "ms": ZS_PER_MS,
    "s": ZS_PER_S,
}

CLOCK_REGIMES = ("ideal", "synce", "ptp", "free_running")

# Magnitude caps per regime, as |frequency_error| bounds.
_SYNCE_MAX_ERROR = Fraction(1, 10**11)  # 10 parts per trillion
_FREE_RUNNING_MAX_ERROR = Fraction(1, 10**4)  # 100 ppm
_PTP_MAX_PHASE = 21 * ZS_PER_NS  # worst offset observed on the testbed class


class ClockConfigError(ValueError):
    """A NodeClock's parameters violate its regime."""


def parse_time(text: str | int) -> SimTime:
    """Parse an exact time literal like ``"10us"`` or ``"2.5ms"`` into zs.

    Plain integers (or digit strings) are taken as raw zs counts.  Decimal
    literals must land exactly on the zs grid; anything finer is an error,
    never silently rounded.
    """
    if isinstance(text, int):
        return text
    s = text.strip()
    if not s:
        raise ValueError("empty time literal")
    unit = None
    for suffix in ("zs", "fs", "ps", "ns", "us", "ms", "s"):
        if s.endswith(suffix):
            unit = suffix
            break
    if unit is None:
        return int(s)
    body = s[: -len(unit)].strip()
    value = Fraction(body) * _UNIT_FACTORS[unit]
    if value.denominator != 1:
        raise ValueError(f"time literal {text!r} is finer than the 1e-21 s grid")
    return int(value)


def format_time(t: SimTime) -> str:
    """Render a SimTime compactly with the largest unit that stays exact."""
    if t == 0:
        return "0s"
    for unit in ("s", "ms", "us", "ns", "ps", "fs"):
        f = _UNIT_FACTORS[unit]
        if t % f == 0:
            return f"{t // f}{unit}"
    return f"{t}zs"


def ser_time(size_bytes: int, rate_bps: int) -> SimTime:
    """Serialization time of ``size_bytes`` at ``rate_bps``, floored to zs."""
    if rate_bps <= 0:
        raise ValueError("rate must be positive")
    return (size_bytes * 8 * ZS_PER_S) // rate_bps


@dataclass(frozen=True)
class NodeClock:
    """Oscillator model: regime, rational frequency error, phase offset.

    ``frequency_error`` is the relative cycle-length error of the oscillator
    (positive: slow oscillator, stretched cycles).  It is constant for the
    whole run; drift-over-time is out of scope for every regime modeled here.
    """

    regime: str = "ideal"
    frequency_error: Fraction = field(default_factory=lambda: Fraction(0))
    phase_offset: SimTime = 0

    def __post_init__(self) -> None:
        if self.regime not in CLOCK_REGIMES:
            raise ClockConfigError(f"unknown clock regime {self.regime!r}")
        e = self.frequency_error
        if self.regime == "ideal":
            if e != 0 or self.phase_offset != 0:
                raise ClockConfigError("ideal clock must have zero error and phase")
        elif self.regime == "synce":
            if abs(e) > _SYNCE_MAX_ERROR:
                raise ClockConfigError(
                    f"synce frequency error {e} exceeds {_SYNCE_MAX_ERROR}"
                )
        elif self.regime == "ptp":
            if e != 0:
                raise ClockConfigError("ptp clock models phase offset only")
            if abs(self.phase_offset) > _PTP_MAX_PHASE:
                raise ClockConfigError(
                    f"ptp phase offset {self.phase_offset} outside +-21 ns window"
                )
        elif self.regime == "free_running":
            if abs(e) > _FREE_RUNNING_MAX_ERROR:
                raise ClockConfigError(
                    f"free-running frequency error {e} exceeds +-100 ppm"
                )

    @property
    def rate_num(self) -> int:
        """Numerator of (1 + frequency_error)."""
        e = self.frequency_error
        return e.denominator + e.numerator

    @property
    def rate_den(self) -> int:
        return self.frequency_error.denominator


def cycle_boundary(clock: NodeClock, cycle_len: CycleLength, k: int) -> SimTime:
    """Global instant of the k-th local cycle boundary.

    Exactly ``phase + floor(k * cycle_len * (1 + e))``; one floor, applied to
    the full product, so the bias after any number of cycles is the bias of a
    single conversion (zero for rational results on the grid).
    """
    num = clock.rate_num
    den = clock.rate_den
    _check_resolvable(cycle_len, num, den)
    return clock.phase_offset + (k * cycle_len * num) // den


def _check_resolvable(cycle_len: int, num: int, den: int) -> None:
    if cycle_len <= 0:
        raise ValueError("cycle_len must be positive")
    if cycle_len * num < den:
        raise ValueError(
            "cycle shorter than one time unit under this clock; boundaries "
            "would not be distinct"
        )


def local_cycle_index(
    clock: NodeClock, cycle_len: CycleLength, t: SimTime
) -> tuple[int, SimTime]:
    """Cycle index k and offset such that boundary(k) <= t < boundary(k+1).

    The boundary instant itself belongs to the new cycle: at t == boundary(k)
    the result is (k, 0).
    """
    num = clock.rate_num
    den = clock.rate_den
    _check_resolvable(cycle_len, num, den)
    step = cycle_len * num  # global duration of one local cycle, times den
    k = ((t - clock.phase_offset) * den) // step
    # One floor above is a near-exact guess; settle off-by-one from the
    # interaction of the two floors explicitly.
    while cycle_boundary(clock, cycle_len, k + 1) <= t:
        k += 1
    while cycle_boundary(clock, cycle_len, k) > t:
        k -= 1
    return k, t - cycle_boundary(clock, cycle_len, k)


class BoundaryIter:
    """Exact incremental walk over a clock's cycle boundaries.

    Produces the same values as ``cycle_boundary`` (asserted in tests) but in
    O(1) big-int work per step, which is what the event cores use.  State is
    the running floor quotient plus remainder of k * cycle_len * num / den.
    """

    __slots__ = ("_phase", "_step", "_den", "_q", "_r", "k")

    def __init__(self, clock: NodeClock, cycle_len: CycleLength, k0: int = 0):
        _check_resolvable(cycle_len, clock.rate_num, clock.rate_den)
        self._phase = clock.phase_offset
        self._step = cycle_len * clock.rate_num
        self._den = clock.rate_den
        total = k0 * self._step
        self._q, self._r = divmod(total, self._den)
        self.k = k0

    def current(self) -> SimTime:
        return self._phase + self._q

    def advance(self) -> SimTime:
        """Step to boundary k+1 and return its global time."""
        self._r += self._step
        q, self._r = divmod(self._r, self._den)
        self._q += q
        self.k += 1
        return self._phase + self._q
