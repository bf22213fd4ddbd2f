"""Energy-status burst encoding and MCU-side decoding.

A burst is a run of OOK pulses. Its pulse count carries one of four energy
levels and its modulation frequency identifies the emitting node. Timestamps
are integer microseconds throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Iterator, NamedTuple

import numpy as np

MIN_FREQ_HZ = 1_000.0
MAX_FREQ_HZ = 40_000.0

DEFAULT_NODE_BAND_HZ = (12_000.0, 40_000.0)
DEFAULT_SLOT_SPACING_HZ = 2_000.0
DEFAULT_SLOT_TOLERANCE_HZ = 1_000.0
DEFAULT_MIN_QUALITY = 0.8
DEFAULT_MIN_WIDTH_CONSISTENCY = 0.9

MIN_PULSES_FOR_ESTIMATE = 4
TIME_QUANTUM_US = 1

# Upper bounds of each level's pulse-count bucket (geometric midpoints of
# 32/64/128/256, rounded down).
_LEVEL_UPPER_BOUNDS = (45, 90, 181)


class CodecError(ValueError):
    pass


class InvalidFrequency(CodecError):
    pass


class TooFewPulses(CodecError):
    pass


class NoBurst(CodecError):
    pass


class EnergyLevel(IntEnum):
    CHARGING = 0
    LOW = 1
    HIGH = 2
    FULL = 3

    @property
    def nominal_pulses(self) -> int:
        return 32 << int(self)

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_pulses(cls, nominal: int) -> EnergyLevel:
        for level in cls:
            if level.nominal_pulses == nominal:
                return level
        raise ValueError(f"{nominal} is not a nominal burst length")

    @classmethod
    def from_label(cls, label: str) -> EnergyLevel:
        return cls[label.upper()]


class Polarity(Enum):
    RISING = "rising"
    FALLING = "falling"


@dataclass(frozen=True)
class NodeId:
    id: int
    assigned_freq_hz: float

    def __str__(self) -> str:
        return f"node{self.id}@{self.assigned_freq_hz / 1000:g}kHz"


@dataclass(frozen=True)
class Burst:
    level: EnergyLevel
    ook_freq_hz: float
    node: NodeId

    def __post_init__(self) -> None:
        check_frequency(self.ook_freq_hz)


@dataclass(frozen=True)
class PulseTrain:
    """Digital receiver output as alternating rising/falling edge times.

    ``edges[0::2]`` are rising edges and ``edges[1::2]`` falling edges.
    ``nominal_freq_hz`` is transmitter-side metadata (set by :func:`encode`);
    the decoder never reads it.
    """

    edges: tuple[int, ...]
    origin_time: int
    end_time: int | None = None
    nominal_freq_hz: float | None = None

    def __post_init__(self) -> None:
        edges = self.edges
        if len(edges) % 2:
            raise ValueError("pulse train has an unclosed pulse")
        if edges and edges[0] < self.origin_time:
            raise ValueError("edge precedes train origin")
        for a, b in zip(edges, edges[1:]):
            if b <= a:
                raise ValueError("edge timestamps must be strictly increasing")
        if self.end_time is None:
            object.__setattr__(self, "end_time", edges[-1] if edges else self.origin_time)
        elif edges and self.end_time < edges[-1]:
            raise ValueError("end_time precedes the last edge")
        elif self.end_time < self.origin_time:
            raise ValueError("end_time precedes origin_time")

    @classmethod
    def empty(cls, origin_time: int = 0) -> PulseTrain:
        return cls((), origin_time)

    @classmethod
    def from_pulses(
        cls,
        pulses: Iterable[tuple[int, int]],
        origin_time: int,
        end_time: int | None = None,
        nominal_freq_hz: float | None = None,
    ) -> PulseTrain:
        edges = tuple(int(t) for pulse in pulses for t in pulse)
        return cls(edges, origin_time, end_time, nominal_freq_hz)

    @property
    def rising(self) -> tuple[int, ...]:
        return self.edges[0::2]

    @property
    def falling(self) -> tuple[int, ...]:
        return self.edges[1::2]

    @property
    def duration(self) -> int:
        assert self.end_time is not None
        return self.end_time - self.origin_time

    def __len__(self) -> int:
        return len(self.edges) // 2

    def pulses(self) -> list[tuple[int, int]]:
        return list(zip(self.rising, self.falling))

    def iter_edges(self) -> Iterator[tuple[int, Polarity]]:
        for i, t in enumerate(self.edges):
            yield t, Polarity.RISING if i % 2 == 0 else Polarity.FALLING


class FrequencyEstimate(NamedTuple):
    freq_hz: float
    quality: float


class Decoded(NamedTuple):
    node: NodeId
    level: EnergyLevel


@dataclass(frozen=True)
class Corrupted:
    """Burst that cannot be attributed; the receiver must ignore it."""

    reason: str


def check_frequency(freq_hz: float) -> None:
    if not (MIN_FREQ_HZ <= freq_hz <= MAX_FREQ_HZ) or math.isnan(freq_hz):
        raise InvalidFrequency(
            f"OOK frequency {freq_hz} Hz outside [{MIN_FREQ_HZ:g}, {MAX_FREQ_HZ:g}] Hz"
        )


def encode_pulses(count: int, freq_hz: float, start_time: int = 0) -> PulseTrain:
    """Ideal ``count``-pulse OOK train at 50 % duty cycle starting at ``start_time``."""
    check_frequency(freq_hz)
    if count < 0:
        raise ValueError("pulse count must be non-negative")
    period = 1e6 / freq_hz
    k = np.arange(count, dtype=np.float64)
    rise = np.rint(k * period).astype(np.int64) + start_time
    fall = np.rint(k * period + period / 2).astype(np.int64) + start_time
    edges = np.empty(2 * count, dtype=np.int64)
    edges[0::2] = rise
    edges[1::2] = fall
    end = start_time + int(round(count * period))
    return PulseTrain(tuple(edges.tolist()), start_time, end, float(freq_hz))


def encode(level: EnergyLevel, freq_hz: float, start_time: int = 0) -> PulseTrain:
    return encode_pulses(EnergyLevel(level).nominal_pulses, freq_hz, start_time)


def count_pulses(train: PulseTrain) -> int:
    return len(train.rising)


def estimate_frequency(train: PulseTrain) -> FrequencyEstimate:
    """Estimate the OOK frequency and a timing-regularity score.

    A rough period is the mean of the inter-rising-edge intervals lying
    within one quantum of their interquartile band (the median for any
    symmetric spread); a least-squares fit of edge times against pulse index
    then removes most of the integer-microsecond rounding. Quality is one
    minus the IQR of all edge-to-edge intervals (high and low times) over
    their median, after discounting one quantum of rounding spread.
    OR-merged bursts distort pulse widths, so they score low even when their
    rising edges look periodic.
    """
    edges = np.asarray(train.edges, dtype=np.int64)
    rising = edges[0::2]
    if rising.size < MIN_PULSES_FOR_ESTIMATE:
        raise TooFewPulses(
            f"need at least {MIN_PULSES_FOR_ESTIMATE} pulses, got {rising.size}"
        )
    periods = np.diff(rising).astype(np.float64)
    q1, q3 = np.percentile(periods, [25, 75])
    core = periods[(periods >= q1 - TIME_QUANTUM_US) & (periods <= q3 + TIME_QUANTUM_US)]
    period = _refine_period(rising, float(core.mean()))

    intervals = np.diff(edges).astype(np.float64)
    h1, h_med, h3 = np.percentile(intervals, [25, 50, 75])
    iqr = max(0.0, (h3 - h1) - TIME_QUANTUM_US)
    quality = min(1.0, max(0.0, 1.0 - iqr / h_med))
    return FrequencyEstimate(1e6 / period, quality)


def _refine_period(rising: np.ndarray, rough: float) -> float:
    # Least-squares slope of edge time against pulse index. Indices come from
    # the rough period, step by step, so dropped pulses leave gaps instead of
    # biasing the fit and accumulated jitter cannot shift the numbering.
    t = (rising - rising[0]).astype(np.float64)
    k = np.concatenate([[0.0], np.cumsum(np.maximum(1.0, np.rint(np.diff(t) / rough)))])
    keep = np.ones(len(t), dtype=bool)
    period = rough
    for _ in range(2):
        if np.unique(k[keep]).size < 2:
            return rough
        kk, tt = k[keep], t[keep]
        kc = kk - kk.mean()
        slope = float(kc @ (tt - tt.mean()) / (kc @ kc))
        icept = tt.mean() - slope * kk.mean()
        if not slope > 0:
            return rough
        period = slope
        keep = np.abs(t - (icept + slope * k)) <= rough / 4
        if keep.sum() < MIN_PULSES_FOR_ESTIMATE:
            return period
    return period


def width_consistency(train: PulseTrain, rel_tol: float = 0.15) -> float:
    """Fraction of pulses whose high time is within ``rel_tol`` of the median."""
    edges = np.asarray(train.edges, dtype=np.int64)
    if edges.size == 0:
        return 0.0
    widths = (edges[1::2] - edges[0::2]).astype(np.float64)
    med = float(np.median(widths))
    tol = max(TIME_QUANTUM_US + 0.5, rel_tol * med)
    return float(np.mean(np.abs(widths - med) <= tol))


def classify_level(pulse_count: int) -> EnergyLevel:
    if pulse_count <= 0:
        raise NoBurst("no pulses received")
    for level, upper in zip(EnergyLevel, _LEVEL_UPPER_BOUNDS):
        if pulse_count <= upper:
            return level
    return EnergyLevel.FULL


def match_slot(
    freq_hz: float, roster: Iterable[NodeId], tolerance_hz: float = DEFAULT_SLOT_TOLERANCE_HZ
) -> NodeId | None:
    hits = [n for n in roster if abs(n.assigned_freq_hz - freq_hz) <= tolerance_hz]
    return hits[0] if len(hits) == 1 else None


def decode(
    train: PulseTrain,
    roster: Iterable[NodeId],
    *,
    min_quality: float = DEFAULT_MIN_QUALITY,
    tolerance_hz: float = DEFAULT_SLOT_TOLERANCE_HZ,
    min_width_consistency: float = DEFAULT_MIN_WIDTH_CONSISTENCY,
) -> Decoded | Corrupted:
    """Attribute a received burst to a roster node and read its energy level.

    Raises :class:`NoBurst` on an empty train. Anything that cannot be
    attributed unambiguously comes back as :class:`Corrupted`.
    """
    roster = list(roster)
    if not roster:
        raise ValueError("decode needs a non-empty roster")
    count = count_pulses(train)
    if count == 0:
        raise NoBurst("no pulses received")
    try:
        est = estimate_frequency(train)
    except TooFewPulses:
        return Corrupted("too few pulses")
    if est.quality < min_quality:
        return Corrupted(f"irregular pulse timing (quality {est.quality:.2f})")
    if width_consistency(train) < min_width_consistency:
        return Corrupted("inconsistent pulse widths")
    node = match_slot(est.freq_hz, roster, tolerance_hz)
    if node is None:
        return Corrupted(f"no roster slot matches {est.freq_hz:.0f} Hz")
    return Decoded(node, classify_level(count))


def validate_roster(
    roster: Iterable[NodeId],
    *,
    band_hz: tuple[float, float] = DEFAULT_NODE_BAND_HZ,
    spacing_hz: float = DEFAULT_SLOT_SPACING_HZ,
) -> list[str]:
    """Return a list of violated slot-assignment rules (empty when valid)."""
    problems = []
    nodes = sorted(roster, key=lambda n: n.assigned_freq_hz)
    lo, hi = band_hz
    for n in nodes:
        if not lo <= n.assigned_freq_hz <= hi:
            problems.append(f"{n} outside node band [{lo:g}, {hi:g}] Hz")
    for a, b in zip(nodes, nodes[1:]):
        if b.assigned_freq_hz - a.assigned_freq_hz < spacing_hz:
            problems.append(f"{a} and {b} closer than slot spacing {spacing_hz:g} Hz")
    ids = [n.id for n in nodes]
    if len(set(ids)) != len(ids):
        problems.append("duplicate node ids")
    return problems
