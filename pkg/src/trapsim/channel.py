"""Energy-status backscatter channel: receiver impairments and burst overlap."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .codec import NodeId, PulseTrain, TooFewPulses, estimate_frequency

Points = tuple[tuple[float, float], ...]

# Calibrated against the RX pulse ranges measured at 1.2, 12 and 39 kHz.
DEFAULT_SETTLING_POINTS: Points = ((12_000.0, 0.0), (31_000.0, 9.0), (39_000.0, 19.0))
DEFAULT_DROP_POINTS: Points = ((12_000.0, 0.0), (39_000.0, 0.13))
DEFAULT_SPURIOUS_POINTS: Points = ((1_200.0, 0.8), (12_000.0, 0.0))
DEFAULT_SPURIOUS_WIDTH_US = 2


def _interp(points: Points, x: float) -> float:
    xs, ys = zip(*points)
    return float(np.interp(x, xs, ys))


def _as_points(raw: Any) -> Points:
    pts = tuple(sorted((float(x), float(y)) for x, y in raw))
    if not pts:
        raise ValueError("interpolation table needs at least one point")
    return pts


@dataclass(frozen=True)
class ChannelParams:
    """Piecewise-linear impairment curves over OOK frequency (clamped at the ends)."""

    settling_points: Points = DEFAULT_SETTLING_POINTS
    drop_points: Points = DEFAULT_DROP_POINTS
    spurious_points: Points = DEFAULT_SPURIOUS_POINTS
    rng_seed: int = 0
    spurious_width_us: int = DEFAULT_SPURIOUS_WIDTH_US

    def __post_init__(self) -> None:
        for name in ("settling_points", "drop_points", "spurious_points"):
            object.__setattr__(self, name, _as_points(getattr(self, name)))
        settle = [y for _, y in self.settling_points]
        drop = [y for _, y in self.drop_points]
        spur = [y for _, y in self.spurious_points]
        if any(b < a for a, b in zip(settle, settle[1:])) or min(settle) < 0:
            raise ValueError("settling loss must be non-negative and non-decreasing in frequency")
        if any(b < a for a, b in zip(drop, drop[1:])) or min(drop) < 0 or max(drop) > 1:
            raise ValueError("drop probability must lie in [0, 1] and be non-decreasing")
        if any(b > a for a, b in zip(spur, spur[1:])) or min(spur) < 0:
            raise ValueError("spurious rate must be non-negative and non-increasing")
        if self.spurious_width_us < 1:
            raise ValueError("spurious pulse width must be at least 1 us")

    def settling_loss(self, freq_hz: float) -> int:
        return int(round(_interp(self.settling_points, freq_hz)))

    def drop_prob(self, freq_hz: float) -> float:
        return _interp(self.drop_points, freq_hz)

    def spurious_rate(self, freq_hz: float) -> float:
        return _interp(self.spurious_points, freq_hz)

    def deterministic(self) -> ChannelParams:
        """Same settling curve with the stochastic terms switched off."""
        return ChannelParams(
            self.settling_points,
            ((self.drop_points[0][0], 0.0),),
            ((self.spurious_points[0][0], 0.0),),
            self.rng_seed,
            self.spurious_width_us,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "settling_loss_table": [list(p) for p in self.settling_points],
            "drop_prob_table": [list(p) for p in self.drop_points],
            "spurious_rate_table": [list(p) for p in self.spurious_points],
            "rng_seed": self.rng_seed,
            "spurious_width_us": self.spurious_width_us,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ChannelParams:
        known = {
            "settling_loss_table", "drop_prob_table", "spurious_rate_table",
            "rng_seed", "spurious_width_us",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown channel fields: {sorted(unknown)}")
        return cls(
            settling_points=_as_points(data.get("settling_loss_table", DEFAULT_SETTLING_POINTS)),
            drop_points=_as_points(data.get("drop_prob_table", DEFAULT_DROP_POINTS)),
            spurious_points=_as_points(data.get("spurious_rate_table", DEFAULT_SPURIOUS_POINTS)),
            rng_seed=int(data.get("rng_seed", 0)),
            spurious_width_us=int(data.get("spurious_width_us", DEFAULT_SPURIOUS_WIDTH_US)),
        )


def calibrate_defaults() -> ChannelParams:
    return ChannelParams()


@dataclass(frozen=True)
class ChannelEvent:
    train: PulseTrain
    tx_node: NodeId
    start: int
    end: int

    def __post_init__(self) -> None:
        if self.end <= self.start:
            raise ValueError("channel event must have positive duration")
        if self.end - self.start != self.train.duration:
            raise ValueError("channel event span must equal the train duration")

    @classmethod
    def of(cls, train: PulseTrain, tx_node: NodeId) -> ChannelEvent:
        assert train.end_time is not None
        return cls(train, tx_node, train.origin_time, train.end_time)


@dataclass(frozen=True)
class MergedBurst:
    window: tuple[int, int]
    train: PulseTrain
    members: tuple[ChannelEvent, ...] = field(default=())

    @property
    def collided(self) -> bool:
        return len(self.members) > 1


def _train_freq(train: PulseTrain) -> float | None:
    if train.nominal_freq_hz is not None:
        return train.nominal_freq_hz
    try:
        return estimate_frequency(train).freq_hz
    except TooFewPulses:
        return None


def impair(
    train: PulseTrain, params: ChannelParams, rng: np.random.Generator | None = None
) -> PulseTrain:
    """Apply receiver impairments to a transmitted train.

    Leading pulses are lost while the receiver threshold settles, then each
    surviving pulse is dropped independently, then short spurious pulses
    arrive as a Poisson process over the burst window. A spurious pulse that
    touches an existing pulse is absorbed.
    """
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    freq = _train_freq(train)
    pulses = np.asarray(train.edges, dtype=np.int64).reshape(-1, 2)
    if freq is None:
        return train

    pulses = pulses[params.settling_loss(freq):]
    keep = rng.random(len(pulses)) >= params.drop_prob(freq)
    pulses = pulses[keep]

    assert train.end_time is not None
    window_s = (train.end_time - train.origin_time) * 1e-6
    n_spur = rng.poisson(params.spurious_rate(freq) * window_s)
    if n_spur:
        width = params.spurious_width_us
        starts = rng.integers(train.origin_time, max(train.origin_time + 1, train.end_time - width),
                              size=n_spur, endpoint=True)
        pulses = _insert_spurious(pulses, np.sort(starts), width)

    return PulseTrain(
        tuple(pulses.ravel().tolist()), train.origin_time, train.end_time, train.nominal_freq_hz
    )


def _insert_spurious(pulses: np.ndarray, starts: np.ndarray, width: int) -> np.ndarray:
    out = [tuple(p) for p in pulses.tolist()]
    for s in starts.tolist():
        e = s + width
        # index of first pulse rising at or after s
        i = int(np.searchsorted([p[0] for p in out], s))
        prev_fall = out[i - 1][1] if i > 0 else None
        next_rise = out[i][0] if i < len(out) else None
        if prev_fall is not None and s <= prev_fall:
            continue
        if next_rise is not None and e >= next_rise:
            continue
        out.insert(i, (s, e))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def merge_trains(trains: Sequence[PulseTrain]) -> PulseTrain:
    """OR-combine pulse trains: the output is high whenever any input is high."""
    if len(trains) == 1:
        return trains[0]
    pulses = sorted(p for t in trains for p in t.pulses())
    merged: list[list[int]] = []
    for rise, fall in pulses:
        if merged and rise <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], fall)
        else:
            merged.append([rise, fall])
    origin = min(t.origin_time for t in trains)
    end = max(t.end_time for t in trains)  # type: ignore[type-var]
    freqs = [t.nominal_freq_hz for t in trains if t.nominal_freq_hz is not None]
    return PulseTrain.from_pulses(merged, origin, end, max(freqs) if freqs else None)


def overlap(events: Sequence[ChannelEvent]) -> list[MergedBurst]:
    """Group time-overlapping channel events and OR-merge each group.

    Events that overlap nobody pass through unchanged.
    """
    if any(b.start < a.start for a, b in zip(events, events[1:])):
        raise ValueError("events must be sorted by start time")
    groups: list[list[ChannelEvent]] = []
    group_end = None
    for ev in events:
        if groups and group_end is not None and ev.start < group_end:
            groups[-1].append(ev)
            group_end = max(group_end, ev.end)
        else:
            groups.append([ev])
            group_end = ev.end
    result = []
    for g in groups:
        train = merge_trains([e.train for e in g])
        window = (min(e.start for e in g), max(e.end for e in g))
        result.append(MergedBurst(window, train, tuple(g)))
    return result
