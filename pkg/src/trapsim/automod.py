"""MCU-independent auto-modulator: threshold quantizer plus periodic burst timer."""

from __future__ import annotations

from dataclasses import dataclass, field

from .channel import ChannelEvent
from .codec import EnergyLevel, NodeId, encode

DEFAULT_THRESHOLDS = (0.30, 0.70, 0.99)


@dataclass(frozen=True)
class AutoModConfig:
    thresholds: tuple[float, float, float] = DEFAULT_THRESHOLDS
    period_ms: float = 100.0
    drift_ppm: float = 0.0
    phase_offset_ms: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        t1, t2, t3 = self.thresholds
        if not 0 < t1 < t2 < t3 <= 1:
            raise ValueError(f"thresholds must satisfy 0 < t1 < t2 < t3 <= 1, got {self.thresholds}")
        if self.period_ms <= 0:
            raise ValueError("burst period must be positive")
        if self.phase_offset_ms < 0:
            raise ValueError("phase offset must be non-negative")

    @property
    def period_us(self) -> int:
        """Effective (drifted) repetition period, rounded to the microsecond."""
        return int(round(self.period_ms * 1000 * (1 + self.drift_ppm * 1e-6)))

    def check_burst_fits(self, freq_hz: float) -> None:
        longest_us = EnergyLevel.FULL.nominal_pulses / freq_hz * 1e6
        if self.period_ms * 1000 <= longest_us:
            raise ValueError(
                f"period {self.period_ms} ms does not exceed the longest burst "
                f"({longest_us / 1000:.2f} ms at {freq_hz:g} Hz)"
            )


def quantize(energy_fraction: float, cfg: AutoModConfig) -> EnergyLevel:
    t1, t2, t3 = cfg.thresholds
    if energy_fraction < t1:
        return EnergyLevel.CHARGING
    if energy_fraction < t2:
        return EnergyLevel.LOW
    if energy_fraction < t3:
        return EnergyLevel.HIGH
    return EnergyLevel.FULL


def next_fire_time(last_fire: int, cfg: AutoModConfig) -> int:
    return last_fire + cfg.period_us


def emit(node: NodeId, energy_fraction: float, now: int, cfg: AutoModConfig) -> ChannelEvent:
    """Status burst for the current stored energy.

    Takes no MCU state on purpose: the modulator runs whether or not the
    node's processor is powered.
    """
    level = quantize(energy_fraction, cfg)
    return ChannelEvent.of(encode(level, node.assigned_freq_hz, now), node)


@dataclass
class AutoModulator:
    """Per-node timer state; one instance per simulated node."""

    node: NodeId
    cfg: AutoModConfig
    next_fire: int = field(init=False)
    fires: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        self.cfg.check_burst_fits(self.node.assigned_freq_hz)
        self.next_fire = int(round(self.cfg.phase_offset_ms * 1000))

    def fire(self, energy_fraction: float, now: int) -> ChannelEvent:
        if now != self.next_fire:
            raise RuntimeError(f"{self.node} fired at {now}, expected {self.next_fire}")
        event = emit(self.node, energy_fraction, now, self.cfg)
        self.next_fire = next_fire_time(now, self.cfg)
        self.fires += 1
        return event
