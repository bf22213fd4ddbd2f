"""Percent-of-capacity storage model for an intermittently powered node."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

US_PER_MIN = 60_000_000
EPS = 1e-9

DEFAULT_BOOT_THRESHOLD = 0.30


class InsufficientEnergy(Exception):
    """The requested action costs more than the stored energy."""

    def __init__(self, available: float, cost: float) -> None:
        super().__init__(f"need {cost:.3f} of capacity, have {available:.3f}")
        self.available = available
        self.cost = cost


@dataclass(frozen=True)
class CapacitorState:
    energy_fraction: float = 0.0
    mcu_on: bool = False
    last_update: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.energy_fraction <= 1.0:
            raise ValueError(f"energy fraction {self.energy_fraction} outside [0, 1]")
        if self.mcu_on and self.energy_fraction == 0.0:
            raise ValueError("MCU cannot run on an empty store")


@dataclass(frozen=True)
class HarvestParams:
    """Harvest increments per minute, as fractions of full storage."""

    mean_increment: float = 0.25
    std_increment: float = 0.22
    update_interval_us: int = US_PER_MIN

    def __post_init__(self) -> None:
        if self.mean_increment < 0 or self.std_increment < 0:
            raise ValueError("harvest mean and std must be non-negative")
        if self.update_interval_us <= 0:
            raise ValueError("harvest update interval must be positive")

    @property
    def interval_min(self) -> float:
        return self.update_interval_us / US_PER_MIN

    @property
    def tick_mean(self) -> float:
        return self.mean_increment * self.interval_min

    @property
    def tick_std(self) -> float:
        # random-walk scaling keeps the per-minute variance fixed
        return self.std_increment * math.sqrt(self.interval_min)


@dataclass(frozen=True)
class TaskCosts:
    tx_cost: float = 1.00
    rx_cost: float = 0.70

    def __post_init__(self) -> None:
        if not 0 < self.rx_cost <= self.tx_cost <= 1:
            raise ValueError("costs must satisfy 0 < rx_cost <= tx_cost <= 1")


def draw_increment(params: HarvestParams, rng: np.random.Generator) -> float:
    """One harvest increment: a normal draw with negative values clipped to zero."""
    return max(0.0, float(rng.normal(params.tick_mean, params.tick_std)))


def rectified_normal_mean(mu: float, sigma: float) -> float:
    """Closed-form mean of max(0, X) for X ~ Normal(mu, sigma)."""
    if sigma == 0:
        return max(0.0, mu)
    z = mu / sigma
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    cdf = 0.5 * (1 + math.erf(z / math.sqrt(2)))
    return mu * cdf + sigma * pdf


def apply_increment(
    state: CapacitorState,
    increment: float,
    now: int | None = None,
    boot_threshold: float = DEFAULT_BOOT_THRESHOLD,
) -> CapacitorState:
    energy = min(1.0, state.energy_fraction + max(0.0, increment))
    mcu_on = state.mcu_on or energy >= boot_threshold - EPS
    return CapacitorState(
        energy, mcu_on and energy > 0, state.last_update if now is None else now
    )


def harvest_step(
    state: CapacitorState,
    params: HarvestParams,
    rng: np.random.Generator,
    now: int | None = None,
    boot_threshold: float = DEFAULT_BOOT_THRESHOLD,
) -> CapacitorState:
    return apply_increment(state, draw_increment(params, rng), now, boot_threshold)


def consume(state: CapacitorState, cost: float, now: int | None = None) -> CapacitorState:
    """Spend ``cost`` of capacity; emptying the store is a power failure.

    Raises :class:`InsufficientEnergy` and leaves ``state`` untouched when the
    store holds less than ``cost``.
    """
    if state.energy_fraction < cost - EPS:
        raise InsufficientEnergy(state.energy_fraction, cost)
    energy = state.energy_fraction - cost
    if energy < EPS:
        energy = 0.0
    return replace(
        state,
        energy_fraction=energy,
        mcu_on=state.mcu_on and energy > 0,
        last_update=state.last_update if now is None else now,
    )


def has_energy(state: CapacitorState, cost: float) -> bool:
    return state.energy_fraction >= cost - EPS
