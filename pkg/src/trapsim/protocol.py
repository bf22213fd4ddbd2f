"""TRAP engage/postpone logic, the no-TRAP baseline and carrier-sense back-off."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple

import numpy as np

from .codec import Corrupted, Decoded, EnergyLevel
from .energy import CapacitorState, TaskCosts, consume, has_energy

FRESHNESS_PERIODS = 2


class Mode(Enum):
    TRAP = "trap"
    BASELINE = "baseline"
    TRAP_CSMA = "csma"


@dataclass(frozen=True)
class ProtocolMode:
    kind: Mode = Mode.TRAP
    backoff_range_us: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Mode(self.kind))
        if self.kind is Mode.TRAP_CSMA:
            if self.backoff_range_us is None:
                object.__setattr__(self, "backoff_range_us", (0, 10_000))
            lo, hi = self.backoff_range_us  # type: ignore[misc]
            if not 0 <= lo <= hi:
                raise ValueError(f"invalid back-off range {self.backoff_range_us}")

    @property
    def uses_status(self) -> bool:
        return self.kind is not Mode.BASELINE

    @classmethod
    def parse(cls, name: str, backoff_range_us: tuple[int, int] | None = None) -> ProtocolMode:
        return cls(Mode(name), backoff_range_us)


class PostponeReason(Enum):
    SELF_LOW = "SelfLow"
    NEIGHBOR_UNKNOWN = "NeighborUnknown"
    NEIGHBOR_LOW = "NeighborLow"
    STALE = "Stale"


class DeliveryOutcome(Enum):
    SUCCESS = "Success"
    RECEIVER_LOW = "ReceiverLow"
    COLLISION = "Collision"


@dataclass(frozen=True)
class Engage:
    pass


@dataclass(frozen=True)
class Postpone:
    reason: PostponeReason


@dataclass(frozen=True)
class Abort:
    reason: str = "carrier busy"


class NeighborEntry(NamedTuple):
    level: EnergyLevel
    timestamp: int


@dataclass(frozen=True)
class NeighborTable:
    """Last decoded status per neighbour id.

    ``periods_us`` holds each neighbour's expected burst period; an entry
    older than ``FRESHNESS_PERIODS`` periods is stale.
    """

    periods_us: Mapping[int, int]
    entries: Mapping[int, NeighborEntry] = field(default_factory=dict)

    def get(self, node_id: int) -> NeighborEntry | None:
        return self.entries.get(node_id)

    def is_stale(self, node_id: int, now: int) -> bool:
        entry = self.entries.get(node_id)
        if entry is None:
            return True
        horizon = FRESHNESS_PERIODS * self.periods_us[node_id]
        return now - entry.timestamp > horizon

    def view(self, now: int) -> dict[int, tuple[EnergyLevel, int, bool]]:
        """(level, timestamp, stale) per known neighbour."""
        return {
            nid: (e.level, e.timestamp, self.is_stale(nid, now))
            for nid, e in sorted(self.entries.items())
        }

    def cleared(self) -> NeighborTable:
        return NeighborTable(self.periods_us)


def on_burst_received(
    decoded: Decoded | Corrupted, table: NeighborTable, now: int
) -> NeighborTable:
    if isinstance(decoded, Corrupted):
        return table
    entries = dict(table.entries)
    entries[decoded.node.id] = NeighborEntry(decoded.level, now)
    return NeighborTable(table.periods_us, entries)


def decide_transmit(
    self_energy: float,
    target: int,
    table: NeighborTable,
    mode: ProtocolMode,
    now: int,
    costs: TaskCosts = TaskCosts(),
) -> Engage | Postpone:
    if self_energy < costs.tx_cost - 1e-9:
        return Postpone(PostponeReason.SELF_LOW)
    if not mode.uses_status:
        return Engage()
    entry = table.get(target)
    if entry is None:
        return Postpone(PostponeReason.NEIGHBOR_UNKNOWN)
    if table.is_stale(target, now):
        return Postpone(PostponeReason.STALE)
    if entry.level < EnergyLevel.HIGH:
        return Postpone(PostponeReason.NEIGHBOR_LOW)
    return Engage()


class DataChannel:
    """Busy/idle record of the shared data channel."""

    def __init__(self) -> None:
        self._intervals: list[tuple[int, int]] = []

    def add(self, start: int, end: int) -> None:
        self._intervals.append((start, end))

    def busy_between(self, t0: int, t1: int) -> bool:
        """True if any transmission is on air at some instant in [t0, t1]."""
        return any(s <= t1 and e > t0 for s, e in self._intervals)

    def overlapping(self, start: int, end: int) -> list[tuple[int, int]]:
        return [(s, e) for s, e in self._intervals if s < end and e > start]

    def prune(self, before: int) -> None:
        self._intervals = [(s, e) for s, e in self._intervals if e > before]


def draw_backoff(mode: ProtocolMode, rng: np.random.Generator) -> int:
    if mode.kind is not Mode.TRAP_CSMA:
        raise ValueError("back-off only applies in TRAP+CSMA mode")
    lo, hi = mode.backoff_range_us  # type: ignore[misc]
    return lo if lo == hi else int(rng.integers(lo, hi, endpoint=True))


def csma_schedule(
    mode: ProtocolMode, rng: np.random.Generator, now: int, channel: DataChannel
) -> int | Abort:
    """Transmit time after a random back-off, or Abort if the channel is heard busy."""
    tx_time = now + draw_backoff(mode, rng)
    if channel.busy_between(now, tx_time):
        return Abort()
    return tx_time


class TxResult(NamedTuple):
    sender: CapacitorState
    receiver: CapacitorState
    outcome: DeliveryOutcome


def execute_data_tx(
    sender: CapacitorState,
    receiver: CapacitorState,
    costs: TaskCosts = TaskCosts(),
    now: int | None = None,
    collided: bool = False,
) -> TxResult:
    """Spend the sender's TX budget and, if possible, the receiver's RX budget.

    The sender pays whether or not the packet gets through. Raises
    ``InsufficientEnergy`` if the sender cannot afford the transmission.
    """
    sender = consume(sender, costs.tx_cost, now)
    if not receiver.mcu_on or not has_energy(receiver, costs.rx_cost):
        outcome = DeliveryOutcome.COLLISION if collided else DeliveryOutcome.RECEIVER_LOW
        return TxResult(sender, receiver, outcome)
    receiver = consume(receiver, costs.rx_cost, now)
    outcome = DeliveryOutcome.COLLISION if collided else DeliveryOutcome.SUCCESS
    return TxResult(sender, receiver, outcome)
