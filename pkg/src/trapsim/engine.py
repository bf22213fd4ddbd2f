"""Deterministic discrete-event simulation of a TRAP network.

Two channels are modelled: the energy-status backscatter channel carrying
auto-modulator bursts, and a separate data channel that is only busy/idle.
All times are integer microseconds. One run is single-threaded; every random
draw comes from a per-node, per-purpose stream derived from the run seed, so
the energy input of a node does not depend on the protocol mode.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Any, Iterable, Sequence

import numpy as np

from .automod import AutoModulator
from .channel import ChannelEvent, impair, overlap
from .codec import Corrupted, Decoded, EnergyLevel, NoBurst, decode
from .energy import (
    CapacitorState,
    apply_increment,
    draw_increment,
    has_energy,
)
from .protocol import (
    DataChannel,
    DeliveryOutcome,
    Mode,
    NeighborTable,
    Postpone,
    PostponeReason,
    ProtocolMode,
    decide_transmit,
    draw_backoff,
    execute_data_tx,
    on_burst_received,
)
from .scenario import InvalidScenario, Scenario, scenario_from_dict

RECEIVER_POWER_UW = 36.2

# per-node random stream purposes
_HARVEST, _CHANNEL, _TRAFFIC, _CSMA, _CLOCK = range(5)


class InvariantViolation(AssertionError):
    """The engine reached a state its own rules forbid."""


class EventKind(IntEnum):
    HARVEST_TICK = 0
    AUTOMOD_FIRE = 1
    BURST_ARRIVAL = 2
    DECODE_COMPLETE = 3
    TX_DECISION = 4
    DATA_TX_START = 5
    DATA_TX_END = 6
    POWER_FAIL = 7
    BOOT = 8

    @property
    def label(self) -> str:
        return "".join(w.capitalize() for w in self.name.split("_")).replace("Automod", "AutoMod")


@dataclass(frozen=True)
class SimEvent:
    """One trace row."""

    time: int
    kind: EventKind
    node: int
    peer: int | None = None
    level: str = ""
    energy: float | None = None
    detail: str = ""


TRACE_COLUMNS = ("time_us", "kind", "node", "peer", "level", "energy", "detail")


@dataclass
class Trace:
    events: list[SimEvent] = field(default_factory=list)

    def append(self, ev: SimEvent) -> None:
        if self.events and ev.time < self.events[-1].time:
            raise InvariantViolation(f"trace time went backwards at {ev}")
        self.events.append(ev)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def of_kind(self, kind: EventKind, node: int | None = None) -> list[SimEvent]:
        return [e for e in self.events if e.kind is kind and (node is None or e.node == node)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for e in self.events:
            w.writerow([
                e.time, e.kind.label, e.node, "" if e.peer is None else e.peer, e.level,
                "" if e.energy is None else f"{e.energy:.6f}", e.detail,
            ])
        return buf.getvalue()


@dataclass
class Metrics:
    duration_min: float = 0.0
    tx_actions: int = 0
    successful_receptions: int = 0
    failure_breakdown: dict[str, int] = field(
        default_factory=lambda: {o.value: 0 for o in DeliveryOutcome if o is not DeliveryOutcome.SUCCESS}
    )
    postponements: dict[str, int] = field(
        default_factory=lambda: {r.value: 0 for r in PostponeReason}
    )
    csma_aborts: int = 0
    false_engages: int = 0
    listening_time_s: float = 0.0
    bursts_emitted: int = 0
    bursts_received: int = 0
    bursts_corrupted: int = 0
    bursts_misread: int = 0
    burst_overlaps: int = 0
    table_updates_from_collisions: int = 0
    power_failures: int = 0
    boots: int = 0

    @property
    def success_rate(self) -> float | None:
        if self.tx_actions == 0:
            return None
        return self.successful_receptions / self.tx_actions

    @property
    def throughput_per_min(self) -> float:
        if self.duration_min <= 0:
            return 0.0
        return self.successful_receptions / self.duration_min

    @property
    def listening_energy_uj(self) -> float:
        return self.listening_time_s * RECEIVER_POWER_UW

    @property
    def corruption_rate(self) -> float:
        return self.bursts_corrupted / self.bursts_received if self.bursts_received else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "duration_min": self.duration_min,
            "tx_actions": self.tx_actions,
            "successful_receptions": self.successful_receptions,
            "success_rate": self.success_rate,
            "throughput_per_min": self.throughput_per_min,
            "failure_breakdown": dict(sorted(self.failure_breakdown.items())),
            "postponements": dict(sorted(self.postponements.items())),
            "csma_aborts": self.csma_aborts,
            "false_engages": self.false_engages,
            "listening_time_s": self.listening_time_s,
            "listening_energy_uj": self.listening_energy_uj,
            "bursts_emitted": self.bursts_emitted,
            "bursts_received": self.bursts_received,
            "bursts_corrupted": self.bursts_corrupted,
            "bursts_misread": self.bursts_misread,
            "burst_overlaps": self.burst_overlaps,
            "corruption_rate": self.corruption_rate,
            "table_updates_from_collisions": self.table_updates_from_collisions,
            "power_failures": self.power_failures,
            "boots": self.boots,
        }


@dataclass(frozen=True)
class RunResult:
    trace: Trace
    metrics: Metrics
    scenario: Scenario
    seed: int


def node_rng(seed: int, node_index: int, purpose: int, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, node_index, purpose, extra]))


@dataclass
class _Node:
    index: int
    spec: Any
    modulator: AutoModulator
    state: CapacitorState
    table: NeighborTable
    target: int | None
    p_send: float
    harvest_rng: np.random.Generator
    channel_rng: np.random.Generator
    traffic_rng: np.random.Generator
    csma_rng: np.random.Generator
    next_harvest: int
    ready: bool = False
    wants: bool = False
    tx_pending: bool = False
    listening_since: int | None = None
    listening_us: int = 0

    @property
    def id(self) -> int:
        return self.spec.id


@dataclass
class _DataTx:
    tx_id: int
    sender: int
    receiver: int
    window_start: int
    start: int = 0
    end: int = 0
    collided: bool = False
    provisional: DeliveryOutcome | None = None


class Simulation:
    """A single run. Use :func:`run` rather than driving this directly."""

    def __init__(self, scenario: Scenario, seed: int) -> None:
        if scenario.duration_us < 0:
            raise InvalidScenario("duration must be non-negative")
        self.sc = scenario
        self.seed = int(seed)
        self.mode = scenario.mode
        self.costs = scenario.costs
        self.trace = Trace()
        self.metrics = Metrics(duration_min=scenario.duration_us / 60e6)
        self.queue: list[tuple[int, int, int, int, Any]] = []
        self._seq = itertools.count()
        self.data_channel = DataChannel()
        self.status_events: list[ChannelEvent] = []
        self._txs: dict[int, _DataTx] = {}
        self._tx_ids = itertools.count()
        self.roster = scenario.roster
        periods = {}
        flows = {t.sender: t for t in scenario.traffic}
        self.nodes: dict[int, _Node] = {}
        for i, spec in enumerate(scenario.nodes):
            clock = node_rng(self.seed, i, _CLOCK)
            drift = spec.drift_ppm
            if drift is None:
                drift = float(clock.uniform(-scenario.drift_max_ppm, scenario.drift_max_ppm))
            phase = spec.phase_offset_ms
            if phase is None:
                phase = float(clock.uniform(0, spec.automod.period_ms))
            hphase = spec.harvest_phase_ms
            if hphase is None:
                hphase = float(clock.uniform(0, spec.harvest.update_interval_us / 1000))
            cfg = replace(spec.automod, drift_ppm=drift, phase_offset_ms=round(phase, 3))
            periods[spec.id] = cfg.period_us
            flow = flows.get(spec.id)
            e0 = spec.initial_energy
            node = _Node(
                index=i,
                spec=spec,
                modulator=AutoModulator(spec.node, cfg),
                state=CapacitorState(e0, e0 >= cfg.thresholds[0] and e0 > 0, 0),
                table=NeighborTable({}),
                target=flow.receiver if flow else None,
                p_send=flow.p_send if flow else 0.0,
                harvest_rng=node_rng(self.seed, i, _HARVEST),
                channel_rng=node_rng(self.seed, i, _CHANNEL, scenario.channel.rng_seed),
                traffic_rng=node_rng(self.seed, i, _TRAFFIC),
                csma_rng=node_rng(self.seed, i, _CSMA),
                next_harvest=int(round(hphase * 1000)) + spec.harvest.update_interval_us,
            )
            self.nodes[spec.id] = node
        for node in self.nodes.values():
            node.table = NeighborTable(periods)

    # -- scheduling ---------------------------------------------------------

    def _push(self, time: int, kind: EventKind, node: int, payload: Any = None) -> None:
        heapq.heappush(self.queue, (time, node, int(kind), next(self._seq), payload))

    def _log(self, time: int, kind: EventKind, node: int, **kw: Any) -> None:
        self.trace.append(SimEvent(time, kind, node, **kw))

    def run(self) -> RunResult:
        horizon = self.sc.duration_us
        for node in self.nodes.values():
            if node.modulator.next_fire < horizon:
                self._push(node.modulator.next_fire, EventKind.AUTOMOD_FIRE, node.id)
            if node.next_harvest < horizon:
                self._push(node.next_harvest, EventKind.HARVEST_TICK, node.id)
            self._update_readiness(node, 0)

        handlers = {
            EventKind.HARVEST_TICK: self._on_harvest,
            EventKind.AUTOMOD_FIRE: self._on_fire,
            EventKind.BURST_ARRIVAL: self._on_burst_arrival,
            EventKind.DATA_TX_START: self._on_tx_start,
            EventKind.DATA_TX_END: self._on_tx_end,
        }
        while self.queue:
            time, node_id, kind, _, payload = heapq.heappop(self.queue)
            kind = EventKind(kind)
            # transmissions already on air are allowed to finish past the horizon
            if time >= horizon and kind is not EventKind.DATA_TX_END:
                continue
            handlers[kind](time, node_id, payload)

        for node in self.nodes.values():
            self._stop_listening(node, horizon)
        self.metrics.listening_time_s = sum(n.listening_us for n in self.nodes.values()) / 1e6
        self._check_conservation()
        return RunResult(self.trace, self.metrics, self.sc, self.seed)

    # -- energy bookkeeping ---------------------------------------------------

    def _set_state(self, node: _Node, new: CapacitorState, now: int) -> None:
        old = node.state
        node.state = new
        if old.mcu_on and not new.mcu_on:
            self.metrics.power_failures += 1
            self._log(now, EventKind.POWER_FAIL, node.id, energy=new.energy_fraction)
            self._stop_listening(node, now)
            node.table = node.table.cleared()
        elif new.mcu_on and not old.mcu_on:
            self.metrics.boots += 1
            self._log(now, EventKind.BOOT, node.id, energy=new.energy_fraction)

    def _start_listening(self, node: _Node, now: int) -> None:
        if node.listening_since is None:
            node.listening_since = now

    def _stop_listening(self, node: _Node, now: int) -> None:
        if node.listening_since is not None:
            node.listening_us += now - node.listening_since
            node.listening_since = None
            # statuses heard in a listening session are not trusted later
            node.table = node.table.cleared()

    def _update_readiness(self, node: _Node, now: int) -> None:
        can_send = (
            node.target is not None
            and node.state.mcu_on
            and has_energy(node.state, self.costs.tx_cost)
            and not node.tx_pending
        )
        if not can_send:
            node.ready = False
            node.wants = False
            self._stop_listening(node, now)
            return
        if node.ready:
            return
        node.ready = True
        node.wants = node.p_send >= 1.0 or float(node.traffic_rng.random()) < node.p_send
        if not node.wants:
            return
        if self.mode.uses_status:
            self._start_listening(node, now)
        self._decide(node, now)

    # -- event handlers -----------------------------------------------------

    def _on_harvest(self, now: int, node_id: int, _: Any) -> None:
        node = self.nodes[node_id]
        spec = node.spec
        inc = draw_increment(spec.harvest, node.harvest_rng)
        new = apply_increment(node.state, inc, now, node.modulator.cfg.thresholds[0])
        self._log(now, EventKind.HARVEST_TICK, node_id, energy=new.energy_fraction,
                  detail=f"+{inc:.6f}")
        self._set_state(node, new, now)
        node.next_harvest = now + spec.harvest.update_interval_us
        if node.next_harvest < self.sc.duration_us:
            self._push(node.next_harvest, EventKind.HARVEST_TICK, node_id)
        self._update_readiness(node, now)

    def _on_fire(self, now: int, node_id: int, _: Any) -> None:
        node = self.nodes[node_id]
        ev = node.modulator.fire(node.state.energy_fraction, now)
        level = _true_level(ev).label
        self.metrics.bursts_emitted += 1
        self._log(now, EventKind.AUTOMOD_FIRE, node_id, level=level,
                  energy=node.state.energy_fraction,
                  detail="mcu_on" if node.state.mcu_on else "mcu_off")
        self.status_events.append(ev)
        self._push(ev.end, EventKind.BURST_ARRIVAL, node_id, ev)
        nxt = node.modulator.next_fire
        if nxt < self.sc.duration_us:
            self._push(nxt, EventKind.AUTOMOD_FIRE, node_id)

    def _cluster(self, ev: ChannelEvent) -> list[ChannelEvent]:
        events = sorted(self.status_events, key=lambda e: (e.start, e.tx_node.id))
        for group in overlap(events):
            if any(m is ev for m in group.members):
                return list(group.members)
        raise InvariantViolation("burst missing from status channel")

    def _on_burst_arrival(self, now: int, node_id: int, ev: ChannelEvent) -> None:
        members = self._cluster(ev)
        last = max(members, key=lambda e: (e.end, e.tx_node.id))
        if last is not ev:
            return  # the last-ending burst of the group delivers the merged signal
        merged = overlap(members)[0]
        collided = merged.collided
        if collided:
            self.metrics.burst_overlaps += 1
        cutoff = merged.window[0]
        done = {id(e) for e in members}
        self.status_events = [
            e for e in self.status_events if e.end > cutoff and id(e) not in done
        ]

        emitters = {e.tx_node.id for e in members}
        for listener in sorted(self.nodes.values(), key=lambda n: n.id):
            if listener.listening_since is None:
                continue
            if not collided and listener.id in emitters:
                continue
            self._receive(listener, merged.train, members, now)

    def _receive(self, node: _Node, train, members: Sequence[ChannelEvent], now: int) -> None:
        rx = impair(train, self.sc.channel, node.channel_rng)
        self.metrics.bursts_received += 1
        try:
            decoded: Decoded | Corrupted = decode(rx, self.roster)
        except NoBurst:
            decoded = Corrupted("no burst")
        collided = len(members) > 1
        if isinstance(decoded, Corrupted):
            self.metrics.bursts_corrupted += 1
            self._log(now, EventKind.DECODE_COMPLETE, node.id, detail=f"corrupted: {decoded.reason}")
        else:
            src = members[0]
            if collided:
                self.metrics.table_updates_from_collisions += 1
            elif decoded.node != src.tx_node or decoded.level != _true_level(src):
                self.metrics.bursts_misread += 1
            self._log(now, EventKind.DECODE_COMPLETE, node.id, peer=decoded.node.id,
                      level=decoded.level.label,
                      detail=f"pulses={len(rx)}" + (" overlap" if collided else ""))
        node.table = on_burst_received(decoded, node.table, now)
        if isinstance(decoded, Decoded) and decoded.node.id == node.target and node.ready and node.wants:
            self._decide(node, now)

    def _decide(self, node: _Node, now: int) -> None:
        assert node.target is not None
        decision = decide_transmit(
            node.state.energy_fraction, node.target, node.table, self.mode, now, self.costs
        )
        if isinstance(decision, Postpone):
            self.metrics.postponements[decision.reason.value] += 1
            self._log(now, EventKind.TX_DECISION, node.id, peer=node.target,
                      energy=node.state.energy_fraction, detail=f"postpone:{decision.reason.value}")
            return
        receiver = self.nodes[node.target]
        if self.mode.uses_status and not has_energy(receiver.state, self.costs.rx_cost):
            self.metrics.false_engages += 1
        tx = _DataTx(next(self._tx_ids), node.id, node.target, now)
        self._txs[tx.tx_id] = tx
        node.tx_pending = True
        if self.mode.kind is Mode.TRAP_CSMA:
            backoff = draw_backoff(self.mode, node.csma_rng)
            self._log(now, EventKind.TX_DECISION, node.id, peer=node.target,
                      energy=node.state.energy_fraction, detail=f"engage:backoff={backoff}")
            self._push(now + backoff, EventKind.DATA_TX_START, node.id, tx)
        else:
            self._log(now, EventKind.TX_DECISION, node.id, peer=node.target,
                      energy=node.state.energy_fraction, detail="engage")
            self._on_tx_start(now, node.id, tx)

    def _on_tx_start(self, now: int, node_id: int, tx: _DataTx) -> None:
        sender = self.nodes[tx.sender]
        receiver = self.nodes[tx.receiver]
        sender.tx_pending = False
        if self.mode.kind is Mode.TRAP_CSMA and self.data_channel.busy_between(tx.window_start, now):
            self.metrics.csma_aborts += 1
            self._log(now, EventKind.TX_DECISION, sender.id, peer=receiver.id,
                      energy=sender.state.energy_fraction, detail="abort:carrier_busy")
            del self._txs[tx.tx_id]
            self._update_readiness(sender, now)
            return
        if not has_energy(sender.state, self.costs.tx_cost):
            raise InvariantViolation(f"node {sender.id} transmitting without TX budget")

        tx.start, tx.end = now, now + self.sc.data_tx_us
        for other in self._txs.values():
            if other is not tx and other.provisional is not None and other.start < tx.end and other.end > tx.start:
                other.collided = True
                tx.collided = True
        self.data_channel.add(tx.start, tx.end)

        result = execute_data_tx(sender.state, receiver.state, self.costs, now)
        tx.provisional = result.outcome
        self.metrics.tx_actions += 1
        self._log(now, EventKind.DATA_TX_START, sender.id, peer=receiver.id,
                  energy=result.sender.energy_fraction)
        self._set_state(sender, result.sender, now)
        self._set_state(receiver, result.receiver, now)
        self._push(tx.end, EventKind.DATA_TX_END, sender.id, tx)
        self._update_readiness(sender, now)
        self._update_readiness(receiver, now)

    def _on_tx_end(self, now: int, node_id: int, tx: _DataTx) -> None:
        outcome = DeliveryOutcome.COLLISION if tx.collided else tx.provisional
        assert outcome is not None
        if outcome is DeliveryOutcome.SUCCESS:
            self.metrics.successful_receptions += 1
        else:
            self.metrics.failure_breakdown[outcome.value] += 1
        self._log(now, EventKind.DATA_TX_END, tx.sender, peer=tx.receiver, detail=outcome.value)
        del self._txs[tx.tx_id]
        self.data_channel.prune(now - self.sc.data_tx_us - _max_backoff(self.mode))

    def _check_conservation(self) -> None:
        starts = len(self.trace.of_kind(EventKind.DATA_TX_START))
        ends = len(self.trace.of_kind(EventKind.DATA_TX_END))
        if starts != ends or starts != self.metrics.tx_actions:
            raise InvariantViolation(f"{starts} DataTxStart vs {ends} DataTxEnd")
        done = self.metrics.successful_receptions + sum(self.metrics.failure_breakdown.values())
        if done != self.metrics.tx_actions:
            raise InvariantViolation("delivery outcomes do not add up to transmission actions")


def _max_backoff(mode: ProtocolMode) -> int:
    return mode.backoff_range_us[1] if mode.backoff_range_us else 0


def _true_level(ev: ChannelEvent) -> EnergyLevel:
    return EnergyLevel.from_pulses(len(ev.train))


def run(scenario: Scenario, seed: int) -> RunResult:
    """Simulate ``scenario``; identical (scenario, seed) gives an identical result."""
    return Simulation(scenario, seed).run()


def trap_arm_mode(scenario: Scenario) -> ProtocolMode:
    return scenario.mode if scenario.mode.uses_status else ProtocolMode(Mode.TRAP)


def run_paired_results(scenario: Scenario, seed: int) -> tuple[RunResult, RunResult]:
    """TRAP and baseline arms on common random numbers (same harvest streams)."""
    trap = run(scenario.with_overrides(mode=trap_arm_mode(scenario)), seed)
    base = run(scenario.with_overrides(mode=ProtocolMode(Mode.BASELINE)), seed)
    return trap, base


def run_paired(scenario: Scenario, seed: int) -> tuple[Metrics, Metrics]:
    trap, base = run_paired_results(scenario, seed)
    return trap.metrics, base.metrics


# -- parameter sweeps -------------------------------------------------------

SWEEP_FIELDS = (
    "tx_actions", "successful_receptions", "success_rate", "throughput_per_min",
    "bursts_received", "bursts_corrupted", "corruption_rate", "bursts_misread",
    "burst_overlaps", "false_engages", "csma_aborts", "power_failures",
)


def _set_path(data: dict[str, Any], path: str, value: Any) -> None:
    parts = path.split(".")

    def walk(obj: Any, i: int) -> None:
        key = parts[i]
        if isinstance(obj, list):
            targets = range(len(obj)) if key == "*" else [int(key)]
            for t in targets:
                if i == len(parts) - 1:
                    obj[t] = value
                else:
                    walk(obj[t], i + 1)
            return
        if i == len(parts) - 1:
            obj[key] = value
        else:
            obj = obj.setdefault(key, {})
            walk(obj, i + 1)

    try:
        walk(data, 0)
    except (IndexError, ValueError, TypeError) as exc:
        raise InvalidScenario(f"sweep path {path!r}: {exc}") from None


def sweep(
    template: Scenario,
    grid: dict[str, Sequence[Any]],
    seeds: int | Iterable[int] = 1,
    base_seed: int = 0,
) -> list[dict[str, Any]]:
    """Mean and (population) std of the run metrics for every grid cell."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("sweep grid must be non-empty")
    seed_list = list(range(base_seed, base_seed + seeds)) if isinstance(seeds, int) else sorted(seeds)
    keys = sorted(grid)
    rows = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        data = template.to_dict()
        for k, v in zip(keys, combo):
            _set_path(data, k, v)
        scenario = scenario_from_dict(data)
        results = [run(scenario, s).metrics.to_dict() for s in seed_list]
        row: dict[str, Any] = dict(zip(keys, combo))
        row["seeds"] = len(seed_list)
        for f in SWEEP_FIELDS:
            vals = [r[f] for r in results if r[f] is not None]
            row[f"{f}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{f}_std"] = float(np.std(vals)) if vals else None
        rows.append(row)
    return rows


def dumps_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
