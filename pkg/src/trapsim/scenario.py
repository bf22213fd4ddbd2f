"""Scenario files: JSON schema, defaults, validation and round-trip serialization.

See ``docs/formats.md`` for the schema.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .automod import DEFAULT_THRESHOLDS, AutoModConfig
from .channel import ChannelParams
from .codec import (
    DEFAULT_NODE_BAND_HZ,
    DEFAULT_SLOT_SPACING_HZ,
    MAX_FREQ_HZ,
    MIN_FREQ_HZ,
    NodeId,
    validate_roster,
)
from .energy import HarvestParams, TaskCosts
from .protocol import Mode, ProtocolMode

US_PER_S = 1_000_000


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    pass


# The engine raises this name; it is the same failure as a bad scenario file.
InvalidScenario = ValidationError

_DURATION_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(us|ms|s|m|min|h)?\s*$")
_UNIT_US = {"us": 1, "ms": 1_000, "s": US_PER_S, "m": 60 * US_PER_S, "min": 60 * US_PER_S,
            "h": 3600 * US_PER_S}


def parse_duration(text: str | int | float) -> int:
    """Duration string such as ``60m``, ``30s``, ``1h`` or bare seconds, in microseconds."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        if text < 0:
            raise ValueError("duration must be non-negative")
        return int(round(text * US_PER_S))
    m = _DURATION_RE.match(str(text))
    if not m:
        raise ValueError(f"cannot parse duration {text!r}")
    return int(round(float(m.group(1)) * _UNIT_US[m.group(2) or "s"]))


def format_duration(us: int) -> str:
    if us % (60 * US_PER_S) == 0:
        return f"{us // (60 * US_PER_S)}m"
    if us % US_PER_S == 0:
        return f"{us // US_PER_S}s"
    return f"{us}us"


@dataclass(frozen=True)
class NodeSpec:
    node: NodeId
    name: str
    automod: AutoModConfig
    harvest: HarvestParams
    initial_energy: float = 0.0
    # None means "draw from the run seed"
    drift_ppm: float | None = None
    phase_offset_ms: float | None = None
    harvest_phase_ms: float | None = None

    @property
    def id(self) -> int:
        return self.node.id


@dataclass(frozen=True)
class TrafficSpec:
    sender: int
    receiver: int
    p_send: float = 1.0


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_us: int
    nodes: tuple[NodeSpec, ...]
    channel: ChannelParams = field(default_factory=ChannelParams)
    costs: TaskCosts = field(default_factory=TaskCosts)
    mode: ProtocolMode = field(default_factory=ProtocolMode)
    traffic: tuple[TrafficSpec, ...] = ()
    data_tx_us: int = 10_000
    drift_max_ppm: float = 500.0
    node_band_hz: tuple[float, float] = DEFAULT_NODE_BAND_HZ
    slot_spacing_hz: float = DEFAULT_SLOT_SPACING_HZ

    @property
    def roster(self) -> list[NodeId]:
        return [n.node for n in self.nodes]

    def node(self, node_id: int) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def with_overrides(
        self, *, mode: ProtocolMode | None = None, duration_us: int | None = None
    ) -> Scenario:
        data = self.to_dict()
        if mode is not None:
            data["mode"] = _mode_to_dict(mode)
        if duration_us is not None:
            data["duration"] = format_duration(duration_us)
        return scenario_from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "duration": format_duration(self.duration_us),
            "mode": _mode_to_dict(self.mode),
            "data_tx_ms": self.data_tx_us / 1000,
            "drift_max_ppm": self.drift_max_ppm,
            "node_band_hz": list(self.node_band_hz),
            "slot_spacing_hz": self.slot_spacing_hz,
            "costs": {"tx_cost": self.costs.tx_cost, "rx_cost": self.costs.rx_cost},
            "channel": self.channel.to_dict(),
            "nodes": [_node_to_dict(n) for n in self.nodes],
            "traffic": [
                {"sender": t.sender, "receiver": t.receiver, "p_send": t.p_send}
                for t in self.traffic
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _mode_to_dict(mode: ProtocolMode) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": mode.kind.value}
    if mode.backoff_range_us is not None:
        out["backoff_ms"] = [mode.backoff_range_us[0] / 1000, mode.backoff_range_us[1] / 1000]
    return out


def _node_to_dict(n: NodeSpec) -> dict[str, Any]:
    return {
        "id": n.id,
        "name": n.name,
        "freq_hz": n.node.assigned_freq_hz,
        "initial_energy": n.initial_energy,
        "automod": {
            "thresholds": list(n.automod.thresholds),
            "period_ms": n.automod.period_ms,
            "drift_ppm": n.drift_ppm,
            "phase_offset_ms": n.phase_offset_ms,
        },
        "harvest": {
            "mean_per_min": n.harvest.mean_increment,
            "std_per_min": n.harvest.std_increment,
            "update_interval_s": n.harvest.update_interval_us / US_PER_S,
            "phase_ms": n.harvest_phase_ms,
        },
    }


def _take(obj: dict[str, Any], where: str, allowed: set[str]) -> dict[str, Any]:
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown field(s) {sorted(unknown)}")
    return obj


def _parse_mode(raw: Any) -> ProtocolMode:
    if isinstance(raw, str):
        raw = {"kind": raw}
    raw = _take(raw, "mode", {"kind", "backoff_ms"})
    try:
        kind = Mode(raw.get("kind", "trap"))
    except ValueError:
        raise ValidationError(f"mode.kind: unknown protocol mode {raw.get('kind')!r}") from None
    backoff = raw.get("backoff_ms")
    rng = None
    if backoff is not None:
        lo, hi = backoff
        rng = (int(round(lo * 1000)), int(round(hi * 1000)))
    try:
        return ProtocolMode(kind, rng)
    except ValueError as exc:
        raise ValidationError(f"mode.backoff_ms: {exc}") from None


def _merged(defaults: dict[str, Any], override: dict[str, Any] | None) -> dict[str, Any]:
    out = dict(defaults)
    out.update(override or {})
    return out


def scenario_from_dict(data: dict[str, Any]) -> Scenario:
    """Build and validate a scenario, filling documented defaults."""
    data = _take(
        copy.deepcopy(data), "scenario",
        {"name", "duration", "mode", "data_tx_ms", "drift_max_ppm", "node_band_hz",
         "slot_spacing_hz", "costs", "channel", "nodes", "traffic", "automod", "harvest"},
    )
    try:
        duration_us = parse_duration(data.get("duration", "60m"))
    except ValueError as exc:
        raise ValidationError(f"duration: {exc}") from None

    try:
        costs = TaskCosts(**_take(data.get("costs", {}), "costs", {"tx_cost", "rx_cost"}))
    except ValueError as exc:
        raise ValidationError(f"costs: {exc}") from None
    try:
        channel = ChannelParams.from_dict(data.get("channel", {}))
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"channel: {exc}") from None

    band = tuple(float(x) for x in data.get("node_band_hz", DEFAULT_NODE_BAND_HZ))
    if len(band) != 2 or not MIN_FREQ_HZ <= band[0] < band[1] <= MAX_FREQ_HZ:
        raise ValidationError(
            f"node_band_hz: must be an increasing pair within [{MIN_FREQ_HZ:g}, {MAX_FREQ_HZ:g}]"
        )
    spacing = float(data.get("slot_spacing_hz", DEFAULT_SLOT_SPACING_HZ))

    automod_defaults = _merged(
        {"thresholds": list(DEFAULT_THRESHOLDS), "period_ms": 60_000.0, "drift_ppm": None,
         "phase_offset_ms": None},
        _take(data.get("automod", {}), "automod",
              {"thresholds", "period_ms", "drift_ppm", "phase_offset_ms"}),
    )
    harvest_defaults = _merged(
        {"mean_per_min": 0.25, "std_per_min": 0.22, "update_interval_s": 60.0, "phase_ms": None},
        _take(data.get("harvest", {}), "harvest",
              {"mean_per_min", "std_per_min", "update_interval_s", "phase_ms"}),
    )

    raw_nodes = data.get("nodes", [])
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ValidationError("nodes: at least one node is required")
    nodes = []
    for i, raw in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        raw = _take(raw, where, {"id", "name", "freq_hz", "initial_energy", "automod", "harvest"})
        if "freq_hz" not in raw:
            raise ValidationError(f"{where}.freq_hz: required")
        nid = int(raw.get("id", i))
        am = _merged(automod_defaults, _take(raw.get("automod", {}), f"{where}.automod",
                                             set(automod_defaults)))
        hv = _merged(harvest_defaults, _take(raw.get("harvest", {}), f"{where}.harvest",
                                             set(harvest_defaults)))
        try:
            node = NodeId(nid, float(raw["freq_hz"]))
            cfg = AutoModConfig(
                thresholds=tuple(am["thresholds"]),
                period_ms=float(am["period_ms"]),
                drift_ppm=float(am["drift_ppm"] or 0.0),
                phase_offset_ms=float(am["phase_offset_ms"] or 0.0),
            )
            cfg.check_burst_fits(node.assigned_freq_hz)
            harvest = HarvestParams(
                float(hv["mean_per_min"]), float(hv["std_per_min"]),
                int(round(float(hv["update_interval_s"]) * US_PER_S)),
            )
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"{where}: {exc}") from None
        energy = float(raw.get("initial_energy", 0.0))
        if not 0.0 <= energy <= 1.0:
            raise ValidationError(f"{where}.initial_energy: must lie in [0, 1]")
        nodes.append(NodeSpec(
            node, str(raw.get("name", f"N{nid}")), cfg, harvest, energy,
            None if am["drift_ppm"] is None else float(am["drift_ppm"]),
            None if am["phase_offset_ms"] is None else float(am["phase_offset_ms"]),
            None if hv["phase_ms"] is None else float(hv["phase_ms"]),
        ))

    problems = validate_roster([n.node for n in nodes], band_hz=band, spacing_hz=spacing)  # type: ignore[arg-type]
    if problems:
        raise ValidationError("frequency slots: " + "; ".join(problems))

    ids = {n.id for n in nodes}
    traffic = []
    senders = set()
    for i, raw in enumerate(data.get("traffic", [])):
        where = f"traffic[{i}]"
        raw = _take(raw, where, {"sender", "receiver", "p_send"})
        try:
            t = TrafficSpec(int(raw["sender"]), int(raw["receiver"]), float(raw.get("p_send", 1.0)))
        except KeyError as exc:
            raise ValidationError(f"{where}: missing {exc}") from None
        if t.sender not in ids or t.receiver not in ids:
            raise ValidationError(f"{where}: references an undeclared node id")
        if t.sender == t.receiver:
            raise ValidationError(f"{where}: sender and receiver must differ")
        if t.sender in senders:
            raise ValidationError(f"{where}: node {t.sender} already has a traffic flow")
        if not 0.0 <= t.p_send <= 1.0:
            raise ValidationError(f"{where}.p_send: must lie in [0, 1]")
        senders.add(t.sender)
        traffic.append(t)

    data_tx_us = int(round(float(data.get("data_tx_ms", 10.0)) * 1000))
    if data_tx_us <= 0:
        raise ValidationError("data_tx_ms: must be positive")
    drift_max = float(data.get("drift_max_ppm", 500.0))
    if drift_max < 0:
        raise ValidationError("drift_max_ppm: must be non-negative")

    return Scenario(
        name=str(data.get("name", "scenario")),
        duration_us=duration_us,
        nodes=tuple(nodes),
        channel=channel,
        costs=costs,
        mode=_parse_mode(data.get("mode", "trap")),
        traffic=tuple(traffic),
        data_tx_us=data_tx_us,
        drift_max_ppm=drift_max,
        node_band_hz=band,  # type: ignore[arg-type]
        slot_spacing_hz=spacing,
    )


def resolve_scenario_path(path: str | Path) -> Path:
    """A filesystem path, or the name of a scenario shipped with the package."""
    p = Path(path)
    if p.exists():
        return p
    shipped = resources.files("trapsim") / "scenarios" / p.name
    if shipped.is_file():
        return Path(str(shipped))
    raise ScenarioError(f"scenario file not found: {path}")


def loads_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data)


def load_scenario(path: str | Path) -> Scenario:
    p = resolve_scenario_path(path)
    try:
        return loads_scenario(p.read_text())
    except ParseError as exc:
        raise ParseError(f"{p}: {exc}") from None
