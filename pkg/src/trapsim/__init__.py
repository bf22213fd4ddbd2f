"""Simulator for energy-status-aware communication among batteryless nodes."""

from .codec import (
    Burst,
    Corrupted,
    Decoded,
    EnergyLevel,
    NodeId,
    PulseTrain,
    classify_level,
    count_pulses,
    decode,
    encode,
    estimate_frequency,
)
from .channel import ChannelEvent, ChannelParams, calibrate_defaults, impair, overlap
from .engine import Metrics, Trace, run, run_paired, sweep
from .scenario import Scenario, load_scenario

__all__ = [
    "Burst", "ChannelEvent", "ChannelParams", "Corrupted", "Decoded", "EnergyLevel",
    "Metrics", "NodeId", "PulseTrain", "Scenario", "Trace", "calibrate_defaults",
    "classify_level", "count_pulses", "decode", "encode", "estimate_frequency", "impair",
    "load_scenario", "overlap", "run", "run_paired", "sweep",
]

__version__ = "0.1.0"
