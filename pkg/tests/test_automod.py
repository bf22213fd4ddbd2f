import pytest
from hypothesis import given
from hypothesis import strategies as st

from trapsim.automod import AutoModConfig, AutoModulator, emit, next_fire_time, quantize
from trapsim.codec import EnergyLevel, NodeId, count_pulses
from trapsim.energy import TaskCosts

CFG = AutoModConfig()
NODE = NodeId(1, 26_000)


@pytest.mark.parametrize(
    "energy,level",
    [(0.75, EnergyLevel.HIGH), (1.0, EnergyLevel.FULL), (0.0, EnergyLevel.CHARGING),
     (0.30, EnergyLevel.LOW), (0.2999, EnergyLevel.CHARGING), (0.70, EnergyLevel.HIGH),
     (0.99, EnergyLevel.FULL)],
)
def test_quantize_examples(energy, level):
    assert quantize(energy, CFG) is level


@given(st.floats(0, 1), st.floats(0, 1))
def test_quantize_monotone(a, b):
    lo, hi = sorted((a, b))
    assert quantize(lo, CFG) <= quantize(hi, CFG)


@given(st.floats(0, 1))
def test_high_or_above_iff_rx_affordable(energy):
    assert (quantize(energy, CFG) >= EnergyLevel.HIGH) == (energy >= TaskCosts().rx_cost)


@pytest.mark.parametrize(
    "period_ms,drift,expected",
    [(100, 0, 100_000), (100, 500, 100_050), (60_000, 0, 60_000_000), (100, -500, 99_950)],
)
def test_next_fire_time(period_ms, drift, expected):
    assert next_fire_time(0, AutoModConfig(period_ms=period_ms, drift_ppm=drift)) == expected


def test_emit_low_at_45_percent():
    ev = emit(NODE, 0.45, 0, CFG)
    assert count_pulses(ev.train) == 64
    assert ev.tx_node == NODE


def test_emit_needs_no_mcu():
    # the signature has no MCU argument: a dead node at 10% still emits
    ev = emit(NODE, 0.10, 5_000, CFG)
    assert count_pulses(ev.train) == 32
    assert ev.start == 5_000


def test_emit_full_at_99_5_percent():
    assert count_pulses(emit(NODE, 0.995, 0, CFG).train) == 256


def test_modulator_keeps_period():
    mod = AutoModulator(NODE, AutoModConfig(period_ms=100, drift_ppm=250, phase_offset_ms=3))
    times = []
    for energy in [0.0, 1.0, 0.0, 0.5, 0.0]:
        times.append(mod.next_fire)
        mod.fire(energy, mod.next_fire)
    assert times[0] == 3_000
    assert {b - a for a, b in zip(times, times[1:])} == {100_025}


def test_modulator_rejects_off_schedule_fire():
    mod = AutoModulator(NODE, CFG)
    with pytest.raises(RuntimeError):
        mod.fire(0.5, 1)


def test_period_must_exceed_longest_burst():
    with pytest.raises(ValueError):
        AutoModulator(NodeId(0, 1_200), AutoModConfig(period_ms=100))
    with pytest.raises(ValueError):
        AutoModConfig(thresholds=(0.7, 0.3, 0.99))
