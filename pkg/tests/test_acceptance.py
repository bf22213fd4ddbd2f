"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from trapsim.channel import calibrate_defaults, impair
from trapsim.cli import main
from trapsim.codec import DEFAULT_NODE_BAND_HZ, DEFAULT_SLOT_SPACING_HZ, Decoded, EnergyLevel, NodeId
from trapsim.codec import classify_level, count_pulses, decode, encode, encode_pulses
from trapsim.energy import HarvestParams, draw_increment, rectified_normal_mean
from trapsim.engine import EventKind, Simulation, run, run_paired
from trapsim.scenario import load_scenario

pytestmark = pytest.mark.acceptance

SEEDS = range(30)


@pytest.fixture
def verdict(capsys):
    def emit(label: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        assert ok, detail

    return emit


@pytest.fixture(scope="module")
def paired_runs():
    sc = load_scenario("table3.json")
    assert sc.duration_us == 60 * 60_000_000
    t0 = time.perf_counter()
    runs = [run_paired(sc, s) for s in SEEDS]
    return runs, time.perf_counter() - t0


def test_ac01_trap_arm_always_succeeds(paired_runs, verdict):
    runs, elapsed = paired_runs
    rates = [trap.success_rate for trap, _ in runs]
    receiver_low = sum(trap.failure_breakdown["ReceiverLow"] for trap, _ in runs)
    ok = all(r == 1.0 for r in rates) and receiver_low == 0 and elapsed < 10.0
    verdict(
        "AC1 trap arm success",
        ok,
        f"success=100% in {sum(r == 1.0 for r in rates)}/30 seeds, ReceiverLow={receiver_low}, "
        f"mean tx={np.mean([t.tx_actions for t, _ in runs]):.1f}, runtime {elapsed:.2f}s (<10s)",
    )


def test_ac02_baseline_arm_statistics(paired_runs, verdict):
    runs, _ = paired_runs
    base_rates = [b.success_rate for _, b in runs if b.success_rate is not None]
    mean_rate = float(np.mean(base_rates))
    wins = sum(b.throughput_per_min < t.throughput_per_min for t, b in runs)
    ok = 0.15 <= mean_rate <= 0.50 and wins >= 0.95 * len(runs)
    verdict(
        "AC2 baseline arm",
        ok,
        f"baseline success mean {mean_rate:.1%} (in [15%, 50%]), "
        f"baseline throughput below trap in {wins}/{len(runs)} seeds (>=95%), "
        f"throughput {np.mean([b.throughput_per_min for _, b in runs]):.3f} vs "
        f"{np.mean([t.throughput_per_min for t, _ in runs]):.3f} p/min",
    )


# (TX count, frequency Hz, min RX, max RX) measured on hardware
RX_RANGES = [
    (32, 1_200, 32, 33), (256, 1_200, 256, 257),
    (32, 12_000, 32, 32), (256, 12_000, 256, 256),
    (32, 39_000, 5, 17), (256, 39_000, 189, 221),
]


def test_ac03_channel_calibration(verdict):
    params = calibrate_defaults()
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    fractions = []
    exact_12k = True
    for tx, freq, lo, hi in RX_RANGES:
        train = encode_pulses(tx, freq, 0)
        counts = np.array([count_pulses(impair(train, params, rng)) for _ in range(1000)])
        fractions.append(float(np.mean((counts >= lo) & (counts <= hi))))
        if freq == 12_000:
            exact_12k &= bool(np.all(counts == tx))
    elapsed = time.perf_counter() - t0
    ok = min(fractions) >= 0.95 and exact_12k and elapsed < 5.0
    cells = ", ".join(f"{tx}@{f / 1000:g}k {p:.1%}" for (tx, f, _, _), p in zip(RX_RANGES, fractions))
    verdict("AC3 channel calibration", ok,
            f"{cells}; 12 kHz exact={exact_12k}; runtime {elapsed:.2f}s (<5s)")


def test_ac04_settling_anchor(verdict):
    params = calibrate_defaults().deterministic()
    tx = encode_pulses(40, 31_000, 0)
    rx = impair(tx, params, np.random.default_rng(0))
    lost = count_pulses(tx) - count_pulses(rx)
    ok = lost == 9 and rx.edges == tx.edges[18:]
    verdict("AC4 settling anchor", ok, f"31 kHz deterministic loss = {lost} leading pulses (want 9)")


def test_ac05_codec_round_trip(verdict):
    lo, hi = DEFAULT_NODE_BAND_HZ
    slots = [NodeId(i, f) for i, f in enumerate(np.arange(lo, hi + 1, DEFAULT_SLOT_SPACING_HZ))]
    rng = np.random.default_rng(5)
    failures = 0
    for _ in range(10_000):
        level = EnergyLevel(int(rng.integers(4)))
        node = slots[int(rng.integers(len(slots)))]
        start = int(rng.integers(0, 2**40))
        if decode(encode(level, node.assigned_freq_hz, start), slots) != Decoded(node, level):
            failures += 1
    verdict("AC5 codec round trip", failures == 0, f"{failures} mismatches in 10000 random triples")


def test_ac06_classification_survives_settling(verdict):
    params = calibrate_defaults().deterministic()
    rng = np.random.default_rng(0)
    freqs = np.unique(np.concatenate([np.arange(1_000, 31_001, 25), [31_000]]))
    bad = []
    for level in EnergyLevel:
        for f in freqs:
            rx = impair(encode(level, float(f), 0), params, rng)
            if classify_level(count_pulses(rx)) is not level:
                bad.append((level.label, int(f)))
    verdict("AC6 classification after settling", not bad,
            f"{len(bad)} misclassified of {4 * len(freqs)} (level, f<=31 kHz) cases")


def test_ac07_automod_periodic_across_power_failures(verdict):
    sc = load_scenario("table3.json")
    checked = []
    for seed in range(20):
        sim = Simulation(sc, seed)
        res = sim.run()
        for node in sim.nodes.values():
            if len(res.trace.of_kind(EventKind.POWER_FAIL, node.id)) < 3:
                continue
            cfg = node.modulator.cfg
            expected = round(cfg.period_ms * 1000 * (1 + cfg.drift_ppm * 1e-6))
            gaps = set(np.diff([e.time for e in res.trace.of_kind(EventKind.AUTOMOD_FIRE, node.id)]).tolist())
            checked.append(gaps == {expected})
        if len(checked) >= 5:
            break
    ok = bool(checked) and all(checked)
    verdict("AC7 auto-modulator periodicity", ok,
            f"{sum(checked)}/{len(checked)} nodes with >=3 power failures keep exact period")


def test_ac08_collisions_are_discarded(verdict):
    res = run(load_scenario("collision.json"), 1)
    m = res.metrics
    minutes = m.duration_min
    overlap_decodes = [e for e in res.trace.of_kind(EventKind.DECODE_COMPLETE) if "overlap" in e.detail]
    ok = (
        m.burst_overlaps >= minutes
        and m.table_updates_from_collisions == 0
        and not overlap_decodes
        and m.false_engages == 0
        and m.bursts_received > 0
    )
    verdict(
        "AC8 collision handling",
        ok,
        f"{m.burst_overlaps} overlaps in {minutes:g} min, {m.bursts_corrupted}/{m.bursts_received} "
        f"received bursts corrupted, table updates from overlaps={m.table_updates_from_collisions}, "
        f"false engages={m.false_engages}",
    )


@pytest.mark.parametrize("name", ["table3.json", "collision.json", "codec_bench.json"])
def test_ac09_determinism(name, tmp_path, monkeypatch, verdict):
    monkeypatch.chdir(tmp_path)
    outputs = []
    for rep in ("a", "b"):
        argv = ["run", "--scenario", name, "--seed", "13", "--quiet",
                "--trace", f"{rep}.csv", "--summary", f"{rep}.json"]
        assert main(argv) == 0
        outputs.append(((tmp_path / f"{rep}.csv").read_bytes(), (tmp_path / f"{rep}.json").read_bytes()))
    ok = outputs[0] == outputs[1]
    verdict(f"AC9 determinism [{name}]", ok,
            f"trace {len(outputs[0][0])} bytes and summary identical across reruns: {ok}")


def test_ac10_harvest_mean_oracle(verdict):
    params = HarvestParams(0.25, 0.22)
    rng = np.random.default_rng(10)
    draws = np.array([draw_increment(params, rng) for _ in range(10_000)])
    expected = rectified_normal_mean(params.tick_mean, params.tick_std)
    rel = abs(draws.mean() - expected) / expected
    verdict("AC10 harvest mean oracle", rel <= 0.02,
            f"empirical {draws.mean():.4f} vs closed form {expected:.4f} ({rel:.2%} <= 2%)")
