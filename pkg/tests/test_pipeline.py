"""Simulation against its closed-form twin across a configuration grid."""
import math

import pytest

from qkdbench.hdbcsync import (
    ClockModel,
    DeBruijnIndex,
    HdbcConfig,
    debruijn_sequence,
    encode_beacon,
    match_beacon,
    recover_clock,
)
from qkdbench.photonsim import SimConfig, apply_clock_distortion, simulate_experiment
from qkdbench.qbermodel import SignalModel
from qkdbench.distill import analytic_point, gate_and_match, sift

IDENTITY = ClockModel(offset_ps=0.0, drift=0.0)

# (mu, channel+system+detector loss dB, background+dark Hz, gate ns, p_x)
GRID = [
    (0.1, 15.9, 5000.0, 1.0, 0.5),
    (0.1, 19.6, 5000.0, 1.0, 0.5),
    (0.1, 25.6, 5000.0, 1.0, 0.5),
    (0.1, 29.6, 5000.0, 1.0, 0.5),
    (0.1, 25.6, 20000.0, 1.0, 0.5),
    (0.1, 19.6, 50000.0, 1.0, 0.5),
    (0.3, 25.6, 5000.0, 1.0, 0.5),
    (1.0, 25.6, 5000.0, 1.0, 0.5),
    (0.1, 19.6, 5000.0, 0.4, 0.5),
    (0.1, 19.6, 5000.0, 3.0, 0.5),
    (0.5, 22.0, 30000.0, 0.7, 0.5),
    (0.1, 19.6, 5000.0, 1.0, 0.9),
    (0.8, 27.0, 10000.0, 2.0, 0.7),
]


@pytest.mark.parametrize("mu,loss,noise,gate,px", GRID)
def test_sifted_qber_matches_model(mu, loss, noise, gate, px):
    n_pulses = 2_000_000
    signal = SignalModel(mu=mu, pulse_fwhm_ns=0.9, rep_rate_hz=25e6,
                         noise_rate_hz=noise, total_loss_db=loss,
                         gate_width_ns=gate)
    config = SimConfig(n_pulses=n_pulses, signal=signal, basis_bias_px=px,
                       dark_rate_hz=min(2300.0, noise), seed=777)
    tx, detections = simulate_experiment(config)
    sifted = sift(gate_and_match(detections, tx, IDENTITY, gate, 25e6))
    predicted = analytic_point(signal, basis_bias_px=px).qber
    assert sifted.sifted_count > 100
    sigma = math.sqrt(predicted * (1.0 - predicted) / sifted.sifted_count)
    assert abs(sifted.measured_qber - predicted) < 3.0 * sigma, \
        f"measured {sifted.measured_qber:.4f} vs model {predicted:.4f}"


def test_gated_click_rates_match_model():
    signal = SignalModel(mu=0.1, noise_rate_hz=20000.0, total_loss_db=19.6,
                         gate_width_ns=1.0)
    config = SimConfig(n_pulses=4_000_000, signal=signal,
                       dark_rate_hz=2300.0, seed=31)
    tx, detections = simulate_experiment(config)
    sifted = sift(gate_and_match(detections, tx, IDENTITY, 1.0, 25e6))
    point = analytic_point(signal)
    for measured, expected in [(sifted.gated_signal_clicks,
                                point.signal_per_gate * config.n_pulses),
                               (sifted.gated_noise_clicks,
                                point.noise_per_gate * config.n_pulses)]:
        assert abs(measured - expected) < 3.0 * math.sqrt(expected)


def test_skr_columns_agree_for_well_populated_rows():
    # Simulated and analytic secure-rate columns agree within a 3-sigma
    # envelope propagated through the rate formula, for every sweep row
    # with at least a thousand sifted bits.
    from qkdbench import runner
    from qkdbench.distill import gllp_rate_single, multiphoton_click_prob

    doc = runner.load_presets()
    config, spec = runner.resolve_config(doc, "fig2",
                                         overrides=["sim.n_pulses=8000000"])
    spec = {"kind": "sweep", "axis": {"path": "loss.channel_db",
                                      "values": [6.3, 8.0, 10.0, 12.0, 14.0]}}
    header, rows = runner.run_sweep(config, spec)
    checked = 0
    for row in rows:
        if not row["sim_sifted_count"] or row["sim_sifted_count"] < 1000:
            continue
        checked += 1
        loss = row["loss_channel_db"] + 9.6
        signal = SignalModel(mu=0.1, noise_rate_hz=5000.0, total_loss_db=loss,
                             gate_width_ns=1.0)
        point = analytic_point(signal)
        n_pulses = 8_000_000
        gain = point.rates.raw_rate_per_pulse
        qber = point.qber
        n_sift = point.sifted_gain * n_pulses
        sigma_e = math.sqrt(qber * (1 - qber) / n_sift)
        rel_gain = 3.0 / math.sqrt(gain * n_pulses)
        p_multi = multiphoton_click_prob(
            0.1, signal.transmittance * signal.capture_fraction)
        corners = [
            gllp_rate_single(0.5, gain * g, min(max(qber + de, 0.0), 0.5), 0.1,
                             multiphoton_prob=p_multi)
            for g in (1 - rel_gain, 1 + rel_gain)
            for de in (-3 * sigma_e, 3 * sigma_e)
        ]
        assert min(corners) - 1e-12 <= row["sim_skr_per_pulse"] <= \
            max(corners) + 1e-12, f"row at {row['loss_channel_db']} dB"
    assert checked >= 5


def test_full_chain_with_beacon_clock_recovery():
    # Quantum stream distorted by a drifting receiver clock, recovered
    # via the coded beacon, then gated against the transmitter slots.
    n_pulses = 1_000_000  # 40 ms of quantum data
    drift, offset = 3.3e-5, 2.5e8
    signal = SignalModel(mu=0.1, noise_rate_hz=5000.0, total_loss_db=13.0,
                         gate_width_ns=1.0)
    config = SimConfig(n_pulses=n_pulses, signal=signal, dark_rate_hz=2300.0,
                       seed=919)
    tx, detections = simulate_experiment(config)
    distorted = detections.timestamp_ps
    distorted = apply_clock_distortion(distorted, drift, offset,
                                       jitter_ps=20.0, seed=5)
    detections.timestamp_ps = distorted

    sequence = debruijn_sequence(16, seed=1)
    index = DeBruijnIndex(sequence, 16)
    beacon_config = HdbcConfig()
    beacon_tx = encode_beacon(sequence[:4000], beacon_config)
    beacon_rx = apply_clock_distortion(beacon_tx, drift, offset,
                                       jitter_ps=20.0, seed=6)
    tx_match, rx_match = match_beacon(beacon_rx, beacon_config, index)
    clock = recover_clock(tx_match, rx_match)
    assert clock.drift == pytest.approx(drift, rel=1e-3)

    sifted = sift(gate_and_match(detections, tx, clock, 1.0, 25e6))
    predicted = analytic_point(signal).qber
    sigma = math.sqrt(predicted * (1 - predicted) / sifted.sifted_count)
    assert abs(sifted.measured_qber - predicted) < 3.0 * sigma
