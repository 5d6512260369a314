import math

import numpy as np
import pytest

from qkdbench.hdbcsync import ClockModel
from qkdbench.photonsim import SimConfig, simulate_experiment
from qkdbench.qbermodel import SignalModel, gate_capture_fraction
from qkdbench.distill import (
    IntensityStats,
    analytic_point,
    basis_match_probability,
    binary_entropy,
    cascade_reconcile,
    decoy_bounds,
    decoy_rate,
    decoy_stats,
    gain_db,
    gate_and_match,
    gllp_rate_single,
    measured_key_rates,
    mission_projection,
    multiphoton_click_prob,
    sift,
    toeplitz_hash,
)

IDENTITY_CLOCK = ClockModel(offset_ps=0.0, drift=0.0)


def run_sim(**kwargs):
    signal_kwargs = dict(mu=0.1, pulse_fwhm_ns=0.9, rep_rate_hz=25e6,
                         noise_rate_hz=0.0, total_loss_db=10.0,
                         gate_width_ns=1.0)
    for key in list(kwargs):
        if key in signal_kwargs:
            signal_kwargs[key] = kwargs.pop(key)
    cfg = SimConfig(n_pulses=kwargs.pop("n_pulses", 200_000),
                    signal=SignalModel(**signal_kwargs),
                    **kwargs)
    tx, det = simulate_experiment(cfg)
    return cfg, tx, det


class TestGateAndMatch:
    def test_full_period_gate_keeps_every_signal_click(self):
        cfg, tx, det = run_sim(gate_width_ns=40.0, e_sp=0.0)
        matched = gate_and_match(det, tx, IDENTITY_CLOCK, 40.0, 25e6)
        assert len(matched) == len(det)

    def test_kept_fraction_matches_capture_model(self):
        cfg, tx, det = run_sim(gate_width_ns=0.9, n_pulses=400_000)
        matched = gate_and_match(det, tx, IDENTITY_CLOCK, 0.9, 25e6)
        expected = gate_capture_fraction(0.9, 0.9)
        frac = matched.gated_signal_clicks / len(det)
        sigma = math.sqrt(expected * (1 - expected) / len(det))
        assert abs(frac - expected) < 3 * sigma

    def test_noise_kept_fraction_equals_duty_cycle(self):
        cfg, tx, det = run_sim(total_loss_db=math.inf, noise_rate_hz=200_000.0,
                               n_pulses=500_000)
        matched = gate_and_match(det, tx, IDENTITY_CLOCK, 1.0, 25e6)
        duty = 1.0e-9 * 25e6
        n = len(det)
        frac = matched.gated_noise_clicks / n
        assert abs(frac - duty) < 3 * math.sqrt(duty * (1 - duty) / n)

    def test_conflicting_double_clicks_dropped(self):
        from qkdbench.photonsim import DetectionSet, TxStream
        tx = TxStream(basis=np.zeros(4, dtype=np.uint8),
                      bit=np.zeros(4, dtype=np.uint8),
                      intensity_class=np.zeros(4, dtype=np.uint8))
        period = 40_000.0
        # slot 1: H and V (conflict); slot 2: two H clicks (agree).
        det = DetectionSet(
            timestamp_ps=np.array([period, period + 5.0, 2 * period,
                                   2 * period + 3.0]),
            detector=np.array([0, 1, 0, 0], dtype=np.uint8),
            origin=np.zeros(4, dtype=np.uint8))
        matched = gate_and_match(det, tx, IDENTITY_CLOCK, 40.0, 25e6)
        assert matched.pulse_index.tolist() == [2]
        assert matched.bob_bit.tolist() == [0]


class TestSift:
    def test_symmetric_basis_fraction(self):
        cfg, tx, det = run_sim(n_pulses=400_000)
        sifted = sift(gate_and_match(det, tx, IDENTITY_CLOCK, 1.0, 25e6))
        kept = sifted.sifted_count
        total = sifted.gated_signal_clicks
        sigma = math.sqrt(0.25 / total)
        assert abs(kept / total - 0.5) < 3 * sigma

    def test_asymmetric_basis_fraction(self):
        cfg, tx, det = run_sim(n_pulses=400_000, basis_bias_px=0.9)
        sifted = sift(gate_and_match(det, tx, IDENTITY_CLOCK, 1.0, 25e6))
        expected = basis_match_probability(0.9)
        assert expected == pytest.approx(0.82)
        frac = sifted.sifted_count / sifted.gated_signal_clicks
        sigma = math.sqrt(expected * (1 - expected) / sifted.gated_signal_clicks)
        assert abs(frac - expected) < 3 * sigma

    def test_noiseless_clean_run_has_zero_qber(self):
        cfg, tx, det = run_sim(e_sp=0.0, e_pbs=0.0, e_a=0.0)
        sifted = sift(gate_and_match(det, tx, IDENTITY_CLOCK, 1.0, 25e6))
        assert sifted.measured_qber == 0.0


class TestBinaryEntropy:
    def test_half(self):
        assert binary_entropy(0.5) == 1.0

    def test_endpoints(self):
        assert binary_entropy(0.0) == 0.0
        assert binary_entropy(1.0) == 0.0

    def test_value_at_011(self):
        assert binary_entropy(0.11) == pytest.approx(0.4999158, abs=1e-6)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            binary_entropy(1.2)


class TestCascade:
    def test_identical_inputs_leak_one_pass_only(self):
        rng = np.random.default_rng(0)
        key = rng.integers(0, 2, 10_000, dtype=np.uint8)
        result = cascade_reconcile(key, key.copy(), qber_estimate=0.02, seed=1)
        assert result.converged
        assert np.array_equal(result.corrected_key, key)
        block = max(2, int(round(0.73 / 0.02)))
        assert result.leakage_bits == math.ceil(10_000 / block)

    @pytest.mark.parametrize("qber", [0.01, 0.02, 0.05])
    def test_seeded_trials_correct_and_efficient(self, qber):
        rng = np.random.default_rng(42)
        n = 10_000
        leaks = []
        for trial in range(40):
            alice = rng.integers(0, 2, n, dtype=np.uint8)
            flips = (rng.random(n) < qber).astype(np.uint8)
            result = cascade_reconcile(alice, alice ^ flips, qber,
                                       seed=trial)
            assert result.converged
            assert np.array_equal(result.corrected_key, alice)
            leaks.append(result.leakage_bits)
        assert np.mean(leaks) <= 1.25 * binary_entropy(qber) * n

    def test_hopeless_error_rate_flagged(self):
        # Half the bits flipped: uncorrectable, must come back flagged.
        rng = np.random.default_rng(3)
        alice = rng.integers(0, 2, 4096, dtype=np.uint8)
        bob = alice ^ (rng.random(4096) < 0.5).astype(np.uint8)
        result = cascade_reconcile(alice, bob, qber_estimate=0.15, seed=0)
        assert not result.converged

    def test_estimate_out_of_range(self):
        key = np.zeros(64, dtype=np.uint8)
        with pytest.raises(ValueError):
            cascade_reconcile(key, key, qber_estimate=0.0)
        with pytest.raises(ValueError):
            cascade_reconcile(key, key, qber_estimate=0.5)


class TestGllpRate:
    def test_perfect_channel(self):
        # Zero error and unit untagged fraction: rate = q * gain.
        rate = gllp_rate_single(0.5, 0.01, 0.0, mu=0.1, multiphoton_prob=0.0)
        assert rate == pytest.approx(0.5 * 0.01)

    def test_all_multiphoton_worst_case(self):
        # Gain below the worst-case multiphoton probability: no key.
        assert gllp_rate_single(0.5, 1e-4, 0.01, mu=0.1) == 0.0

    def test_default_worst_case_tagging(self):
        p_multi = 1.0 - 1.1 * math.exp(-0.1)
        gain = 3 * p_multi
        expected_omega = (gain - p_multi) / gain
        rate = gllp_rate_single(1.0, gain, 0.0, mu=0.1)
        assert rate == pytest.approx(gain * expected_omega)

    def test_positive_at_reference_total_loss(self):
        # End-to-end analytic pipeline at 17.4 dB total loss.
        signal = SignalModel(mu=0.1, pulse_fwhm_ns=0.9, rep_rate_hz=25e6,
                             noise_rate_hz=5000.0, total_loss_db=17.4,
                             gate_width_ns=1.0)
        point = analytic_point(signal, f_ec=1.2)
        assert point.rates.secure_rate_per_pulse > 0.0
        assert point.rates.skr_bps > 0.0

    def test_monotone_in_qber(self):
        rates = [gllp_rate_single(0.5, 1e-3, e, mu=0.1, multiphoton_prob=1e-4)
                 for e in np.linspace(0.0, 0.12, 25)]
        assert all(b <= a + 1e-15 for a, b in zip(rates, rates[1:]))
        assert rates[-1] == 0.0  # clamped region reached

    def test_monotone_in_loss_through_gain(self):
        points = [analytic_point(SignalModel(mu=0.1, noise_rate_hz=2700.0,
                                             total_loss_db=db))
                  for db in np.linspace(10.0, 45.0, 36)]
        rates = [p.rates.secure_rate_per_pulse for p in points]
        assert all(b <= a + 1e-18 for a, b in zip(rates, rates[1:]))


class TestDecoy:
    @staticmethod
    def analytic_channel_stats(eta, mu1=0.5, mu2=0.05, probs=(0.72, 0.18, 0.10)):
        # Channel with known yields Y_n = 1 - (1 - eta)^n and no noise.
        def gain(mu):
            return sum(math.exp(-mu) * mu ** n / math.factorial(n)
                       * (1.0 - (1.0 - eta) ** n) for n in range(80))
        return [IntensityStats(mu=mu1, probability=probs[0], gain=gain(mu1), qber=0.0),
                IntensityStats(mu=mu2, probability=probs[1], gain=gain(mu2), qber=0.0),
                IntensityStats(mu=0.0, probability=probs[2], gain=0.0, qber=0.0)]

    def test_yield_bound_tight_on_analytic_channel(self):
        for eta in (0.001, 0.01, 0.05, 0.1):
            est = decoy_bounds(self.analytic_channel_stats(eta))
            assert est.feasible
            assert est.y1_lower <= eta
            assert (eta - est.y1_lower) / eta < 0.02
            assert est.q1_lower == pytest.approx(
                est.y1_lower * 0.5 * math.exp(-0.5), rel=1e-12)

    def test_equal_intensities_rejected(self):
        stats = [IntensityStats(0.5, 0.4, 1e-3, 0.0),
                 IntensityStats(0.5, 0.4, 1e-3, 0.0),
                 IntensityStats(0.0, 0.2, 1e-6, 0.0)]
        with pytest.raises(ValueError):
            decoy_bounds(stats)

    def test_vacuum_required(self):
        stats = [IntensityStats(0.5, 0.4, 1e-3, 0.0),
                 IntensityStats(0.1, 0.4, 1e-4, 0.0),
                 IntensityStats(0.01, 0.2, 1e-5, 0.0)]
        with pytest.raises(ValueError):
            decoy_bounds(stats)

    def test_infeasible_bound_zero_rate(self):
        # A huge vacuum gain forces the yield bound negative.
        stats = [IntensityStats(0.5, 0.4, 1e-4, 0.01),
                 IntensityStats(0.05, 0.4, 1e-4, 0.01),
                 IntensityStats(0.0, 0.2, 5e-2, 0.5)]
        est = decoy_bounds(stats)
        assert not est.feasible
        assert est.y1_lower == 0.0
        assert decoy_rate(est, stats[0], q_sift=0.82) == 0.0

    def test_vacuum_yield_matches_noise_floor_in_simulation(self):
        cfg, tx, det = run_sim(
            n_pulses=2_000_000, total_loss_db=13.0, noise_rate_hz=100_000.0,
            dark_rate_hz=40_000.0, basis_bias_px=0.9,
            intensity_schedule=((0.5, 0.72), (0.08, 0.18), (0.0, 0.10)))
        matched = gate_and_match(det, tx, IDENTITY_CLOCK, 1.0, 25e6)
        stats = decoy_stats(matched, tx, cfg)
        vacuum = [s for s in stats if s.mu == 0.0][0]
        expected = cfg.signal.noise_per_gate  # noise clicks per gate
        n_vacuum = cfg.n_pulses * vacuum.probability
        sigma = math.sqrt(expected / n_vacuum)
        assert abs(vacuum.gain - expected) < 3 * sigma


class TestProjection:
    def test_identity(self):
        curve = [(10.0, 1e4), (20.0, 1e3)]
        assert mission_projection(curve, 0.0, 0.0) == curve

    def test_zero_rate_loss_shift(self):
        curve = [(37.7, 0.0)]
        out = mission_projection(curve, 9.3, 12.0)
        assert out[0][0] == pytest.approx(47.0)
        assert out[0][1] == 0.0

    def test_vertical_scale(self):
        out = mission_projection([(10.0, 100.0)], 0.0, 12.0)
        assert out[0][1] == pytest.approx(100.0 * 10 ** 1.2)
        assert 10 ** 1.2 == pytest.approx(15.85, abs=0.01)


class TestGainDb:
    def test_repetition_rate(self):
        assert gain_db(25e6, 400e6, "rate") == pytest.approx(12.04, abs=0.005)

    def test_mean_photon_number(self):
        assert gain_db(0.1, 0.3744, "mu") == pytest.approx(5.73, abs=0.005)

    def test_system_loss(self):
        assert gain_db(7.4, 3.8, "loss") == pytest.approx(3.6, abs=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            gain_db(1.0, 2.0, "volume")


class TestToeplitz:
    def test_deterministic_and_length(self):
        bits = np.random.default_rng(0).integers(0, 2, 256, dtype=np.uint8)
        a = toeplitz_hash(bits, 64, seed=9)
        b = toeplitz_hash(bits, 64, seed=9)
        assert a.size == 64
        assert np.array_equal(a, b)

    def test_linear_over_xor(self):
        rng = np.random.default_rng(1)
        x = rng.integers(0, 2, 128, dtype=np.uint8)
        y = rng.integers(0, 2, 128, dtype=np.uint8)
        hx = toeplitz_hash(x, 32, seed=2)
        hy = toeplitz_hash(y, 32, seed=2)
        hxy = toeplitz_hash(x ^ y, 32, seed=2)
        assert np.array_equal(hx ^ hy, hxy)


class TestMeasuredRates:
    def test_rate_fields_consistent(self):
        cfg, tx, det = run_sim(n_pulses=2_000_000, noise_rate_hz=5000.0,
                               total_loss_db=13.0, dark_rate_hz=2300.0)
        sifted = sift(gate_and_match(det, tx, IDENTITY_CLOCK, 1.0, 25e6))
        rates, cascade = measured_key_rates(sifted, cfg, cascade_seed=3)
        assert rates.secure_rate_per_pulse <= rates.sifted_rate_per_pulse
        assert rates.sifted_rate_per_pulse <= rates.raw_rate_per_pulse
        assert rates.skr_bps == pytest.approx(
            rates.secure_rate_per_pulse * 25e6)
        assert cascade is not None and cascade.converged
        assert np.array_equal(cascade.corrected_key, sifted.alice_bits)

    def test_multiphoton_estimate(self):
        # Poisson arithmetic: P(click and n >= 2) for a thinned source.
        mu, eta = 0.2, 0.01
        exact = sum(math.exp(-mu) * mu ** n / math.factorial(n)
                    * (1 - (1 - eta) ** n) for n in range(2, 60))
        assert multiphoton_click_prob(mu, eta) == pytest.approx(exact, rel=1e-9)
