"""Closed-form error-rate model for a gated BB84 receiver.

Error contributions (source polarization, beam-splitter extinction,
atmospheric depolarization, background light, dark counts) combine through
the two-flip composition rule, and the noise part is driven by the
effective signal-to-noise ratio seen inside the gating window.  These
formulas are the analytic oracle the Monte Carlo simulation is validated
against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

# Gaussian FWHM = 2*sqrt(2*ln 2) * sigma
FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def _check_probability(name: str, value: float, upper: float = 1.0) -> None:
    if not 0.0 <= value <= upper:
        raise ValueError(f"{name} must be in [0, {upper}], got {value}")


def combine_error(e1: float, e2: float) -> float:
    """Compose two independent bit-flip probabilities.

    A bit is wrong after both operations iff exactly one of them flipped
    it, so the combined rate is e1 + e2 - 2*e1*e2.
    """
    _check_probability("e1", e1)
    _check_probability("e2", e2)
    return e1 + e2 - 2.0 * e1 * e2


def intrinsic_qber(e_sp: float, e_pbs: float) -> float:
    """Device-floor error rate from source polarization and PBS extinction."""
    _check_probability("e_sp", e_sp, 0.5)
    _check_probability("e_pbs", e_pbs, 0.5)
    return combine_error(e_sp, e_pbs)


def external_qber(e_a: float, e_n: float, e_dcr: float) -> float:
    """Channel/environment error rate: depolarization composed with noise.

    Background-light and dark-count errors are additive rates on the same
    detector bank, so they sum before composing with the atmospheric term.
    """
    _check_probability("e_a", e_a, 0.5)
    _check_probability("e_n", e_n, 0.5)
    _check_probability("e_dcr", e_dcr, 0.5)
    return combine_error(e_a, e_n + e_dcr)


def total_qber(e_i: float, e_e: float) -> float:
    """Total QBER from the intrinsic and external contributions."""
    _check_probability("e_i", e_i, 0.5)
    _check_probability("e_e", e_e, 0.5)
    return combine_error(e_i, e_e)


@dataclass(frozen=True)
class QberBreakdown:
    """All error components of one link configuration, plus the derived
    intrinsic (e_i), external (e_e) and total rates."""

    e_sp: float
    e_pbs: float
    e_a: float
    e_n: float
    e_dcr: float
    e_i: float
    e_e: float
    qber: float

    @classmethod
    def from_components(cls, e_sp: float, e_pbs: float, e_a: float,
                        e_n: float, e_dcr: float) -> "QberBreakdown":
        e_i = intrinsic_qber(e_sp, e_pbs)
        e_e = external_qber(e_a, e_n, e_dcr)
        return cls(e_sp=e_sp, e_pbs=e_pbs, e_a=e_a, e_n=e_n, e_dcr=e_dcr,
                   e_i=e_i, e_e=e_e, qber=total_qber(e_i, e_e))


def duty_cycle(gate_width_ns: float, rep_rate_hz: float) -> float:
    """Fraction of time the post-processing gate is open."""
    if gate_width_ns < 0 or rep_rate_hz <= 0:
        raise ValueError("gate width must be >= 0 and repetition rate > 0")
    d = gate_width_ns * 1e-9 * rep_rate_hz
    if d > 1.0 + 1e-12:
        raise ValueError(f"duty cycle {d:.4f} exceeds 1 (gate wider than pulse period)")
    return min(d, 1.0)


def combined_sigma_ns(pulse_fwhm_ns: float, timing_sigma_ns: float = 0.0) -> float:
    """Pulse width and synchronisation jitter added in quadrature."""
    if pulse_fwhm_ns <= 0:
        raise ValueError("pulse FWHM must be positive")
    if timing_sigma_ns < 0:
        raise ValueError("timing jitter must be >= 0")
    sigma_pulse = pulse_fwhm_ns / FWHM_TO_SIGMA
    return math.hypot(sigma_pulse, timing_sigma_ns)


def gate_capture_fraction(pulse_fwhm_ns: float, gate_width_ns: float,
                          timing_sigma_ns: float = 0.0) -> float:
    """Probability that a detected photon falls inside the gate.

    The arrival-time distribution is a zero-centred Gaussian whose width
    combines the optical pulse and the synchronisation jitter; integrating
    it over [-G/2, +G/2] gives erf(G / (2*sqrt(2)*sigma)).
    """
    sigma = combined_sigma_ns(pulse_fwhm_ns, timing_sigma_ns)
    if gate_width_ns < 0:
        raise ValueError("gate width must be >= 0")
    if gate_width_ns == 0:
        return 0.0
    if math.isinf(gate_width_ns):
        return 1.0
    return math.erf(gate_width_ns / (2.0 * math.sqrt(2.0) * sigma))


@dataclass(frozen=True)
class SignalModel:
    """Source, channel and gating parameters of one link configuration.

    noise_rate_hz is the total registered noise click rate over all four
    detectors (background light plus dark counts).
    """

    mu: float = 0.1
    pulse_fwhm_ns: float = 0.9
    rep_rate_hz: float = 25e6
    noise_rate_hz: float = 5000.0
    total_loss_db: float = 17.4
    gate_width_ns: float = 1.0
    timing_jitter_ns: float = 0.0

    def __post_init__(self) -> None:
        if self.mu <= 0:
            raise ValueError("mean photon number must be positive")
        if self.gate_width_ns <= 0:
            raise ValueError("gate width must be positive")
        if self.noise_rate_hz < 0:
            raise ValueError("noise rate must be >= 0")
        duty_cycle(self.gate_width_ns, self.rep_rate_hz)  # raises when > 1

    @property
    def transmittance(self) -> float:
        return 10.0 ** (-self.total_loss_db / 10.0)

    @property
    def sigma_total_ns(self) -> float:
        return combined_sigma_ns(self.pulse_fwhm_ns, self.timing_jitter_ns)

    @property
    def capture_fraction(self) -> float:
        return gate_capture_fraction(self.pulse_fwhm_ns, self.gate_width_ns,
                                     self.timing_jitter_ns)

    @property
    def signal_per_gate(self) -> float:
        """Expected signal clicks per pulse inside the gate (small-mu regime)."""
        return self.mu * self.transmittance * self.capture_fraction

    @property
    def noise_per_gate(self) -> float:
        """Expected noise clicks per gate."""
        return self.noise_rate_hz * self.gate_width_ns * 1e-9


def esnr(model: SignalModel) -> float:
    """Effective signal-to-noise ratio: in-gate signal over in-gate noise.

    Returns math.inf for a noiseless configuration.
    """
    n = model.noise_per_gate
    if n == 0.0:
        return math.inf
    return model.signal_per_gate / n


def qber_from_esnr(esnr_value: float, e_intrinsic: float,
                   noise_error_fraction: float = 0.5) -> float:
    """Map an ESNR to the expected QBER.

    The in-gate noise fraction is 1/(ESNR+1); an unpolarized noise click
    lands in the wrong detector of the sifted basis half the time, hence
    the default error fraction of 0.5.  Setting noise_error_fraction=1.0
    reproduces the raw noise-fraction reading instead.
    """
    if esnr_value < 0:
        raise ValueError("ESNR must be >= 0")
    _check_probability("e_intrinsic", e_intrinsic, 0.5)
    _check_probability("noise_error_fraction", noise_error_fraction)
    if math.isinf(esnr_value):
        return e_intrinsic
    noise_error = noise_error_fraction / (esnr_value + 1.0)
    return combine_error(e_intrinsic, noise_error)
