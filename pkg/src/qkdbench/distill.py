"""Post-processing: gating, sifting, reconciliation and key-rate math.

Receiver clicks are matched to pulse slots inside a gating window, sifted
on basis agreement, error-corrected with cascade, and turned into an
asymptotic secure-key rate (single-intensity with multiphoton tagging, or
vacuum+weak decoy bounds).  A closed-form twin of the whole pipeline
predicts every measured quantity so simulation and model can be compared
point by point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hdbcsync import ClockModel, correct_timestamps
from .photonsim import DetectionSet, SimConfig, TxStream
from .qbermodel import SignalModel, combine_error


@dataclass
class MatchedPairs:
    """Gated detections resolved to one (pulse, click) pair per slot."""

    pulse_index: np.ndarray
    alice_basis: np.ndarray
    alice_bit: np.ndarray
    bob_basis: np.ndarray
    bob_bit: np.ndarray
    origin: np.ndarray
    gated_signal_clicks: int
    gated_noise_clicks: int

    def __len__(self) -> int:
        return self.pulse_index.size


@dataclass
class SiftedBlock:
    """Matched-basis key material plus bookkeeping for one run."""

    alice_bits: np.ndarray
    bob_bits: np.ndarray
    sifted_count: int
    measured_qber: float
    gated_signal_clicks: int
    gated_noise_clicks: int

    @property
    def empty(self) -> bool:
        return self.sifted_count == 0


@dataclass(frozen=True)
class KeyRateResult:
    raw_rate_per_pulse: float
    sifted_rate_per_pulse: float
    secure_rate_per_pulse: float
    skr_bps: float
    leakage_bits: float
    nskr: float


@dataclass(frozen=True)
class DecoyEstimate:
    """Single-photon bounds from a vacuum + weak decoy measurement."""

    y1_lower: float
    e1_upper: float
    q1_lower: float
    feasible: bool = True


@dataclass(frozen=True)
class IntensityStats:
    """Measured gain and error rate of one intensity class."""

    mu: float
    probability: float
    gain: float
    qber: float


def gate_and_match(detections: DetectionSet, tx: TxStream, clock: ClockModel,
                   gate_width_ns: float, rep_rate_hz: float) -> MatchedPairs:
    """Assign clock-corrected clicks to pulse slots and keep in-gate ones.

    Each click goes to the nearest slot and is kept iff it lies within
    half a gate width of the slot centre.  Slots hit on two detectors
    with conflicting bit values are discarded (squashing); agreeing
    multi-clicks collapse to the earliest click.
    """
    period_ps = 1e12 / rep_rate_hz
    half_gate_ps = gate_width_ns * 1e3 / 2.0
    t = correct_timestamps(clock, detections.timestamp_ps)
    slot = np.rint(t / period_ps).astype(np.int64)
    frac = t - slot * period_ps
    keep = (np.abs(frac) <= half_gate_ps) & (slot >= 0) & (slot < tx.n_pulses)

    slot = slot[keep]
    det = detections.detector[keep]
    origin = detections.origin[keep]
    tk = t[keep]
    gated_signal = int(np.count_nonzero(origin == 0))
    gated_noise = int(origin.size - gated_signal)

    order = np.lexsort((tk, slot))
    slot, det, origin = slot[order], det[order], origin[order]

    first = np.ones(slot.size, dtype=bool)
    first[1:] = slot[1:] != slot[:-1]
    starts = np.flatnonzero(first)
    counts = np.diff(np.append(starts, slot.size))

    bob_bit = (det & 1).astype(np.uint8)
    keep_group = np.ones(starts.size, dtype=bool)
    for g in np.flatnonzero(counts > 1):  # multi-click slots are rare
        lo = starts[g]
        vals = bob_bit[lo:lo + counts[g]]
        if np.any(vals != vals[0]):
            keep_group[g] = False

    sel = starts[keep_group]
    pulse = slot[sel]
    return MatchedPairs(
        pulse_index=pulse,
        alice_basis=tx.basis[pulse],
        alice_bit=tx.bit[pulse],
        bob_basis=(det[sel] >> 1).astype(np.uint8),
        bob_bit=bob_bit[sel],
        origin=origin[sel],
        gated_signal_clicks=gated_signal,
        gated_noise_clicks=gated_noise,
    )


def sift(matched: MatchedPairs) -> SiftedBlock:
    """Keep matched-basis events; the error rate is the mismatch fraction."""
    same = matched.alice_basis == matched.bob_basis
    a = matched.alice_bit[same]
    b = matched.bob_bit[same]
    n = int(a.size)
    qber = float(np.mean(a != b)) if n else float("nan")
    return SiftedBlock(alice_bits=a, bob_bits=b, sifted_count=n,
                       measured_qber=qber,
                       gated_signal_clicks=matched.gated_signal_clicks,
                       gated_noise_clicks=matched.gated_noise_clicks)


def binary_entropy(p: float) -> float:
    """Shannon entropy of a binary variable, H2(0) = H2(1) = 0."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


@dataclass
class CascadeResult:
    corrected_key: np.ndarray
    leakage_bits: int
    converged: bool


def cascade_reconcile(alice_bits: np.ndarray, bob_bits: np.ndarray,
                      qber_estimate: float, seed: int = 0,
                      n_passes: int = 4, max_passes: int = 10) -> CascadeResult:
    """Interactive parity reconciliation of Bob's key against Alice's.

    Standard cascade: the first pass uses consecutive blocks of about
    0.73/QBER bits, later passes shuffle and double the block size.  An
    odd-parity block is bisected down to one error; fixing a bit flips
    the parity of its blocks in every other pass, which are re-searched
    until no odd block remains (back-propagation).  Extra shuffled passes
    run until one full pass finds no mismatch.  The result is flagged
    failed when no clean pass happens within the pass budget, or when the
    disclosed parity volume reaches the key length (an uncorrectable
    block: nothing secret can remain).  Every disclosed parity counts one
    bit of leakage.
    """
    alice = np.ascontiguousarray(alice_bits, dtype=np.uint8)
    bob = np.array(bob_bits, dtype=np.uint8)
    if alice.size != bob.size:
        raise ValueError("key lengths differ")
    n = alice.size
    if n == 0:
        return CascadeResult(bob, 0, True)
    if not 0.0 < qber_estimate <= 0.15:
        raise ValueError("QBER estimate must be in (0, 0.15]")
    rng = np.random.default_rng(seed)
    diff = alice ^ bob  # parity mismatches live entirely in this array

    block0 = max(2, min(n, int(round(0.73 / max(qber_estimate, 1e-4)))))
    leakage = 0
    perms: list[np.ndarray] = []
    positions: list[np.ndarray] = []  # inverse permutations
    sizes: list[int] = []

    def parity_mismatch(p: int, lo: int, hi: int) -> bool:
        return bool(np.bitwise_xor.reduce(diff[perms[p][lo:hi]]) & 1)

    def bisect(p: int, lo: int, hi: int) -> int:
        nonlocal leakage
        while hi - lo > 1:
            mid = (lo + hi) // 2
            leakage += 1  # parity of the left half disclosed
            if np.bitwise_xor.reduce(diff[perms[p][lo:mid]]) & 1:
                hi = mid
            else:
                lo = mid
        return int(perms[p][lo])

    def fix_errors(queue: list[tuple[int, int, int]]) -> None:
        while queue:
            p, lo, hi = queue.pop()
            if not parity_mismatch(p, lo, hi):
                continue
            idx = bisect(p, lo, hi)
            diff[idx] ^= 1
            bob[idx] ^= 1
            for p2 in range(len(perms)):  # re-check this bit everywhere
                if p2 == p:
                    continue
                pos = int(positions[p2][idx])
                lo2 = (pos // sizes[p2]) * sizes[p2]
                queue.append((p2, lo2, min(lo2 + sizes[p2], n)))

    def run_pass(p: int) -> int:
        nonlocal leakage
        odd = []
        size = sizes[p]
        for lo in range(0, n, size):
            leakage += 1  # top-level block parity
            if parity_mismatch(p, lo, min(lo + size, n)):
                odd.append((p, lo, min(lo + size, n)))
        found = len(odd)
        fix_errors(odd)  # consumes the list
        return found

    converged = False
    corrections_seen = False
    for p in range(max_passes):
        if p == 0:
            perm = np.arange(n)
            size = block0
        else:
            perm = rng.permutation(n)
            size = min(n, block0 << min(p, 16))
        perms.append(perm)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        positions.append(inv)
        sizes.append(size)
        mismatches = run_pass(p)
        corrections_seen = corrections_seen or mismatches > 0
        if mismatches == 0 and (not corrections_seen or p >= n_passes - 1):
            # A clean pass over already-clean keys ends the protocol at
            # once; after corrections we insist on the full pass schedule
            # plus one clean confirmation pass.
            converged = True
            break
    if leakage >= n:
        converged = False
    return CascadeResult(corrected_key=bob, leakage_bits=leakage,
                         converged=converged)


def multiphoton_click_prob(mu: float, eta_effective: float) -> float:
    """Probability per pulse that a click originates from a multiphoton
    emission, for a Poisson source thinned by the calibrated channel."""
    if mu <= 0 or not 0.0 <= eta_effective <= 1.0:
        raise ValueError("need mu > 0 and transmittance in [0, 1]")
    return (1.0 - math.exp(-mu * eta_effective)) \
        - mu * math.exp(-mu) * eta_effective


def gllp_rate_single(q_sift: float, gain: float, qber: float, mu: float,
                     f_ec: float = 1.2,
                     multiphoton_prob: float | None = None) -> float:
    """Asymptotic secure rate per pulse for a single-intensity source.

    The untagged fraction is Omega = (gain - p_multi)/gain, where p_multi
    defaults to the all-multiphoton-emissions worst case 1-(1+mu)e^-mu.
    Pass the channel-estimated multiphoton click probability to use the
    calibrated-channel estimate instead.  The rate is clamped at zero.
    """
    if gain <= 0:
        return 0.0
    if not 0.0 <= qber <= 0.5:
        raise ValueError("QBER must be in [0, 0.5]")
    if f_ec < 1.0:
        raise ValueError("error-correction inefficiency must be >= 1")
    p_multi = multiphoton_prob
    if p_multi is None:
        p_multi = 1.0 - (1.0 + mu) * math.exp(-mu)
    omega = max(0.0, (gain - p_multi) / gain)
    if omega <= 0.0:
        return 0.0
    e1 = min(qber / omega, 0.5)
    rate = q_sift * gain * (omega * (1.0 - binary_entropy(e1))
                            - f_ec * binary_entropy(qber))
    return max(0.0, rate)


def decoy_bounds(stats: list[IntensityStats]) -> DecoyEstimate:
    """Vacuum + weak decoy bounds on the single-photon yield and error.

    Expects three intensities mu1 > mu2 > mu3 = 0.  The vacuum gain gives
    the background yield Y0 directly; the (mu1, mu2) pair bounds Y1 from
    below and e1 from above.  An infeasible (negative) yield bound comes
    back as y1_lower = 0 with feasible=False.
    """
    if len(stats) != 3:
        raise ValueError("need exactly three intensity classes")
    s = sorted(stats, key=lambda x: -x.mu)
    mu1, mu2, mu3 = s[0].mu, s[1].mu, s[2].mu
    if mu3 != 0.0:
        raise ValueError("weakest intensity must be vacuum (mu = 0)")
    if mu1 <= mu2 or mu2 <= 0.0:
        raise ValueError("intensities must satisfy mu1 > mu2 > 0")

    y0 = s[2].gain
    q1g, q2g = s[0].gain, s[1].gain
    denominator = mu1 * mu2 - mu2 * mu2
    numerator = (q2g * math.exp(mu2)
                 - (mu2 ** 2 / mu1 ** 2) * q1g * math.exp(mu1)
                 - ((mu1 ** 2 - mu2 ** 2) / mu1 ** 2) * y0)
    y1 = (mu1 / denominator) * numerator
    if y1 <= 0.0:
        return DecoyEstimate(y1_lower=0.0, e1_upper=0.5, q1_lower=0.0,
                             feasible=False)
    y1 = min(y1, 1.0)
    # Error gain of the weak decoy bounds the single-photon error rate.
    e1 = (s[1].qber * q2g * math.exp(mu2) - 0.5 * y0) / (y1 * mu2)
    e1 = min(max(e1, 0.0), 0.5)
    return DecoyEstimate(y1_lower=y1, e1_upper=e1,
                         q1_lower=y1 * mu1 * math.exp(-mu1), feasible=True)


def decoy_rate(estimate: DecoyEstimate, signal: IntensityStats,
               q_sift: float, f_ec: float = 1.2) -> float:
    """Asymptotic decoy-state secure rate per pulse at the signal intensity."""
    if not estimate.feasible:
        return 0.0
    rate = q_sift * (estimate.q1_lower * (1.0 - binary_entropy(estimate.e1_upper))
                     - f_ec * signal.gain * binary_entropy(signal.qber))
    return max(0.0, rate)


def mission_projection(skr_curve: list[tuple[float, float]], shift_right_db: float,
                       shift_up_db: float) -> list[tuple[float, float]]:
    """Translate a (loss_db, skr) curve for projected link-budget gains:

    losses move right by shift_right_db, rates scale by 10^(shift_up/10).
    """
    factor = 10.0 ** (shift_up_db / 10.0)
    return [(loss + shift_right_db, skr * factor) for loss, skr in skr_curve]


def gain_db(old_value: float, new_value: float, kind: str) -> float:
    """Improvement of a parameter in dB.

    Rates and mean photon numbers compare as 10*log10(new/old); losses
    are already in dB and compare as old - new.
    """
    if kind in ("rate", "mu"):
        if old_value <= 0 or new_value <= 0:
            raise ValueError("rate/mu values must be positive")
        return 10.0 * math.log10(new_value / old_value)
    if kind == "loss":
        return old_value - new_value
    raise ValueError(f"unknown gain kind {kind!r}")


def toeplitz_hash(bits: np.ndarray, out_len: int, seed: int = 0) -> np.ndarray:
    """Toeplitz-matrix universal hash producing out_len key bits.

    Demonstration-grade privacy amplification; rate accounting elsewhere
    decides out_len.
    """
    bits = np.asarray(bits, dtype=np.uint8)
    if out_len < 0 or out_len > bits.size:
        raise ValueError("output length must be in [0, input length]")
    if out_len == 0:
        return np.zeros(0, dtype=np.uint8)
    rng = np.random.default_rng(seed)
    diag = rng.integers(0, 2, bits.size + out_len - 1, dtype=np.uint8)
    out = np.empty(out_len, dtype=np.uint8)
    for i in range(out_len):
        row = diag[i:i + bits.size][::-1]
        out[i] = np.bitwise_xor.reduce(row & bits)
    return out


def decoy_stats(matched: MatchedPairs, tx: TxStream,
                config: SimConfig) -> list[IntensityStats]:
    """Measured per-intensity gain and QBER of a decoy-scheduled run.

    Gains count every matched (gated) click against the pulses sent at
    that intensity; QBERs come from the sifted subset.
    """
    classes = tx.intensity_class[matched.pulse_index]
    same = matched.alice_basis == matched.bob_basis
    errors = same & (matched.alice_bit != matched.bob_bit)
    stats = []
    for k, (mu, p_k) in enumerate(config.schedule):
        in_class = classes == k
        n_sent = config.n_pulses * p_k
        gain = float(np.count_nonzero(in_class)) / n_sent if n_sent else 0.0
        n_sift = int(np.count_nonzero(in_class & same))
        qber = (float(np.count_nonzero(in_class & errors)) / n_sift
                if n_sift else 0.0)
        stats.append(IntensityStats(mu=mu, probability=p_k, gain=gain,
                                    qber=qber))
    return stats


# ---------------------------------------------------------------------------
# Closed-form twin of the measurement pipeline.

@dataclass(frozen=True)
class AnalyticPoint:
    """Model prediction for one link configuration."""

    signal_per_gate: float
    noise_per_gate: float
    esnr: float
    qber: float
    sifted_gain: float
    rates: KeyRateResult


def basis_match_probability(basis_bias_px: float) -> float:
    """Probability that transmitter and receiver choose the same basis."""
    px = basis_bias_px
    return px * px + (1.0 - px) * (1.0 - px)


def analytic_point(signal: SignalModel, e_sp: float = 0.015, e_pbs: float = 0.0,
                   e_a: float = 0.0, basis_bias_px: float = 0.5,
                   f_ec: float = 1.2, noise_error_fraction: float = 0.5,
                   mu_override: float | None = None) -> AnalyticPoint:
    """Predict gains, QBER and secure rate for one configuration.

    Signal clicks sift at the basis-match probability while unpolarized
    noise clicks sift at 1/2, so the sifted error rate is the two-flip
    composition of the device floor with the sifted noise fraction.  The
    secure rate uses the calibrated-channel multiphoton estimate.
    """
    mu = signal.mu if mu_override is None else mu_override
    s_gate = mu * signal.transmittance * signal.capture_fraction
    n_gate = signal.noise_per_gate
    q_match = basis_match_probability(basis_bias_px)
    s_sift = s_gate * q_match
    n_sift = n_gate * 0.5

    e_floor = combine_error(combine_error(e_sp, e_pbs), e_a)
    raw_gain = s_gate + n_gate
    sifted_gain = s_sift + n_sift
    esnr_value = math.inf if n_gate == 0 else s_gate / n_gate
    if sifted_gain > 0:
        noise_fraction = n_sift / sifted_gain
        qber = combine_error(e_floor, noise_error_fraction * noise_fraction)
    else:
        qber = e_floor

    eta_eff = signal.transmittance * signal.capture_fraction
    p_multi = multiphoton_click_prob(mu, eta_eff)
    q_eff = sifted_gain / raw_gain if raw_gain > 0 else 0.0
    secure = gllp_rate_single(q_eff, raw_gain, qber, mu, f_ec=f_ec,
                              multiphoton_prob=p_multi)
    rates = KeyRateResult(
        raw_rate_per_pulse=raw_gain,
        sifted_rate_per_pulse=sifted_gain,
        secure_rate_per_pulse=secure,
        skr_bps=secure * signal.rep_rate_hz,
        leakage_bits=f_ec * binary_entropy(qber) * sifted_gain,
        nskr=secure / sifted_gain if sifted_gain > 0 else 0.0,
    )
    return AnalyticPoint(signal_per_gate=s_gate, noise_per_gate=n_gate,
                         esnr=esnr_value, qber=qber, sifted_gain=sifted_gain,
                         rates=rates)


def measured_key_rates(sifted: SiftedBlock, config: SimConfig,
                       f_ec: float = 1.2, run_cascade: bool = True,
                       cascade_seed: int = 0,
                       min_cascade_bits: int = 256) -> tuple[KeyRateResult, CascadeResult | None]:
    """Key-rate accounting for a simulated run.

    The secure rate applies the same formula as the analytic twin to the
    measured gain and QBER.  Cascade runs on the sifted block (when large
    and clean enough to converge) to report actual leakage; the rate
    itself stays on the f_ec * H2 accounting so that model and simulation
    stay directly comparable.
    """
    n_pulses = config.n_pulses
    raw_gain = (sifted.gated_signal_clicks + sifted.gated_noise_clicks) / n_pulses
    sifted_gain = sifted.sifted_count / n_pulses
    qber = sifted.measured_qber if sifted.sifted_count else 0.0

    signal = config.signal
    eta_eff = signal.transmittance * signal.capture_fraction
    p_multi = multiphoton_click_prob(signal.mu, eta_eff)
    q_eff = sifted_gain / raw_gain if raw_gain > 0 else 0.0
    secure = 0.0
    if sifted.sifted_count and qber <= 0.5:
        secure = gllp_rate_single(q_eff, raw_gain, qber, signal.mu, f_ec=f_ec,
                                  multiphoton_prob=p_multi)

    cascade = None
    leakage = f_ec * binary_entropy(min(qber, 0.5)) * sifted.sifted_count
    if run_cascade and sifted.sifted_count >= min_cascade_bits \
            and 0.0 < qber <= 0.12:
        cascade = cascade_reconcile(sifted.alice_bits, sifted.bob_bits,
                                    qber, seed=cascade_seed)
        if cascade.converged:
            leakage = cascade.leakage_bits

    rates = KeyRateResult(
        raw_rate_per_pulse=raw_gain,
        sifted_rate_per_pulse=sifted_gain,
        secure_rate_per_pulse=secure,
        skr_bps=secure * signal.rep_rate_hz,
        leakage_bits=leakage,
        nskr=secure / sifted_gain if sifted_gain > 0 else 0.0,
    )
    return rates, cascade
