"""Seeded Monte Carlo of the BB84 transmitter, channel and receiver.

Pulses carry Poisson-distributed photon numbers; each photon survives the
lossy channel independently, a surviving pulse fires exactly one of the
four polarization detectors (non-number-resolving), and background light
and dark counts arrive as uniform Poisson processes over the block.  All
randomness derives from a single seed through fixed-size blocks with
per-block child seeds, so output is bit-identical for any worker count or
block partitioning.
"""
from __future__ import annotations

import gzip
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .qbermodel import SignalModel, combine_error

BLOCK_PULSES = 1_000_000

# Detector channels and origin tags; index order is the wire encoding.
DETECTOR_NAMES = ("H", "V", "D", "A")
ORIGIN_NAMES = ("signal", "background", "dark")
BASIS_NAMES = ("Z", "X")

# RNG stream domains, so e.g. background draws do not shift when the
# signal configuration changes.
_DOMAIN_TX = 0
_DOMAIN_CHANNEL = 1
_DOMAIN_BACKGROUND = 2
_DOMAIN_DARK = 3
_DOMAIN_DISTORTION = 4


@dataclass(frozen=True)
class SimConfig:
    """Full configuration of one simulated acquisition block.

    signal.noise_rate_hz is the total noise click rate; dark_rate_hz of it
    is tagged as dark counts and the remainder as background light.
    intensity_schedule lists (mean photon number, send probability) pairs
    for decoy operation; the default is a single-intensity source.
    """

    n_pulses: int
    signal: SignalModel = field(default_factory=SignalModel)
    e_sp: float = 0.015
    e_pbs: float = 0.0
    e_a: float = 0.0
    basis_bias_px: float = 0.5
    intensity_schedule: tuple[tuple[float, float], ...] = ()
    dark_rate_hz: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_pulses < 1:
            raise ValueError("need at least one pulse")
        if not 0.0 < self.basis_bias_px < 1.0:
            raise ValueError("basis bias must be in (0, 1)")
        if not 0.0 <= self.dark_rate_hz <= self.signal.noise_rate_hz:
            raise ValueError("dark rate must be within the total noise rate")
        schedule = self.schedule
        if any(mu < 0 or p < 0 for mu, p in schedule):
            raise ValueError("intensities and probabilities must be >= 0")
        if abs(sum(p for _, p in schedule) - 1.0) > 1e-9:
            raise ValueError("intensity probabilities must sum to 1")

    @property
    def schedule(self) -> tuple[tuple[float, float], ...]:
        if self.intensity_schedule:
            return self.intensity_schedule
        return ((self.signal.mu, 1.0),)

    @property
    def period_ps(self) -> float:
        return 1e12 / self.signal.rep_rate_hz

    @property
    def duration_ps(self) -> float:
        return self.n_pulses * self.period_ps

    @property
    def flip_probability(self) -> float:
        """Wrong-detector probability for a matched-basis signal click."""
        return combine_error(combine_error(self.e_sp, self.e_pbs), self.e_a)


@dataclass
class TxStream:
    """Transmitter ground truth, one entry per pulse."""

    basis: np.ndarray          # uint8, 0 = Z, 1 = X
    bit: np.ndarray            # uint8
    intensity_class: np.ndarray  # uint8 index into the schedule

    @property
    def n_pulses(self) -> int:
        return self.basis.size


@dataclass
class DetectionSet:
    """Receiver clicks, sorted by timestamp."""

    timestamp_ps: np.ndarray   # float64
    detector: np.ndarray       # uint8, index into DETECTOR_NAMES
    origin: np.ndarray         # uint8, index into ORIGIN_NAMES

    def __len__(self) -> int:
        return self.timestamp_ps.size

    def sorted(self) -> "DetectionSet":
        order = np.lexsort((self.origin, self.detector, self.timestamp_ps))
        return DetectionSet(self.timestamp_ps[order], self.detector[order],
                            self.origin[order])


def _rng(seed: int, domain: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(domain, block)))


def _block_ranges(n_pulses: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + BLOCK_PULSES, n_pulses))
            for lo in range(0, n_pulses, BLOCK_PULSES)]


def generate_tx_stream(config: SimConfig) -> TxStream:
    """Per-pulse basis, bit and intensity class, reproducible from the seed."""
    schedule = config.schedule
    probs = np.array([p for _, p in schedule])
    basis = np.empty(config.n_pulses, dtype=np.uint8)
    bit = np.empty(config.n_pulses, dtype=np.uint8)
    cls = np.empty(config.n_pulses, dtype=np.uint8)
    for b, (lo, hi) in enumerate(_block_ranges(config.n_pulses)):
        rng = _rng(config.seed, _DOMAIN_TX, b)
        n = hi - lo
        basis[lo:hi] = rng.random(n) < config.basis_bias_px
        bit[lo:hi] = rng.integers(0, 2, n, dtype=np.uint8)
        if len(schedule) == 1:
            cls[lo:hi] = 0
        else:
            cls[lo:hi] = rng.choice(len(schedule), size=n, p=probs).astype(np.uint8)
    return TxStream(basis=basis, bit=bit, intensity_class=cls)


def _simulate_block(tx: TxStream, config: SimConfig, block: int,
                    lo: int, hi: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = hi - lo
    period = config.period_ps
    eta = config.signal.transmittance
    sigma_ps = config.signal.sigma_total_ns * 1e3
    mus = np.array([mu for mu, _ in config.schedule])

    rng = _rng(config.seed, _DOMAIN_CHANNEL, block)
    lam = mus[tx.intensity_class[lo:hi]]
    photons = rng.poisson(lam)
    survivors = rng.binomial(photons, eta)
    clicked = np.flatnonzero(survivors >= 1)
    k = clicked.size

    times = (lo + clicked) * period + rng.normal(0.0, sigma_ps, k)
    rx_basis = (rng.random(k) < config.basis_bias_px).astype(np.uint8)
    tx_basis = tx.basis[lo + clicked]
    tx_bit = tx.bit[lo + clicked]
    matched = rx_basis == tx_basis
    flips = rng.random(k) < config.flip_probability
    random_bits = rng.integers(0, 2, k, dtype=np.uint8)
    rx_bit = np.where(matched, tx_bit ^ flips.astype(np.uint8), random_bits)
    detector = (rx_basis << 1) | rx_bit

    parts_t = [times]
    parts_d = [detector.astype(np.uint8)]
    parts_o = [np.zeros(k, dtype=np.uint8)]

    block_t0 = lo * period
    block_t1 = hi * period
    duration_s = (hi - lo) * period * 1e-12
    background_rate = config.signal.noise_rate_hz - config.dark_rate_hz
    for domain, rate, origin in ((_DOMAIN_BACKGROUND, background_rate, 1),
                                 (_DOMAIN_DARK, config.dark_rate_hz, 2)):
        if rate <= 0:
            continue
        nrng = _rng(config.seed, domain, block)
        count = nrng.poisson(rate * duration_s)
        parts_t.append(nrng.uniform(block_t0, block_t1, count))
        parts_d.append(nrng.integers(0, 4, count, dtype=np.uint8))
        parts_o.append(np.full(count, origin, dtype=np.uint8))

    return (np.concatenate(parts_t), np.concatenate(parts_d),
            np.concatenate(parts_o))


def simulate_channel(tx: TxStream, config: SimConfig,
                     workers: int = 1) -> DetectionSet:
    """Propagate a transmitted stream through loss, noise and detection.

    Blocks are independent and identically seeded regardless of the worker
    count; the merged record set is sorted by timestamp.
    """
    if not math.isfinite(config.signal.total_loss_db) \
            and config.signal.total_loss_db < 0:
        raise ValueError("total loss must not be -inf")
    ranges = _block_ranges(config.n_pulses)
    jobs = [(b, lo, hi) for b, (lo, hi) in enumerate(ranges)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda j: _simulate_block(tx, config, *j), jobs))
    else:
        results = [_simulate_block(tx, config, *j) for j in jobs]
    times = np.concatenate([r[0] for r in results])
    det = np.concatenate([r[1] for r in results])
    origin = np.concatenate([r[2] for r in results])
    return DetectionSet(times, det, origin).sorted()


def simulate_experiment(config: SimConfig,
                        workers: int = 1) -> tuple[TxStream, DetectionSet]:
    """Generate a transmit stream and its detections in one call."""
    tx = generate_tx_stream(config)
    return tx, simulate_channel(tx, config, workers=workers)


def apply_clock_distortion(timestamps_ps: np.ndarray, drift: float,
                           offset_ps: float, jitter_ps: float,
                           seed: int = 0) -> np.ndarray:
    """Receiver-clock view of ideal timestamps:

    t' = offset + t * (1 + drift) + N(0, jitter).  Exercises the beacon
    recovery path; drift is a dimensionless rate error.
    """
    if abs(drift) > 100e-6:
        raise ValueError("drift outside the 100 ppm sanity bound")
    if jitter_ps < 0:
        raise ValueError("jitter must be >= 0")
    t = np.asarray(timestamps_ps, dtype=np.float64)
    out = offset_ps + t * (1.0 + drift)
    if jitter_ps > 0:
        rng = _rng(seed, _DOMAIN_DISTORTION, 0)
        out = out + rng.normal(0.0, jitter_ps, t.size)
    return out


def _open_text(path, mode: str):
    path = str(path)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t")
    return open(path, mode)


def write_detections(path, detections: DetectionSet) -> None:
    """Plain-text event dump: one `timestamp_ps, detector, origin` per line."""
    with _open_text(path, "w") as fh:
        fh.write("timestamp_ps,detector,origin\n")
        for t, d, o in zip(detections.timestamp_ps, detections.detector,
                           detections.origin):
            fh.write(f"{t:.3f},{DETECTOR_NAMES[d]},{ORIGIN_NAMES[o]}\n")


def read_detections(path) -> DetectionSet:
    det_code = {name: i for i, name in enumerate(DETECTOR_NAMES)}
    origin_code = {name: i for i, name in enumerate(ORIGIN_NAMES)}
    times, dets, origins = [], [], []
    with _open_text(path, "r") as fh:
        next(fh)
        for line in fh:
            t, d, o = line.strip().split(",")
            times.append(float(t))
            dets.append(det_code[d])
            origins.append(origin_code[o])
    return DetectionSet(np.array(times), np.array(dets, dtype=np.uint8),
                        np.array(origins, dtype=np.uint8))


def write_tx(path, tx: TxStream) -> None:
    """Transmitter truth dump: `index, basis, bit, class` per pulse."""
    with _open_text(path, "w") as fh:
        fh.write("index,basis,bit,class\n")
        for i in range(tx.n_pulses):
            fh.write(f"{i},{BASIS_NAMES[tx.basis[i]]},{tx.bit[i]},"
                     f"{tx.intensity_class[i]}\n")


def read_tx(path) -> TxStream:
    basis_code = {name: i for i, name in enumerate(BASIS_NAMES)}
    basis, bits, cls = [], [], []
    with _open_text(path, "r") as fh:
        next(fh)
        for line in fh:
            _, b, v, c = line.strip().split(",")
            basis.append(basis_code[b])
            bits.append(int(v))
            cls.append(int(c))
    return TxStream(np.array(basis, dtype=np.uint8),
                    np.array(bits, dtype=np.uint8),
                    np.array(cls, dtype=np.uint8))
