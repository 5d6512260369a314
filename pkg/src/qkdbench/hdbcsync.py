"""Beacon timing layer: de Bruijn coded pulse train and clock recovery.

The beacon emits one bright pulse per period; the bit carried by each
period is encoded in the pulse position (nominal phase for 0, a fixed
fraction of the period later for 1).  Because the bit stream is a binary
de Bruijn sequence, any k consecutive decoded bits identify the absolute
period index, which survives heavy pulse loss.  Matched transmit/receive
pulse pairs then give the receiver clock offset and rate error by least
squares, and the recovered model is applied to the quantum timestamps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ERASED = -1  # marker for an undecodable / missing bit in a window


class DecodeError(Exception):
    """Base class for beacon decoding failures."""


class AmbiguousWindowError(DecodeError):
    """The observed window matches more than one sequence position."""


class NoMatchError(DecodeError):
    """The observed window matches no position (corrupted bits)."""


@dataclass(frozen=True)
class HdbcConfig:
    order_k: int = 16
    beacon_rate_hz: float = 100e3
    ppm_offset_fraction: float = 0.25

    def __post_init__(self) -> None:
        if not 2 <= self.order_k <= 24:
            raise ValueError("de Bruijn order must be in [2, 24]")
        if self.beacon_rate_hz <= 0:
            raise ValueError("beacon rate must be positive")
        if not 0.0 < self.ppm_offset_fraction < 1.0:
            raise ValueError("pulse-position offset fraction must be in (0, 1)")

    @property
    def period_ps(self) -> float:
        return 1e12 / self.beacon_rate_hz

    @property
    def offset_ps(self) -> float:
        return self.ppm_offset_fraction * self.period_ps


@dataclass(frozen=True)
class ClockModel:
    """Affine clock relation rx ~ offset + (1 + drift) * tx."""

    offset_ps: float
    drift: float
    residual_rms_ps: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.drift) >= 1e-3:
            raise ValueError("drift outside the 1e-3 sanity bound")
        if self.residual_rms_ps < 0:
            raise ValueError("residual RMS must be >= 0")


def debruijn_sequence(order_k: int, seed: int | None = None) -> np.ndarray:
    """Binary de Bruijn sequence of the given order (length 2**k).

    Every k-bit cyclic window occurs exactly once.  Without a seed this is
    the classic Lyndon-word concatenation; with one it is a random
    Eulerian cycle of the de Bruijn graph.  The Lyndon sequence is highly
    self-similar (long near-repeated stretches), which makes windows with
    erasures match several placements far too often, so beacon use wants
    a seeded sequence.
    """
    if not 2 <= order_k <= 24:
        raise ValueError("de Bruijn order must be in [2, 24]")
    k = order_k
    if seed is not None:
        return _random_debruijn(k, seed)
    a = [0] * (k + 1)
    out: list[int] = []

    def extend(t: int, p: int) -> None:
        if t > k:
            if k % p == 0:
                out.extend(a[1:p + 1])
        else:
            a[t] = a[t - p]
            extend(t + 1, p)
            for j in range(a[t - p] + 1, 2):
                a[t] = j
                extend(t + 1, t)

    extend(1, 1)
    return np.array(out, dtype=np.uint8)


def _random_debruijn(k: int, seed: int) -> np.ndarray:
    """Random Eulerian cycle over (k-1)-bit states (Hierholzer)."""
    rng = np.random.default_rng(seed)
    n_states = 1 << (k - 1)
    mask = n_states - 1
    unused = [[0, 1] if rng.random() < 0.5 else [1, 0]
              for _ in range(n_states)]
    stack = [0]
    trail: list[int] = []
    while stack:
        v = stack[-1]
        if unused[v]:
            bit = unused[v].pop()
            stack.append(((v << 1) | bit) & mask)
        else:
            trail.append(stack.pop())
    trail.reverse()
    bits = [trail[i + 1] & 1 for i in range(len(trail) - 1)]
    return np.array(bits, dtype=np.uint8)


class DeBruijnIndex:
    """Precomputed window-to-index lookup for one de Bruijn sequence."""

    def __init__(self, sequence: np.ndarray, order_k: int) -> None:
        sequence = np.asarray(sequence, dtype=np.uint8)
        if sequence.size != 1 << order_k:
            raise ValueError("sequence length does not match 2**order_k")
        self.sequence = sequence
        self.order_k = order_k
        ext = np.concatenate([sequence, sequence[:order_k - 1]]).astype(np.int64)
        # Pack each k-window into an integer key.
        powers = 1 << np.arange(order_k - 1, -1, -1, dtype=np.int64)
        keys = np.convolve(ext, powers[::-1], mode="valid")[:sequence.size]
        self._lookup = {int(key): i for i, key in enumerate(keys)}

    def index_of(self, window: np.ndarray) -> int | None:
        """Index for a clean (erasure-free) k-bit window, else None."""
        if window.size != self.order_k or np.any(window < 0):
            return None
        key = 0
        for b in window:
            key = (key << 1) | int(b)
        return self._lookup.get(key)


def encode_beacon(bits: np.ndarray, config: HdbcConfig) -> np.ndarray:
    """Pulse timestamps (ps) for a bit stream, one pulse per period.

    Bit 0 sits at the nominal period phase, bit 1 is delayed by the
    pulse-position offset.
    """
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size == 0:
        raise ValueError("bit sequence must be nonempty")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    periods = np.arange(bits.size, dtype=np.float64)
    return periods * config.period_ps + bits * config.offset_ps


def decode_bits(timestamps_ps: np.ndarray,
                config: HdbcConfig) -> tuple[np.ndarray, np.ndarray]:
    """Recover (period_index, bit) pairs from received beacon pulses.

    Differential decoding: the spacing between consecutive pulses is some
    whole number of periods plus the pulse-position difference of the two
    bits, so slow clock drift and the unknown absolute offset cancel.
    Pulses whose position falls outside the guard band (half the offset)
    around both nominal phases yield erasures.  Period indices are
    relative to the first received pulse; missing periods simply do not
    appear.

    Returns (periods, bits) with bits[i] in {0, 1} or ERASED.
    """
    t = np.asarray(timestamps_ps, dtype=np.float64)
    if t.size < 2:
        raise ValueError("need at least two beacon pulses to decode")
    period = config.period_ps
    offset_frac = config.ppm_offset_fraction
    guard = offset_frac / 2.0

    diffs = np.diff(t) / period
    n_periods = np.rint(diffs).astype(np.int64)
    if np.any(n_periods < 1):
        raise ValueError("beacon pulses closer than one period")
    frac = diffs - n_periods  # bit(i+1) - bit(i), in period units

    periods = np.concatenate([[0], np.cumsum(n_periods)])
    # Classify each spacing as a bit difference of -1, 0 or +1 (nearest
    # nominal value within the guard band, else erased).
    delta = np.full(frac.size, ERASED, dtype=np.int64)
    for value in (-1, 0, 1):
        sel = np.abs(frac - value * offset_frac) <= guard
        delta[sel & (delta == ERASED)] = value

    # Every +-1 spacing pins both of its endpoint bits absolutely; equal
    # spacings then propagate those anchors across runs of repeated bits.
    bits = np.full(t.size, ERASED, dtype=np.int64)
    up = delta == 1
    down = delta == -1
    bits[:-1][up] = 0
    bits[1:][up] = 1
    bits[:-1][down] = 1
    bits[1:][down] = 0
    if not (up.any() or down.any()):
        # Constant pulse train: undecidable between all-zeros and all-ones.
        raise AmbiguousWindowError("no pulse-position transitions observed")
    for i in range(delta.size):  # forward through delta == 0 runs
        if delta[i] == 0 and bits[i + 1] == ERASED and bits[i] != ERASED:
            bits[i + 1] = bits[i]
    for i in range(delta.size - 1, -1, -1):  # backward
        if delta[i] == 0 and bits[i] == ERASED and bits[i + 1] != ERASED:
            bits[i] = bits[i + 1]
    return periods, bits


def window_from_decoded(periods: np.ndarray, bits: np.ndarray) -> np.ndarray:
    """Dense bit window over the covered period range, ERASED where no
    pulse was decoded."""
    periods = np.asarray(periods, dtype=np.int64)
    bits = np.asarray(bits, dtype=np.int64)
    window = np.full(int(periods[-1]) + 1, ERASED, dtype=np.int64)
    window[periods] = bits
    return window


def decode_index(window: np.ndarray,
                 sequence: np.ndarray | DeBruijnIndex) -> int:
    """Absolute start index of an observed bit window in the cyclic sequence.

    The window may contain ERASED entries; they match anything.  Raises
    AmbiguousWindowError when several placements fit (always the case for
    fewer than k known bits) and NoMatchError when none does.
    """
    if isinstance(sequence, DeBruijnIndex):
        index = sequence
        seq = index.sequence
    else:
        seq = np.asarray(sequence, dtype=np.uint8)
        order_k = int(round(math.log2(seq.size)))
        index = DeBruijnIndex(seq, order_k)
    k = index.order_k
    window = np.asarray(window, dtype=np.int64)
    known = window >= 0

    # Fast path: any erasure-free k-bit run pins the index uniquely.
    if window.size >= k:
        run = 0
        for i, ok in enumerate(known):
            run = run + 1 if ok else 0
            if run == k:
                start = i - k + 1
                cand = index.index_of(window[start:start + k])
                if cand is None:
                    raise NoMatchError("k-bit window not present in sequence")
                pos = (cand - start) % seq.size
                if _window_matches(seq, window, pos):
                    return pos
                raise NoMatchError("window inconsistent with the sequence")

    # Erasure-heavy case: scan every cyclic placement.
    n = seq.size
    ext = np.concatenate([seq, seq[:window.size - 1]]).astype(np.int64) \
        if window.size > 1 else seq.astype(np.int64)
    mask = np.ones(n, dtype=bool)
    for j in np.flatnonzero(known):
        mask &= ext[j:j + n] == window[j]
        if not mask.any():
            raise NoMatchError("window matches no sequence position")
    hits = np.flatnonzero(mask)
    if hits.size > 1:
        raise AmbiguousWindowError(f"{hits.size} candidate positions")
    return int(hits[0])


def _window_matches(seq: np.ndarray, window: np.ndarray, pos: int) -> bool:
    idx = (pos + np.arange(window.size)) % seq.size
    known = window >= 0
    return bool(np.all(seq[idx[known]] == window[known]))


def recover_clock(tx_beacon_times_ps: np.ndarray,
                  rx_beacon_times_ps: np.ndarray) -> ClockModel:
    """Least-squares fit of rx = offset + (1 + drift) * tx.

    Inputs are matched pulse pairs.  The fit is centred before solving to
    keep full double precision on picosecond residuals over second-scale
    spans.
    """
    tx = np.asarray(tx_beacon_times_ps, dtype=np.float64)
    rx = np.asarray(rx_beacon_times_ps, dtype=np.float64)
    if tx.size != rx.size:
        raise ValueError("matched pair arrays must have equal length")
    if tx.size < 2:
        raise ValueError("need at least two matched pairs")
    tx_mean = tx.mean()
    rx_mean = rx.mean()
    dt = tx - tx_mean
    var = float(np.dot(dt, dt))
    if var == 0.0:
        raise ValueError("degenerate fit: all tx times identical")
    slope = float(np.dot(dt, rx - rx_mean)) / var
    offset = rx_mean - slope * tx_mean
    residuals = rx - (offset + slope * tx)
    rms = float(np.sqrt(np.mean(residuals ** 2)))
    return ClockModel(offset_ps=offset, drift=slope - 1.0, residual_rms_ps=rms)


def correct_timestamps(model: ClockModel, timestamps_ps: np.ndarray) -> np.ndarray:
    """Map receiver timestamps back to the transmitter timebase,

    the exact algebraic inverse of t -> offset + (1 + drift) * t.
    t is order-preserving for any physical |drift| < 1.
    """
    t = np.asarray(timestamps_ps, dtype=np.float64)
    return (t - model.offset_ps) / (1.0 + model.drift)


def write_beacon(path, timestamps_ps: np.ndarray) -> None:
    """Beacon timestamps in the shared event-dump format, detector `B`."""
    with open(path, "w") as fh:
        fh.write("timestamp_ps,detector,origin\n")
        for t in np.asarray(timestamps_ps, dtype=np.float64):
            fh.write(f"{t:.3f},B,beacon\n")


def read_beacon(path) -> np.ndarray:
    times = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            t, detector, _ = line.strip().split(",")
            if detector != "B":
                raise ValueError(f"not a beacon record: {line.strip()!r}")
            times.append(float(t))
    return np.array(times, dtype=np.float64)


def match_beacon(rx_times_ps: np.ndarray, config: HdbcConfig,
                 sequence: np.ndarray | DeBruijnIndex) -> tuple[np.ndarray, np.ndarray]:
    """Decode a received beacon train and pair it with transmitter truth.

    Returns (tx_times, rx_times) for every received pulse whose bit was
    decodable, with tx times reconstructed from the absolute sequence
    index (so they include each bit's pulse-position offset).
    """
    rx = np.asarray(rx_times_ps, dtype=np.float64)
    periods, bits = decode_bits(rx, config)
    window = window_from_decoded(periods, bits)
    start = decode_index(window, sequence)
    good = bits >= 0
    abs_periods = start + periods[good]
    tx = abs_periods * config.period_ps + bits[good] * config.offset_ps
    return tx, rx[good]
