"""
Link-level machinery: Gray-labeled square QAM, additive channel models,
minimum-distance demapping, bit error rate and discrete mutual information.

Symbols are carried as ``(n, 2)`` float arrays of (I, Q) pairs and the SNR
always assumes unit average symbol energy, so the noise power is
``sigma^2 = 10^(-snr_db/10)``.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from app.exceptions import DimensionError, DomainError
from app.logger import get_logger

logger = get_logger(__name__)

SUPPORTED_ORDERS = (4, 16, 64)

# Rows per distance matrix in demap_nearest
DEMAP_CHUNK = 65536


class ChannelKind(str, Enum):
    """Additive channel families."""

    AWGN = "awgn"
    LAPLACIAN = "laplacian"
    HWI = "hwi"


def _gray_to_binary(g: np.ndarray) -> np.ndarray:
    b = g.copy()
    shift = g >> 1
    while np.any(shift):
        b ^= shift
        shift >>= 1
    return b


@dataclass(frozen=True)
class Constellation:
    """
    Square M-QAM constellation with unit average energy.

    Index ``k`` carries the label ``binary(k)`` (MSB first). The first half
    of the label Gray-selects the in-phase level and the second half the
    quadrature level, so grid neighbours differ in exactly one bit.
    """

    order: int
    points: np.ndarray
    labels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.points.shape != (self.order, 2):
            raise DimensionError(f"Expected ({self.order}, 2) points, got {self.points.shape}")
        if self.labels.shape != (self.order, self.bits_per_symbol):
            raise DimensionError(f"Labels must be ({self.order}, {self.bits_per_symbol})")

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.order)))

    @property
    def average_energy(self) -> float:
        return float(np.mean(np.sum(self.points ** 2, axis=1)))

    def min_distance(self) -> float:
        diff = self.points[:, None, :] - self.points[None, :, :]
        dist = np.sqrt(np.sum(diff ** 2, axis=2))
        return float(dist[~np.eye(self.order, dtype=bool)].min())


def build_qam(M: int) -> Constellation:
    """
    Build a Gray-labeled square QAM constellation.

    Raises:
        DomainError: If M is not 4, 16 or 64
    """
    if M not in SUPPORTED_ORDERS:
        raise DomainError(f"Unsupported QAM order {M}; expected one of {SUPPORTED_ORDERS}")

    bits = int(round(math.log2(M)))
    half = bits // 2
    side = 1 << half

    k = np.arange(M)
    labels = ((k[:, None] >> np.arange(bits - 1, -1, -1)[None, :]) & 1).astype(np.uint8)
    level_i = _gray_to_binary(k >> half)
    level_q = _gray_to_binary(k & (side - 1))

    raw = np.stack([2 * level_i - (side - 1), 2 * level_q - (side - 1)], axis=1).astype(np.float64)
    # E|s|^2 of the odd-integer grid is 2(M - 1)/3
    points = raw / math.sqrt(2.0 * (M - 1) / 3.0)
    return Constellation(order=M, points=points, labels=labels)


@dataclass(frozen=True)
class ChannelModel:
    """
    Additive channel at a given SNR.

    ``kappa`` is the aggregate hardware-impairment level used by the
    ``HWI`` kind: distortion power is ``kappa^2`` times the signal power.
    """

    kind: ChannelKind
    snr_db: float
    kappa: float = 0.0

    def __post_init__(self) -> None:
        if self.kappa < 0.0:
            raise DomainError(f"kappa must be non-negative, got {self.kappa}")
        object.__setattr__(self, "kind", ChannelKind(self.kind))

    @property
    def noise_power(self) -> float:
        return 10.0 ** (-self.snr_db / 10.0)

    @property
    def effective_noise_power(self) -> float:
        """Total perturbation power seen by a receiver (unit signal energy)."""
        if self.kind is ChannelKind.HWI:
            return self.noise_power + self.kappa ** 2
        return self.noise_power

    @property
    def effective_snr_db(self) -> float:
        return -10.0 * math.log10(self.effective_noise_power)


@dataclass(frozen=True)
class SymbolFrame:
    """Transmitted indices and symbols, plus received symbols once a channel ran."""

    tx_indices: np.ndarray
    tx_symbols: np.ndarray
    rx_symbols: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        n = self.tx_indices.shape[0]
        if self.tx_symbols.shape != (n, 2):
            raise DimensionError("tx_symbols must be (n, 2) matching tx_indices")
        if self.rx_symbols is not None and self.rx_symbols.shape != (n, 2):
            raise DimensionError("rx_symbols must be (n, 2) matching tx_indices")

    def __len__(self) -> int:
        return int(self.tx_indices.shape[0])


def random_bits(n_bits: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=n_bits, dtype=np.uint8)


def frame_from_indices(indices: np.ndarray, c: Constellation) -> SymbolFrame:
    indices = np.asarray(indices, dtype=np.int64)
    return SymbolFrame(tx_indices=indices, tx_symbols=c.points[indices])


def modulate(bits: np.ndarray, c: Constellation) -> SymbolFrame:
    """
    Map consecutive ``log2(M)``-bit groups to constellation indices and points.

    Raises:
        DomainError: If the bit count is not a multiple of log2(M)
    """
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = c.bits_per_symbol
    if bits.size % k:
        raise DomainError(f"{bits.size} bits is not a multiple of {k} bits per symbol")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise DomainError("Bits must be 0 or 1")
    weights = 1 << np.arange(k - 1, -1, -1)
    indices = bits.reshape(-1, k) @ weights
    return frame_from_indices(indices, c)


def apply_channel(
    frame: SymbolFrame,
    ch: ChannelModel,
    rng: np.random.Generator,
) -> SymbolFrame:
    """
    Pass a frame through the channel and fill ``rx_symbols``.

    AWGN draws complex Gaussian noise of total variance sigma^2. Laplacian
    draws i.i.d. Laplace noise per quadrature with scale ``sigma / 2``
    (same total variance). HWI first draws the AWGN, then an extra complex
    Gaussian distortion of variance ``kappa^2 * E|tx|^2``; with kappa = 0
    it matches AWGN for the same generator state.

    The transmit fields are carried over untouched.
    """
    tx = frame.tx_symbols
    sigma2 = ch.noise_power
    if ch.kind is ChannelKind.LAPLACIAN:
        noise = rng.laplace(0.0, math.sqrt(sigma2) / 2.0, size=tx.shape)
    else:
        noise = rng.normal(0.0, math.sqrt(sigma2 / 2.0), size=tx.shape)

    rx = tx + noise
    if ch.kind is ChannelKind.HWI and ch.kappa > 0.0 and len(frame):
        signal_power = float(np.mean(np.sum(tx ** 2, axis=1)))
        rx = rx + rng.normal(0.0, ch.kappa * math.sqrt(signal_power / 2.0), size=tx.shape)

    return replace(frame, rx_symbols=rx)


def demap_nearest(rx_symbols: np.ndarray, c: Constellation) -> Tuple[np.ndarray, np.ndarray]:
    """
    Minimum-Euclidean-distance decisions; ties go to the lowest index.

    Returns:
        Decided indices and the concatenated bit labels
    """
    rx = np.asarray(rx_symbols, dtype=np.float64).reshape(-1, 2)
    indices = np.empty(rx.shape[0], dtype=np.int64)
    for start in range(0, rx.shape[0], DEMAP_CHUNK):
        chunk = rx[start:start + DEMAP_CHUNK]
        dist = np.sum((chunk[:, None, :] - c.points[None, :, :]) ** 2, axis=2)
        indices[start:start + chunk.shape[0]] = np.argmin(dist, axis=1)
    return indices, c.labels[indices].reshape(-1)


def compute_ber(tx_bits: np.ndarray, rx_bits: np.ndarray) -> float:
    """
    Fraction of differing bits.

    Raises:
        DomainError: On empty or unequal-length streams
    """
    tx_bits = np.asarray(tx_bits).ravel()
    rx_bits = np.asarray(rx_bits).ravel()
    if tx_bits.size == 0 or tx_bits.size != rx_bits.size:
        raise DomainError(f"Bit streams must be equal length and non-empty ({tx_bits.size} vs {rx_bits.size})")
    return float(np.count_nonzero(tx_bits != rx_bits)) / tx_bits.size


def ber_confidence_interval(errors: int, n_bits: int, level: float = 0.95) -> Tuple[float, float]:
    """Exact (Clopper-Pearson) interval for a bit error rate."""
    if n_bits <= 0:
        raise DomainError("n_bits must be positive")
    ci = stats.binomtest(int(errors), int(n_bits)).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def joint_counts(tx_indices: np.ndarray, rx_indices: np.ndarray, M: int) -> np.ndarray:
    """M x M matrix of (transmitted, decided) index pair counts."""
    tx_indices = np.asarray(tx_indices, dtype=np.int64)
    rx_indices = np.asarray(rx_indices, dtype=np.int64)
    if tx_indices.shape != rx_indices.shape:
        raise DimensionError("tx and rx index arrays differ in length")
    return np.bincount(tx_indices * M + rx_indices, minlength=M * M).reshape(M, M)


def entropy_bits(probs: np.ndarray) -> float:
    p = np.asarray(probs, dtype=np.float64).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def mutual_information(joint: np.ndarray) -> float:
    """
    Plug-in mutual information (bits) of a joint count matrix.

    ``I = sum p(i,j) log2(p(i,j) / (p(i) p(j)))`` over nonzero cells, with
    probabilities taken from the normalized counts. No bias correction.

    Raises:
        DomainError: If the matrix is empty, negative or sums to zero
    """
    counts = np.asarray(joint, dtype=np.float64)
    if counts.ndim != 2 or counts.size == 0:
        raise DomainError("Joint counts must be a non-empty 2-D matrix")
    if np.any(counts < 0):
        raise DomainError("Joint counts must be non-negative")
    total = counts.sum()
    if total <= 0:
        raise DomainError("Joint counts sum to zero")

    p = counts / total
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log2(p[nz] / (px @ py)[nz])))
    return max(mi, 0.0)
