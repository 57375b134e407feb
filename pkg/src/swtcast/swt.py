"""Undecimated (a trous) stationary wavelet transform with periodic boundaries.

Analysis is causal: the level-``j`` coefficient at time ``t`` only depends on
samples ``t, t-1, ..., t - (taps-1)(2**j - 1)`` (indices taken modulo ``N``).
Synthesis is the adjoint of analysis averaged over the two shift branches,
which makes the transform a tight frame and gives exact reconstruction for
any length. Because synthesis looks *forward* in time, the sample at ``t`` is
rebuilt from coefficients at ``t .. t + reach(spec)``; see :func:`reach`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, LengthError, ShapeError

__all__ = [
    "WAVELETS",
    "WaveletSpec",
    "SubbandMatrix",
    "ConfigurationError",
    "LengthError",
    "DataError",
    "ShapeError",
    "base_filters",
    "make_filters",
    "decompose",
    "reconstruct",
    "reach",
    "write_subbands_csv",
    "read_subbands_csv",
]

# Daubechies scaling (low-pass) filters, reconstruction ordering.
WAVELETS: dict[str, tuple[float, ...]] = {
    "db1": (0.70710678118654752, 0.70710678118654752),
    "db2": (
        0.48296291314453414,
        0.83651630373780791,
        0.22414386804201338,
        -0.12940952255126038,
    ),
    "db3": (
        0.33267055295008262,
        0.80689150931109258,
        0.45987750211849157,
        -0.13501102001025459,
        -0.085441273882026662,
        0.035226291885709537,
    ),
    "db4": (
        0.2303778133088965,
        0.71484657055291565,
        0.63088076792985891,
        -0.027983769416859854,
        -0.18703481171909308,
        0.030841381835560764,
        0.0328830116668852,
        -0.010597401785069032,
    ),
}

MAX_LEVELS = 5


@dataclass(frozen=True)
class WaveletSpec:
    family: str = "db1"
    levels: int = 3

    def __post_init__(self):
        if self.family not in WAVELETS:
            raise ConfigurationError(
                f"unsupported wavelet family {self.family!r}; choose from {sorted(WAVELETS)}"
            )
        if not isinstance(self.levels, (int, np.integer)) or not 1 <= self.levels <= MAX_LEVELS:
            raise ConfigurationError(f"levels must be an integer in [1, {MAX_LEVELS}], got {self.levels!r}")

    @property
    def n_features(self) -> int:
        return 2 * self.levels

    @property
    def feature_names(self) -> list[str]:
        return [f"A{j}" for j in range(1, self.levels + 1)] + [
            f"D{j}" for j in range(1, self.levels + 1)
        ]


@dataclass
class SubbandMatrix:
    """All ``2L`` subbands of a signal, each as long as the signal.

    ``approximations[j-1]`` holds ``A_j`` and ``details[j-1]`` holds ``D_j``.
    Extra leading axes (for example a batch of windows) are allowed between
    the level axis and the time axis.
    """

    approximations: np.ndarray
    details: np.ndarray
    spec: WaveletSpec = field(default_factory=WaveletSpec)

    def __post_init__(self):
        self.approximations = np.asarray(self.approximations, dtype=np.float64)
        self.details = np.asarray(self.details, dtype=np.float64)
        if self.approximations.shape != self.details.shape:
            raise ShapeError(
                f"approximation shape {self.approximations.shape} != detail shape {self.details.shape}"
            )
        if self.approximations.shape[0] != self.spec.levels:
            raise ShapeError(
                f"expected {self.spec.levels} levels, got {self.approximations.shape[0]}"
            )

    @property
    def source_length(self) -> int:
        return self.approximations.shape[-1]

    def features(self) -> np.ndarray:
        """Per-time-step feature matrix ``(..., N, 2L)`` ordered A1..AL, D1..DL."""
        stacked = np.concatenate([self.approximations, self.details], axis=0)
        return np.moveaxis(stacked, 0, -1)

    @classmethod
    def from_features(cls, features: np.ndarray, spec: WaveletSpec) -> "SubbandMatrix":
        features = np.asarray(features, dtype=np.float64)
        if features.shape[-1] != spec.n_features:
            raise ShapeError(
                f"feature dimension {features.shape[-1]} does not match 2*levels={spec.n_features}"
            )
        stacked = np.moveaxis(features, -1, 0)
        return cls(stacked[: spec.levels], stacked[spec.levels :], spec)


def base_filters(family: str) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal Daubechies pair; high-pass is the quadrature mirror of low-pass."""
    if family not in WAVELETS:
        raise ConfigurationError(f"unsupported wavelet family {family!r}")
    low = np.array(WAVELETS[family], dtype=np.float64)
    taps = len(low)
    high = np.array([(-1) ** k * low[taps - 1 - k] for k in range(taps)])
    return low, high


def make_filters(spec: WaveletSpec, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Level-``level`` filters with ``2**(level-1) - 1`` zeros between taps."""
    if not 1 <= level <= spec.levels:
        raise ConfigurationError(f"level must be in [1, {spec.levels}], got {level}")
    low, high = base_filters(spec.family)
    step = 2 ** (level - 1)
    size = (len(low) - 1) * step + 1
    up_low = np.zeros(size)
    up_high = np.zeros(size)
    up_low[::step] = low
    up_high[::step] = high
    return up_low, up_high


def reach(spec: WaveletSpec) -> int:
    """Number of time steps spanned by the level-1..L filter cascade.

    A coefficient at ``t`` depends on samples back to ``t - reach``, and the
    reconstructed sample at ``t`` depends on coefficients up to ``t + reach``.
    """
    return (len(WAVELETS[spec.family]) - 1) * (2**spec.levels - 1)


def _analysis(signal: np.ndarray, taps: np.ndarray, step: int) -> np.ndarray:
    out = np.zeros_like(signal)
    for k, h in enumerate(taps):
        out += h * np.roll(signal, k * step, axis=-1)
    return out


def _synthesis(coeffs: np.ndarray, taps: np.ndarray, step: int) -> np.ndarray:
    out = np.zeros_like(coeffs)
    for k, h in enumerate(taps):
        out += h * np.roll(coeffs, -k * step, axis=-1)
    return out


def decompose(signal, spec: WaveletSpec | None = None) -> SubbandMatrix:
    """Stationary wavelet decomposition of ``signal`` along its last axis.

    Parameters
    ----------
    signal : array_like, shape (..., N)
        ``N`` must be a positive multiple of ``2**spec.levels``.
    spec : WaveletSpec
        Wavelet family and number of levels (db1, 3 levels by default).

    Returns
    -------
    SubbandMatrix
        ``A_1..A_L`` and ``D_1..D_L``, each of shape (..., N).
    """
    spec = spec or WaveletSpec()
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[-1]
    block = 2**spec.levels
    if n < block or n % block:
        raise LengthError(f"signal length {n} must be a positive multiple of 2**levels = {block}")
    if not np.all(np.isfinite(x)):
        bad = np.flatnonzero(~np.isfinite(x.reshape(-1)))
        raise DataError(f"signal contains {bad.size} non-finite values (first at flat index {bad[0]})")

    low, high = base_filters(spec.family)
    approximations, details = [], []
    current = x
    for j in range(1, spec.levels + 1):
        step = 2 ** (j - 1)
        details.append(_analysis(current, high, step))
        current = _analysis(current, low, step)
        approximations.append(current)
    return SubbandMatrix(np.stack(approximations), np.stack(details), spec)


def reconstruct(subbands: SubbandMatrix) -> np.ndarray:
    """Inverse transform using ``A_L`` and ``D_L..D_1``; ``A_1..A_{L-1}`` are ignored."""
    spec = subbands.spec
    approx = subbands.approximations
    details = subbands.details
    if approx.shape != details.shape or approx.shape[0] != spec.levels:
        raise ShapeError(f"inconsistent subband shapes {approx.shape} / {details.shape}")

    low, high = base_filters(spec.family)
    current = approx[-1]
    for j in range(spec.levels, 0, -1):
        step = 2 ** (j - 1)
        current = 0.5 * (_synthesis(current, low, step) + _synthesis(details[j - 1], high, step))
    return current


def write_subbands_csv(path, subbands: SubbandMatrix, index=None) -> None:
    """Write ``t,A1..AL,D1..DL`` rows; ``index`` defaults to 0..N-1."""
    feats = subbands.features()
    if feats.ndim != 2:
        raise ShapeError("only a single signal's subbands can be written as CSV")
    index = range(feats.shape[0]) if index is None else index
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", *subbands.spec.feature_names])
        for t, row in zip(index, feats):
            writer.writerow([t, *(repr(float(v)) for v in row)])


def read_subbands_csv(path, family: str = "db1") -> tuple[list[str], SubbandMatrix]:
    """Inverse of :func:`write_subbands_csv`; returns the ``t`` column and subbands."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[0] != "t" or (len(header) - 1) % 2:
        raise ShapeError(f"unexpected subband CSV header {header}")
    levels = (len(header) - 1) // 2
    spec = WaveletSpec(family, levels)
    if header[1:] != spec.feature_names:
        raise ShapeError(f"expected columns {spec.feature_names}, got {header[1:]}")
    index = [r[0] for r in rows]
    values = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    return index, SubbandMatrix.from_features(values.reshape(-1, 2 * levels), spec)
