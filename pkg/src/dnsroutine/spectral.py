"""Time-binned query counts, their power spectrum, and training-set scaling."""
from __future__ import annotations

import cmath
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset, InputWindow
from .errors import ArgumentError


@dataclass(frozen=True)
class AggregationConfig:
    """``bin_count`` bins of ``bin_seconds`` each; defaults to a week of hours."""

    bin_seconds: int = 3600
    bin_count: int = 168

    def __post_init__(self):
        if self.bin_seconds < 1:
            raise ArgumentError("bin_seconds must be >= 1")
        if self.bin_count < 2:
            raise ArgumentError("bin_count must be >= 2")

    @property
    def bin_ms(self) -> int:
        return self.bin_seconds * 1000

    @property
    def window_ms(self) -> int:
        return self.bin_count * self.bin_ms

    @property
    def psd_length(self) -> int:
        return psd_length(self.bin_count)


def psd_length(n: int) -> int:
    """Number of spectrum entries kept for ``n`` bins: ``floor((n - 1) / 2)``."""
    return (n - 1) // 2


@dataclass(frozen=True, eq=False)
class AggregatedSeries:
    device: str
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or len(counts) < 2:
            raise ArgumentError("series needs at least two bins")
        if (counts < 0).any():
            raise ArgumentError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    def __len__(self) -> int:
        return len(self.counts)


@dataclass(frozen=True, eq=False)
class PsdVector:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if (values < 0).any():
            raise ArgumentError("PSD entries must be non-negative")
        if self.normalized and (values > 1).any():
            raise ArgumentError("normalized PSD entries must lie in [0, 1]")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class NormalizationScale:
    """Per-frequency maximum over the training set (zero columns stored as 1.0)."""

    per_frequency_max: np.ndarray

    def __post_init__(self):
        scale = np.asarray(self.per_frequency_max, dtype=float)
        if scale.ndim != 1 or not (scale > 0).all() or not np.isfinite(scale).all():
            raise ArgumentError("scale entries must be finite and positive")
        object.__setattr__(self, "per_frequency_max", scale)

    def __len__(self) -> int:
        return len(self.per_frequency_max)


def aggregate(win: InputWindow, cfg: AggregationConfig) -> AggregatedSeries:
    """Count the window's queries per bin."""
    if win.end - win.start != cfg.window_ms:
        raise ArgumentError(f"window spans {win.end - win.start} ms, expected "
                            f"{cfg.bin_count} x {cfg.bin_seconds} s = {cfg.window_ms} ms")
    bins = (np.asarray(win.times, dtype=np.int64) - win.start) // cfg.bin_ms
    return AggregatedSeries(win.device, np.bincount(bins, minlength=cfg.bin_count).astype(np.int64))


def aggregate_dataset(ds: Dataset, cfg: AggregationConfig, start: int) -> np.ndarray:
    """Count matrix of shape (devices, bins) over ``[start, start + window)``.

    Rows follow ``ds.device_names``; queries outside the window are ignored.
    """
    n_dev = len(ds.device_names)
    rel = ds.times - start
    inside = (rel >= 0) & (rel < cfg.window_ms)
    flat = ds.device_codes[inside].astype(np.int64) * cfg.bin_count + rel[inside] // cfg.bin_ms
    return np.bincount(flat, minlength=n_dev * cfg.bin_count).reshape(n_dev, cfg.bin_count)


def dft_coefficient(series: AggregatedSeries, k: int) -> complex:
    """``sum_n t_n * exp(-2 pi i k n / N)`` by direct summation."""
    counts = series.counts
    n_bins = len(counts)
    if not 0 <= k < n_bins:
        raise ArgumentError(f"k={k} outside [0, {n_bins - 1}]")
    return sum(float(t) * cmath.exp(-2j * cmath.pi * k * n / n_bins) for n, t in enumerate(counts))


def power_spectrum(counts: np.ndarray) -> np.ndarray:
    """Row-wise ``|DFT_k|**2`` for every ``k < N``."""
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    spectrum = np.fft.fft(counts, axis=1)
    return spectrum.real ** 2 + spectrum.imag ** 2


def psd_matrix(counts: np.ndarray) -> np.ndarray:
    """Row-wise ``|DFT_k|**2`` for ``k < floor((N - 1) / 2)``.

    Real input has a conjugate-symmetric spectrum, so the half spectrum
    from ``rfft`` carries the same values as :func:`power_spectrum`'s prefix.
    """
    counts = np.atleast_2d(np.asarray(counts, dtype=float))
    spectrum = np.fft.rfft(counts, axis=1)[:, :psd_length(counts.shape[1])]
    return spectrum.real ** 2 + spectrum.imag ** 2


def psd(series: AggregatedSeries) -> PsdVector:
    return PsdVector(psd_matrix(series.counts)[0], normalized=False)


def _as_matrix(psds) -> np.ndarray:
    if isinstance(psds, np.ndarray):
        return np.atleast_2d(psds)
    rows = [p.values if isinstance(p, PsdVector) else np.asarray(p, dtype=float) for p in psds]
    if not rows:
        raise ArgumentError("need at least one training PSD")
    if len({len(r) for r in rows}) != 1:
        raise ArgumentError("training PSDs differ in length")
    return np.vstack(rows)


def fit_normalization(training_psds: Iterable[PsdVector] | np.ndarray) -> NormalizationScale:
    """Column-wise maximum of the training PSDs."""
    matrix = _as_matrix(training_psds)
    if matrix.shape[0] == 0:
        raise ArgumentError("need at least one training PSD")
    scale = matrix.max(axis=0)
    return NormalizationScale(np.where(scale > 0, scale, 1.0))


def normalize_matrix(matrix: np.ndarray, scale: NormalizationScale) -> np.ndarray:
    matrix = np.atleast_2d(matrix)
    if matrix.shape[1] != len(scale):
        raise ArgumentError(f"PSD length {matrix.shape[1]} != scale length {len(scale)}")
    return np.minimum(1.0, matrix / scale.per_frequency_max)


def normalize(p: PsdVector, scale: NormalizationScale) -> PsdVector:
    """Divide by the training maximum per frequency, clamped to 1."""
    if p.normalized:
        raise ArgumentError("PSD is already normalized")
    return PsdVector(normalize_matrix(p.values, scale)[0], normalized=True)


def series_from_counts(counts: Sequence[int], device: str = "") -> AggregatedSeries:
    return AggregatedSeries(device, np.asarray(counts, dtype=np.int64))
