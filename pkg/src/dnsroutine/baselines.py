"""Connection-pair periodicity baselines: Baywatch and WARP.

Both operate on connection pairs (CPs), the queries of one device to one
host.  Baywatch tests whether the strongest spectral peak of a CP's binned
count series stands out against random permutations of the same series.
WARP smooths the inter-arrival gaps, maps them to symbols and reports the
CP as periodic when the symbol string has period one.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset
from .errors import ArgumentError
from .reputation import ReputationConfig, filter_dataset
from .spectral import AggregatedSeries, AggregationConfig, psd_matrix

VERDICTS_HEADER = ["device_id", "host", "method", "score", "verdict"]


@dataclass(frozen=True, eq=False)
class ConnectionPair:
    """Queries of ``device`` to ``host``: binned ``series`` and/or raw ``times``."""

    device: str
    host: str
    series: AggregatedSeries | None = None
    times: np.ndarray | None = None


@dataclass(frozen=True)
class BaywatchConfig:
    m: int = 100
    confidence: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ArgumentError("m must be >= 1")
        if not 0 < self.confidence <= 1:
            raise ArgumentError("confidence must lie in (0, 1]")


@dataclass(frozen=True)
class WarpConfig:
    smoothing: int = 0

    def __post_init__(self):
        if self.smoothing < 0:
            raise ArgumentError("smoothing must be >= 0")


@dataclass(frozen=True)
class CpResult:
    device: str
    host: str
    method: str
    score: float
    periodic: bool


def cp_seed(seed: int, device: str, host: str) -> int:
    """Stable per-CP seed derived from the global seed and the pair."""
    digest = hashlib.blake2b(f"{seed}\x1f{device}\x1f{host}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _peak_power(counts: np.ndarray) -> np.ndarray:
    # DC is excluded: for non-negative counts it always dominates and is
    # invariant under permutation, which would make every test a tie.
    return psd_matrix(counts)[:, 1:].max(axis=1)


def nearest_rank(sorted_values: np.ndarray, confidence: float) -> float:
    """Nearest-rank ``confidence`` percentile of ascending ``sorted_values``."""
    rank = max(1, math.ceil(confidence * len(sorted_values) - 1e-12))
    return float(sorted_values[rank - 1])


def baywatch_test(counts: np.ndarray, m: int, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Peak power of ``counts`` and the sorted peak powers of ``m`` permutations."""
    counts = np.asarray(counts, dtype=float)
    observed = float(_peak_power(counts[None, :])[0])
    perms = rng.permuted(np.broadcast_to(counts, (m, len(counts))), axis=1)
    return observed, np.sort(_peak_power(perms))


def baywatch_classify(cp: ConnectionPair, cfg: BaywatchConfig) -> tuple[bool, float]:
    """(periodic, score) for one CP.

    Periodic when the observed peak is at least the nearest-rank ``C``
    percentile of the permutation peaks; the score is the fraction of
    permutation peaks strictly below the observed one.
    """
    if cp.series is None:
        raise ArgumentError("Baywatch needs a binned series")
    counts = cp.series.counts
    if not counts.any():
        return False, 0.0
    rng = np.random.default_rng(cp_seed(cfg.seed, cp.device, cp.host))
    observed, maxima = baywatch_test(counts, cfg.m, rng)
    periodic = observed >= nearest_rank(maxima, cfg.confidence)
    score = float(np.searchsorted(maxima, observed, side="left")) / cfg.m
    return bool(periodic), score


def smooth_gaps(gaps_ms: np.ndarray, smoothing_s: int) -> np.ndarray:
    """``d - (d mod s)`` for every gap (identity for ``s = 0``)."""
    gaps_ms = np.asarray(gaps_ms, dtype=np.int64)
    if smoothing_s == 0:
        return gaps_ms
    step = smoothing_s * 1000
    return gaps_ms - gaps_ms % step


def symbolize(values: Sequence) -> list[int]:
    """Equal values map to the same symbol, numbered by first appearance."""
    table: dict = {}
    return [table.setdefault(v, len(table)) for v in values]


def minimal_period(symbols: Sequence) -> int:
    """Smallest ``p >= 1`` with ``s[i] == s[i + p]`` for every valid ``i``.

    Uses the prefix function: the period is ``n`` minus the longest proper
    border.  Returns 0 for an empty string.
    """
    n = len(symbols)
    if n == 0:
        return 0
    border = [0] * n
    k = 0
    for i in range(1, n):
        while k and symbols[i] != symbols[k]:
            k = border[k - 1]
        if symbols[i] == symbols[k]:
            k += 1
        border[i] = k
    return n - border[-1]


def warp_period(times_ms: np.ndarray, cfg: WarpConfig) -> int:
    """Minimal period of the smoothed gap string (0 when there are no gaps)."""
    gaps = np.diff(np.sort(np.asarray(times_ms, dtype=np.int64)))
    return minimal_period(symbolize(smooth_gaps(gaps, cfg.smoothing).tolist()))


def warp_classify(cp: ConnectionPair, cfg: WarpConfig) -> bool:
    """Periodic iff the smoothed gap string has period one (needs >= 2 gaps)."""
    if cp.times is None:
        raise ArgumentError("WARP needs raw timestamps")
    if len(cp.times) < 3:
        return False
    return warp_period(cp.times, cfg) == 1


# -- connection pairs over a corpus --------------------------------------

@dataclass(frozen=True, eq=False)
class CpTable:
    """All CPs of a filtered corpus, column-wise.

    ``row_cp`` maps every surviving query row to its CP index; CPs are
    ordered by (device, host) code.
    """

    filtered: Dataset
    cp_device: np.ndarray
    cp_host: np.ndarray
    row_cp: np.ndarray

    def __len__(self) -> int:
        return len(self.cp_device)

    def names(self, i: int) -> tuple[str, str]:
        return (self.filtered.device_names[self.cp_device[i]],
                self.filtered.host_names[self.cp_host[i]])

    def series_matrix(self, agg: AggregationConfig, start: int) -> np.ndarray:
        """Binned counts, one row per CP."""
        rel = self.filtered.times - start
        inside = (rel >= 0) & (rel < agg.window_ms)
        flat = self.row_cp[inside].astype(np.int64) * agg.bin_count + rel[inside] // agg.bin_ms
        return np.bincount(flat, minlength=len(self) * agg.bin_count).reshape(len(self),
                                                                              agg.bin_count)

    def time_groups(self) -> tuple[np.ndarray, np.ndarray]:
        """Row order that groups queries by CP (time-sorted within CP), and CP offsets."""
        order = np.argsort(self.row_cp, kind="stable")
        offsets = np.searchsorted(self.row_cp[order], np.arange(len(self) + 1))
        return order, offsets


def cp_table(filtered: Dataset) -> CpTable:
    key = (filtered.device_codes.astype(np.int64) << 32) | filtered.host_codes.astype(np.int64)
    uniq, row_cp = np.unique(key, return_inverse=True)
    return CpTable(filtered, (uniq >> 32).astype(np.int32), (uniq & 0xFFFFFFFF).astype(np.int32),
                   row_cp.reshape(-1))


def extract_cps(ds: Dataset, rep: ReputationConfig, agg: AggregationConfig, start: int,
                prevalence: np.ndarray | None = None) -> list[ConnectionPair]:
    """One CP per (device, host) that survives reputation filtering."""
    table = cp_table(filter_dataset(ds, rep, prevalence))
    series = table.series_matrix(agg, start)
    order, offsets = table.time_groups()
    times = table.filtered.times[order]
    cps = []
    for i in range(len(table)):
        device, host = table.names(i)
        cps.append(ConnectionPair(device, host, AggregatedSeries(device, series[i]),
                                  times[offsets[i]:offsets[i + 1]]))
    return cps


def device_verdict_from_cps(cp_results: Iterable[CpResult], devices: Iterable[str] = ()
                            ) -> dict[str, tuple[float, bool]]:
    """Device score = max CP score; flagged iff any CP is periodic.

    Devices listed in ``devices`` without any CP get ``(0.0, False)``.
    """
    out: dict[str, tuple[float, bool]] = {d: (0.0, False) for d in devices}
    for r in cp_results:
        score, flagged = out.get(r.device, (0.0, False))
        out[r.device] = (max(score, r.score), flagged or r.periodic)
    return out


def write_cp_verdicts(results: Iterable[CpResult], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(VERDICTS_HEADER)
    for r in results:
        writer.writerow([r.device, r.host, r.method, repr(float(r.score)), int(r.periodic)])


# -- vectorized scoring used by the evaluation harness ----------------------

def baywatch_scores(table: CpTable, agg: AggregationConfig, start: int, cfg: BaywatchConfig
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(scores, periodic) for every CP of ``table``; same rule as :func:`baywatch_classify`."""
    series = table.series_matrix(agg, start)
    scores = np.zeros(len(table))
    periodic = np.zeros(len(table), dtype=bool)
    f = table.filtered
    for i in range(len(table)):
        counts = series[i]
        if not counts.any():
            continue
        rng = np.random.default_rng(cp_seed(cfg.seed, f.device_names[table.cp_device[i]],
                                            f.host_names[table.cp_host[i]]))
        observed, maxima = baywatch_test(counts, cfg.m, rng)
        periodic[i] = observed >= nearest_rank(maxima, cfg.confidence)
        scores[i] = np.searchsorted(maxima, observed, side="left") / cfg.m
    return scores, periodic


DEFAULT_WARP_GRID = (0,) + tuple(2 ** j for j in range(18))


def warp_gap_extremes(table: CpTable) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-CP query count, smallest gap and largest gap (ms)."""
    order, offsets = table.time_groups()
    times = table.filtered.times[order]
    counts = np.diff(offsets)
    gap = np.diff(times)
    # gaps that straddle two CPs are masked out before reducing
    valid = np.ones(len(gap), dtype=bool)
    valid[offsets[1:-1] - 1] = False
    gmin = np.full(len(table), np.iinfo(np.int64).max)
    gmax = np.zeros(len(table), dtype=np.int64)
    cp_of_gap = np.repeat(np.arange(len(table)), np.maximum(counts - 1, 0))
    g = gap[valid]
    np.minimum.at(gmin, cp_of_gap, g)
    np.maximum.at(gmax, cp_of_gap, g)
    return counts, gmin, gmax


def warp_periodic_at(counts, gmin, gmax, smoothing: int) -> np.ndarray:
    """WARP verdict for every CP at one smoothing value.

    Smoothing floors each gap to a multiple of ``s``; since flooring is
    monotone, all smoothed gaps coincide iff the smallest and largest do.
    So this is exactly :func:`warp_classify` without building strings.
    """
    enough = counts >= 3
    if smoothing == 0:
        return enough & (gmin == gmax)
    step = smoothing * 1000
    return enough & (gmin // step == gmax // step)


def warp_scores(table: CpTable, grid: Sequence[int] = DEFAULT_WARP_GRID) -> np.ndarray:
    """Score each CP by the smallest grid smoothing that makes it periodic.

    Periodic at ``grid[j]`` gives score ``1 - j / len(grid)``; never periodic
    scores 0.  Thresholding the score at ``1 - j / len(grid)`` flags CPs that
    are periodic at some smoothing up to ``grid[j]``.
    """
    counts, gmin, gmax = warp_gap_extremes(table)
    scores = np.zeros(len(table))
    pending = np.ones(len(table), dtype=bool)
    for j, s in enumerate(grid):
        hit = pending & warp_periodic_at(counts, gmin, gmax, s)
        scores[hit] = 1.0 - j / len(grid)
        pending &= ~hit
    return scores


def device_max(table: CpTable, cp_scores: np.ndarray) -> np.ndarray:
    """Max CP score per device (aligned with the corpus device vocabulary)."""
    out = np.zeros(len(table.filtered.device_names))
    if len(table):
        np.maximum.at(out, table.cp_device, cp_scores)
    return out
