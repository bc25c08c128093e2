"""Global (ranked list) and local (query prevalence) host reputation filtering."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Dataset, InputWindow, _open_text, _release, host_name
from .errors import ArgumentError, CorpusError, FormatError

RANKED_LIST_CAPACITY = 1_000_000
RANKED_HEADER = "rank,host"


@dataclass(frozen=True)
class ReputationConfig:
    """Trust rules.

    A host is trusted when its name is ranked within ``global_max_rank`` of
    ``ranked_hosts`` or when at least ``local_min_rate`` of the network's
    devices queried it.
    """

    global_max_rank: int = 500_000
    local_min_rate: float = 0.03
    ranked_hosts: Mapping[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0 <= self.global_max_rank <= RANKED_LIST_CAPACITY:
            raise ArgumentError(f"global_max_rank {self.global_max_rank} outside "
                                f"[0, {RANKED_LIST_CAPACITY}]")
        if not 0.0 <= self.local_min_rate <= 1.0:
            raise ArgumentError(f"local_min_rate {self.local_min_rate} outside [0, 1]")

    def globally_trusted(self, host: str) -> bool:
        rank = self.ranked_hosts.get(host_name(host))
        return rank is not None and rank <= self.global_max_rank

    def is_trusted(self, host: str, prevalence: float) -> bool:
        return self.globally_trusted(host) or prevalence >= self.local_min_rate


def load_ranked_hosts(stream) -> dict[str, int]:
    """Read a ``rank,host`` CSV (optional header) into host name -> rank."""
    text = _open_text(stream)
    ranks: dict[str, int] = {}
    try:
        for n, line in enumerate(text):
            line = line.strip()
            if not line or (n == 0 and line == RANKED_HEADER):
                continue
            rank, sep, host = line.partition(",")
            if not sep or not rank.strip().isdigit() or not host.strip():
                raise FormatError(f"bad ranked-host line {n + 1}: {line!r}")
            rank = int(rank)
            if rank < 1:
                raise FormatError(f"rank must start at 1 (line {n + 1})")
            ranks.setdefault(host_name(host.strip().lower().rstrip(".")), rank)
    finally:
        _release(text, stream)
    if len(ranks) > RANKED_LIST_CAPACITY:
        raise FormatError(f"ranked list exceeds {RANKED_LIST_CAPACITY} rows")
    return ranks


def write_ranked_hosts(ranks: Mapping[str, int], stream) -> None:
    stream.write(RANKED_HEADER + "\n")
    for host, rank in sorted(ranks.items(), key=lambda kv: (kv[1], kv[0])):
        stream.write(f"{rank},{host}\n")


def prevalence_array(ds: Dataset) -> np.ndarray:
    """Fraction of the dataset's devices that queried each host (aligned with ``host_names``)."""
    n_devices = len(ds.device_names)
    if n_devices == 0:
        raise CorpusError("dataset has no devices")
    pairs = np.unique((ds.device_codes.astype(np.int64) << 32) | ds.host_codes.astype(np.int64))
    per_host = np.bincount((pairs & 0xFFFFFFFF).astype(np.int64), minlength=len(ds.host_names))
    return per_host / n_devices


def compute_local_prevalence(ds: Dataset) -> dict[str, float]:
    """Map every queried host to the fraction of distinct devices querying it."""
    prev = prevalence_array(ds)
    return {ds.host_names[i]: float(prev[i]) for i in np.flatnonzero(prev)}


def trusted_mask(host_names: Sequence[str], cfg: ReputationConfig,
                 prevalence: np.ndarray) -> np.ndarray:
    """Boolean trust flag per host of a vocabulary."""
    local = np.asarray(prevalence, dtype=float) >= cfg.local_min_rate
    if cfg.global_max_rank > 0 and cfg.ranked_hosts:
        ranked = cfg.ranked_hosts
        limit = cfg.global_max_rank
        glob = np.fromiter(((ranked.get(host_name(h)) or limit + 1) <= limit for h in host_names),
                           dtype=bool, count=len(host_names))
        return local | glob
    return local


def filter_queries(win: InputWindow, cfg: ReputationConfig,
                   prevalence: Mapping[str, float]) -> InputWindow:
    """Drop queries to trusted hosts; bounds and order are kept.

    Hosts missing from ``prevalence`` count as prevalence 0.
    """
    if not len(win):
        return win
    codes = np.unique(win.host_codes)
    trusted = {int(c) for c in codes
               if cfg.is_trusted(win.host_names[c], prevalence.get(win.host_names[c], 0.0))}
    keep = np.fromiter((int(c) not in trusted for c in win.host_codes), dtype=bool,
                       count=len(win))
    return win.replace(keep)


def filter_dataset(ds: Dataset, cfg: ReputationConfig,
                   prevalence: np.ndarray | None = None) -> Dataset:
    """Whole-corpus version of :func:`filter_queries`.

    Prevalence defaults to the dataset's own (computed before filtering).
    """
    if prevalence is None:
        prevalence = prevalence_array(ds)
    return drop_trusted(ds, trusted_mask(ds.host_names, cfg, prevalence))


def drop_trusted(ds: Dataset, trusted: np.ndarray) -> Dataset:
    """Keep only queries whose host is not flagged in the per-host ``trusted`` mask."""
    keep = ~trusted[ds.host_codes]
    injected = None if ds.injected is None else ds.injected[keep]
    # rows stay sorted by (device, time), so skip the re-sort in from_columns
    return Dataset(ds.device_names, ds.host_names, ds.device_codes[keep], ds.host_codes[keep],
                   ds.times[keep], ds.window, ds.labels, injected, ds.malformed)
