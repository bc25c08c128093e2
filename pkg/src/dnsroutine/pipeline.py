"""Device-level detection: filter, bin, PSD, normalize, classify."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import ModelParams, TrainConfig, predict, train
from .core import Dataset
from .errors import ConfigError, CorpusError
from .reputation import ReputationConfig, prevalence_array, trusted_mask
from .spectral import AggregationConfig, fit_normalization, normalize_matrix, psd_matrix


@dataclass(frozen=True)
class PipelineConfig:
    reputation: ReputationConfig = field(default_factory=ReputationConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)


def window_start(ds: Dataset, agg: AggregationConfig) -> int:
    """Dataset start floored to a bin boundary (epoch aligned)."""
    if ds.window is None:
        raise CorpusError("empty dataset has no window")
    return ds.window[0] // agg.bin_ms * agg.bin_ms


def host_trust(ds: Dataset, rep: ReputationConfig, prevalence: np.ndarray | None = None
               ) -> np.ndarray:
    """Per-host trust flags for the dataset vocabulary.

    This is the reputation lookup (ranked list and the window's device
    prevalence); it does not depend on the device being scored, so callers
    can compute it once per corpus.
    """
    if prevalence is None:
        prevalence = prevalence_array(ds)
    return trusted_mask(ds.host_names, rep, prevalence)


def count_matrix(ds: Dataset, trusted: np.ndarray, agg: AggregationConfig, start: int
                 ) -> np.ndarray:
    """Per-device binned counts of untrusted queries, rows aligned with ``device_names``."""
    rel = ds.times - start
    keep = ~trusted[ds.host_codes] & (rel >= 0) & (rel < agg.window_ms)
    flat = ds.device_codes[keep].astype(np.int64) * agg.bin_count + rel[keep] // agg.bin_ms
    n = len(ds.device_names)
    return np.bincount(flat, minlength=n * agg.bin_count).reshape(n, agg.bin_count)


def device_psds(ds: Dataset, cfg: PipelineConfig, start: int | None = None,
                trusted: np.ndarray | None = None) -> np.ndarray:
    """Raw PSD per device (rows aligned with ``ds.device_names``)."""
    agg = cfg.aggregation
    if start is None:
        start = window_start(ds, agg)
    if trusted is None:
        trusted = host_trust(ds, cfg.reputation)
    return psd_matrix(count_matrix(ds, trusted, agg, start))


def fit_detector(ds: Dataset, cfg: PipelineConfig, train_cfg: TrainConfig = TrainConfig(),
                 start: int | None = None) -> ModelParams:
    """Learn the normalization scale and network weights from a labeled corpus."""
    if ds.labels is None:
        raise ConfigError("training needs device labels")
    raw = device_psds(ds, cfg, start)
    scale = fit_normalization(raw)
    x = normalize_matrix(raw, scale)
    y = ds.label_array().astype(float)
    model = train(x, y, scale, train_cfg)
    model.metadata["aggregation"] = {"bin_seconds": cfg.aggregation.bin_seconds,
                                     "bin_count": cfg.aggregation.bin_count}
    model.metadata["reputation"] = {"global_max_rank": cfg.reputation.global_max_rank,
                                    "local_min_rate": cfg.reputation.local_min_rate}
    return model


def check_compatible(model: ModelParams, agg: AggregationConfig) -> None:
    if model.input_size != agg.psd_length:
        raise ConfigError(f"model expects {model.input_size} PSD entries but N={agg.bin_count} "
                          f"yields {agg.psd_length}")


def score_devices(model: ModelParams, ds: Dataset, cfg: PipelineConfig,
                  start: int | None = None, trusted: np.ndarray | None = None) -> np.ndarray:
    """Bot score per device (aligned with ``ds.device_names``); zero-traffic devices included."""
    check_compatible(model, cfg.aggregation)
    raw = device_psds(ds, cfg, start, trusted)
    return predict(model, normalize_matrix(raw, model.scale))
