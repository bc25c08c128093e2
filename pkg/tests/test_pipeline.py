import dataclasses

import numpy as np
import pytest

from dnsroutine.classifier import TrainConfig
from dnsroutine.core import extract_window
from dnsroutine.errors import ConfigError
from dnsroutine.pipeline import (PipelineConfig, check_compatible, count_matrix, fit_detector,
                                 host_trust, score_devices, window_start)
from dnsroutine.reputation import ReputationConfig, compute_local_prevalence, filter_queries
from dnsroutine.spectral import AggregationConfig, aggregate

FAST = TrainConfig(max_epochs=15, seed=3)


def test_count_matrix_matches_per_device_filter_and_bin(small_corpus):
    ds = small_corpus.test
    rep = ReputationConfig(ranked_hosts=small_corpus.ranked_hosts)
    agg = AggregationConfig()
    start = window_start(ds, agg)
    matrix = count_matrix(ds, host_trust(ds, rep), agg, start)
    prevalence = compute_local_prevalence(ds)
    for i, device in enumerate(ds.device_names[:15]):
        win = filter_queries(extract_window(ds, device, start, start + agg.window_ms), rep,
                             prevalence)
        np.testing.assert_array_equal(matrix[i], aggregate(win, agg).counts, err_msg=device)


def test_window_start_is_bin_aligned(small_corpus):
    agg = AggregationConfig(bin_seconds=7200, bin_count=84)
    assert window_start(small_corpus.train, agg) % agg.bin_ms == 0


def test_detector_scores_every_device_including_silent(small_corpus):
    cfg = PipelineConfig(ReputationConfig(ranked_hosts=small_corpus.ranked_hosts))
    model = fit_detector(small_corpus.train, cfg, FAST)
    test = small_corpus.test.with_labels({**small_corpus.test.labels, "silent-device": 0})
    scores = score_devices(model, test, cfg)
    assert scores.shape == (len(test.device_names),)
    assert ((scores >= 0) & (scores <= 1)).all()
    silent = test.device_names.index("silent-device")
    # an all-zero PSD maps to one fixed score, whatever the device
    zero = score_devices(model, test.select_devices(["silent-device"]), cfg)
    assert scores[silent] == pytest.approx(zero[0])
    assert model.metadata["aggregation"] == {"bin_seconds": 3600, "bin_count": 168}


def test_unlabeled_training_corpus_rejected(small_corpus):
    unlabeled = dataclasses.replace(small_corpus.train, labels=None)
    with pytest.raises(ConfigError):
        fit_detector(unlabeled, PipelineConfig(), FAST)


def test_model_and_bin_count_must_agree(small_corpus):
    model = fit_detector(small_corpus.train, PipelineConfig(), FAST)
    check_compatible(model, AggregationConfig())
    with pytest.raises(ConfigError):
        check_compatible(model, AggregationConfig(bin_count=84, bin_seconds=7200))
    with pytest.raises(ConfigError):
        score_devices(model, small_corpus.test,
                      PipelineConfig(aggregation=AggregationConfig(bin_count=84, bin_seconds=7200)))
