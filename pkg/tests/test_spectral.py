import cmath

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnsroutine.core import extract_window
from dnsroutine.errors import ArgumentError
from dnsroutine.spectral import (AggregationConfig, PsdVector, aggregate, aggregate_dataset,
                                 dft_coefficient, fit_normalization, normalize, normalize_matrix,
                                 power_spectrum, psd, psd_length, psd_matrix, series_from_counts)

from conftest import HOUR, WINDOW, make_dataset


def naive_power(counts):
    """Independent O(N^2) DFT oracle: |sum_n t_n e^{-2 pi i k n / N}|^2 for every k."""
    n = len(counts)
    return [abs(sum(t * cmath.exp(-2j * cmath.pi * k * j / n) for j, t in enumerate(counts))) ** 2
            for k in range(n)]


def test_week_of_hours_gives_83_entries():
    assert psd_length(168) == 83
    assert AggregationConfig().psd_length == 83
    assert len(psd(series_from_counts(np.ones(168)))) == 83


@pytest.mark.parametrize("n,expected", [(2, 0), (3, 1), (4, 1), (5, 2), (24, 11)])
def test_psd_length_floor_rule(n, expected):
    assert psd_length(n) == expected


def test_psd_matches_naive_dft(rng):
    counts = rng.integers(0, 20, size=48)
    expected = naive_power(counts)[:psd_length(48)]
    np.testing.assert_allclose(psd(series_from_counts(counts)).values, expected, rtol=1e-9)


def test_dft_coefficient_is_direct_sum():
    counts = [1, 0, 2, 0]
    assert dft_coefficient(series_from_counts(counts), 1) == pytest.approx(1 - 2)
    with pytest.raises(ArgumentError):
        dft_coefficient(series_from_counts(counts), 4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=64))
def test_parseval(counts):
    x = np.asarray(counts, dtype=float)
    total = power_spectrum(x)[0].sum()
    assert total == pytest.approx(len(x) * (x ** 2).sum(), rel=1e-9, abs=1e-9)


def test_psd_is_prefix_of_power_spectrum(rng):
    counts = rng.integers(0, 9, size=(5, 168))
    np.testing.assert_allclose(psd_matrix(counts), power_spectrum(counts)[:, :83], rtol=1e-9,
                               atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=8, max_size=40), st.integers(0, 39))
def test_circular_shift_invariance(counts, shift):
    x = np.asarray(counts)
    np.testing.assert_allclose(psd_matrix(np.roll(x, shift)), psd_matrix(x), rtol=1e-9,
                               atol=1e-7)


def test_constant_series_has_power_only_at_dc():
    p = psd(series_from_counts(np.full(168, 3))).values
    assert p[0] == pytest.approx((3 * 168) ** 2)
    assert np.allclose(p[1:], 0.0, atol=1e-12)


def test_beacon_with_period_two_bins_puts_power_at_nyquist_half():
    counts = np.tile([5, 0], 12)
    full = power_spectrum(counts)[0]
    assert np.argmax(full[1:]) + 1 == 12


def test_aggregate_counts_per_bin():
    ds = make_dataset([("d", "h,a", 0), ("d", "h,a", 10), ("d", "h,a", HOUR + 1),
                       ("d", "h,a", 167 * HOUR + 5)])
    cfg = AggregationConfig()
    series = aggregate(extract_window(ds, "d", WINDOW[0], WINDOW[0] + cfg.window_ms), cfg)
    assert series.counts[0] == 2 and series.counts[1] == 1 and series.counts[167] == 1
    assert series.counts.sum() == 4
    np.testing.assert_array_equal(aggregate_dataset(ds, cfg, WINDOW[0])[0], series.counts)


def test_aggregate_rejects_window_length_mismatch():
    ds = make_dataset([("d", "h,a", 0)])
    with pytest.raises(ArgumentError):
        aggregate(extract_window(ds, "d", WINDOW[0], WINDOW[0] + HOUR), AggregationConfig())


def test_sub_bin_jitter_does_not_change_series():
    cfg = AggregationConfig()
    base = [("d", "h,a", k * 2 * HOUR + 60_000) for k in range(84)]
    jittered = [("d", "h,a", k * 2 * HOUR + 60_000 + (k * 7919) % 3_000_000) for k in range(84)]
    a = aggregate_dataset(make_dataset(base), cfg, WINDOW[0])
    b = aggregate_dataset(make_dataset(jittered), cfg, WINDOW[0])
    np.testing.assert_array_equal(a, b)


def test_normalization_uses_training_max_and_clamps():
    train = np.array([[2.0, 0.0, 4.0], [1.0, 0.0, 8.0]])
    scale = fit_normalization(train)
    np.testing.assert_allclose(scale.per_frequency_max, [2.0, 1.0, 8.0])
    out = normalize_matrix(np.array([[4.0, 3.0, 2.0]]), scale)
    np.testing.assert_allclose(out, [[1.0, 1.0, 0.25]])


def test_normalize_rejects_normalized_input_and_length_mismatch():
    scale = fit_normalization(np.ones((2, 3)))
    with pytest.raises(ArgumentError):
        normalize(PsdVector(np.ones(3) * 0.5, normalized=True), scale)
    with pytest.raises(ArgumentError):
        normalize(PsdVector(np.ones(4)), scale)


def test_fit_normalization_errors():
    with pytest.raises(ArgumentError):
        fit_normalization([])
    with pytest.raises(ArgumentError):
        fit_normalization([PsdVector(np.ones(3)), PsdVector(np.ones(4))])
