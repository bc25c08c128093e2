import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dnsroutine.baselines import (DEFAULT_WARP_GRID, BaywatchConfig, ConnectionPair, CpResult,
                                  WarpConfig, baywatch_classify, baywatch_scores, cp_table,
                                  device_max, device_verdict_from_cps, extract_cps,
                                  minimal_period, nearest_rank, smooth_gaps, symbolize,
                                  warp_classify, warp_period, warp_scores, write_cp_verdicts)
from dnsroutine.errors import ArgumentError
from dnsroutine.reputation import ReputationConfig, filter_dataset
from dnsroutine.spectral import AggregationConfig, series_from_counts

from conftest import HOUR, WINDOW, make_dataset

AGG = AggregationConfig()


def _cp(counts, device="d", host="h,a"):
    return ConnectionPair(device, host, series=series_from_counts(counts))


def _times(gaps_s, start=1_000_000):
    return np.concatenate([[start], start + np.cumsum(np.asarray(gaps_s) * 1000)])


# -- Baywatch ---------------------------------------------------------------

def test_six_hour_beacon_is_periodic():
    counts = np.tile([5, 0, 0, 0, 0, 0], 28)
    periodic, score = baywatch_classify(_cp(counts), BaywatchConfig(m=100, confidence=0.99))
    assert periodic and score == 1.0


def test_constant_series_ties_every_permutation():
    periodic, score = baywatch_classify(_cp(np.full(168, 4)), BaywatchConfig())
    assert periodic
    assert score == 0.0  # no permutation maximum is strictly below the observed one


def test_all_zero_series():
    assert baywatch_classify(_cp(np.zeros(168)), BaywatchConfig()) == (False, 0.0)


def test_nearest_rank_percentile():
    values = np.arange(1, 11, dtype=float)
    assert nearest_rank(values, 0.9) == 9.0
    assert nearest_rank(values, 0.99) == 10.0
    assert nearest_rank(values, 0.05) == 1.0
    assert nearest_rank(np.arange(1, 101, dtype=float), 0.99) == 99.0


def test_baywatch_is_seeded_and_monotone_in_confidence(rng):
    counts = rng.poisson(1.0, size=168)
    counts[::24] += 4
    cp = _cp(counts)
    picks = [baywatch_classify(cp, BaywatchConfig(m=50, confidence=c, seed=2))
             for c in (0.9, 0.99, 0.999)]
    assert picks[0] == baywatch_classify(cp, BaywatchConfig(m=50, confidence=0.9, seed=2))
    flags = [p for p, _ in picks]
    assert flags == sorted(flags, reverse=True)  # raising C never adds a periodic verdict


def test_baywatch_config_validation():
    with pytest.raises(ArgumentError):
        BaywatchConfig(m=0)
    with pytest.raises(ArgumentError):
        BaywatchConfig(confidence=0.0)


# -- WARP -------------------------------------------------------------------

def test_warp_constant_gaps_periodic():
    cp = ConnectionPair("d", "h,a", times=_times([600, 600, 600]))
    assert warp_classify(cp, WarpConfig(60))


def test_warp_smoothing_merges_close_gaps():
    cp = ConnectionPair("d", "h,a", times=_times([600, 660]))
    assert warp_classify(cp, WarpConfig(100))
    assert not warp_classify(cp, WarpConfig(0))
    assert warp_period(cp.times, WarpConfig(0)) == 2


def test_warp_needs_two_gaps():
    assert not warp_classify(ConnectionPair("d", "h,a", times=_times([600])), WarpConfig(0))


def test_smooth_gaps_rule():
    np.testing.assert_array_equal(smooth_gaps(np.array([600_000, 660_000]), 100), [600_000] * 2)
    np.testing.assert_array_equal(smooth_gaps(np.array([1234]), 0), [1234])


def test_symbols_and_minimal_period():
    assert symbolize([5, 7, 5, 9]) == [0, 1, 0, 2]
    assert minimal_period("abcabcab") == 3
    assert minimal_period("aaaa") == 1
    assert minimal_period("abcd") == 4
    assert minimal_period("") == 0


def brute_period(s):
    """Direct scan over p = 1..len (the oracle for the prefix-function version)."""
    for p in range(1, len(s) + 1):
        if all(s[i] == s[i + p] for i in range(len(s) - p)):
            return p
    return 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 2), max_size=30))
def test_minimal_period_matches_direct_scan(symbols):
    assert minimal_period(symbols) == brute_period(symbols)


gaps = st.lists(st.integers(1, 100_000), min_size=2, max_size=12)


@settings(max_examples=100, deadline=None)
@given(gaps, st.integers(0, 10 ** 9), st.sampled_from([0, 1, 16, 128, 1024, 8192]))
def test_warp_translation_invariant(gap_list, shift, s):
    t = _times(gap_list)
    cfg = WarpConfig(s)
    assert warp_classify(ConnectionPair("d", "h", times=t), cfg) == \
        warp_classify(ConnectionPair("d", "h", times=t + shift), cfg)


@settings(max_examples=100, deadline=None)
@given(gaps, st.integers(0, 10))
def test_warp_never_unflips_along_doubling_smoothing(gap_list, j):
    t = ConnectionPair("d", "h", times=_times(gap_list))
    if warp_classify(t, WarpConfig(2 ** j)):
        assert warp_classify(t, WarpConfig(2 ** (j + 1)))


def test_msc_split_gaps_break_exact_match():
    # one beacon every 600 s spread over three hosts: each host's gaps differ
    rng = np.random.default_rng(0)
    hosts = rng.integers(0, 3, size=60)
    times = _times([600] * 59)
    for h in range(3):
        own = times[hosts == h]
        if len(set(np.diff(own))) > 1:
            assert not warp_classify(ConnectionPair("d", str(h), times=own), WarpConfig(0))


# -- CPs over a corpus ------------------------------------------------------

def test_two_devices_three_hosts_give_six_cps():
    rows = [(d, h, 3600 * i) for i, (d, h) in enumerate(
        (d, h) for d in ("d1", "d2") for h in ("x.biz,a", "y.biz,a", "z.biz,a"))]
    ds = make_dataset(rows, extra_devices=["d3"])
    cps = extract_cps(ds, ReputationConfig(local_min_rate=1.0), AGG, WINDOW[0])
    assert len(cps) == 6


def test_globally_trusted_host_gives_no_cp():
    ds = make_dataset([("d1", "good.com,a", 3), ("d1", "bad.biz,a", 5)], extra_devices=["d2"])
    cfg = ReputationConfig(local_min_rate=1.0, ranked_hosts={"good.com": 3})
    assert [cp.host for cp in extract_cps(ds, cfg, AGG, WINDOW[0])] == ["bad.biz,a"]


def test_device_reduction():
    results = [CpResult("a", "h1", "bw", 0.2, False), CpResult("a", "h2", "bw", 0.97, True)]
    verdicts = device_verdict_from_cps(results, devices=["a", "silent"])
    assert verdicts == {"a": (0.97, True), "silent": (0.0, False)}
    assert device_verdict_from_cps([CpResult("b", "h", "w", 0.0, False)])["b"] == (0.0, False)


def test_cp_verdict_csv():
    buf = io.StringIO()
    write_cp_verdicts([CpResult("a", "h,a", "warp", 0.5, True)], buf)
    assert buf.getvalue().splitlines() == ["device_id,host,method,score,verdict",
                                           'a,"h,a",warp,0.5,1']


def _random_corpus(rng, n_rows=1500):
    rows = []
    for _ in range(n_rows):
        d = f"d{rng.integers(12)}"
        h = f"h{rng.integers(30)}.biz,a"
        rows.append((d, h, int(rng.integers(0, 168 * HOUR))))
    for k in range(20):  # an exact beacon and a near beacon
        rows.append(("d0", "beacon.biz,a", k * 2 * HOUR))
        rows.append(("d1", "near.biz,a", k * 2 * HOUR + (k % 3) * 1000))
    return make_dataset(rows)


def test_vectorized_warp_matches_per_cp_classifier(rng):
    ds = _random_corpus(rng)
    rep = ReputationConfig(local_min_rate=1.0)
    table = cp_table(filter_dataset(ds, rep))
    scores = warp_scores(table)
    cps = extract_cps(ds, rep, AGG, WINDOW[0])
    assert len(cps) == len(table)
    grid = DEFAULT_WARP_GRID
    for i, cp in enumerate(cps):
        hits = [j for j, s in enumerate(grid) if warp_classify(cp, WarpConfig(s))]
        expected = 1 - hits[0] / len(grid) if hits else 0.0
        assert scores[i] == pytest.approx(expected), cp.host
    by_host = dict(zip((cp.host for cp in cps), scores))
    assert by_host["beacon.biz,a"] == 1.0
    assert 0 < by_host["near.biz,a"] < 1.0


def test_vectorized_baywatch_matches_per_cp_classifier(rng):
    ds = _random_corpus(rng, 600)
    rep = ReputationConfig(local_min_rate=1.0)
    cfg = BaywatchConfig(m=20, confidence=0.9, seed=5)
    table = cp_table(filter_dataset(ds, rep))
    scores, periodic = baywatch_scores(table, AGG, WINDOW[0], cfg)
    for i, cp in enumerate(extract_cps(ds, rep, AGG, WINDOW[0])):
        assert (bool(periodic[i]), scores[i]) == baywatch_classify(cp, cfg)
    dev = device_max(table, scores)
    assert dev.shape == (len(ds.device_names),)
