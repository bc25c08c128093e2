"""Accuracy, robustness and efficiency experiments over the four detectors."""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .baselines import (DEFAULT_WARP_GRID, BaywatchConfig, baywatch_scores, cp_table, device_max,
                        warp_scores)
from .classifier import ModelParams, TrainConfig
from .core import Dataset, host_name
from .errors import MetricError
from .injector import apply_drop
from .pipeline import PipelineConfig, fit_detector, host_trust, score_devices, window_start
from .reputation import drop_trusted

log = logging.getLogger(__name__)

DROP_RATES = tuple(round(0.1 * i, 1) for i in range(10))
OPERATING_FPR = 0.144
LOW_FPR = 0.01
DEVICE_COUNTS = tuple(2 ** i for i in range(1, 12))


# -- detectors ----------------------------------------------------------------

class Detector:
    """Scores every device of a corpus; larger scores mean more bot-like."""

    name = "detector"

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg

    def fit(self, train: Dataset) -> "Detector":
        return self

    def score(self, ds: Dataset, trusted: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    def cp_count(self, ds: Dataset, trusted: np.ndarray | None = None) -> int:
        if trusted is None:
            trusted = host_trust(ds, self.cfg.reputation)
        return len(cp_table(drop_trusted(ds, trusted)))


class MortonDetector(Detector):
    """PSD features of all of a device's untrusted traffic, scored by the MLP."""

    name = "morton"

    def __init__(self, cfg: PipelineConfig, train_cfg: TrainConfig = TrainConfig(),
                 model: ModelParams | None = None):
        super().__init__(cfg)
        self.train_cfg = train_cfg
        self.model = model

    def fit(self, train: Dataset) -> "MortonDetector":
        self.model = fit_detector(train, self.cfg, self.train_cfg)
        return self

    def score(self, ds, trusted=None):
        if self.model is None:
            raise MetricError("detector has not been fitted")
        return score_devices(self.model, ds, self.cfg, window_start(ds, self.cfg.aggregation),
                             trusted)


class BaywatchDetector(Detector):
    """Max permutation-test score over a device's CPs."""

    def __init__(self, cfg: PipelineConfig, bw: BaywatchConfig = BaywatchConfig()):
        super().__init__(cfg)
        self.bw = bw
        self.name = f"baywatch-{bw.m}"

    def score(self, ds, trusted=None):
        if trusted is None:
            trusted = host_trust(ds, self.cfg.reputation)
        table = cp_table(drop_trusted(ds, trusted))
        agg = self.cfg.aggregation
        scores, _ = baywatch_scores(table, agg, window_start(ds, agg), self.bw)
        return device_max(table, scores)


class WarpDetector(Detector):
    """Max over CPs of the smoothing-sweep WARP score."""

    name = "warp"

    def __init__(self, cfg: PipelineConfig, grid: Sequence[int] = DEFAULT_WARP_GRID):
        super().__init__(cfg)
        self.grid = tuple(grid)

    def score(self, ds, trusted=None):
        if trusted is None:
            trusted = host_trust(ds, self.cfg.reputation)
        table = cp_table(drop_trusted(ds, trusted))
        return device_max(table, warp_scores(table, self.grid))


def standard_detectors(cfg: PipelineConfig, train_cfg: TrainConfig = TrainConfig(),
                       seed: int = 0) -> list[Detector]:
    return [MortonDetector(cfg, train_cfg),
            BaywatchDetector(cfg, BaywatchConfig(m=10, confidence=0.99, seed=seed)),
            BaywatchDetector(cfg, BaywatchConfig(m=100, confidence=0.99, seed=seed)),
            WarpDetector(cfg)]


# -- ROC ------------------------------------------------------------------

@dataclass
class RocCurve:
    """ROC points ``(fpr, tpr, threshold)``, starting at ``(0, 0, inf)``."""

    points: list[tuple[float, float, float]]
    auc: float

    def fpr(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    def tpr(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def tpr_at_fpr(self, max_fpr: float = LOW_FPR) -> tuple[float, float]:
        """Best TPR over operating points with FPR <= ``max_fpr``, and its threshold."""
        best = (0.0, float("inf"))
        for f, t, thr in self.points:
            if f <= max_fpr + 1e-12 and t > best[0]:
                best = (t, thr)
        return best


def _check_labels(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"ROC needs both classes (positives={n_pos}, negatives={n_neg})")
    return n_pos, n_neg


def roc(scores, labels) -> RocCurve:
    """ROC over every distinct score used as a ``score >= threshold`` cut."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    n_pos, n_neg = _check_labels(labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve([(float(f), float(t), float(th)) for f, t, th in zip(fpr, tpr, thresholds)],
                    auc)


def mann_whitney_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counting one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    _check_labels(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    ties = np.searchsorted(neg_sorted, pos, side="right") - below
    return float((below + 0.5 * ties).sum() / (len(pos) * len(neg)))


@dataclass
class OperatingPoint:
    threshold: float
    fpr: float
    tpr: float
    capped: bool  # False when no distinct-score cut reaches the FPR cap


def operating_point(scores, labels, max_fpr: float) -> OperatingPoint:
    """Lowest score cut whose FPR stays within ``max_fpr``.

    When every cut exceeds the cap, falls back to the cut with the smallest
    FPR (and logs a warning).
    """
    curve = roc(scores, labels)
    pts = curve.points[1:]
    ok = [p for p in pts if p[0] <= max_fpr + 1e-12]
    if ok:
        # points run from high to low thresholds, so the last one goes furthest
        f, t, thr = ok[-1]
        return OperatingPoint(thr, f, t, True)
    f, t, thr = min(pts, key=lambda p: (p[0], -p[1]))
    log.warning("no threshold reaches FPR <= %.3f; using minimum FPR %.3f", max_fpr, f)
    return OperatingPoint(thr, f, t, False)


# -- robustness -------------------------------------------------------------

@dataclass
class RobustnessResult:
    drop_rates: list[float]
    detection_rates: list[float]
    score: float
    operating_fpr: float
    threshold: float = float("nan")
    achieved_fpr: float = float("nan")
    capped: bool = True


def robustness_score(detection_rates: Sequence[float]) -> float:
    """Normalized area under the detection-rate curve: the mean of the samples."""
    rates = np.asarray(detection_rates, dtype=float)
    if rates.size == 0:
        raise MetricError("no detection rates")
    if ((rates < 0) | (rates > 1)).any():
        raise MetricError("detection rates must lie in [0, 1]")
    return float(rates.mean())


def robustness_sweep(detector: Detector, test: Dataset, drop_rates: Sequence[float] = DROP_RATES,
                     operating_fpr: float = OPERATING_FPR, seed: int = 0,
                     corpus_for: Callable[[float], Dataset] | None = None) -> RobustnessResult:
    """Detection rate of a fitted detector as injected queries are dropped.

    The threshold is fixed on the clean corpus as the lowest cut with FPR at
    most ``operating_fpr``; each drop rate rebuilds the test corpus (by
    default ``apply_drop(test, rate, seed)``) and records the TPR at it.
    """
    labels = test.label_array()
    clean = detector.score(test)
    op = operating_point(clean, labels, operating_fpr)
    corpus_for = corpus_for or (lambda rate: apply_drop(test, rate, seed))
    rates = []
    for rate in drop_rates:
        ds = test if rate == 0 else corpus_for(rate)
        scores = clean if rate == 0 else detector.score(ds)
        bots = ds.label_array() == 1
        rates.append(float((scores[bots] >= op.threshold).mean()))
    return RobustnessResult(list(drop_rates), rates, robustness_score(rates), operating_fpr,
                            op.threshold, op.fpr, op.capped)


# -- throughput -------------------------------------------------------------

@dataclass
class ThroughputPoint:
    devices: int
    cp_count: int
    seconds: float

    @property
    def cps_per_second(self) -> float:
        return self.cp_count / self.seconds if self.seconds > 0 else float("inf")


def time_detection(detector: Detector, ds: Dataset, trusted: np.ndarray, repeats: int = 3
                   ) -> float:
    """Median wall time of ``repeats`` detection passes after one discarded warm-up."""
    detector.score(ds, trusted)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        detector.score(ds, trusted)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def throughput_bench(detectors: Sequence[Detector], corpus: Dataset,
                     device_counts: Sequence[int] = DEVICE_COUNTS, repeats: int = 3,
                     seed: int = 0) -> dict[str, list[ThroughputPoint]]:
    """Time each detector on random device subsets of growing size.

    Host reputation (ranked list, prevalence over the whole corpus) is looked
    up once outside the timed region, so small subsets are filtered as part of
    the full network rather than trusting every host they share.  The timed
    pass covers filtering, feature extraction and classification.
    """
    rng = np.random.default_rng(seed)
    names = corpus.device_names
    # subsets keep the corpus host vocabulary, so one mask serves them all
    trusted = host_trust(corpus, detectors[0].cfg.reputation)
    out: dict[str, list[ThroughputPoint]] = {d.name: [] for d in detectors}
    for count in device_counts:
        if count > len(names):
            log.warning("corpus has only %d devices; skipping subset of %d", len(names), count)
            continue
        subset = corpus.select_devices([names[i] for i in
                                        np.sort(rng.choice(len(names), size=count, replace=False))])
        cps = detectors[0].cp_count(subset, trusted)
        for det in detectors:
            seconds = time_detection(det, subset, trusted, repeats)
            out[det.name].append(ThroughputPoint(count, cps, seconds))
    return out


# -- blocklist enrichment ---------------------------------------------------

def load_blocklist(path) -> set[str] | None:
    try:
        with open(path, encoding="utf-8") as fh:
            return {host_name(line.strip().lower().rstrip("."))
                    for line in fh if line.strip() and not line.startswith("#")}
    except FileNotFoundError:
        log.warning("blocklist %s not found; verdicts left unannotated", path)
        return None


def contacted_hosts(ds: Dataset, trusted: np.ndarray | None = None) -> dict[str, set[str]]:
    """Host names (without record type) each device queried, optionally untrusted only."""
    keep = np.ones(len(ds), dtype=bool) if trusted is None else ~trusted[ds.host_codes]
    pairs = np.unique((ds.device_codes[keep].astype(np.int64) << 32)
                      | ds.host_codes[keep].astype(np.int64))
    out: dict[str, set[str]] = {}
    for key in pairs:
        out.setdefault(ds.device_names[int(key >> 32)], set()).add(
            host_name(ds.host_names[int(key & 0xFFFFFFFF)]))
    return out


def enrich_verdicts(verdicts: Mapping[str, bool], contacted: Mapping[str, set[str]],
                    blocklist: set[str] | str | Path | None) -> dict[str, list[str] | str]:
    """Annotate flagged devices with their blocklisted hosts (``"unverified"`` if none).

    A missing blocklist file yields no annotations.
    """
    if isinstance(blocklist, (str, Path)):
        blocklist = load_blocklist(blocklist)
    if blocklist is None:
        return {}
    out: dict[str, list[str] | str] = {}
    for device, flagged in verdicts.items():
        if not flagged:
            continue
        hits = sorted(contacted.get(device, set()) & blocklist)
        out[device] = hits if hits else "unverified"
    return out


# -- reports ----------------------------------------------------------------

@dataclass
class MethodMetrics:
    auc: float | None = None
    tpr_at_1pct: float | None = None
    robustness: float | None = None
    cps_per_second: float | None = None
    runtime_seconds: float | None = None
    cp_count: int | None = None


@dataclass
class EvalReport:
    """Nested metrics: ``metrics[method][technique]``; ``config`` echoes seeds and settings."""

    config: dict
    metrics: dict[str, dict[str, MethodMetrics]] = field(default_factory=dict)
    roc_curves: dict[str, dict[str, RocCurve]] = field(default_factory=dict)
    robustness: dict[str, dict[str, RobustnessResult]] = field(default_factory=dict)
    throughput: dict[str, dict[str, list[ThroughputPoint]]] = field(default_factory=dict)

    def entry(self, method: str, technique: str) -> MethodMetrics:
        return self.metrics.setdefault(method, {}).setdefault(technique, MethodMetrics())

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "metrics": {m: {t: asdict(v) for t, v in per.items()} for m, per in self.metrics.items()},
            "roc": {m: {t: {"auc": c.auc, "points": c.points} for t, c in per.items()}
                    for m, per in self.roc_curves.items()},
            "robustness": {m: {t: asdict(r) for t, r in per.items()}
                           for m, per in self.robustness.items()},
            "throughput": {m: {t: [{"devices": p.devices, "cp_count": p.cp_count,
                                    "seconds": p.seconds, "cps_per_second": p.cps_per_second}
                                   for p in pts] for t, pts in per.items()}
                           for m, per in self.throughput.items()},
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(self.to_dict()), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_summary_csv(self, path) -> None:
        """Rows mirror the results table: metric x technique, one column per method."""
        methods = list(self.metrics)
        rows = [("AUC", "auc"), ("TPR (FPR=1%)", "tpr_at_1pct"), ("Robustness score", "robustness"),
                ("CP classifications / sec", "cps_per_second")]
        techniques = sorted({t for per in self.metrics.values() for t in per})
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["category", "technique", *methods])
            for label, attr in rows:
                for tech in techniques:
                    vals = [getattr(self.metrics[m].get(tech, MethodMetrics()), attr) for m in methods]
                    if all(v is None for v in vals):
                        continue
                    w.writerow([label, tech, *("" if v is None else f"{v:.6g}" for v in vals)])

    def write_curves(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for method, per in self.roc_curves.items():
            for tech, curve in per.items():
                path = directory / f"roc_{method}_{tech}.csv"
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["fpr", "tpr", "threshold"])
                    w.writerows(curve.points)
                written.append(path)
        for method, per in self.robustness.items():
            for tech, res in per.items():
                path = directory / f"robustness_{method}_{tech}.csv"
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["drop_rate", "detection_rate"])
                    w.writerows(zip(res.drop_rates, res.detection_rates))
                written.append(path)
        for method, per in self.throughput.items():
            for tech, pts in per.items():
                path = directory / f"throughput_{method}_{tech}.csv"
                with open(path, "w", encoding="utf-8", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["devices", "cp_count", "seconds", "cps_per_second"])
                    w.writerows((p.devices, p.cp_count, p.seconds, p.cps_per_second) for p in pts)
                written.append(path)
        return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, (np.floating, np.integer)):
        return _jsonable(obj.item())
    return obj


def evaluate_accuracy(detectors: Iterable[Detector], train: Dataset, test: Dataset,
                      technique: str, report: EvalReport) -> dict[str, np.ndarray]:
    """Fit each detector on ``train``, score ``test``; fills ROC/AUC/TPR@1% in ``report``."""
    detectors = list(detectors)
    if not detectors:
        return {}
    labels = test.label_array()
    trusted = host_trust(test, detectors[0].cfg.reputation)
    all_scores = {}
    for det in detectors:
        t0 = time.perf_counter()
        det.fit(train)
        scores = det.score(test, trusted)
        elapsed = time.perf_counter() - t0
        curve = roc(scores, labels)
        m = report.entry(det.name, technique)
        m.auc = curve.auc
        m.tpr_at_1pct = curve.tpr_at_fpr(LOW_FPR)[0]
        m.runtime_seconds = elapsed
        report.roc_curves.setdefault(det.name, {})[technique] = curve
        all_scores[det.name] = scores
        log.info("%s/%s: AUC %.3f, TPR@1%% %.3f", det.name, technique, m.auc, m.tpr_at_1pct)
    return all_scores
