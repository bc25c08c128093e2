import numpy as np
import pytest

from dnsroutine.core import Dataset, DnsQuery
from dnsroutine.injector import DEFAULT_START_MS, WEEK_MS, BackgroundSpec, build_labeled_corpus

HOUR = 3_600_000
ACCEPTANCE: list[str] = []  # one PASS/FAIL line per acceptance criterion
WINDOW = (DEFAULT_START_MS, DEFAULT_START_MS + WEEK_MS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_spec():
    return BackgroundSpec(device_count=120, mean_daily_queries=300.0, seed=4)


@pytest.fixture(scope="session")
def small_corpus(small_spec):
    """80 train / 40 test devices with 10% beaconing bots."""
    return build_labeled_corpus(small_spec, bot_fraction=0.1, split=(80, 40),
                                technique="beaconing")


def make_dataset(rows, labels=None, window=WINDOW, extra_devices=()):
    """Dataset from ``(device, host, offset_ms)`` rows relative to the default window."""
    queries = [DnsQuery(d, h, window[0] + t) for d, h, t in rows]
    return Dataset.from_queries(queries, window=window, labels=labels,
                                extra_devices=extra_devices)


def cli_pipeline(workdir, devices=200, seed=11, max_epochs=20):
    """Run generate -> train -> detect in ``workdir``; returns the produced files."""
    from dnsroutine.cli import main

    corpus = workdir / "corpus"
    model = workdir / "model.json"
    verdicts = workdir / "verdicts.csv"
    ranked = str(corpus / "ranked_hosts.csv")
    assert main(["generate", "--devices", str(devices), "--bot-fraction", "0.1",
                 "--mean-daily-queries", "300", "--seed", str(seed), "--out", str(corpus)]) == 0
    assert main(["train", "--log", str(corpus / "train_log.csv"),
                 "--labels", str(corpus / "train_labels.csv"), "--ranked-list", ranked,
                 "--model", str(model), "--seed", str(seed), "--max-epochs", str(max_epochs)]) == 0
    assert main(["detect", "--log", str(corpus / "test_log.csv"), "--model", str(model),
                 "--labels", str(corpus / "test_labels.csv"), "--ranked-list", ranked,
                 "--out", str(verdicts)]) == 0
    return sorted(corpus.iterdir()) + [model, verdicts]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
