"""Command-line front end: ``dnsroutine {generate,train,detect,eval,bench}``.

Every subcommand takes ``--config FILE`` with flat ``key=value`` lines whose
keys are the long flag names (dashes or underscores); flags given on the
command line win.  Each run echoes its resolved settings to stderr in the
same format, so the echo can be fed back as a config file.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from .baselines import BaywatchConfig
from .classifier import TrainConfig, load_model, save_model
from .core import Dataset, parse_log, read_labels, write_labels, write_log
from .errors import ArgumentError, ConfigError, DnsRoutineError
from .evaluation import (DEVICE_COUNTS, DROP_RATES, OPERATING_FPR, BaywatchDetector, EvalReport,
                         MortonDetector, WarpDetector, contacted_hosts, enrich_verdicts,
                         evaluate_accuracy, load_blocklist, operating_point, robustness_sweep,
                         throughput_bench)
from .injector import (DEFAULT_START_MS, TECHNIQUES, BackgroundSpec,
                       build_labeled_corpus, write_provenance)
from .pipeline import (PipelineConfig, check_compatible, fit_detector, host_trust, score_devices,
                       window_start)
from .reputation import ReputationConfig, load_ranked_hosts, write_ranked_hosts
from .spectral import AggregationConfig

log = logging.getLogger("dnsroutine")

METHODS = ("morton", "baywatch-10", "baywatch-100", "warp")


# -- config files -----------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{n}: expected key=value, got {raw.strip()!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def config_echo(args: argparse.Namespace) -> str:
    skip = {"command", "config", "func", "verbose"}
    lines = [f"# dnsroutine {args.command}"]
    for key in sorted(vars(args)):
        if key in skip:
            continue
        value = getattr(args, key)
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key.replace('_', '-')}={value}")
    return "\n".join(lines) + "\n"


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from exc


def _method_list(text: str) -> list[str]:
    methods = [v.strip() for v in str(text).split(",") if v.strip()]
    bad = set(methods) - set(METHODS)
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
    return methods


def _split(text: str) -> tuple[int, int]:
    parts = _int_list(text)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected TRAIN,TEST device counts: {text!r}")
    return parts[0], parts[1]


# -- shared option groups ---------------------------------------------------

def _add_reputation(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("reputation filter")
    g.add_argument("--ranked-list", help="rank,host CSV of globally popular hosts")
    g.add_argument("--global-max-rank", type=int,
                   help="trust hosts ranked at or above this (default 500000)")
    g.add_argument("--local-min-rate", type=float,
                   help="trust hosts queried by at least this fraction of devices (default 0.03)")


def _add_aggregation(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("aggregation")
    g.add_argument("--bin-seconds", type=int, help="bin width in seconds (default 3600)")
    g.add_argument("--bin-count", type=int, help="bins per series N (default 168)")
    g.add_argument("--window-start", type=int,
                   help="series start in epoch ms (default: first query, bin aligned)")


def _add_corpus(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic corpus")
    g.add_argument("--devices", type=int, default=2000, help="background devices (default 2000)")
    g.add_argument("--bot-fraction", type=float, default=0.05, help="bots per split (default 0.05)")
    g.add_argument("--split", type=_split,
                   help="TRAIN,TEST device counts (default 62.5%%/37.5%% of --devices)")
    g.add_argument("--mean-daily-queries", type=float, default=2000.0,
                   help="average background queries per device per day")
    g.add_argument("--pool-size", type=int, default=10_000, help="popular host pool size")
    g.add_argument("--seed", type=int, default=0, help="seed for generation and training")


def _reputation_cfg(args, ranked: dict | None = None, defaults: dict | None = None
                    ) -> ReputationConfig:
    defaults = defaults or {}
    if ranked is None:
        ranked = load_ranked_hosts(args.ranked_list) if args.ranked_list else {}
    rank = args.global_max_rank
    rate = args.local_min_rate
    return ReputationConfig(
        global_max_rank=int(defaults.get("global_max_rank", 500_000)) if rank is None else rank,
        local_min_rate=float(defaults.get("local_min_rate", 0.03)) if rate is None else rate,
        ranked_hosts=ranked)


def _aggregation_cfg(args, defaults: dict | None = None) -> AggregationConfig:
    defaults = defaults or {}
    return AggregationConfig(
        bin_seconds=args.bin_seconds or int(defaults.get("bin_seconds", 3600)),
        bin_count=args.bin_count or int(defaults.get("bin_count", 168)))


def _default_split(devices: int) -> tuple[int, int]:
    train = int(round(devices * 0.625))
    return train, devices - train


def _background(args) -> BackgroundSpec:
    return BackgroundSpec(device_count=args.devices, host_pool_size=args.pool_size,
                          mean_daily_queries=args.mean_daily_queries, seed=args.seed)


def _load_corpus(log_path, labels_path=None) -> Dataset:
    ds = parse_log(log_path)
    if labels_path:
        ds = ds.with_labels(read_labels(labels_path))
    return ds


# -- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    split = args.split or _default_split(args.devices)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = build_labeled_corpus(_background(args), bot_fraction=args.bot_fraction, split=split,
                                  technique=args.technique)
    for name, ds in (("train", corpus.train), ("test", corpus.test)):
        with open(out / f"{name}_log.csv", "w", encoding="utf-8", newline="") as fh:
            write_log(ds, fh)
        with open(out / f"{name}_labels.csv", "w", encoding="utf-8", newline="") as fh:
            write_labels(ds.labels, fh)
    with open(out / "provenance.csv", "w", encoding="utf-8", newline="") as fh:
        write_provenance(corpus.injections, fh)
    with open(out / "ranked_hosts.csv", "w", encoding="utf-8", newline="") as fh:
        write_ranked_hosts(corpus.ranked_hosts, fh)
    (out / "config.txt").write_text(config_echo(args), encoding="utf-8")
    bots = sum(corpus.train.labels.values()) + sum(corpus.test.labels.values())
    print(f"wrote {out}: {split[0]} train + {split[1]} test devices, {bots} bots "
          f"({args.technique}), window start {DEFAULT_START_MS}")
    return 0


def cmd_train(args) -> int:
    if not args.labels:
        raise ArgumentError("train needs --labels")
    ds = _load_corpus(args.log, args.labels)
    cfg = PipelineConfig(_reputation_cfg(args), _aggregation_cfg(args))
    train_cfg = TrainConfig(dropout_rate=args.dropout, patience_epochs=args.patience,
                            max_epochs=args.max_epochs, batch_size=args.batch_size,
                            learning_rate=args.learning_rate, seed=args.seed,
                            l2_first_layer=args.l2)
    model = fit_detector(ds, cfg, train_cfg, _start(ds, cfg.aggregation, args.window_start))
    save_model(model, args.model)
    meta = model.metadata
    print(f"trained {meta['epochs_run']} epochs; best validation loss "
          f"{meta['best_val_loss']:.6f} at epoch {meta['best_epoch']}; wrote {args.model}")
    return 0


def cmd_detect(args) -> int:
    model = load_model(args.model)
    meta = model.metadata
    agg = _aggregation_cfg(args, meta.get("aggregation"))
    check_compatible(model, agg)
    cfg = PipelineConfig(_reputation_cfg(args, defaults=meta.get("reputation")), agg)
    ds = _load_corpus(args.log, args.labels)
    trusted = host_trust(ds, cfg.reputation)
    start = args.window_start
    scores = score_devices(model, ds, cfg, _start(ds, agg, start), trusted)

    threshold = args.threshold
    if args.fpr is not None:
        if not args.calibration_log or not args.calibration_labels:
            raise ArgumentError("--fpr needs --calibration-log and --calibration-labels")
        cal = _load_corpus(args.calibration_log, args.calibration_labels)
        cal_scores = score_devices(model, cal, cfg, _start(cal, agg, start))
        threshold = operating_point(cal_scores, cal.label_array(), args.fpr).threshold
        print(f"calibrated threshold {threshold:.6f} for FPR <= {args.fpr}", file=sys.stderr)

    verdicts = {d: bool(s >= threshold) for d, s in zip(ds.device_names, scores)}
    notes = None
    if args.blocklist:
        blocklist = load_blocklist(args.blocklist)
        notes = enrich_verdicts(verdicts, contacted_hosts(ds), blocklist)
        if blocklist is None:
            notes = None
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("device_id,score,verdict" + (",blocklisted" if notes is not None else "") + "\n")
        for device, score in zip(ds.device_names, scores):
            row = f"{device},{score:.6f},{int(verdicts[device])}"
            if notes is not None:
                note = notes.get(device, "")
                row += "," + (";".join(note) if isinstance(note, list) else note)
            fh.write(row + "\n")
    print(f"scored {len(ds.device_names)} devices, flagged {sum(verdicts.values())} at "
          f"threshold {threshold:.6f}; wrote {args.out}")
    return 0


def _start(ds: Dataset, agg: AggregationConfig, start: int | None) -> int:
    return window_start(ds, agg) if start is None else start


def _detectors(args, cfg: PipelineConfig):
    out = []
    for m in args.methods:
        if m == "morton":
            out.append(MortonDetector(cfg, TrainConfig(seed=args.seed)))
        elif m == "warp":
            out.append(WarpDetector(cfg))
        else:
            bw = BaywatchConfig(m=int(m.split("-")[1]), confidence=args.confidence, seed=args.seed)
            out.append(BaywatchDetector(cfg, bw))
    return out


def cmd_eval(args) -> int:
    split = args.split or _default_split(args.devices)
    techniques = TECHNIQUES if args.technique == "both" else (args.technique,)
    experiments = (("accuracy", "robustness", "throughput") if args.experiment == "all"
                   else (args.experiment,))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = EvalReport(config={k: v for k, v in vars(args).items()
                                if k not in ("func", "config")})
    for tech in techniques:
        corpus = build_labeled_corpus(_background(args), bot_fraction=args.bot_fraction,
                                      split=split, technique=tech)
        cfg = PipelineConfig(ReputationConfig(ranked_hosts=corpus.ranked_hosts), AggregationConfig())
        dets = _detectors(args, cfg)
        if "accuracy" in experiments or "robustness" in experiments:
            evaluate_accuracy(dets, corpus.train, corpus.test, tech, report)
        if "robustness" in experiments:
            for det in dets:
                res = robustness_sweep(det, corpus.test, DROP_RATES, args.operating_fpr, args.seed)
                report.robustness.setdefault(det.name, {})[tech] = res
                report.entry(det.name, tech).robustness = res.score
        if "throughput" in experiments:
            if "accuracy" not in experiments and "robustness" not in experiments:
                for det in dets:
                    det.fit(corpus.train)
            counts = [c for c in args.device_counts if c <= len(corpus.test.device_names)]
            bench = throughput_bench(dets, corpus.test, counts, args.repeats, args.seed)
            for name, pts in bench.items():
                report.throughput.setdefault(name, {})[tech] = pts
                if pts:
                    m = report.entry(name, tech)
                    m.cps_per_second = pts[-1].cps_per_second
                    m.cp_count = pts[-1].cp_count
    report.write_json(out / "report.json")
    report.write_summary_csv(out / "summary.csv")
    report.write_curves(out / "curves")
    with open(out / "summary.csv", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0


def cmd_bench(args) -> int:
    split = args.split or _default_split(args.devices)
    corpus = build_labeled_corpus(_background(args), bot_fraction=args.bot_fraction, split=split,
                                  technique=args.technique)
    cfg = PipelineConfig(ReputationConfig(ranked_hosts=corpus.ranked_hosts), AggregationConfig())
    dets = _detectors(args, cfg)
    for det in dets:
        det.fit(corpus.train)
    counts = [c for c in args.device_counts if c <= len(corpus.test.device_names)]
    bench = throughput_bench(dets, corpus.test, counts, args.repeats, args.seed)
    print("method,devices,cp_count,seconds,cps_per_second")
    for name, pts in bench.items():
        for p in pts:
            print(f"{name},{p.devices},{p.cp_count},{p.seconds:.6f},{p.cps_per_second:.1f}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dnsroutine",
        description="Detect bots from routine DNS traffic to disreputable hosts.")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress (repeat for debug output)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key=value file of defaults for these flags")
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "Write a seeded synthetic labeled corpus.")
    _add_corpus(p)
    p.add_argument("--technique", choices=TECHNIQUES, default="beaconing",
                   help="bot communication technique to inject")
    p.add_argument("--out", required=True, help="output directory")

    p = add("train", cmd_train, "Fit the spectral detector on a labeled log.")
    p.add_argument("--log", required=True, help="training log CSV")
    p.add_argument("--labels", help="device_id,label CSV")
    p.add_argument("--model", required=True, help="model JSON to write")
    _add_reputation(p)
    _add_aggregation(p)
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-epochs", type=int, default=200)
    g.add_argument("--patience", type=int, default=5, help="early-stopping patience in epochs")
    g.add_argument("--dropout", type=float, default=0.1, help="hidden-layer dropout rate")
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--learning-rate", type=float, default=0.001)
    g.add_argument("--l2", type=float, default=0.0, help="L2 penalty on the first hidden layer")

    p = add("detect", cmd_detect, "Score every device of a log with a trained model.")
    p.add_argument("--log", required=True, help="log CSV to score")
    p.add_argument("--model", required=True, help="model JSON from `train`")
    p.add_argument("--out", required=True, help="verdict CSV to write")
    p.add_argument("--labels", help="optional device list (labels CSV) so silent devices are scored")
    p.add_argument("--threshold", type=float, default=0.5, help="flag devices scoring >= this")
    p.add_argument("--fpr", type=float, help="calibrate the threshold to this FPR instead")
    p.add_argument("--calibration-log", help="labeled log used by --fpr")
    p.add_argument("--calibration-labels", help="labels for --calibration-log")
    p.add_argument("--blocklist", help="one host per line; adds a blocklisted column")
    _add_reputation(p)
    _add_aggregation(p)

    for name, func, text in (("eval", cmd_eval, "Run accuracy/robustness/throughput experiments."),
                             ("bench", cmd_bench, "Time detectors on growing device subsets.")):
        p = add(name, func, text)
        _add_corpus(p)
        p.add_argument("--methods", type=_method_list, default=list(METHODS),
                       help="comma-separated subset of " + ",".join(METHODS))
        p.add_argument("--confidence", type=float, default=0.99, help="Baywatch confidence C")
        p.add_argument("--device-counts", type=_int_list, default=list(DEVICE_COUNTS),
                       help="subset sizes for throughput timing")
        p.add_argument("--repeats", type=int, default=3, help="timed runs per subset")
        if name == "eval":
            p.add_argument("--experiment", default="accuracy",
                           choices=("accuracy", "robustness", "throughput", "all"))
            p.add_argument("--technique", default="both", choices=(*TECHNIQUES, "both"))
            p.add_argument("--operating-fpr", type=float, default=OPERATING_FPR,
                           help="FPR cap fixing the robustness threshold")
            p.add_argument("--out", required=True, help="report directory")
        else:
            p.add_argument("--technique", default="beaconing", choices=TECHNIQUES)
    return parser


def _config_path(argv: Sequence[str]) -> str | None:
    for n, tok in enumerate(argv):
        if tok == "--config" and n + 1 < len(argv):
            return argv[n + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    path = _config_path(argv)
    command = next((tok for tok in argv if tok in _subcommands(parser)), None)
    if path and command:
        values = read_config(path)
        sub = _subcommands(parser)[command]
        actions = {a.dest: a for a in sub._actions}
        unknown = set(values) - set(actions) - {"config"}
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        for key, value in values.items():
            action = actions[key]
            # string defaults pass through the option's type converter; flags still win
            action.default = value
            action.required = False
    return parser.parse_args(argv)


def _subcommands(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    return next(a.choices for a in parser._actions if isinstance(a, argparse._SubParsersAction))


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except DnsRoutineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    sys.stderr.write(config_echo(args))
    try:
        return args.func(args)
    except ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DnsRoutineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
