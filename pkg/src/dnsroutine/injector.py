"""Synthetic labeled corpora: benign background plus injected bot traffic.

Background traffic stands in for real enterprise logs.  Every device issues
queries from an inhomogeneous Poisson process shaped by a 24-hour activity
profile.  Most queries go to a shared Zipf-popular host pool (which the
reputation filter removes); a small share goes to each device's own long tail
of rare hosts, and some devices run benign periodic software agents that
poll a rarely-installed vendor host.  Bots then get beaconing or multistage
channel (MSC) traffic injected on top.
"""
from __future__ import annotations

import csv
import string
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .core import Dataset, host_name
from .errors import ArgumentError

TECHNIQUES = ("beaconing", "msc")
HOUR_MS = 3_600_000
MINUTE_MS = 60_000
WEEK_MS = 168 * HOUR_MS
# Monday 2020-03-30 00:00 UTC
DEFAULT_START_MS = 1_585_526_400_000

INTERVAL_RANGE = (120, 720)
QUERIES_RANGE = (5, 15)
MSC_HOSTS_RANGE = (3, 6)

# Relative activity per hour of day (UTC), office-hours shaped.
OFFICE_HOURS = (0.05, 0.04, 0.04, 0.04, 0.05, 0.08, 0.15, 0.35, 0.8, 1.0, 1.0, 1.0,
                0.75, 0.95, 1.0, 1.0, 0.9, 0.7, 0.45, 0.3, 0.25, 0.2, 0.12, 0.08)
# Relative activity per weekday, Monday first: enterprise devices idle at weekends.
WORK_WEEK = (1.0, 1.0, 1.0, 1.0, 1.0, 0.15, 0.15)

# Benign agent polling periods (seconds): cron-like cadences seen in enterprise software.
AGENT_PERIODS = (300, 600, 900, 1800, 3600, 14_400, 21_600, 43_200, 86_400)


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


# -- injection --------------------------------------------------------------

@dataclass(frozen=True)
class InjectionSpec:
    """Parameters of one bot's synthetic C&C traffic.

    A tick fires every ``interval_minutes`` starting ``phase_ms`` after the
    window start; each tick emits ``queries_per_interval`` queries spread
    uniformly over ``burst_seconds``.  With ``resample_queries`` the count is
    redrawn from ``queries_range`` at every tick.
    """

    technique: str
    interval_minutes: int
    queries_per_interval: int
    hosts: tuple[str, ...]
    seed: int
    phase_ms: int | None = None
    resample_queries: bool = True
    queries_range: tuple[int, int] = QUERIES_RANGE
    burst_seconds: int = 60
    jitter_seconds: float = 0.0

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ArgumentError(f"technique must be one of {TECHNIQUES}, got {self.technique!r}")
        if not INTERVAL_RANGE[0] <= self.interval_minutes <= INTERVAL_RANGE[1]:
            raise ArgumentError(f"interval_minutes {self.interval_minutes} outside {INTERVAL_RANGE}")
        if not QUERIES_RANGE[0] <= self.queries_per_interval <= QUERIES_RANGE[1]:
            raise ArgumentError(f"queries_per_interval {self.queries_per_interval} "
                                f"outside {QUERIES_RANGE}")
        n = len(self.hosts)
        if self.technique == "beaconing" and n != 1:
            raise ArgumentError("beaconing uses exactly one host")
        if self.technique == "msc" and not MSC_HOSTS_RANGE[0] <= n <= MSC_HOSTS_RANGE[1]:
            raise ArgumentError(f"msc uses {MSC_HOSTS_RANGE[0]}-{MSC_HOSTS_RANGE[1]} hosts, got {n}")
        if len(set(self.hosts)) != n:
            raise ArgumentError("injection hosts must be distinct")
        if self.phase_ms is not None and not 0 <= self.phase_ms < self.interval_minutes * MINUTE_MS:
            raise ArgumentError("phase_ms must lie within one interval")

    @property
    def host_count(self) -> int:
        return len(self.hosts)

    @property
    def interval_ms(self) -> int:
        return self.interval_minutes * MINUTE_MS


class _BareNames(set):
    """Set of host names without record type (skips re-normalization)."""


def random_host_names(rng: np.random.Generator, count: int, taken: Iterable[str] = ()) -> list[str]:
    """Fresh C&C-looking names (``"qzkfj...xw.net,a"``) absent from ``taken``.

    ``taken`` holds host names with or without a record type; pass a set of
    bare names to skip the conversion on large vocabularies.
    """
    taken_names = taken if isinstance(taken, _BareNames) else {host_name(h) for h in taken}
    out_names: set[str] = set()
    letters = np.array(list(string.ascii_lowercase))
    tlds = ("com", "net", "info", "biz", "org", "xyz")
    out: list[str] = []
    while len(out) < count:
        label = "".join(rng.choice(letters, size=int(rng.integers(8, 15))))
        name = f"{label}.{tlds[int(rng.integers(len(tlds)))]}"
        if name not in taken_names and name not in out_names:
            out_names.add(name)
            out.append(f"{name},a")
    return out


def sample_injection_spec(technique: str, seed: int, taken: Iterable[str] = (), **overrides
                          ) -> InjectionSpec:
    """Draw interval, burst size and host set uniformly from the evaluation ranges."""
    rng = _rng(seed, 1)
    interval = int(rng.integers(INTERVAL_RANGE[0], INTERVAL_RANGE[1] + 1))
    queries = int(rng.integers(QUERIES_RANGE[0], QUERIES_RANGE[1] + 1))
    n_hosts = 1 if technique == "beaconing" else int(rng.integers(MSC_HOSTS_RANGE[0],
                                                                  MSC_HOSTS_RANGE[1] + 1))
    hosts = tuple(random_host_names(rng, n_hosts, taken))
    phase = int(rng.integers(0, interval * MINUTE_MS))
    spec = InjectionSpec(technique, interval, queries, hosts, seed, phase_ms=phase)
    return replace(spec, **overrides) if overrides else spec


def injection_schedule(spec: InjectionSpec, start: int, end: int) -> tuple[np.ndarray, np.ndarray]:
    """Timestamps and host indices (into ``spec.hosts``) of the injected queries."""
    rng = _rng(spec.seed, 2)
    phase = spec.phase_ms if spec.phase_ms is not None else int(rng.integers(0, spec.interval_ms))
    ticks = np.arange(start + phase, end, spec.interval_ms, dtype=np.int64)
    if spec.resample_queries:
        lo, hi = spec.queries_range
        per_tick = rng.integers(lo, hi + 1, size=len(ticks))
    else:
        per_tick = np.full(len(ticks), spec.queries_per_interval)
    tick_of = np.repeat(np.arange(len(ticks)), per_tick)
    offsets = rng.integers(0, spec.burst_seconds * 1000, size=len(tick_of))
    times = ticks[tick_of] + offsets
    if spec.jitter_seconds:
        jitter = rng.uniform(-spec.jitter_seconds, spec.jitter_seconds, size=len(ticks))
        times = times + np.round(jitter * 1000).astype(np.int64)[tick_of]
    if spec.technique == "beaconing":
        hosts = np.zeros(len(times), dtype=np.int64)
    else:
        hosts = rng.integers(0, spec.host_count, size=len(times))
    keep = (times >= start) & (times < end)
    times, hosts = times[keep], hosts[keep]
    order = np.argsort(times, kind="stable")
    return times[order], hosts[order]


def inject_many(ds: Dataset, specs: Mapping[str, InjectionSpec]) -> Dataset:
    """Inject traffic for several bots at once (one merge instead of one per bot)."""
    if ds.window is None:
        raise ArgumentError("cannot inject into a dataset without a window")
    start, end = ds.window
    existing = set(ds.host_names)
    existing_names = {host_name(h) for h in ds.host_names}
    host_names = list(ds.host_names)
    new_dev, new_host, new_time = [], [], []
    claimed: set[str] = set()
    for device, spec in specs.items():
        code = ds.device_code(device)
        if code is None:
            raise ArgumentError(f"device {device!r} is not in the dataset")
        for h in spec.hosts:
            if h in existing or host_name(h) in existing_names or h in claimed:
                raise ArgumentError(f"injection host {h!r} already appears in the dataset")
        claimed.update(spec.hosts)
        base = len(host_names)
        host_names.extend(spec.hosts)
        times, hosts = injection_schedule(spec, start, end)
        new_dev.append(np.full(len(times), code, dtype=np.int32))
        new_host.append((hosts + base).astype(np.int32))
        new_time.append(times)
    labels = dict(ds.labels or {})
    labels.update({device: 1 for device in specs})
    injected_old = ds.injected if ds.injected is not None else np.zeros(len(ds), dtype=bool)
    n_new = sum(len(t) for t in new_time)
    return Dataset.from_columns(
        ds.device_names, host_names,
        np.concatenate([ds.device_codes, *new_dev]),
        np.concatenate([ds.host_codes, *new_host]),
        np.concatenate([ds.times, *new_time]),
        window=ds.window, labels=labels,
        injected=np.concatenate([injected_old, np.ones(n_new, dtype=bool)]),
        malformed=ds.malformed)


def inject(ds: Dataset, device: str, spec: InjectionSpec) -> Dataset:
    """Add one bot's C&C traffic to ``device`` and relabel it as a bot."""
    return inject_many(ds, {device: spec})


def apply_drop(ds: Dataset, drop_rate: float, seed: int) -> Dataset:
    """Remove each injected query independently with probability ``drop_rate``."""
    if not 0.0 <= drop_rate <= 1.0:
        raise ArgumentError(f"drop_rate {drop_rate} outside [0, 1]")
    if ds.injected is None:
        raise ArgumentError("dataset carries no injection provenance")
    if drop_rate == 0.0:
        return ds
    rng = _rng(seed, 3)
    idx = np.flatnonzero(ds.injected)
    dropped = idx[rng.random(len(idx)) < drop_rate]
    keep = np.ones(len(ds), dtype=bool)
    keep[dropped] = False
    return Dataset(ds.device_names, ds.host_names, ds.device_codes[keep], ds.host_codes[keep],
                   ds.times[keep], ds.window, ds.labels, ds.injected[keep], ds.malformed)


# -- background -------------------------------------------------------------

@dataclass(frozen=True)
class BackgroundSpec:
    """Knobs of the benign traffic generator.

    Attributes:
        device_count: devices to simulate.
        host_pool_size: hosts in the shared popular pool.
        popularity_skew: Zipf exponent of the pool.
        diurnal_profile: 24 relative hourly activity weights (UTC).
        weekly_profile: 7 relative weekday weights, Monday first; the daily
            mean over a week stays ``mean_daily_queries``.
        mean_daily_queries: average queries per device per day.
        activity_sigma: log-normal spread of per-device activity.
        tail_fraction: share of each device's queries that go to its rare hosts.
        tail_hosts_per_device: mean size of a device's rare-host set.
        tail_namespace_per_device: rare-host namespace size per device; rare
            hosts are drawn from it with ``tail_skew`` so a few are shared.
        agent_fraction: share of devices running a benign periodic agent.
        agent_products: number of distinct agent products (one host each).
        agent_exact_fraction: share of products polling without jitter.
    """

    device_count: int
    host_pool_size: int = 10_000
    popularity_skew: float = 1.1
    diurnal_profile: tuple[float, ...] = OFFICE_HOURS
    weekly_profile: tuple[float, ...] = WORK_WEEK
    mean_daily_queries: float = 2000.0
    seed: int = 0
    activity_sigma: float = 0.5
    tail_fraction: float = 0.02
    tail_hosts_per_device: float = 30.0
    tail_namespace_per_device: int = 40
    tail_skew: float = 1.0
    agent_fraction: float = 0.1
    agent_products: int = 25
    agent_exact_fraction: float = 0.5
    agent_periods: tuple[int, ...] = AGENT_PERIODS
    qtype_aaaa_fraction: float = 0.15

    def __post_init__(self):
        if self.device_count < 1:
            raise ArgumentError("device_count must be positive")
        if self.host_pool_size < 1:
            raise ArgumentError("host_pool_size must be positive")
        profile = np.asarray(self.diurnal_profile, dtype=float)
        if profile.shape != (24,) or (profile < 0).any() or not (profile > 0).any():
            raise ArgumentError("diurnal_profile needs 24 non-negative weights, one positive")
        weekly = np.asarray(self.weekly_profile, dtype=float)
        if weekly.shape != (7,) or (weekly < 0).any() or not (weekly > 0).any():
            raise ArgumentError("weekly_profile needs 7 non-negative weights, one positive")
        if self.mean_daily_queries < 0:
            raise ArgumentError("mean_daily_queries must be non-negative")
        for name in ("tail_fraction", "agent_fraction", "agent_exact_fraction",
                     "qtype_aaaa_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ArgumentError(f"{name} must lie in [0, 1]")


def device_ids(rng: np.random.Generator, count: int) -> list[str]:
    """Anonymized 8-hex-digit device identifiers, unique."""
    ids: list[str] = []
    seen: set[str] = set()
    while len(ids) < count:
        for value in rng.integers(0, 2 ** 32, size=count - len(ids)):
            name = f"{int(value):08x}"
            if name not in seen:
                seen.add(name)
                ids.append(name)
    return ids


def pool_host_names(spec: BackgroundSpec) -> list[str]:
    rng = _rng(spec.seed, 10)
    aaaa = rng.random(spec.host_pool_size) < spec.qtype_aaaa_fraction
    return [f"www.site{r + 1}.com,{'aaaa' if v6 else 'a'}" for r, v6 in enumerate(aaaa)]


def ranked_list_for(spec: BackgroundSpec, capacity: int = 1_000_000) -> dict[str, int]:
    """Popularity ranks for the pool, spread over a ``capacity``-row list.

    Pool rank ``r`` maps to list rank ``r * capacity / pool``, so only the
    more popular part of the pool falls under a global threshold.
    """
    step = max(1, capacity // spec.host_pool_size)
    return {f"www.site{r + 1}.com": (r + 1) * step for r in range(spec.host_pool_size)}


def _zipf_cdf(n: int, skew: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** -skew
    cdf = np.cumsum(w)
    return cdf / cdf[-1]


def generate_background(spec: BackgroundSpec, window: tuple[int, int] = (
        DEFAULT_START_MS, DEFAULT_START_MS + WEEK_MS)) -> Dataset:
    """Benign corpus over ``window``; every device is labeled 0."""
    start, end = int(window[0]), int(window[1])
    if start >= end:
        raise ArgumentError("window start must precede its end")
    rng = _rng(spec.seed, 0)
    n_dev = spec.device_count
    devices = device_ids(rng, n_dev)

    # hourly Poisson counts shaped by the profile
    first_hour = start // HOUR_MS
    n_slots = -(-(end - first_hour * HOUR_MS) // HOUR_MS)
    slot_start = (first_hour + np.arange(n_slots)) * HOUR_MS
    slot_lo = np.maximum(slot_start, start)
    slot_hi = np.minimum(slot_start + HOUR_MS, end)
    profile = np.asarray(spec.diurnal_profile, dtype=float)
    weekly = np.asarray(spec.weekly_profile, dtype=float)
    hourly = profile[(slot_start // HOUR_MS) % 24] / profile.sum()
    # epoch day 0 was a Thursday
    hourly = hourly * weekly[(slot_start // (24 * HOUR_MS) + 3) % 7] / weekly.mean()
    hourly = hourly * (slot_hi - slot_lo) / HOUR_MS
    activity = rng.lognormal(0.0, spec.activity_sigma, size=n_dev)
    activity /= activity.mean()
    rates = spec.mean_daily_queries * activity[:, None] * hourly[None, :]
    counts = rng.poisson(rates)
    total = int(counts.sum())
    dev = np.repeat(np.arange(n_dev, dtype=np.int32), counts.sum(axis=1))
    slot = np.repeat(np.tile(np.arange(n_slots), n_dev), counts.ravel())
    width = (slot_hi - slot_lo)[slot]
    times = slot_lo[slot] + (rng.random(total) * width).astype(np.int64)

    host_names = pool_host_names(spec)
    hosts = np.empty(total, dtype=np.int32)
    is_tail = rng.random(total) < spec.tail_fraction
    n_pool = int((~is_tail).sum())
    hosts[~is_tail] = np.searchsorted(_zipf_cdf(spec.host_pool_size, spec.popularity_skew),
                                      rng.random(n_pool), side="right")
    hosts[~is_tail] = np.minimum(hosts[~is_tail], spec.host_pool_size - 1)

    # each device's rare hosts, drawn from a shared namespace so a few recur
    namespace = max(1, spec.tail_namespace_per_device * n_dev)
    ns_cdf = _zipf_cdf(namespace, spec.tail_skew)
    k = 1 + rng.poisson(max(spec.tail_hosts_per_device - 1, 0), size=n_dev)
    draws = np.searchsorted(ns_cdf, rng.random(int(k.sum())), side="right")
    draws = np.minimum(draws, namespace - 1)
    used, tail_code = np.unique(draws, return_inverse=True)
    tail_code = tail_code + len(host_names)
    host_names.extend(f"{_tail_label(int(i))}.net,a" for i in used)
    # within a device, its rare hosts get Zipf(1) weights over a random order
    bounds = np.concatenate([[0], np.cumsum(k)])
    tail_dev = dev[is_tail]
    u = rng.random(len(tail_dev))
    local_cdf = np.concatenate([_zipf_cdf(int(n), 1.0) for n in k])
    # shift each device's cdf by its index so one searchsorted serves all devices
    shifted = local_cdf + np.repeat(np.arange(n_dev), k)
    pick = np.searchsorted(shifted, tail_dev + u, side="right")
    pick = np.minimum(pick, bounds[tail_dev + 1] - 1)
    hosts[is_tail] = tail_code[pick]

    dev_parts, host_parts, time_parts = [dev], [hosts], [times]
    agents = _agent_traffic(spec, rng, start, end, len(host_names))
    if agents is not None:
        a_dev, a_host, a_time, a_names = agents
        host_names.extend(a_names)
        dev_parts.append(a_dev)
        host_parts.append(a_host)
        time_parts.append(a_time)

    labels = {d: 0 for d in devices}
    return Dataset.from_columns(devices, host_names, np.concatenate(dev_parts),
                                np.concatenate(host_parts), np.concatenate(time_parts),
                                window=(start, end), labels=labels,
                                injected=np.zeros(sum(len(t) for t in time_parts), dtype=bool))


def _tail_label(i: int) -> str:
    # deterministic, varied-looking label for namespace entry i
    alphabet = string.ascii_lowercase + string.digits
    out = []
    x = i * 2654435761 % 2 ** 40 + i
    for _ in range(9):
        x, r = divmod(x, len(alphabet))
        out.append(alphabet[r])
    return "".join(out) + f"-{i}"


def _agent_traffic(spec: BackgroundSpec, rng, start, end, host_base):
    n_dev = spec.device_count
    if spec.agent_fraction <= 0 or spec.agent_products <= 0:
        return None
    hosts_with = np.flatnonzero(rng.random(n_dev) < spec.agent_fraction)
    if not len(hosts_with):
        return None
    n_prod = spec.agent_products
    periods = rng.choice(np.asarray(spec.agent_periods), size=n_prod)
    exact = rng.random(n_prod) < spec.agent_exact_fraction
    jitter_frac = np.where(exact, 0.0, rng.uniform(0.01, 0.1, size=n_prod))
    office_only = rng.random(n_prod) < 0.5
    names = [f"update{p}.vendor{p}-agent.com,a" for p in range(n_prod)]
    profile = np.asarray(spec.diurnal_profile, dtype=float)
    active_hour = profile >= 0.5 * profile.max()
    weekly = np.asarray(spec.weekly_profile, dtype=float)
    active_day = weekly >= 0.5 * weekly.max()
    product_of = rng.integers(0, n_prod, size=len(hosts_with))
    d_parts, h_parts, t_parts = [], [], []
    for d, p in zip(hosts_with, product_of):
        period_ms = int(periods[p]) * 1000
        phase = int(rng.integers(0, period_ms))
        ticks = np.arange(start + phase, end, period_ms, dtype=np.int64)
        if jitter_frac[p] > 0:
            half = jitter_frac[p] * period_ms
            ticks = ticks + rng.uniform(-half, half, size=len(ticks)).astype(np.int64)
        if office_only[p]:
            ticks = ticks[active_hour[(ticks // HOUR_MS) % 24]
                          & active_day[(ticks // (24 * HOUR_MS) + 3) % 7]]
        ticks = ticks[(ticks >= start) & (ticks < end)]
        d_parts.append(np.full(len(ticks), d, dtype=np.int32))
        h_parts.append(np.full(len(ticks), host_base + p, dtype=np.int32))
        t_parts.append(ticks)
    return (np.concatenate(d_parts), np.concatenate(h_parts), np.concatenate(t_parts), names)


# -- labeled corpus ---------------------------------------------------------

@dataclass
class LabeledCorpus:
    train: Dataset
    test: Dataset
    injections: dict[str, InjectionSpec] = field(default_factory=dict)
    ranked_hosts: dict[str, int] = field(default_factory=dict)


def build_labeled_corpus(bg: BackgroundSpec, bot_fraction: float = 0.05,
                         split: tuple[int, int] = (10_000, 6_000), technique: str = "beaconing",
                         window: tuple[int, int] = (DEFAULT_START_MS, DEFAULT_START_MS + WEEK_MS),
                         background: Dataset | None = None, **injection_overrides
                         ) -> LabeledCorpus:
    """Background corpus split into train/test with ``bot_fraction`` bots in each.

    Devices are assigned to the splits at random; within every split the bots
    are a uniform sample, so both keep the same label proportion.
    """
    if not 0.0 < bot_fraction < 1.0:
        raise ArgumentError(f"bot_fraction must lie in (0, 1), got {bot_fraction}")
    if technique not in TECHNIQUES:
        raise ArgumentError(f"technique must be one of {TECHNIQUES}")
    n_train, n_test = split
    if n_train < 1 or n_test < 1:
        raise ArgumentError("both splits need devices")
    if bg.device_count < n_train + n_test:
        raise ArgumentError(f"background has {bg.device_count} devices, split needs "
                            f"{n_train + n_test}")
    if background is None:
        background = generate_background(bg, window)
    rng = _rng(bg.seed, 20)
    order = rng.permutation(len(background.device_names))
    names = background.device_names
    train_devs = [names[i] for i in order[:n_train]]
    test_devs = [names[i] for i in order[n_train:n_train + n_test]]

    taken = _BareNames(host_name(h) for h in background.host_names)
    injections: dict[str, InjectionSpec] = {}
    parts = []
    for part, devs in ((0, train_devs), (1, test_devs)):
        n_bots = int(round(bot_fraction * len(devs)))
        if n_bots < 1:
            raise ArgumentError(f"split of {len(devs)} devices gets no bots at {bot_fraction}")
        bots = [devs[i] for i in np.sort(rng.choice(len(devs), size=n_bots, replace=False))]
        specs = {}
        for j, device in enumerate(bots):
            spec = sample_injection_spec(technique, seed=int(rng.integers(2 ** 31)),
                                         taken=taken, **injection_overrides)
            taken.update(host_name(h) for h in spec.hosts)
            specs[device] = spec
        injections.update(specs)
        parts.append(inject_many(background.select_devices(devs), specs))
    return LabeledCorpus(parts[0], parts[1], injections, ranked_list_for(bg))


def write_provenance(injections: Mapping[str, InjectionSpec], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["device_id", "technique", "interval_minutes", "queries_per_interval",
                     "host_count", "hosts"])
    for device, spec in injections.items():
        writer.writerow([device, spec.technique, spec.interval_minutes, spec.queries_per_interval,
                         spec.host_count, ";".join(host_name(h) for h in spec.hosts)])


def read_provenance(stream) -> list[dict]:
    rows = list(csv.DictReader(stream))
    for row in rows:
        row["hosts"] = row["hosts"].split(";") if row["hosts"] else []
        for key in ("interval_minutes", "queries_per_interval", "host_count"):
            row[key] = int(row[key])
    return rows
