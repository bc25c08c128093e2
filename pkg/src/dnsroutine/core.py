"""DNS query data model, log parsing/serialization and per-device windows.

Queries are held column-wise: a :class:`Dataset` stores one integer code per
query for the device and host plus an ``int64`` millisecond timestamp, all
sorted by (device, time).  :class:`DnsQuery` tuples are materialized only on
demand.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

from .errors import ArgumentError, CorpusError, FormatError

log = logging.getLogger(__name__)

LOG_HEADER = "timestamp_ms,device_id,qname,qtype"
LABELS_HEADER = "device_id,label"
DEFAULT_QTYPE = "a"
MAX_MALFORMED_FRACTION = 0.01

# Sort key packs (device, time - start) into one int64; 2**42 ms is ~139 years.
_TIME_BITS = 42


def normalize_host(qname: str, qtype: str | None = None) -> str:
    """Canonical host identity: ``"example.com,a"``.

    Lowercases, strips surrounding whitespace and the trailing root dot, and
    appends the record type (``a`` when missing).
    """
    name = qname.strip().lower().rstrip(".")
    rtype = (qtype or "").strip().lower() or DEFAULT_QTYPE
    if not name:
        raise ArgumentError("empty host name")
    return f"{name},{rtype}"


def split_host(host: str) -> tuple[str, str]:
    """Inverse of :func:`normalize_host`: ``"example.com,a"`` -> ``("example.com", "a")``."""
    name, sep, rtype = host.rpartition(",")
    if not sep:
        return host, DEFAULT_QTYPE
    return name, rtype


def host_name(host: str) -> str:
    """Host name without the record-type suffix."""
    return split_host(host)[0]


@dataclass(frozen=True, order=True)
class DnsQuery:
    """One outgoing DNS query."""

    device: str
    host: str
    time: int

    def __post_init__(self):
        if not self.device.strip():
            raise ArgumentError("device identifier is empty")
        if not self.host.strip():
            raise ArgumentError("host is empty")
        if self.time < 0:
            raise ArgumentError(f"negative timestamp {self.time}")


@dataclass(frozen=True, eq=False)
class InputWindow:
    """All queries of one device with ``start <= time < end``, time-ordered.

    ``host_codes`` index into ``host_names``, the vocabulary of the dataset
    the window was cut from.
    """

    device: str
    start: int
    end: int
    times: np.ndarray
    host_codes: np.ndarray
    host_names: Sequence[str]

    def __post_init__(self):
        if self.start >= self.end:
            raise ArgumentError(f"window start {self.start} >= end {self.end}")
        if len(self.times) != len(self.host_codes):
            raise ArgumentError("times and host codes differ in length")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def hosts(self) -> list[str]:
        return [self.host_names[c] for c in self.host_codes]

    @property
    def queries(self) -> list[DnsQuery]:
        return [DnsQuery(self.device, self.host_names[c], int(t))
                for t, c in zip(self.times, self.host_codes)]

    def replace(self, keep: np.ndarray) -> "InputWindow":
        """Window with the same bounds holding only queries where ``keep``."""
        return InputWindow(self.device, self.start, self.end,
                           self.times[keep], self.host_codes[keep], self.host_names)


@dataclass(frozen=True, eq=False)
class Dataset:
    """A labeled or unlabeled corpus of DNS queries.

    Attributes:
        device_names: vocabulary of devices, including zero-traffic devices.
        host_names: vocabulary of normalized hosts.
        device_codes, host_codes, times: one entry per query, sorted by
            (device code, time).
        window: ``(start, end)`` in epoch ms, or ``None`` for an empty corpus.
        labels: device -> 0 (benign) / 1 (bot), when known.
        injected: per-query provenance mask marking synthetic bot traffic.
        malformed: number of log lines rejected while parsing.
    """

    device_names: tuple[str, ...]
    host_names: tuple[str, ...]
    device_codes: np.ndarray
    host_codes: np.ndarray
    times: np.ndarray
    window: tuple[int, int] | None
    labels: Mapping[str, int] | None = None
    injected: np.ndarray | None = None
    malformed: int = 0
    _offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.times)
        if len(self.device_codes) != n or len(self.host_codes) != n:
            raise ArgumentError("query columns differ in length")
        if self.injected is not None and len(self.injected) != n:
            raise ArgumentError("provenance mask length mismatch")
        if n:
            if self.window is None:
                raise ArgumentError("non-empty dataset needs a window")
            lo, hi = self.window
            if self.times.min() < lo or self.times.max() >= hi:
                raise ArgumentError("query timestamps fall outside the dataset window")
        if self.labels is not None:
            unknown = set(self.labels) - set(self.device_names)
            if unknown:
                raise ArgumentError(f"labels for unknown devices: {sorted(unknown)[:5]}")
            bad = {v for v in self.labels.values()} - {0, 1}
            if bad:
                raise ArgumentError(f"labels must be 0 or 1, got {bad}")
        # device_codes are sorted, so device d's queries are rows offsets[d]:offsets[d+1]
        offsets = np.searchsorted(self.device_codes,
                                  np.arange(len(self.device_names) + 1), side="left")
        object.__setattr__(self, "_offsets", offsets)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_columns(cls, device_names, host_names, device_codes, host_codes, times,
                     window=None, labels=None, injected=None, malformed=0) -> "Dataset":
        """Build a dataset from unsorted columns; sorts by (device, time)."""
        device_codes = np.asarray(device_codes, dtype=np.int32)
        host_codes = np.asarray(host_codes, dtype=np.int32)
        times = np.asarray(times, dtype=np.int64)
        if window is None and len(times):
            window = (int(times.min()), int(times.max()) + 1)
        if len(times):
            base = times.min()
            key = (device_codes.astype(np.int64) << _TIME_BITS) | (times - base)
            order = np.argsort(key, kind="stable")
            device_codes, host_codes, times = device_codes[order], host_codes[order], times[order]
            if injected is not None:
                injected = np.asarray(injected, dtype=bool)[order]
        elif injected is not None:
            injected = np.asarray(injected, dtype=bool)
        return cls(tuple(device_names), tuple(host_names), device_codes, host_codes, times,
                   None if window is None else (int(window[0]), int(window[1])),
                   None if labels is None else dict(labels), injected, malformed)

    @classmethod
    def from_queries(cls, queries: Iterable[DnsQuery], window=None, labels=None,
                     extra_devices: Iterable[str] = ()) -> "Dataset":
        dev_index: dict[str, int] = {}
        host_index: dict[str, int] = {}
        d, h, t = [], [], []
        for q in queries:
            d.append(dev_index.setdefault(q.device, len(dev_index)))
            h.append(host_index.setdefault(q.host, len(host_index)))
            t.append(q.time)
        for name in list(extra_devices) + list(labels or ()):
            dev_index.setdefault(name, len(dev_index))
        return cls.from_columns(list(dev_index), list(host_index), d, h, t,
                                window=window, labels=labels)

    # -- access -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.times)

    def device_rows(self, code: int) -> slice:
        return slice(int(self._offsets[code]), int(self._offsets[code + 1]))

    def device_code(self, device: str) -> int | None:
        try:
            return self._device_lookup[device]
        except KeyError:
            return None

    @property
    def _device_lookup(self) -> dict[str, int]:
        lookup = self.__dict__.get("_dev_lookup")
        if lookup is None:
            lookup = {name: i for i, name in enumerate(self.device_names)}
            object.__setattr__(self, "_dev_lookup", lookup)
        return lookup

    @property
    def active_devices(self) -> list[str]:
        """Devices with at least one query."""
        counts = np.diff(self._offsets)
        return [self.device_names[i] for i in np.flatnonzero(counts)]

    def queries(self) -> Iterator[DnsQuery]:
        for d, h, t in zip(self.device_codes, self.host_codes, self.times):
            yield DnsQuery(self.device_names[d], self.host_names[h], int(t))

    def records(self) -> list[tuple[str, str, int]]:
        """Canonically ordered (device, host, time) triples."""
        return sorted((self.device_names[d], self.host_names[h], int(t))
                      for d, h, t in zip(self.device_codes, self.host_codes, self.times))

    def label_array(self) -> np.ndarray:
        """Labels aligned with ``device_names``; unlabeled devices count as benign."""
        labels = self.labels or {}
        return np.array([labels.get(name, 0) for name in self.device_names], dtype=np.int8)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.window == other.window
                and dict(self.labels or {}) == dict(other.labels or {})
                and len(self) == len(other)
                and self.records() == other.records())

    __hash__ = None

    # -- derived datasets ---------------------------------------------------

    def select_devices(self, devices: Iterable[str]) -> "Dataset":
        """Sub-corpus restricted to ``devices`` (order preserved), same window."""
        names = list(dict.fromkeys(devices))
        codes = []
        for name in names:
            code = self.device_code(name)
            if code is None:
                raise ArgumentError(f"unknown device {name!r}")
            codes.append(code)
        remap = np.full(len(self.device_names), -1, dtype=np.int32)
        remap[codes] = np.arange(len(codes), dtype=np.int32)
        rows = np.concatenate([np.arange(self.device_rows(c).start, self.device_rows(c).stop)
                               for c in codes]) if codes else np.zeros(0, dtype=np.int64)
        labels = None
        if self.labels is not None:
            labels = {n: self.labels[n] for n in names if n in self.labels}
        injected = None if self.injected is None else self.injected[rows]
        # rows are grouped in selection order and time-sorted within each device,
        # so the remapped codes are already sorted
        return Dataset(tuple(names), self.host_names, remap[self.device_codes[rows]],
                       self.host_codes[rows], self.times[rows], self.window, labels, injected)

    def with_labels(self, labels: Mapping[str, int]) -> "Dataset":
        names = list(self.device_names) + [n for n in labels if self.device_code(n) is None]
        return Dataset(tuple(names), self.host_names, self.device_codes, self.host_codes,
                       self.times, self.window, dict(labels), self.injected, self.malformed)


def extract_window(ds: Dataset, device: str, start: int, end: int) -> InputWindow:
    """Queries of ``device`` with ``start <= time < end``, time-sorted."""
    if start >= end:
        raise ArgumentError(f"window start {start} >= end {end}")
    if ds.window is None:
        raise CorpusError("cannot cut a window from an empty dataset")
    code = ds.device_code(device)
    empty = InputWindow(device, start, end, np.zeros(0, dtype=np.int64),
                        np.zeros(0, dtype=np.int32), ds.host_names)
    if code is None:
        return empty
    rows = ds.device_rows(code)
    times = ds.times[rows]
    lo, hi = np.searchsorted(times, [start, end], side="left")
    return InputWindow(device, start, end, times[lo:hi], ds.host_codes[rows][lo:hi], ds.host_names)


# -- CSV logs ---------------------------------------------------------------

def _parse_record(line: str) -> tuple[int, str, str] | None:
    parts = line.split(",")
    if len(parts) != 4:
        return None
    ts, device, qname, qtype = parts
    ts = ts.strip()
    if not ts.isdigit():
        return None
    device = device.strip()
    if not device or not qname.strip().rstrip("."):
        return None
    return int(ts), device, normalize_host(qname, qtype)


def parse_log(stream, format: str = "csv",
              max_malformed_fraction: float = MAX_MALFORMED_FRACTION) -> Dataset:
    """Parse a DNS log (``timestamp_ms,device_id,qname,qtype``) into a Dataset.

    ``stream`` may be a binary or text file object, or a path.  Malformed
    records are skipped but counted in ``Dataset.malformed``; a corpus error is
    raised when they exceed ``max_malformed_fraction`` of the records.
    """
    if format != "csv":
        raise FormatError(f"unsupported log format {format!r}")
    text = _open_text(stream)
    try:
        header = text.readline()
        if header.rstrip("\r\n").strip() != LOG_HEADER:
            raise FormatError(f"expected header {LOG_HEADER!r}, got {header.rstrip()!r}")
        dev_index: dict[str, int] = {}
        host_index: dict[str, int] = {}
        d, h, t = [], [], []
        malformed = total = 0
        for line in text:
            line = line.rstrip("\r\n")
            if not line:
                continue
            total += 1
            rec = _parse_record(line)
            if rec is None:
                malformed += 1
                continue
            ts, device, host = rec
            t.append(ts)
            d.append(dev_index.setdefault(device, len(dev_index)))
            h.append(host_index.setdefault(host, len(host_index)))
    except UnicodeDecodeError as exc:
        raise FormatError(f"log is not valid UTF-8: {exc}") from exc
    finally:
        _release(text, stream)
    if malformed:
        log.warning("skipped %d malformed log line(s) of %d", malformed, total)
        if malformed > max_malformed_fraction * total:
            raise CorpusError(f"{malformed} of {total} log lines are malformed "
                              f"(limit {max_malformed_fraction:.2%})")
    return Dataset.from_columns(list(dev_index), list(host_index), d, h, t, malformed=malformed)


def write_log(ds: Dataset, stream: TextIO) -> None:
    """Serialize in the same CSV layout :func:`parse_log` reads."""
    stream.write(LOG_HEADER + "\n")
    split = [split_host(h) for h in ds.host_names]
    names = ds.device_names
    lines = [f"{t},{names[d]},{split[h][0]},{split[h][1].upper()}\n"
             for t, d, h in zip(ds.times.tolist(), ds.device_codes.tolist(), ds.host_codes.tolist())]
    stream.writelines(lines)


def read_labels(stream) -> dict[str, int]:
    text = _open_text(stream)
    labels: dict[str, int] = {}
    try:
        for n, line in enumerate(text):
            line = line.strip()
            if not line or (n == 0 and line == LABELS_HEADER):
                continue
            parts = line.split(",")
            if len(parts) != 2 or parts[1].strip() not in ("0", "1"):
                raise FormatError(f"bad labels line {n + 1}: {line!r}")
            labels[parts[0].strip()] = int(parts[1])
    finally:
        _release(text, stream)
    return labels


def write_labels(labels: Mapping[str, int], stream: TextIO) -> None:
    stream.write(LABELS_HEADER + "\n")
    stream.writelines(f"{dev},{int(lab)}\n" for dev, lab in labels.items())


def _open_text(stream):
    if isinstance(stream, (str, bytes)) or hasattr(stream, "__fspath__"):
        return open(stream, encoding="utf-8", newline="")
    if isinstance(stream, io.TextIOBase):
        return stream
    return io.TextIOWrapper(stream, encoding="utf-8", newline="")


def _release(text, stream) -> None:
    if text is stream:
        return
    if isinstance(stream, (str, bytes)) or hasattr(stream, "__fspath__"):
        text.close()
    else:
        text.detach()  # leave the caller's binary stream open
