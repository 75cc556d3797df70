"""Trace parsing, grid alignment and counter-to-rate conversion.

Canonical trace format, one record per line:

    #reveal-trace v1 interval_ms=100
    host,timestamp_ms,channel,value

`value` is a decimal literal or `NA`. Lines starting with `#` other than the
header are comments. The minimum timestamp in the file becomes t=0.

A `SeriesStore` holds one wide frame per host: the index is the grid cell
(0..N-1, contiguous), columns are channels, NaN marks a missing cell.
"""

from __future__ import annotations

import io
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import CorruptTraceError
from .registry import FALLBACK, Category, MetricDescriptor, Registry, classify_channel

logger = logging.getLogger(__name__)

DEFAULT_INTERVAL_MS = 100
TRACE_HEADER_PREFIX = "#reveal-trace v1"
# A window with more missing cells than this is excluded for that channel.
MAX_MISSING_FRACTION = 0.30
# More malformed lines than this is a corrupt trace.
MAX_MALFORMED_FRACTION = 0.50

_HEADER_RE = re.compile(r"^#reveal-trace\s+v1(?:\s+interval_ms=(\d+))?\s*$")

@dataclass(frozen=True)
class MetricSample:
    """One timestamped reading of one channel on one host."""

    host: str
    timestamp: int
    channel: str
    value: float  # NaN = explicitly missing


@dataclass
class SeriesStore:
    """Per-host, per-channel values on a shared regular grid."""

    registry: Registry
    interval_ms: int = DEFAULT_INTERVAL_MS
    frames: dict[str, pd.DataFrame] = field(default_factory=dict)
    epoch_ms: int = 0
    malformed_count: int = 0
    counter_resets: int = 0
    warnings: list[str] = field(default_factory=list)
    fallback: MetricDescriptor = FALLBACK

    def hosts(self) -> list[str]:
        return sorted(self.frames)

    def channels(self, host: str | None = None) -> list[str]:
        """Channels of one host, or the sorted union over all hosts."""
        if host is not None:
            return list(self.frames[host].columns)
        names: set[str] = set()
        for frame in self.frames.values():
            names.update(frame.columns)
        return sorted(names)

    def series(self, host: str, channel: str) -> np.ndarray:
        return self.frames[host][channel].to_numpy(dtype=float)

    def signal(self, host: str, channel: str) -> np.ndarray:
        """Values as analyzed: per-second rates for counters, raw otherwise."""
        values = self.series(host, channel)
        if self.category(channel) == Category.COUNTER:
            return counter_to_rate(values, self.interval_ms).values
        return values

    def n_cells(self, host: str) -> int:
        return len(self.frames[host])

    def duration_ms(self, host: str) -> int:
        return self.n_cells(host) * self.interval_ms

    def descriptor(self, channel: str) -> MetricDescriptor:
        found = classify_channel(channel, self.registry, self.fallback)
        assert found is not None
        return found

    def category(self, channel: str) -> Category:
        return self.descriptor(channel).category

    def is_empty(self) -> bool:
        return not self.frames

    def with_frames(self, frames: dict[str, pd.DataFrame]) -> SeriesStore:
        return replace(self, frames=frames, warnings=list(self.warnings))

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)


# =============================================================================
# Parsing
# =============================================================================


def _parse_value(text: str) -> float | None:
    """Parse a value field; NaN for `NA`, None when malformed."""
    if text == "NA":
        return math.nan
    try:
        value = float(text)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


def _parse_record(line: str) -> MetricSample | None:
    fields = line.split(",")
    if len(fields) != 4:
        return None
    host, ts_text, channel, value_text = (f.strip() for f in fields)
    if not host or not channel:
        return None
    try:
        timestamp = int(ts_text)
    except ValueError:
        return None
    if timestamp < 0:
        return None
    value = _parse_value(value_text)
    if value is None:
        return None
    return MetricSample(host=host, timestamp=timestamp, channel=channel, value=value)


def _read_lines(source: bytes | str | IO | Path) -> Iterator[str | None]:
    """Lines of the source; None for a line that is not valid UTF-8."""
    if isinstance(source, Path):
        data: bytes | str = source.read_bytes()
    elif isinstance(source, (bytes, str)):
        data = source
    else:
        data = source.read()
    if isinstance(data, str):
        yield from data.splitlines()
        return
    for raw in data.splitlines():
        try:
            yield raw.decode("utf-8")
        except UnicodeDecodeError:
            yield None


def parse_trace(
    source: bytes | str | IO | Path,
    registry: Registry,
    interval_ms: int | None = None,
) -> SeriesStore:
    """Parse a canonical trace into a grid-aligned store.

    The grid interval comes from `interval_ms`, else the header, else 100 ms.
    Malformed lines are counted and skipped.

    Raises:
        CorruptTraceError: more than half of the records are malformed.
    """
    lines = _read_lines(source)
    header_interval: int | None = None
    samples: list[MetricSample] = []
    malformed = 0
    total = 0

    for line_num, raw in enumerate(lines, start=1):
        if raw is None:
            total += 1
            malformed += 1
            logger.debug("undecodable trace record on line %d", line_num)
            continue
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            match = _HEADER_RE.match(line)
            if match and match.group(1):
                header_interval = int(match.group(1))
            continue
        total += 1
        sample = _parse_record(line)
        if sample is None:
            malformed += 1
            logger.debug("malformed trace record on line %d: %r", line_num, line[:80])
            continue
        samples.append(sample)

    if total and malformed / total > MAX_MALFORMED_FRACTION:
        raise CorruptTraceError(
            f"corrupt trace: {malformed} of {total} records malformed"
        )

    interval = interval_ms or header_interval or DEFAULT_INTERVAL_MS
    store = store_from_samples(samples, registry, interval)
    store.malformed_count = malformed
    if malformed:
        store.warn(f"skipped {malformed} malformed trace record(s)")
    return store


def load_trace(
    path: Path, registry: Registry, interval_ms: int | None = None
) -> SeriesStore:
    return parse_trace(path, registry, interval_ms)


# =============================================================================
# Grid alignment
# =============================================================================


def _bucket(
    long: pd.DataFrame,
    interval_ms: int,
    counter_channels: set[str],
    n_cells: dict[str, int] | None = None,
) -> dict[str, pd.DataFrame]:
    """Aggregate long-form samples (host, timestamp, channel, value) into cells.

    Dynamic/Static channels average the samples of a cell; Counter channels
    keep the last observed value.
    """
    if long.empty:
        return {}
    long = long.sort_values(["host", "timestamp"], kind="stable")
    long = long.assign(cell=long["timestamp"] // interval_ms)
    grouped = long.groupby(["host", "channel", "cell"], sort=True)["value"]
    means = grouped.mean()
    lasts = grouped.last()
    is_counter = means.index.get_level_values("channel").isin(counter_channels)
    values = means.where(~is_counter, lasts)

    frames: dict[str, pd.DataFrame] = {}
    for host, per_host in values.groupby(level="host", sort=True):
        wide = per_host.droplevel("host").unstack("channel")
        size = int(wide.index.max()) + 1
        if n_cells is not None:
            size = max(size, n_cells.get(host, 0))
        wide = wide.reindex(range(size))
        wide = wide.reindex(columns=sorted(wide.columns))
        wide.index.name = "cell"
        wide.columns.name = None
        frames[str(host)] = wide.astype(float)
    return frames


def _counter_channels(channels: Iterable[str], store_like: SeriesStore) -> set[str]:
    return {c for c in channels if store_like.category(c) == Category.COUNTER}


def store_from_samples(
    samples: Iterable[MetricSample],
    registry: Registry,
    interval_ms: int = DEFAULT_INTERVAL_MS,
) -> SeriesStore:
    """Build a store from samples; the minimum timestamp becomes t=0."""
    long = pd.DataFrame(
        [(s.host, s.timestamp, s.channel, s.value) for s in samples],
        columns=["host", "timestamp", "channel", "value"],
    )
    store = SeriesStore(registry=registry, interval_ms=interval_ms)
    if long.empty:
        return store
    epoch = int(long["timestamp"].min())
    long["timestamp"] = long["timestamp"] - epoch
    counters = _counter_channels(long["channel"].unique(), store)
    store.frames = _bucket(long, interval_ms, counters)
    store.epoch_ms = epoch
    return store


def align_to_grid(store: SeriesStore, interval_ms: int) -> SeriesStore:
    """Re-grid a store at `interval_ms`.

    Each existing cell is treated as a sample at `cell * store.interval_ms`
    and assigned to cell `floor(t / interval_ms)`; realigning at the current
    interval is the identity.
    """
    if interval_ms <= 0:
        raise ValueError(f"interval_ms must be positive, got {interval_ms}")
    if interval_ms == store.interval_ms:
        frames = {h: f.copy() for h, f in store.frames.items()}
        aligned = store.with_frames(frames)
        return aligned

    parts: list[pd.DataFrame] = []
    n_cells: dict[str, int] = {}
    for host, frame in store.frames.items():
        long = frame.stack(future_stack=True).dropna().reset_index()
        long.columns = ["timestamp", "channel", "value"]
        long["timestamp"] = long["timestamp"] * store.interval_ms
        long.insert(0, "host", host)
        parts.append(long)
        n_cells[host] = -(-len(frame) * store.interval_ms // interval_ms)
    long = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame()
    counters = _counter_channels(store.channels(), store)
    frames = _bucket(long, interval_ms, counters, n_cells) if len(long) else {}
    # Channels with no observed value at all survive as all-missing columns.
    for host, frame in store.frames.items():
        target = frames.get(host)
        if target is None:
            target = pd.DataFrame(index=pd.RangeIndex(n_cells[host], name="cell"))
        frames[host] = target.reindex(columns=sorted(frame.columns)).astype(float)
    aligned = store.with_frames(frames)
    aligned.interval_ms = interval_ms
    return aligned


# =============================================================================
# Counters
# =============================================================================


class Rates(NamedTuple):
    """Per-second rates of a counter channel."""

    values: np.ndarray
    resets: int


def counter_to_rate(series: Sequence[float] | np.ndarray, interval_ms: int) -> Rates:
    """Convert a cumulative counter on a regular grid to per-second rates.

    `rate[0]` is missing; a negative delta (counter reset or wrap) is missing
    at that index and counted in `resets`.
    """
    values = np.asarray(series, dtype=float)
    rates = np.full(values.shape, np.nan)
    if values.size < 2:
        return Rates(rates, 0)
    deltas = np.diff(values)
    negative = deltas < 0
    seconds = interval_ms / 1000.0
    rates[1:] = np.where(negative, np.nan, deltas / seconds)
    resets = int(np.count_nonzero(negative))
    if resets:
        logger.debug("counter reset detected at %d index(es)", resets)
    return Rates(rates, resets)


def positive_deltas(series: np.ndarray) -> np.ndarray:
    """Per-cell increments of a counter; missing and negative deltas become 0.

    Element 0 has no predecessor and is 0.
    """
    deltas = np.zeros(series.shape, dtype=float)
    if series.size > 1:
        step = np.diff(series)
        deltas[1:] = np.where(np.isfinite(step) & (step > 0), step, 0.0)
    return deltas


# =============================================================================
# Missing-value policy
# =============================================================================


def locf_fill(series: np.ndarray) -> np.ndarray:
    """Last observation carried forward; a leading gap takes the first observation."""
    filled = pd.Series(series, dtype=float).ffill().bfill()
    return filled.to_numpy()


def missing_fraction(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size if mask.size else 1.0


def fill_missing(values: np.ndarray) -> np.ndarray | None:
    """Gap-filled copy of one window's values, or None past the exclusion bound."""
    values = np.asarray(values, dtype=float)
    if missing_fraction(np.isnan(values)) > MAX_MISSING_FRACTION:
        return None
    return locf_fill(values)


# =============================================================================
# Serialization
# =============================================================================


def _format_value(value: float) -> str:
    if math.isnan(value):
        return "NA"
    return repr(float(value))


def serialize_store(store: SeriesStore) -> str:
    """Write a store as a canonical trace (relative timestamps, NA for gaps)."""
    out = io.StringIO()
    out.write(f"{TRACE_HEADER_PREFIX} interval_ms={store.interval_ms}\n")
    for host in store.hosts():
        frame = store.frames[host]
        columns = list(frame.columns)
        matrix = frame.to_numpy(dtype=float)
        for row, cell in enumerate(frame.index):
            timestamp = int(cell) * store.interval_ms
            for col, channel in enumerate(columns):
                out.write(f"{host},{timestamp},{channel},{_format_value(matrix[row, col])}\n")
    return out.getvalue()


def write_trace(store: SeriesStore, path: Path) -> None:
    path.write_text(serialize_store(store), encoding="utf-8")
