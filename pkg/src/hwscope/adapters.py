"""Adapters from raw collector output to canonical samples.

Supported inputs:
- perf-stat interval CSV (`perf stat -I <ms> -x, [-A]`)
- procfs snapshot logs (/proc/stat, /proc/meminfo, /proc/net/dev,
  /proc/diskstats): the file content repeated after `@<timestamp_ms>` lines
- nvidia-smi query CSV (`--query-gpu=timestamp,index,... --format=csv`)

Every adapter returns `MetricSample`s with the timestamps as given by the
collector (read-start vs read-end is not distinguishable, so alignment is
uncertain by up to one grid cell).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import re
from collections import defaultdict
from typing import Callable, Iterator

from dateutil.parser import parse as dateutil_parse

from .errors import ConfigError
from .ingest import MetricSample

logger = logging.getLogger(__name__)


def _to_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        return math.nan
    return value if math.isfinite(value) else math.nan


# =============================================================================
# perf stat
# =============================================================================

# Event names normalized to registry names.
_PERF_EVENT_ALIASES = {
    "cycle_activity.stalls_l3_miss": "stalls_l3_miss",
    "cpu-cycles": "cycles",
    "mem_inst_retired.all_loads": "mem-loads",
    "mem_inst_retired.all_stores": "mem-stores",
}


def _perf_event_name(raw: str) -> str:
    name = raw.strip()
    # cpu/event=.../ and cpu_core/name/ syntaxes
    match = re.match(r"^[\w-]+/([^/]+)/\w*$", name)
    if match:
        name = match.group(1)
    name = name.split(":", 1)[0]
    return _PERF_EVENT_ALIASES.get(name, name)


def parse_perf_stat(text: str, host: str) -> list[MetricSample]:
    """Parse `perf stat -I -x,` output.

    perf reports per-interval counts; they are accumulated so the channels
    carry cumulative Counter semantics like every other counter source.
    """
    totals: dict[str, float] = defaultdict(float)
    samples: list[MetricSample] = []
    for row in csv.reader(io.StringIO(text)):
        if not row or row[0].lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in row]
        try:
            seconds = float(fields[0])
        except ValueError:
            continue
        instance = ""
        if len(fields) > 1 and re.match(r"^(CPU|S\d+-D)\d*", fields[1]):
            instance = fields[1].lower()
            fields = [fields[0], *fields[2:]]
        if len(fields) < 4:
            continue
        count_text, event = fields[1], _perf_event_name(fields[3])
        channel = f"{instance}.{event}" if instance else event
        count = _to_float(count_text)  # "<not counted>" becomes NaN
        if not math.isnan(count):
            totals[channel] += count
            value = totals[channel]
        else:
            value = math.nan
        samples.append(
            MetricSample(host, int(round(seconds * 1000)), channel, value)
        )
    return samples


# =============================================================================
# procfs snapshot logs
# =============================================================================

_STAT_FIELDS = ["user", "nice", "system", "idle", "iowait", "irq", "softirq", "steal"]
_NETDEV_FIELDS = {
    0: "rx_bytes",
    1: "rx_packets",
    2: "rx_errs",
    3: "rx_drop",
    8: "tx_bytes",
    9: "tx_packets",
    10: "tx_errs",
    11: "tx_drop",
}
_DISKSTATS_FIELDS = [
    "reads_completed",
    "reads_merged",
    "sectors_read",
    "time_spent_reading",
    "writes_completed",
    "writes_merged",
    "sectors_written",
    "time_spent_writing",
    "io_in_progress",
    "time_spent_doing_io",
    "weighted_time_spent_io",
]


def _snapshots(text: str) -> Iterator[tuple[int, list[str]]]:
    """Split an `@<timestamp_ms>`-delimited log into (timestamp, lines)."""
    timestamp: int | None = None
    lines: list[str] = []
    for raw in text.splitlines():
        if raw.startswith("@"):
            if timestamp is not None:
                yield timestamp, lines
            timestamp = int(raw[1:].strip())
            lines = []
        elif raw.strip():
            lines.append(raw)
    if timestamp is not None:
        yield timestamp, lines


def parse_proc_stat(text: str, host: str) -> list[MetricSample]:
    samples: list[MetricSample] = []
    for ts, lines in _snapshots(text):
        for line in lines:
            parts = line.split()
            if parts[0].startswith("cpu"):
                instance = parts[0] if parts[0] != "cpu" else "all"
                for name, value in zip(_STAT_FIELDS, parts[1:]):
                    samples.append(
                        MetricSample(host, ts, f"{instance}.{name}", _to_float(value))
                    )
            elif parts[0] == "intr" and len(parts) > 1:
                samples.append(MetricSample(host, ts, "IRQ", _to_float(parts[1])))
    return samples


def parse_proc_meminfo(text: str, host: str) -> list[MetricSample]:
    samples: list[MetricSample] = []
    for ts, lines in _snapshots(text):
        for line in lines:
            key, _, rest = line.partition(":")
            parts = rest.split()
            if not parts:
                continue
            samples.append(MetricSample(host, ts, key.strip(), _to_float(parts[0])))
    return samples


def parse_proc_net_dev(text: str, host: str) -> list[MetricSample]:
    samples: list[MetricSample] = []
    for ts, lines in _snapshots(text):
        for line in lines:
            if ":" not in line:
                continue  # header lines
            iface, _, rest = line.partition(":")
            values = rest.split()
            for index, name in _NETDEV_FIELDS.items():
                if index < len(values):
                    samples.append(
                        MetricSample(
                            host, ts, f"{iface.strip()}.{name}", _to_float(values[index])
                        )
                    )
    return samples


def parse_proc_diskstats(text: str, host: str) -> list[MetricSample]:
    samples: list[MetricSample] = []
    for ts, lines in _snapshots(text):
        for line in lines:
            parts = line.split()
            if len(parts) < 3 + len(_DISKSTATS_FIELDS):
                continue
            device = parts[2]
            for name, value in zip(_DISKSTATS_FIELDS, parts[3:]):
                samples.append(MetricSample(host, ts, f"{device}.{name}", _to_float(value)))
    return samples


# =============================================================================
# nvidia-smi
# =============================================================================

_NVSMI_FIELDS = {
    "utilization.gpu": "gpu_utilization",
    "utilization.memory": "gpu_memory_utilization",
    "memory.used": "gpu_memory_used",
    "power.draw": "power_draw",
    "power.limit": "power_limit",
    "temperature.gpu": "temperature_gpu",
    "clocks.sm": "clocks_sm",
    "clocks.current.sm": "clocks_sm",
    "clocks.mem": "clocks_mem",
    "clocks.current.memory": "clocks_mem",
    "utilization.encoder": "encoder_utilization",
    "ecc.errors.uncorrected.volatile.total": "ecc_errors",
    "retired_pages.pending": "retired_pages",
    "pcie.link.width.current": "pcie_link_width",
}


def parse_nvidia_smi(text: str, host: str) -> list[MetricSample]:
    """Parse `nvidia-smi --query-gpu=... --format=csv` output with its header.

    Requires `timestamp` and `index` columns; unknown columns keep their
    query name with dots replaced by underscores.
    """
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    names = [re.sub(r"\s*\[.*\]$", "", h.strip()) for h in header]
    if "timestamp" not in names or "index" not in names:
        raise ConfigError("nvidia-smi CSV needs timestamp and index columns", "ingest")
    ts_col, idx_col = names.index("timestamp"), names.index("index")

    samples: list[MetricSample] = []
    for row in reader:
        if len(row) != len(names):
            continue
        try:
            stamp = dateutil_parse(row[ts_col].strip())
        except (ValueError, OverflowError):
            logger.debug("unparseable nvidia-smi timestamp: %r", row[ts_col])
            continue
        ts = int(round(stamp.timestamp() * 1000))
        instance = f"gpu{row[idx_col].strip()}"
        for col, name in enumerate(names):
            if col in (ts_col, idx_col):
                continue
            metric = _NVSMI_FIELDS.get(name, name.replace(".", "_"))
            value = row[col].strip().split(" ")[0]  # drop units when not nounits
            samples.append(MetricSample(host, ts, f"{instance}.{metric}", _to_float(value)))
    return samples


ADAPTERS: dict[str, Callable[[str, str], list[MetricSample]]] = {
    "perf-stat": parse_perf_stat,
    "proc-stat": parse_proc_stat,
    "proc-meminfo": parse_proc_meminfo,
    "proc-net-dev": parse_proc_net_dev,
    "proc-diskstats": parse_proc_diskstats,
    "nvidia-smi": parse_nvidia_smi,
}
