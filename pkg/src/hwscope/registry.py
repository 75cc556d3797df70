"""Catalog of metric types: subsystem, feature category and selection priority.

The registry drives three later stages:
- pruning picks cluster representatives by `priority_rank`
- feature extraction picks a feature set by `category`
- attribution maps reason channels to a `subsystem`

Channels are metric instances (`cpu3.Busy%`, `gpu0.power_draw`); use
`resolve_metric` to get from a channel back to its registered metric.
"""

from __future__ import annotations

import io
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

from pydantic import BaseModel, ConfigDict, Field

from .errors import ConfigError


class Subsystem(str, Enum):
    """Hardware subsystem a metric belongs to."""

    CPU = "CPU"
    GPU = "GPU"
    MEMORY = "Memory"
    NETWORK = "Network"
    STORAGE = "Storage"


class Category(str, Enum):
    """Feature-extraction category of a metric."""

    DYNAMIC = "Dynamic"  # instantaneous gauge
    COUNTER = "Counter"  # monotone cumulative count
    STATIC = "Static"  # configuration-like or slowly varying


class MetricDescriptor(BaseModel):
    """Identity and metadata of one metric type."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    subsystem: Subsystem
    category: Category
    unit: str = ""
    priority_rank: int = Field(default=50, ge=1)
    source_probe: str = ""

    def to_line(self) -> str:
        return ",".join(
            [
                self.name,
                self.subsystem.value,
                self.category.value,
                self.unit,
                str(self.priority_rank),
                self.source_probe,
            ]
        )


# Channels the registry does not know: a CPU gauge at the lowest priority.
FALLBACK = MetricDescriptor(
    name="unregistered",
    subsystem=Subsystem.CPU,
    category=Category.DYNAMIC,
    priority_rank=99,
    source_probe="unknown",
)


class Registry:
    """Ordered, immutable collection of metric descriptors."""

    def __init__(
        self,
        descriptors: Iterable[MetricDescriptor] = (),
        labels: dict[str, str] | None = None,
    ):
        self._by_name: dict[str, MetricDescriptor] = {}
        for desc in descriptors:
            if desc.name in self._by_name:
                raise ConfigError(f"duplicate metric name: {desc.name}", "registry")
            self._by_name[desc.name] = desc
        self._labels = dict(labels or {})

    def __iter__(self) -> Iterator[MetricDescriptor]:
        return iter(self._by_name.values())

    def __len__(self) -> int:
        return len(self._by_name)

    def __contains__(self, name: object) -> bool:
        return name in self._by_name

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Registry):
            return NotImplemented
        return list(self) == list(other)

    def lookup(self, name: str) -> MetricDescriptor | None:
        """Exact-name lookup."""
        return self._by_name.get(name)

    def names(self) -> list[str]:
        return list(self._by_name)

    def label(self, name: str) -> str:
        """Human-readable label for claims; the metric name when none is known."""
        return self._labels.get(name, name)

    def extended(self, descriptors: Iterable[MetricDescriptor]) -> Registry:
        """Return a new registry with extra descriptors appended."""
        return Registry([*self, *descriptors], labels=self._labels)

    def ranked(self, subsystem: Subsystem) -> list[MetricDescriptor]:
        """Descriptors of a subsystem in representative-preference order."""
        members = [d for d in self if d.subsystem == subsystem]
        return sorted(members, key=lambda d: (d.priority_rank, d.name))


def classify(
    name: str,
    registry: Registry,
    fallback: MetricDescriptor | None = None,
) -> MetricDescriptor | None:
    """Look up a metric, falling back to a caller-supplied descriptor.

    The fallback is renamed to `name` so novel counters keep their identity
    when they flow through the rest of the pipeline.
    """
    found = registry.lookup(name)
    if found is not None:
        return found
    if fallback is None:
        return None
    return fallback.model_copy(update={"name": name})


def resolve_metric(channel: str, registry: Registry) -> str:
    """Map a channel name to the registered metric it instantiates.

    `cpu3.Busy%` resolves to `Busy%` and `cpu0.ls_dispatch.ld_dispatch` to
    `ls_dispatch.ld_dispatch`: the longest registered dotted suffix wins.
    Unregistered channels resolve to their last dotted component.
    """
    if channel in registry:
        return channel
    parts = channel.split(".")
    for start in range(1, len(parts)):
        candidate = ".".join(parts[start:])
        if candidate in registry:
            return candidate
    return parts[-1]


def classify_channel(
    channel: str,
    registry: Registry,
    fallback: MetricDescriptor | None = None,
) -> MetricDescriptor | None:
    """Classify a channel through its resolved metric."""
    return classify(resolve_metric(channel, registry), registry, fallback)


def parse_registry(text: str) -> Registry:
    """Parse the line-oriented registry format.

    One metric per line: `name,subsystem,category,unit,priority_rank,source_probe`.
    Blank lines and `#` comments are ignored.
    """
    descriptors: list[MetricDescriptor] = []
    for line_num, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 6:
            raise ConfigError(
                f"line {line_num}: expected 6 fields, got {len(fields)}", "registry"
            )
        name, subsystem, category, unit, rank, probe = fields
        try:
            descriptors.append(
                MetricDescriptor(
                    name=name,
                    subsystem=Subsystem(subsystem),
                    category=Category(category),
                    unit=unit,
                    priority_rank=int(rank),
                    source_probe=probe,
                )
            )
        except ValueError as e:
            raise ConfigError(f"line {line_num}: {e}", "registry") from e
    return Registry(descriptors, labels=DEFAULT_LABELS)


def dump_registry(registry: Registry) -> str:
    """Serialize a registry to the line-oriented format."""
    header = "# name,subsystem,category,unit,priority_rank,source_probe\n"
    return header + "".join(d.to_line() + "\n" for d in registry)


def load_registry(path: Path) -> Registry:
    return parse_registry(path.read_text(encoding="utf-8"))


# =============================================================================
# Default registry
# =============================================================================

_C, _G, _M, _N, _S = (
    Subsystem.CPU,
    Subsystem.GPU,
    Subsystem.MEMORY,
    Subsystem.NETWORK,
    Subsystem.STORAGE,
)
_DYN, _CNT, _STA = Category.DYNAMIC, Category.COUNTER, Category.STATIC

# (name, subsystem, category, unit, priority_rank, source_probe)
# Utilization and throughput indicators rank first within each subsystem.
_DEFAULT_METRICS: list[tuple[str, Subsystem, Category, str, int, str]] = [
    # CPU: turbostat
    ("Busy%", _C, _DYN, "%", 1, "turbostat"),
    ("Bzy_MHz", _C, _DYN, "MHz", 2, "turbostat"),
    ("Avg_MHz", _C, _DYN, "MHz", 3, "turbostat"),
    ("IRQ", _C, _CNT, "count", 3, "turbostat"),
    ("SMI", _C, _CNT, "count", 7, "turbostat"),
    ("CPU%c6", _C, _DYN, "%", 5, "turbostat"),
    ("Pkg%pc6", _C, _DYN, "%", 6, "turbostat"),
    ("PkgWatt", _C, _DYN, "W", 4, "turbostat"),
    ("CorWatt", _C, _DYN, "W", 5, "turbostat"),
    ("CoreTmp", _C, _STA, "C", 8, "turbostat"),
    ("PkgTmp", _C, _STA, "C", 8, "turbostat"),
    # CPU: /proc/stat time-state counters
    ("user", _C, _CNT, "jiffies", 2, "procfs"),
    ("system", _C, _CNT, "jiffies", 3, "procfs"),
    ("idle", _C, _CNT, "jiffies", 4, "procfs"),
    ("iowait", _C, _CNT, "jiffies", 4, "procfs"),
    ("softirq", _C, _CNT, "jiffies", 5, "procfs"),
    # CPU: perf stat
    ("instructions", _C, _CNT, "count", 3, "perf"),
    ("cycles", _C, _CNT, "count", 4, "perf"),
    ("branches", _C, _CNT, "count", 6, "perf"),
    ("branch-misses", _C, _CNT, "count", 6, "perf"),
    ("cache-references", _C, _CNT, "count", 6, "perf"),
    ("cache-misses", _C, _CNT, "count", 5, "perf"),
    ("stalls_l3_miss", _C, _CNT, "cycles", 7, "perf"),
    ("mem-loads", _C, _CNT, "count", 6, "perf"),
    ("mem-stores", _C, _CNT, "count", 6, "perf"),
    ("ls_dc_accesses", _C, _CNT, "count", 7, "perf"),
    ("ls_dispatch.ld_dispatch", _C, _CNT, "count", 7, "perf"),
    ("ls_dispatch.store_dispatch", _C, _CNT, "count", 7, "perf"),
    ("ls_dispatch.ld_st_dispatch", _C, _CNT, "count", 7, "perf"),
    # CPU: derived
    ("IPC", _C, _DYN, "ratio", 2, "derived"),
    ("BranchMissRate", _C, _DYN, "ratio", 4, "derived"),
    ("CacheMissRatio", _C, _DYN, "ratio", 4, "derived"),
    ("L3StallRatio", _C, _DYN, "ratio", 3, "derived"),
    # GPU: nvidia-smi
    ("gpu_utilization", _G, _DYN, "%", 1, "nvidia-smi"),
    ("gpu_memory_utilization", _G, _DYN, "%", 2, "nvidia-smi"),
    ("gpu_memory_used", _G, _DYN, "MiB", 2, "nvidia-smi"),
    ("power_draw", _G, _DYN, "W", 3, "nvidia-smi"),
    ("clocks_sm", _G, _DYN, "MHz", 5, "nvidia-smi"),
    ("clocks_mem", _G, _DYN, "MHz", 5, "nvidia-smi"),
    ("encoder_utilization", _G, _DYN, "%", 6, "nvidia-smi"),
    ("temperature_gpu", _G, _STA, "C", 6, "nvidia-smi"),
    ("ecc_errors", _G, _CNT, "count", 4, "nvidia-smi"),
    ("retired_pages", _G, _CNT, "count", 7, "nvidia-smi"),
    ("pcie_link_width", _G, _STA, "lanes", 7, "nvidia-smi"),
    ("power_limit", _G, _STA, "W", 8, "nvidia-smi"),
    # Memory: /proc/meminfo, /proc/vmstat
    ("MemoryUtilization", _M, _DYN, "ratio", 1, "derived"),
    ("MemAvailable", _M, _DYN, "kB", 2, "procfs"),
    ("MemFree", _M, _DYN, "kB", 3, "procfs"),
    ("Dirty", _M, _DYN, "kB", 3, "procfs"),
    ("Writeback", _M, _DYN, "kB", 3, "procfs"),
    ("Cached", _M, _DYN, "kB", 4, "procfs"),
    ("Unevictable", _M, _DYN, "kB", 4, "procfs"),
    ("SwapFree", _M, _DYN, "kB", 4, "procfs"),
    ("AnonHugePages", _M, _DYN, "kB", 5, "procfs"),
    ("HugePages_Free", _M, _DYN, "pages", 5, "procfs"),
    ("pgfault", _M, _CNT, "count", 5, "procfs"),
    ("pgmajfault", _M, _CNT, "count", 5, "procfs"),
    ("latency_gt_256", _M, _CNT, "count", 6, "perf"),
    ("MemTotal", _M, _STA, "kB", 9, "procfs"),
    ("SwapTotal", _M, _STA, "kB", 9, "procfs"),
    ("HugePages_Total", _M, _STA, "pages", 8, "procfs"),
    # Network: /proc/net/dev, nstat, ss
    ("NetworkUtilization", _N, _DYN, "%", 1, "derived"),
    ("NetworkThroughput", _N, _DYN, "B/s", 1, "derived"),
    ("rx_bytes", _N, _CNT, "B", 2, "procfs"),
    ("tx_bytes", _N, _CNT, "B", 2, "procfs"),
    ("rx_packets", _N, _CNT, "count", 3, "procfs"),
    ("tx_packets", _N, _CNT, "count", 3, "procfs"),
    ("TcpRetransSegs", _N, _CNT, "count", 3, "nstat"),
    ("TcpInSegs", _N, _CNT, "count", 4, "nstat"),
    ("TcpOutSegs", _N, _CNT, "count", 4, "nstat"),
    ("rx_drop", _N, _CNT, "count", 4, "procfs"),
    ("tx_drop", _N, _CNT, "count", 4, "procfs"),
    ("rx_errs", _N, _CNT, "count", 5, "procfs"),
    ("tx_errs", _N, _CNT, "count", 5, "procfs"),
    ("tcp_established", _N, _DYN, "count", 6, "ss"),
    # Storage: /proc/diskstats
    ("sectors_read", _S, _CNT, "sectors", 2, "procfs"),
    ("sectors_written", _S, _CNT, "sectors", 2, "procfs"),
    ("reads_completed", _S, _CNT, "count", 3, "procfs"),
    ("writes_completed", _S, _CNT, "count", 3, "procfs"),
    ("reads_merged", _S, _CNT, "count", 4, "procfs"),
    ("writes_merged", _S, _CNT, "count", 4, "procfs"),
    ("io_in_progress", _S, _DYN, "count", 4, "procfs"),
    ("time_spent_reading", _S, _CNT, "ms", 5, "procfs"),
    ("time_spent_writing", _S, _CNT, "ms", 5, "procfs"),
    ("time_spent_doing_io", _S, _CNT, "ms", 5, "procfs"),
    ("weighted_time_spent_io", _S, _CNT, "ms", 6, "procfs"),
]

DEFAULT_LABELS: dict[str, str] = {
    "Busy%": "CPU busy percentage",
    "Bzy_MHz": "CPU operating frequency",
    "Avg_MHz": "CPU average frequency",
    "IRQ": "CPU interrupt count",
    "PkgWatt": "CPU package power",
    "CPU%c6": "CPU C6 residency",
    "CoreTmp": "CPU core temperature",
    "IPC": "Instructions per cycle",
    "L3StallRatio": "L3 miss stall ratio",
    "stalls_l3_miss": "L3 miss stall cycles",
    "gpu_utilization": "GPU utilization",
    "gpu_memory_used": "GPU memory usage",
    "power_draw": "GPU power draw",
    "temperature_gpu": "GPU temperature",
    "ecc_errors": "GPU ECC errors",
    "MemoryUtilization": "Memory utilization",
    "Dirty": "Dirty page memory",
    "Writeback": "Writeback memory",
    "Unevictable": "Unevictable memory",
    "NetworkUtilization": "Network utilization",
    "NetworkThroughput": "Network throughput",
    "TcpRetransSegs": "TCP retransmitted segments",
    "sectors_read": "Disk read sectors",
    "sectors_written": "Disk written sectors",
    "time_spent_reading": "Disk read service time",
    "writes_merged": "Disk merged writes",
}


def default_registry() -> Registry:
    """Registry seeded with the metric families the collectors produce."""
    return Registry(
        (
            MetricDescriptor(
                name=name,
                subsystem=subsystem,
                category=category,
                unit=unit,
                priority_rank=rank,
                source_probe=probe,
            )
            for name, subsystem, category, unit, rank, probe in _DEFAULT_METRICS
        ),
        labels=DEFAULT_LABELS,
    )
