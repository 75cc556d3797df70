"""Labeled synthetic multi-host telemetry.

Dynamic channels follow a stationary AR(1) process around a base level,
Counter channels accumulate Poisson increments. Injections are superimposed
on top and give window-level ground truth for a window setting; a
CrossHostOffset is host-level truth instead.

Every (host, channel) stream draws from its own SeedSequence child keyed by
position, so a scenario and seed fully determine the trace.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator
from scipy.signal import lfilter
from typing_extensions import TypedDict

from .errors import ConfigError
from .features import WindowSpec, window_count
from .ingest import DEFAULT_INTERVAL_MS, SeriesStore
from .registry import (
    FALLBACK,
    Category,
    MetricDescriptor,
    Registry,
    Subsystem,
    classify_channel,
    default_registry,
)

logger = logging.getLogger(__name__)


class InjectionKind(str, Enum):
    MEAN_SHIFT = "MeanShift"
    VARIANCE_BURST = "VarianceBurst"
    COUNTER_BURST = "CounterBurst"
    TREND_RAMP = "TrendRamp"
    CROSS_HOST_OFFSET = "CrossHostOffset"


_DYNAMIC_ONLY = {InjectionKind.MEAN_SHIFT, InjectionKind.VARIANCE_BURST, InjectionKind.TREND_RAMP}


class ChannelSpec(BaseModel):
    """Generator parameters of one channel (replicated on every host)."""

    name: str
    category: Category | None = None  # None: from the registry
    subsystem: Subsystem | None = None
    base: float = 50.0  # level for Dynamic, mean increment per cell for Counter
    phi: float = Field(default=0.8, ge=0.0, le=0.95)
    sigma: float = Field(default=1.0, gt=0.0)


class Injection(BaseModel):
    kind: InjectionKind
    host: str
    channel: str
    start_ms: int = Field(default=0, ge=0)
    end_ms: int | None = None  # None: to the end of the trace
    # baseline-σ units; extra total count for CounterBurst
    magnitude: float = Field(gt=0.0)


class SynthScenario(BaseModel):
    hosts: int = Field(default=1, ge=1)
    duration_ms: int = Field(gt=0)
    interval_ms: int = Field(default=DEFAULT_INTERVAL_MS, gt=0)
    channels: list[ChannelSpec] = Field(min_length=1)
    injections: list[Injection] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def _injections_fit(self) -> SynthScenario:
        names = {c.name for c in self.channels}
        hosts = set(self.host_names())
        for inj in self.injections:
            if inj.host not in hosts:
                raise ValueError(f"injection host {inj.host!r} not in {sorted(hosts)}")
            if inj.channel not in names:
                raise ValueError(f"injection channel {inj.channel!r} not in scenario")
            end = self.duration_ms if inj.end_ms is None else inj.end_ms
            if not 0 <= inj.start_ms < end <= self.duration_ms:
                raise ValueError(
                    f"injection interval [{inj.start_ms}, {end}) outside [0, {self.duration_ms})"
                )
        return self

    def host_names(self) -> list[str]:
        return [f"host{i}" for i in range(self.hosts)]

    def n_cells(self) -> int:
        return self.duration_ms // self.interval_ms

    def span(self, injection: Injection) -> tuple[int, int]:
        end = self.duration_ms if injection.end_ms is None else injection.end_ms
        return injection.start_ms, end

    def window_injections(self) -> list[Injection]:
        return [i for i in self.injections if i.kind != InjectionKind.CROSS_HOST_OFFSET]


@dataclass
class SynthResult:
    store: SeriesStore
    spec: WindowSpec
    labels: dict[str, set[int]]  # host -> ground-truth window ids
    n_windows: dict[str, int]
    truth_hosts: set[tuple[str, str]] = field(default_factory=set)  # (host, channel)


class DetectionScore(NamedTuple):
    precision: float
    recall: float


# =============================================================================
# Generation
# =============================================================================


def _scenario_registry(scenario: SynthScenario, registry: Registry) -> Registry:
    """Registry with exact-name descriptors for channels the base one misclassifies."""
    extra: list[MetricDescriptor] = []
    for channel in scenario.channels:
        known = classify_channel(channel.name, registry)
        if known is not None and channel.category in (None, known.category):
            continue
        extra.append(
            MetricDescriptor(
                name=channel.name,
                subsystem=channel.subsystem or (known.subsystem if known else Subsystem.CPU),
                category=channel.category or Category.DYNAMIC,
                priority_rank=FALLBACK.priority_rank,
                source_probe="synthetic",
            )
        )
    return registry.extended(extra) if extra else registry


def _ar1(rng: np.random.Generator, n: int, phi: float, sigma: float) -> np.ndarray:
    """Zero-mean stationary AR(1) deviations."""
    noise = rng.normal(0.0, sigma, n)
    noise[0] /= np.sqrt(1.0 - phi * phi)
    return lfilter([1.0], [1.0, -phi], noise)


def _cells(scenario: SynthScenario, injection: Injection) -> slice:
    start, end = scenario.span(injection)
    return slice(start // scenario.interval_ms, -(-end // scenario.interval_ms))


def _dynamic(rng, scenario: SynthScenario, spec: ChannelSpec, injections: list[Injection]) -> np.ndarray:
    deviation = _ar1(rng, scenario.n_cells(), spec.phi, spec.sigma)
    offset = np.zeros(scenario.n_cells())
    for inj in injections:
        cells = _cells(scenario, inj)
        if inj.kind == InjectionKind.VARIANCE_BURST:
            deviation[cells] *= inj.magnitude
        elif inj.kind == InjectionKind.TREND_RAMP:
            length = len(offset[cells])
            offset[cells] += np.linspace(0.0, inj.magnitude * spec.sigma, length)
        else:  # MeanShift, CrossHostOffset
            offset[cells] += inj.magnitude * spec.sigma
    return spec.base + deviation + offset


def _counter(rng, scenario: SynthScenario, spec: ChannelSpec, injections: list[Injection]) -> np.ndarray:
    increments = rng.poisson(spec.base, scenario.n_cells()).astype(float)
    for inj in injections:
        cells = _cells(scenario, inj)
        width = len(increments[cells])
        if inj.kind == InjectionKind.COUNTER_BURST:
            increments[cells] += inj.magnitude / width
        else:  # CrossHostOffset
            increments[cells] += inj.magnitude * np.sqrt(max(spec.base, 1.0))
    return np.cumsum(increments)


def ground_truth(scenario: SynthScenario, spec: WindowSpec) -> dict[str, set[int]]:
    """Per host, windows overlapping any window-level injection interval."""
    n = window_count(scenario.n_cells() * scenario.interval_ms, spec)
    labels: dict[str, set[int]] = {h: set() for h in scenario.host_names()}
    for inj in scenario.window_injections():
        start, end = scenario.span(inj)
        labels[inj.host].update(
            w for w in range(n) if w * spec.stride_ms < end and w * spec.stride_ms + spec.size_ms > start
        )
    return labels


def synth_trace(
    scenario: SynthScenario,
    spec: WindowSpec | None = None,
    registry: Registry | None = None,
) -> SynthResult:
    """Generate the scenario's trace and its ground truth for `spec`.

    Raises:
        ConfigError: an injection kind does not fit its channel's category.
    """
    spec = spec or WindowSpec()
    registry = _scenario_registry(scenario, registry or default_registry())
    store = SeriesStore(registry=registry, interval_ms=scenario.interval_ms)

    for h, host in enumerate(scenario.host_names()):
        columns: dict[str, np.ndarray] = {}
        for c, channel in enumerate(scenario.channels):
            category = store.category(channel.name)
            targeted = [i for i in scenario.injections if i.host == host and i.channel == channel.name]
            for inj in targeted:
                if category == Category.COUNTER and inj.kind in _DYNAMIC_ONLY:
                    raise ConfigError(f"{inj.kind.value} needs a Dynamic channel, {channel.name} is a Counter")
                if category != Category.COUNTER and inj.kind == InjectionKind.COUNTER_BURST:
                    raise ConfigError(f"CounterBurst needs a Counter channel, {channel.name} is not")
            rng = np.random.default_rng(np.random.SeedSequence(scenario.seed, spawn_key=(h, c)))
            if category == Category.COUNTER:
                columns[channel.name] = _counter(rng, scenario, channel, targeted)
            else:
                columns[channel.name] = _dynamic(rng, scenario, channel, targeted)
        frame = pd.DataFrame(columns, index=pd.RangeIndex(scenario.n_cells(), name="cell"))
        store.frames[host] = frame.reindex(columns=sorted(frame.columns))

    duration = scenario.n_cells() * scenario.interval_ms
    n_windows = {h: window_count(duration, spec) for h in scenario.host_names()}
    truth_hosts = {
        (i.host, i.channel)
        for i in scenario.injections
        if i.kind == InjectionKind.CROSS_HOST_OFFSET
    }
    logger.info(
        "synthesized %d host(s) × %d channel(s), %d injection(s)",
        scenario.hosts,
        len(scenario.channels),
        len(scenario.injections),
    )
    return SynthResult(
        store=store,
        spec=spec,
        labels=ground_truth(scenario, spec),
        n_windows=n_windows,
        truth_hosts=truth_hosts,
    )


def make_scenario(
    n_windows: int = 1000,
    n_channels: int = 20,
    n_injections: int = 8,
    magnitude: float = 8.0,
    kind: InjectionKind = InjectionKind.MEAN_SHIFT,
    injection_windows: int = 5,
    hosts: int = 1,
    phi: float = 0.8,
    seed: int = 0,
    spec: WindowSpec | None = None,
    interval_ms: int = DEFAULT_INTERVAL_MS,
) -> SynthScenario:
    """Scenario with evenly spaced, non-overlapping injections on host0.

    The trace is sized to give `n_windows` windows under `spec`; each
    injection spans `injection_windows` strides on a seeded random channel.
    """
    spec = spec or WindowSpec()
    duration = spec.size_ms + (n_windows - 1) * spec.stride_ms
    channels = [
        ChannelSpec(name=f"cpu{i}.Busy%", base=50.0, phi=phi, sigma=1.0) for i in range(n_channels)
    ]
    rng = np.random.default_rng(seed)
    length = injection_windows * spec.stride_ms
    slot = duration // max(n_injections, 1)
    injections = []
    for i in range(n_injections):
        start = (i * slot + (slot - length) // 2) // interval_ms * interval_ms
        injections.append(
            Injection(
                kind=kind,
                host="host0",
                channel=channels[int(rng.integers(n_channels))].name,
                start_ms=start,
                end_ms=start + length,
                magnitude=magnitude,
            )
        )
    return SynthScenario(
        hosts=hosts,
        duration_ms=duration,
        interval_ms=interval_ms,
        channels=channels,
        injections=injections,
        seed=seed,
    )


# =============================================================================
# Scoring
# =============================================================================


def score_detection(flagged: set[int], truth: set[int]) -> DetectionScore:
    """Window-level precision and recall.

    Empty truth gives recall 1.0; no flags gives precision 1.0 only when the
    truth is empty as well.
    """
    hits = len(flagged & truth)
    recall = hits / len(truth) if truth else 1.0
    if flagged:
        precision = hits / len(flagged)
    else:
        precision = 1.0 if not truth else 0.0
    return DetectionScore(precision, recall)


def score_events(
    flagged: set[int], scenario: SynthScenario, spec: WindowSpec, host: str = "host0"
) -> float:
    """Fraction of the host's window-level injections touched by a flagged window."""
    events = [i for i in scenario.window_injections() if i.host == host]
    if not events:
        return 1.0
    detected = 0
    for inj in events:
        start, end = scenario.span(inj)
        if any(w * spec.stride_ms < end and w * spec.stride_ms + spec.size_ms > start for w in flagged):
            detected += 1
    return detected / len(events)


# =============================================================================
# File IO
# =============================================================================


def load_scenario(path: Path) -> SynthScenario:
    try:
        return SynthScenario.model_validate_json(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise ConfigError(f"invalid scenario {path}: {e}") from e


def dump_scenario(scenario: SynthScenario, path: Path) -> None:
    path.write_text(scenario.model_dump_json(indent=2) + "\n", encoding="utf-8")


class LabelRow(TypedDict):
    window_id: int
    host: str
    truth: int


def label_rows(result: SynthResult) -> Iterator[LabelRow]:
    for host in sorted(result.n_windows):
        truth = result.labels.get(host, set())
        for window_id in range(result.n_windows[host]):
            yield LabelRow(window_id=window_id, host=host, truth=int(window_id in truth))


def write_labels(result: SynthResult, path: Path) -> None:
    """CSV `window_id,host,truth` over every window of every host."""
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(LabelRow.__annotations__), lineterminator="\n")
        writer.writeheader()
        writer.writerows(label_rows(result))


def read_labels(path: Path) -> dict[str, set[int]]:
    labels: dict[str, set[int]] = {}
    with path.open(newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            truth = labels.setdefault(row["host"], set())
            if row["truth"].strip() == "1":
                truth.add(int(row["window_id"]))
    return labels
