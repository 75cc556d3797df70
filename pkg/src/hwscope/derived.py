"""Derived indicators computed from raw channels (IPC, miss ratios, utilization).

Specs refer to metric names; each is evaluated once per instance that carries
both inputs, so `cpu0.instructions` / `cpu0.cycles` produce `cpu0.IPC` and the
host-wide `instructions` / `cycles` produce `IPC`.
"""

from __future__ import annotations

import io
import logging
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from .errors import ConfigError
from .ingest import SeriesStore, counter_to_rate
from .registry import Category, MetricDescriptor, Subsystem, resolve_metric

logger = logging.getLogger(__name__)


class Formula(str, Enum):
    RATIO = "Ratio"  # num / den
    RATE_RATIO = "RateRatio"  # rate(num) / rate(den)
    COMPLEMENT = "Complement"  # 1 - num / den
    RATE_SUM = "RateSum"  # rate(num) + rate(den)


class DerivedSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    output_name: str
    formula: Formula
    numerator_channel: str
    denominator_channel: str
    subsystem: Subsystem


BUILTIN_SPECS: list[DerivedSpec] = [
    DerivedSpec(
        output_name="IPC",
        formula=Formula.RATE_RATIO,
        numerator_channel="instructions",
        denominator_channel="cycles",
        subsystem=Subsystem.CPU,
    ),
    DerivedSpec(
        output_name="BranchMissRate",
        formula=Formula.RATE_RATIO,
        numerator_channel="branch-misses",
        denominator_channel="branches",
        subsystem=Subsystem.CPU,
    ),
    DerivedSpec(
        output_name="CacheMissRatio",
        formula=Formula.RATE_RATIO,
        numerator_channel="cache-misses",
        denominator_channel="cache-references",
        subsystem=Subsystem.CPU,
    ),
    DerivedSpec(
        output_name="L3StallRatio",
        formula=Formula.RATE_RATIO,
        numerator_channel="stalls_l3_miss",
        denominator_channel="cycles",
        subsystem=Subsystem.CPU,
    ),
    DerivedSpec(
        output_name="MemoryUtilization",
        formula=Formula.COMPLEMENT,
        numerator_channel="MemAvailable",
        denominator_channel="MemTotal",
        subsystem=Subsystem.MEMORY,
    ),
    DerivedSpec(
        output_name="NetworkThroughput",
        formula=Formula.RATE_SUM,
        numerator_channel="rx_bytes",
        denominator_channel="tx_bytes",
        subsystem=Subsystem.NETWORK,
    ),
]


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """Elementwise num/den; missing where either input is missing or den == 0."""
    out = np.full(num.shape, np.nan)
    ok = np.isfinite(num) & np.isfinite(den) & (den != 0)
    out[ok] = num[ok] / den[ok]
    return out


def evaluate(spec: DerivedSpec, num: np.ndarray, den: np.ndarray, interval_ms: int) -> np.ndarray:
    """Evaluate one spec on aligned input series."""
    if spec.formula == Formula.RATIO:
        return _safe_divide(num, den)
    if spec.formula == Formula.COMPLEMENT:
        return 1.0 - _safe_divide(num, den)
    num_rate = counter_to_rate(num, interval_ms).values
    den_rate = counter_to_rate(den, interval_ms).values
    if spec.formula == Formula.RATE_RATIO:
        return _safe_divide(num_rate, den_rate)
    return num_rate + den_rate


def _instance_pairs(
    columns: list[str], spec: DerivedSpec, store: SeriesStore
) -> list[tuple[str, str, str]]:
    """(output, numerator, denominator) channel triples present in a frame."""
    present = set(columns)
    triples: list[tuple[str, str, str]] = []
    for channel in columns:
        if resolve_metric(channel, store.registry) != spec.numerator_channel:
            continue
        if not channel.endswith(spec.numerator_channel):
            continue
        prefix = channel[: -len(spec.numerator_channel)]
        den = prefix + spec.denominator_channel
        if den in present:
            triples.append((prefix + spec.output_name, channel, den))
    return sorted(triples)


def derive(store: SeriesStore, specs: list[DerivedSpec] | None = None) -> SeriesStore:
    """Return a store augmented with derived channels.

    Specs with no matching inputs on any host are skipped with a warning.
    Re-deriving replaces existing output columns instead of duplicating them.
    """
    specs = BUILTIN_SPECS if specs is None else specs
    frames = {host: frame.copy() for host, frame in store.frames.items()}
    derived = store.with_frames(frames)

    new_descriptors: list[MetricDescriptor] = []
    for spec in specs:
        matched = False
        for host, frame in frames.items():
            outputs: dict[str, np.ndarray] = {}
            for out_name, num_ch, den_ch in _instance_pairs(list(frame.columns), spec, store):
                num = frame[num_ch].to_numpy(dtype=float)
                den = frame[den_ch].to_numpy(dtype=float)
                outputs[out_name] = evaluate(spec, num, den, store.interval_ms)
            if outputs:
                matched = True
                frame = frame.drop(columns=[c for c in outputs if c in frame.columns])
                frame = pd.concat([frame, pd.DataFrame(outputs, index=frame.index)], axis=1)
                frames[host] = frame.reindex(columns=sorted(frame.columns))
        if not matched:
            derived.warn(
                f"derived spec {spec.output_name} skipped: channels "
                f"{spec.numerator_channel}/{spec.denominator_channel} not in store"
            )
            continue
        if spec.output_name not in store.registry:
            new_descriptors.append(
                MetricDescriptor(
                    name=spec.output_name,
                    subsystem=spec.subsystem,
                    category=Category.DYNAMIC,
                    priority_rank=50,
                    source_probe="derived",
                )
            )

    derived.frames = frames
    if new_descriptors:
        derived.registry = store.registry.extended(new_descriptors)
    return derived


def parse_derived_specs(text: str) -> list[DerivedSpec]:
    """Parse `output_name,formula,numerator,denominator,subsystem` lines."""
    specs: list[DerivedSpec] = []
    for line_num, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("output_name,"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 5:
            raise ConfigError(f"line {line_num}: expected 5 fields", "derived")
        try:
            specs.append(
                DerivedSpec(
                    output_name=fields[0],
                    formula=Formula(fields[1]),
                    numerator_channel=fields[2],
                    denominator_channel=fields[3],
                    subsystem=Subsystem(fields[4]),
                )
            )
        except ValueError as e:
            raise ConfigError(f"line {line_num}: {e}", "derived") from e
    return specs


def load_derived_specs(path: Path) -> list[DerivedSpec]:
    return parse_derived_specs(path.read_text(encoding="utf-8"))
