"""From flagged windows back to evidence.

- attribution: the (channel, feature) cells of a window with the largest |z|
- subsystems: registry subsystems of those channels
- intervals: merged wall spans of flagged windows
- cross-host: per-host trace medians against the fleet median
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from .detectors import PcaModel, standardize
from .errors import InsufficientDataError
from .features import FeatureMatrix, Window, WindowSpec, split_column
from .ingest import SeriesStore
from .registry import FALLBACK, Registry, Subsystem, classify_channel

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 5
DEFAULT_CROSS_HOST_CUT = 3.0
# Top |z| below this marks the record as low individual confidence.
LOW_CONFIDENCE_Z = 3.0
MAD_SCALE = 1.4826
EPS = 1e-9


class Reason(BaseModel):
    """One metric–feature pair supporting an anomaly."""

    model_config = ConfigDict(frozen=True)

    channel: str
    feature: str
    direction: Literal["high", "low"]
    score: float


class Attribution(NamedTuple):
    reasons: list[Reason]
    pca_reasons: list[Reason]
    low_confidence: bool


def _ranked(
    columns: list[str], values: np.ndarray, signs: np.ndarray, top_k: int
) -> list[Reason]:
    """Top-k cells by value; ties broken by (channel, feature)."""
    keyed = []
    for name, value, sign in zip(columns, values, signs):
        channel, feature = split_column(name)
        keyed.append((-round(float(value), 12), channel, feature, float(value), sign))
    keyed.sort(key=lambda k: k[:3])
    return [
        Reason(channel=c, feature=f, direction="high" if s >= 0 else "low", score=v)
        for _, c, f, v, s in keyed[:top_k]
    ]


class Attributor:
    """Per-matrix attribution state; standardizes the matrix once."""

    def __init__(
        self,
        matrix: FeatureMatrix,
        pca: PcaModel | None = None,
        top_k: int = DEFAULT_TOP_K,
    ):
        self.matrix = matrix
        self.top_k = top_k
        self.pca = pca
        self.z, self.columns, _, _ = standardize(matrix)
        self._row = {w.id: i for i, w in enumerate(matrix.windows)}

    def pca_contributions(self, row: int) -> np.ndarray:
        """Sum over retained components of |loading × z| / sqrt(variance), per column."""
        assert self.pca is not None
        index = [self.columns.index(c) for c in self.pca.columns]
        z = self.z[row, index]
        weights = np.abs(self.pca.components * z[None, :]) / np.sqrt(self.pca.variances)[:, None]
        return weights.sum(axis=0)

    def attribute(self, window_id: int) -> Attribution:
        row = self._row[window_id]
        z = self.z[row]
        reasons = _ranked(self.columns, np.abs(z), np.sign(z), self.top_k)
        pca_reasons: list[Reason] = []
        if self.pca is not None:
            index = [self.columns.index(c) for c in self.pca.columns]
            pca_reasons = _ranked(
                self.pca.columns,
                self.pca_contributions(row),
                np.sign(z[index]),
                self.top_k,
            )
        low = not reasons or reasons[0].score < LOW_CONFIDENCE_Z
        return Attribution(reasons, pca_reasons, low)


def attribute_window(
    window: Window | int,
    matrix: FeatureMatrix,
    pca: PcaModel | None = None,
    top_k: int = DEFAULT_TOP_K,
) -> list[Reason]:
    """Top-k contributing (channel, feature) cells of one window by |z|."""
    window_id = window.id if isinstance(window, Window) else window
    return Attributor(matrix, pca, top_k).attribute(window_id).reasons


def map_subsystems(reasons: list[Reason], registry: Registry) -> list[Subsystem]:
    """Subsystems of the reason channels, first-seen order.

    Raises:
        InsufficientDataError: no reasons.
    """
    if not reasons:
        raise InsufficientDataError("anomaly record without reasons", "attribution")
    seen: list[Subsystem] = []
    for reason in reasons:
        descriptor = classify_channel(reason.channel, registry, FALLBACK)
        assert descriptor is not None
        if descriptor.subsystem not in seen:
            seen.append(descriptor.subsystem)
    return seen


# =============================================================================
# Intervals
# =============================================================================


@dataclass
class AnomalyIntervalSet:
    """Sorted, disjoint, non-empty [start_ms, end_ms) intervals of one host."""

    host: str
    intervals: list[tuple[int, int]] = field(default_factory=list)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def total_length(self) -> int:
        return sum(end - start for start, end in self.intervals)

    @classmethod
    def from_spans(cls, host: str, spans: Iterable[tuple[int, int]]) -> AnomalyIntervalSet:
        """Merge arbitrary spans; overlapping or touching spans join."""
        merged: list[list[int]] = []
        for start, end in sorted(spans):
            if end <= start:
                continue
            if merged and start <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], end)
            else:
                merged.append([start, end])
        return cls(host, [(s, e) for s, e in merged])


def merge_intervals(
    flagged: Iterable[Window], spec: WindowSpec, host: str = ""
) -> AnomalyIntervalSet:
    """Union of [start, start + size) over flagged windows."""
    windows = list(flagged)
    if windows and not host:
        host = windows[0].host
    return AnomalyIntervalSet.from_spans(
        host, ((w.start_ms, w.start_ms + spec.size_ms) for w in windows)
    )


def intervals_from_ids(window_ids: Iterable[int], spec: WindowSpec, host: str) -> AnomalyIntervalSet:
    return AnomalyIntervalSet.from_spans(
        host, ((i * spec.stride_ms, i * spec.stride_ms + spec.size_ms) for i in window_ids)
    )


# =============================================================================
# Cross-host imbalance
# =============================================================================


class CrossHostFinding(BaseModel):
    channel: str
    host_medians: dict[str, float]
    deviating_hosts: list[str]
    # Robust-σ units, or raw channel units when low_confidence.
    deviations: dict[str, float]
    low_confidence: bool = False


def _robust_sigma(values: np.ndarray) -> float:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return 0.0
    return MAD_SCALE * float(np.median(np.abs(values - np.median(values))))


def cross_host_compare(
    store: SeriesStore, channel: str, cut: float = DEFAULT_CROSS_HOST_CUT
) -> CrossHostFinding | None:
    """Hosts whose trace-level median of `channel` deviates from the fleet.

    With three or more hosts the deviation is in robust-σ units of the host
    medians. With two hosts the raw difference is reported, low confidence,
    when it exceeds `cut` within-host robust σ.
    """
    signals = {
        host: store.signal(host, channel)
        for host in store.hosts()
        if channel in store.frames[host].columns
    }
    medians = {
        host: float(np.nanmedian(values))
        for host, values in signals.items()
        if np.isfinite(values).any()
    }
    if len(medians) < 2:
        return None

    if len(medians) == 2:
        (host_a, m_a), (host_b, m_b) = sorted(medians.items())
        difference = abs(m_a - m_b)
        pooled = float(np.mean([_robust_sigma(signals[h]) for h in medians]))
        if difference <= cut * pooled + EPS:
            return None
        high = host_a if m_a > m_b else host_b
        return CrossHostFinding(
            channel=channel,
            host_medians=medians,
            deviating_hosts=[high],
            deviations={high: difference},
            low_confidence=True,
        )

    values = np.array(list(medians.values()))
    center = float(np.median(values))
    mad = float(np.median(np.abs(values - center)))
    scale = MAD_SCALE * mad + EPS
    deviations = {h: abs(m - center) / scale for h, m in medians.items()}
    deviating = sorted(h for h, d in deviations.items() if d >= cut)
    if not deviating:
        return None
    return CrossHostFinding(
        channel=channel,
        host_medians=medians,
        deviating_hosts=deviating,
        deviations={h: deviations[h] for h in deviating},
    )


def cross_host_scan(
    store: SeriesStore, channels: Iterable[str] | None = None, cut: float = DEFAULT_CROSS_HOST_CUT
) -> list[CrossHostFinding]:
    """cross_host_compare over every channel (Static ones included)."""
    findings = []
    for channel in sorted(channels if channels is not None else store.channels()):
        finding = cross_host_compare(store, channel, cut)
        if finding is not None:
            findings.append(finding)
    if findings:
        logger.info("%d channel(s) with cross-host imbalance", len(findings))
    return findings
