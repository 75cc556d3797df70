"""Correlation-driven redundancy pruning and threshold-sweep diagnostics.

Channels joined by a chain of supra-threshold |r| edges form one component;
each component keeps a single representative chosen by registry priority,
then by the variance of its off-diagonal |r| row, then by name. Zero-variance
channels go to the static pool and are never representatives.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, InsufficientDataError
from .ingest import SeriesStore
from .registry import FALLBACK, Registry, classify_channel

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5
MIN_OVERLAP = 3
RIDGE = 1e-6


@dataclass
class CorrelationMatrix:
    """Symmetric Pearson matrix over an ordered channel list."""

    channels: list[str]
    values: np.ndarray
    # Pairs with fewer than MIN_OVERLAP shared observations; r forced to 0.
    insufficient: set[tuple[str, str]] = field(default_factory=set)
    # Channels with no variation; r forced to 0 against everything else.
    zero_variance: set[str] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)

    def r(self, a: str, b: str) -> float:
        i, j = self.channels.index(a), self.channels.index(b)
        return float(self.values[i, j])

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=self.channels, columns=self.channels)

    def subset(self, channels: list[str]) -> CorrelationMatrix:
        index = [self.channels.index(c) for c in channels]
        keep = set(channels)
        return CorrelationMatrix(
            channels=list(channels),
            values=self.values[np.ix_(index, index)],
            insufficient={p for p in self.insufficient if p[0] in keep and p[1] in keep},
            zero_variance=self.zero_variance & keep,
        )


@dataclass
class PruneResult:
    retained: set[str]
    redundant: dict[str, str]  # redundant channel -> representative
    threshold: float
    static: set[str] = field(default_factory=set)

    def candidates(self) -> set[str]:
        return self.retained | set(self.redundant) | self.static


class SweepPoint(NamedTuple):
    threshold: float
    selected_ratio: float
    avg_max_abs_r: float
    avg_multi_r2: float
    avg_redundancy_r2: float


@dataclass
class SweepDiagnostics:
    points: list[SweepPoint]

    def at(self, threshold: float) -> SweepPoint:
        for point in self.points:
            if np.isclose(point.threshold, threshold):
                return point
        raise KeyError(threshold)


# =============================================================================
# Correlation
# =============================================================================


def correlation_frame(store: SeriesStore, host: str, channels: list[str]) -> pd.DataFrame:
    """Values to correlate on one host; cumulative counters become rates."""
    frame = store.frames[host]
    present = set(frame.columns)
    missing = np.full(len(frame), np.nan)
    columns = {c: store.signal(host, c) if c in present else missing for c in channels}
    return pd.DataFrame(columns, index=frame.index)


def _host_matrix(frame: pd.DataFrame) -> CorrelationMatrix:
    channels = list(frame.columns)
    observed = frame.notna().to_numpy(dtype=float)
    overlap = observed.T @ observed
    values = frame.corr(method="pearson", min_periods=MIN_OVERLAP).to_numpy(dtype=float)

    std = frame.std(ddof=0).to_numpy(dtype=float)
    scale = np.maximum(1.0, frame.abs().max().to_numpy(dtype=float))
    zero_variance = {
        c for c, s, m in zip(channels, std, scale) if not np.isfinite(s) or s <= 1e-12 * m
    }

    insufficient: set[tuple[str, str]] = set()
    for i, j in zip(*np.nonzero(overlap < MIN_OVERLAP)):
        if i < j:
            insufficient.add((channels[i], channels[j]))
    values = np.where(np.isfinite(values), values, 0.0)
    for c in zero_variance:
        k = channels.index(c)
        values[k, :] = 0.0
        values[:, k] = 0.0
    np.fill_diagonal(values, 1.0)
    return CorrelationMatrix(
        channels=channels,
        values=np.clip(values, -1.0, 1.0),
        insufficient=insufficient,
        zero_variance=zero_variance,
    )


def pearson_matrix(store: SeriesStore, channels: list[str]) -> CorrelationMatrix:
    """Pairwise-complete Pearson matrix; multiple hosts are averaged.

    Raises:
        InsufficientDataError: fewer than two channels.
    """
    channels = sorted(set(channels))
    if len(channels) < 2:
        raise InsufficientDataError(
            f"correlation needs at least 2 channels, got {len(channels)}", "pruning"
        )
    mats = [_host_matrix(correlation_frame(store, h, channels)) for h in store.hosts()]
    if not mats:
        raise InsufficientDataError("store has no hosts", "pruning")
    mat = mats[0] if len(mats) == 1 else average_matrices(mats)
    if mat.insufficient:
        logger.info("%d channel pair(s) with insufficient overlap", len(mat.insufficient))
    return mat


def average_matrices(mats: list[CorrelationMatrix]) -> CorrelationMatrix:
    """Element-wise mean over matrices, restricted to their shared channels.

    Raises:
        InsufficientDataError: empty list.
    """
    if not mats:
        raise InsufficientDataError("no correlation matrices to average", "pruning")
    shared = set(mats[0].channels)
    for mat in mats[1:]:
        shared &= set(mat.channels)
    channels = sorted(shared)
    warnings: list[str] = []
    if any(set(m.channels) != shared for m in mats):
        message = f"channel sets differ; averaging over {len(channels)} shared channel(s)"
        logger.warning(message)
        warnings.append(message)

    subsets = [m.subset(channels) for m in mats]
    values = np.mean([s.values for s in subsets], axis=0)
    np.fill_diagonal(values, 1.0)
    return CorrelationMatrix(
        channels=channels,
        values=values,
        insufficient=set().union(*(s.insufficient for s in subsets)),
        zero_variance=set.intersection(*(s.zero_variance for s in subsets)),
        warnings=warnings,
    )


def channel_variances(store: SeriesStore, channels: list[str]) -> dict[str, float]:
    """Per-channel signal variance (rates for counters), averaged over hosts."""
    totals = {c: [] for c in channels}
    for host in store.hosts():
        frame = correlation_frame(store, host, channels)
        for channel, var in frame.var(ddof=0).items():
            if np.isfinite(var):
                totals[channel].append(float(var))
    return {c: float(np.mean(v)) if v else 0.0 for c, v in totals.items()}


# =============================================================================
# Pruning
# =============================================================================


def _row_variance(mat: CorrelationMatrix) -> np.ndarray:
    """Variance of each channel's off-diagonal |r| row."""
    n = len(mat.channels)
    if n < 2:
        return np.zeros(n)
    off = ~np.eye(n, dtype=bool)
    rows = np.abs(mat.values)[off].reshape(n, n - 1)
    return rows.var(axis=1)


def prune_at_threshold(
    mat: CorrelationMatrix,
    threshold: float,
    variance: dict[str, float],
    priority: Registry,
) -> PruneResult:
    """Keep one representative per connected component of |r| > threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}", "pruning")

    static = {
        c for c in mat.channels if c in mat.zero_variance or variance.get(c, 1.0) == 0.0
    }
    live = [c for c in mat.channels if c not in static]
    if not live:
        return PruneResult(retained=set(), redundant={}, threshold=threshold, static=static)

    sub = mat.subset(live)
    adjacency = np.abs(sub.values) > threshold
    np.fill_diagonal(adjacency, False)
    n_components, labels = connected_components(csr_matrix(adjacency), directed=False)

    row_var = _row_variance(mat)
    full_index = {c: i for i, c in enumerate(mat.channels)}

    def rank_key(channel: str) -> tuple[int, float, str]:
        descriptor = classify_channel(channel, priority, FALLBACK)
        assert descriptor is not None
        return (descriptor.priority_rank, -float(row_var[full_index[channel]]), channel)

    retained: set[str] = set()
    redundant: dict[str, str] = {}
    for component in range(n_components):
        members = [live[i] for i in np.flatnonzero(labels == component)]
        representative = min(members, key=rank_key)
        retained.add(representative)
        for member in members:
            if member != representative:
                redundant[member] = representative

    logger.info(
        "pruned %d of %d channel(s) at |r| > %.3f (%d static)",
        len(redundant),
        len(mat.channels),
        threshold,
        len(static),
    )
    return PruneResult(retained=retained, redundant=redundant, threshold=threshold, static=static)


def union_retained(results: list[PruneResult]) -> set[str]:
    """Union of retained sets: the final diagnostic space."""
    if not results:
        raise InsufficientDataError("no prune results to merge", "pruning")
    merged: set[str] = set()
    for result in results:
        merged |= result.retained
    return merged


# =============================================================================
# Sweep diagnostics
# =============================================================================


def _r2_from(values: np.ndarray, target: int, predictors: list[int]) -> float:
    """R² of predicting `target` from `predictors` given a correlation matrix."""
    if not predictors:
        return 0.0
    r_ss = values[np.ix_(predictors, predictors)] + RIDGE * np.eye(len(predictors))
    r_cs = values[target, predictors]
    r2 = float(r_cs @ np.linalg.solve(r_ss, r_cs))
    return min(max(r2, 0.0), 1.0)


def _diagnostics(mat: CorrelationMatrix, result: PruneResult) -> SweepPoint:
    index = {c: i for i, c in enumerate(mat.channels)}
    retained = sorted(result.retained)
    kept = [index[c] for c in retained]
    abs_r = np.abs(mat.values)

    if len(kept) > 1:
        block = abs_r[np.ix_(kept, kept)].copy()
        np.fill_diagonal(block, -np.inf)
        avg_max = float(block.max(axis=1).mean())
    else:
        avg_max = 0.0

    # Information preservation: how well every candidate is reconstructed.
    reconstruction = [
        1.0 if i in kept else _r2_from(mat.values, i, kept) for i in range(len(mat.channels))
    ]
    redundancy = [_r2_from(mat.values, i, [j for j in kept if j != i]) for i in kept]

    return SweepPoint(
        threshold=result.threshold,
        selected_ratio=len(retained) / len(mat.channels),
        avg_max_abs_r=avg_max,
        avg_multi_r2=float(np.mean(reconstruction)),
        avg_redundancy_r2=float(np.mean(redundancy)) if redundancy else 0.0,
    )


def threshold_sweep(
    mat: CorrelationMatrix,
    variance: dict[str, float],
    priority: Registry,
    thresholds: list[float],
) -> SweepDiagnostics:
    """Prune at each threshold (descending) and compute the diagnostic curves."""
    ordered = sorted(thresholds, reverse=True)
    points = [
        _diagnostics(mat, prune_at_threshold(mat, t, variance, priority)) for t in ordered
    ]
    return SweepDiagnostics(points=points)


def storage_footprint(
    n_channels: int, interval_ms: int, bytes_per_sample: int = 8
) -> tuple[float, float]:
    """(bytes per second, bytes per day) to store `n_channels` at `interval_ms`."""
    per_second = n_channels * bytes_per_sample * 1000.0 / interval_ms
    return per_second, per_second * 86400.0


# =============================================================================
# File IO
# =============================================================================


def serialize_prune_result(result: PruneResult) -> str:
    """CSV `channel,status,representative,threshold` sorted by channel."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["channel", "status", "representative", "threshold"])
    for channel in sorted(result.candidates()):
        if channel in result.retained:
            row = [channel, "retained", channel]
        elif channel in result.redundant:
            row = [channel, "redundant", result.redundant[channel]]
        else:
            row = [channel, "static", ""]
        writer.writerow([*row, repr(result.threshold)])
    return out.getvalue()


def write_prune_result(result: PruneResult, path: Path) -> None:
    path.write_text(serialize_prune_result(result), encoding="utf-8")


def parse_prune_result(text: str) -> PruneResult:
    retained: set[str] = set()
    redundant: dict[str, str] = {}
    static: set[str] = set()
    threshold = DEFAULT_THRESHOLD
    for row in csv.DictReader(io.StringIO(text)):
        try:
            channel, status = row["channel"], row["status"]
            threshold = float(row["threshold"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed prune result row: {row}", "pruning") from e
        if status == "retained":
            retained.add(channel)
        elif status == "redundant":
            redundant[channel] = row["representative"]
        elif status == "static":
            static.add(channel)
        else:
            raise ConfigError(f"unknown prune status {status!r}", "pruning")
    return PruneResult(retained=retained, redundant=redundant, threshold=threshold, static=static)


def read_prune_result(path: Path) -> PruneResult:
    return parse_prune_result(path.read_text(encoding="utf-8"))


def write_sweep(diagnostics: SweepDiagnostics, path: Path) -> None:
    frame = pd.DataFrame(diagnostics.points, columns=SweepPoint._fields)
    frame.to_csv(path, index=False, float_format="%.6f")
