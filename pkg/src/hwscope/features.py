"""Sliding windows and per-window feature extraction.

Dynamic channels contribute ten statistical/temporal features per window,
Counter channels the sum of their positive per-cell deltas, Static channels
nothing (they are only compared across hosts).
"""

from __future__ import annotations

import io
import logging
import warnings as pywarnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats

from .errors import ConfigError, DegenerateMatrixError
from .ingest import MAX_MISSING_FRACTION, SeriesStore, locf_fill, positive_deltas
from .registry import Category

logger = logging.getLogger(__name__)

DYNAMIC_FEATURES = (
    "mean",
    "variance",
    "std",
    "min",
    "max",
    "skewness",
    "kurtosis",
    "linear_trend_slope",
    "autocorr_lag1",
    "mean_shift_stat",
)
COUNTER_FEATURES = ("sum",)
MEAN_SHIFT_EPS = 1e-9
COLUMN_SEP = "__"


class WindowSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    size_ms: int = Field(default=3000, gt=0)
    stride_ms: int = Field(default=1000, gt=0)

    @model_validator(mode="after")
    def _stride_within_size(self) -> WindowSpec:
        if self.stride_ms > self.size_ms:
            raise ValueError(
                f"stride_ms ({self.stride_ms}) must not exceed size_ms ({self.size_ms})"
            )
        return self

    @classmethod
    def parse(cls, text: str) -> WindowSpec:
        """Parse `<size>/<stride>` in milliseconds, e.g. `3000/1000`."""
        try:
            size, stride = (int(part) for part in text.split("/"))
            return cls(size_ms=size, stride_ms=stride)
        except ValueError as e:
            raise ConfigError(f"invalid window spec {text!r}: expected <size>/<stride>") from e

    def label(self) -> str:
        return f"{self.size_ms}/{self.stride_ms}"

    def cells(self, interval_ms: int) -> tuple[int, int]:
        """(size, stride) in grid cells."""
        if self.size_ms % interval_ms or self.stride_ms % interval_ms:
            raise ConfigError(
                f"window {self.label()} is not a multiple of the {interval_ms} ms grid"
            )
        return self.size_ms // interval_ms, self.stride_ms // interval_ms


@dataclass(frozen=True)
class Window:
    id: int
    start_ms: int
    end_ms: int
    host: str


def column_name(channel: str, feature: str) -> str:
    return f"{channel}{COLUMN_SEP}{feature}"


def split_column(name: str) -> tuple[str, str]:
    channel, _, feature = name.rpartition(COLUMN_SEP)
    return channel, feature


@dataclass
class FeatureMatrix:
    """Windows × (channel, feature) values."""

    values: np.ndarray
    columns: list[str]
    windows: list[Window]
    zero_variance: set[str] = field(default_factory=set)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def hosts(self) -> list[str]:
        return sorted({w.host for w in self.windows})

    def window_ids(self) -> list[int]:
        return [w.id for w in self.windows]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.columns)

    def for_host(self, host: str) -> FeatureMatrix:
        rows = [i for i, w in enumerate(self.windows) if w.host == host]
        values = self.values[rows]
        return FeatureMatrix(
            values=values,
            columns=list(self.columns),
            windows=[self.windows[i] for i in rows],
            zero_variance=_zero_variance_columns(values, self.columns),
        )


@dataclass
class MatrixBuildResult:
    matrix: FeatureMatrix
    dropped: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


# =============================================================================
# Windows
# =============================================================================


def window_count(duration_ms: int, spec: WindowSpec) -> int:
    if duration_ms < spec.size_ms:
        return 0
    return (duration_ms - spec.size_ms) // spec.stride_ms + 1


def slice_windows(store: SeriesStore, spec: WindowSpec) -> list[Window]:
    """Windows tiling each host's trace from t=0; the last partial window is dropped.

    Ids run 0..n-1 per host.
    """
    spec.cells(store.interval_ms)
    windows: list[Window] = []
    for host in store.hosts():
        duration = store.duration_ms(host)
        count = window_count(duration, spec)
        if count == 0:
            logger.warning(
                "host %s: trace of %d ms is shorter than one %d ms window",
                host,
                duration,
                spec.size_ms,
            )
            continue
        for index in range(count):
            start = index * spec.stride_ms
            windows.append(Window(index, start, start + spec.size_ms, host))
    return windows


# =============================================================================
# Features
# =============================================================================


def _is_constant(block: np.ndarray, std: np.ndarray) -> np.ndarray:
    scale = np.maximum(1.0, np.abs(block).max(axis=1))
    return std <= 1e-12 * scale


def dynamic_features(block: np.ndarray) -> dict[str, np.ndarray]:
    """Ten features for each row of a (windows, cells) block."""
    n = block.shape[1]
    mean = block.mean(axis=1)
    variance = block.var(axis=1)
    std = np.sqrt(variance)
    constant = _is_constant(block, std)

    with pywarnings.catch_warnings(), np.errstate(invalid="ignore", divide="ignore"):
        pywarnings.simplefilter("ignore", RuntimeWarning)
        skewness = stats.skew(block, axis=1, bias=True)
        kurtosis = stats.kurtosis(block, axis=1, fisher=True, bias=True)
    skewness = np.where(constant, 0.0, np.nan_to_num(skewness))
    kurtosis = np.where(constant, 0.0, np.nan_to_num(kurtosis))

    if n >= 2:
        t = np.arange(n, dtype=float) - (n - 1) / 2.0
        slope = (block - mean[:, None]) @ t / float(t @ t)
        slope = np.where(constant, 0.0, slope)
    else:
        slope = np.zeros(block.shape[0])

    if n >= 3:
        a = block[:, :-1] - block[:, :-1].mean(axis=1, keepdims=True)
        b = block[:, 1:] - block[:, 1:].mean(axis=1, keepdims=True)
        den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            autocorr = (a * b).sum(axis=1) / den
        autocorr = np.where(constant | ~np.isfinite(autocorr) | (den == 0), 0.0, autocorr)
    else:
        autocorr = np.zeros(block.shape[0])

    if n >= 2:
        half = n // 2
        first, second = block[:, :half], block[:, half:]
        pooled = np.sqrt((first.var(axis=1) + second.var(axis=1)) / 2.0)
        shift = np.abs(second.mean(axis=1) - first.mean(axis=1)) / (pooled + MEAN_SHIFT_EPS)
        mean_shift = np.where(constant, 0.0, shift)
    else:
        mean_shift = np.zeros(block.shape[0])

    return {
        "mean": mean,
        "variance": variance,
        "std": std,
        "min": block.min(axis=1),
        "max": block.max(axis=1),
        "skewness": skewness,
        "kurtosis": kurtosis,
        "linear_trend_slope": slope,
        "autocorr_lag1": autocorr,
        "mean_shift_stat": mean_shift,
    }


def counter_features(deltas_block: np.ndarray) -> dict[str, np.ndarray]:
    return {"sum": deltas_block.sum(axis=1)}


def _zero_variance_columns(values: np.ndarray, columns: list[str]) -> set[str]:
    if values.shape[0] == 0:
        return set(columns)
    with np.errstate(invalid="ignore"):
        spread = np.nanmax(values, axis=0) - np.nanmin(values, axis=0)
    return {c for c, s in zip(columns, spread) if not s > 0}


def extract_features(
    store: SeriesStore,
    windows: list[Window],
    channels: list[str] | None = None,
) -> FeatureMatrix:
    """Feature matrix for windows of a single host.

    A channel whose window has more than 30% missing cells yields NaN features
    for that window; other gaps are filled by last observation carried forward.
    `channels` restricts extraction (e.g. to a retained set).
    """
    hosts = {w.host for w in windows}
    if len(hosts) > 1:
        raise ConfigError("extract_features expects windows of a single host", "features")
    if not windows:
        return FeatureMatrix(values=np.zeros((0, 0)), columns=[], windows=[])
    host = hosts.pop()
    frame = store.frames[host]
    wanted = set(channels) if channels is not None else None

    interval = store.interval_ms
    size = (windows[0].end_ms - windows[0].start_ms) // interval
    starts = np.array([w.start_ms // interval for w in windows])

    columns: list[str] = []
    blocks: list[np.ndarray] = []
    for channel in sorted(frame.columns):
        if wanted is not None and channel not in wanted:
            continue
        category = store.category(channel)
        if category == Category.STATIC:
            continue
        raw = frame[channel].to_numpy(dtype=float)
        if size > raw.size:
            continue
        missing = sliding_window_view(np.isnan(raw), size)[starts].mean(axis=1)
        excluded = missing > MAX_MISSING_FRACTION
        if excluded.all():
            logger.debug("%s/%s: every window excluded for missing data", host, channel)
        filled = locf_fill(raw)
        if np.isnan(filled).all():
            filled = np.zeros_like(filled)

        if category == Category.COUNTER:
            block = sliding_window_view(positive_deltas(filled), size)[starts]
            feats = counter_features(block)
        else:
            block = sliding_window_view(filled, size)[starts]
            feats = dynamic_features(block)
        for name, values in feats.items():
            columns.append(column_name(channel, name))
            blocks.append(np.where(excluded, np.nan, values))

    values = np.column_stack(blocks) if blocks else np.zeros((len(windows), 0))
    return FeatureMatrix(
        values=values,
        columns=columns,
        windows=list(windows),
        zero_variance=_zero_variance_columns(values, columns),
    )


def _column_order(name: str) -> tuple[str, str]:
    return split_column(name)


def build_matrix(matrices: list[FeatureMatrix]) -> MatrixBuildResult:
    """Concatenate per-host matrices into one column-aligned matrix.

    Columns missing from any host, or with a missing value anywhere, are
    dropped with a warning.

    Raises:
        DegenerateMatrixError: no usable column remains.
    """
    matrices = [m for m in matrices if m.windows]
    if not matrices:
        raise DegenerateMatrixError("no windows to build a feature matrix from", "features")

    all_columns: set[str] = set()
    for matrix in matrices:
        all_columns.update(matrix.columns)
    frames = [
        pd.DataFrame(m.values, columns=m.columns).reindex(columns=sorted(all_columns))
        for m in matrices
    ]
    combined = pd.concat(frames, ignore_index=True)

    dropped = sorted(c for c in combined.columns if combined[c].isna().any())
    messages: list[str] = []
    if dropped:
        message = f"dropped {len(dropped)} feature column(s) with missing values"
        logger.warning(message)
        messages.append(message)
    kept = sorted((c for c in combined.columns if c not in set(dropped)), key=_column_order)
    if not kept:
        raise DegenerateMatrixError("zero usable feature columns", "features")

    values = combined[kept].to_numpy(dtype=float)
    windows = [w for m in matrices for w in m.windows]
    return MatrixBuildResult(
        matrix=FeatureMatrix(
            values=values,
            columns=kept,
            windows=windows,
            zero_variance=_zero_variance_columns(values, kept),
        ),
        dropped=dropped,
        warnings=messages,
    )


# =============================================================================
# File IO
# =============================================================================


def serialize_feature_matrix(matrix: FeatureMatrix) -> str:
    frame = matrix.frame()
    frame.insert(0, "start_ms", [w.start_ms for w in matrix.windows])
    frame.insert(0, "host", [w.host for w in matrix.windows])
    frame.insert(0, "window_id", [w.id for w in matrix.windows])
    return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def write_feature_matrix(matrix: FeatureMatrix, path: Path) -> None:
    path.write_text(serialize_feature_matrix(matrix), encoding="utf-8")


def parse_feature_matrix(text: str, size_ms: int) -> FeatureMatrix:
    """Read a feature matrix CSV; `size_ms` restores window end times."""
    frame = pd.read_csv(io.StringIO(text), dtype={"host": str})
    meta = ["window_id", "host", "start_ms"]
    if list(frame.columns[:3]) != meta:
        raise ConfigError("feature matrix header must start with window_id,host,start_ms", "features")
    columns = list(frame.columns[3:])
    values = frame[columns].to_numpy(dtype=float)
    if np.isnan(values).any():
        raise ConfigError("feature matrix contains missing values", "features")
    windows = [
        Window(int(i), int(s), int(s) + size_ms, str(h))
        for i, h, s in frame[meta].itertuples(index=False)
    ]
    return FeatureMatrix(
        values=values,
        columns=columns,
        windows=windows,
        zero_variance=_zero_variance_columns(values, columns),
    )


def read_feature_matrix(path: Path, size_ms: int) -> FeatureMatrix:
    return parse_feature_matrix(path.read_text(encoding="utf-8"), size_ms)
