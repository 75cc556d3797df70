"""
Host-level hardware telemetry anomaly detection and attribution.

Architecture:
- A metric registry classifies channels by subsystem, category and priority
- Traces are aligned onto a regular grid per host (SeriesStore)
- Redundant channels are pruned by Pearson correlation
- Sliding windows become a feature matrix scored by three detectors
- Flagged windows are attributed to metric-feature pairs and subsystems
- Report models produce RenderBlock lists; formatters turn them into text
"""

from __future__ import annotations

# Errors
from .errors import (
    ConfigError,
    CorruptTraceError,
    DegenerateMatrixError,
    HwscopeError,
    InsufficientDataError,
    WindowMismatchError,
)

# Registry
from .registry import (
    Category,
    MetricDescriptor,
    Registry,
    Subsystem,
    classify,
    classify_channel,
    default_registry,
    load_registry,
    resolve_metric,
)

# Ingest
from .ingest import (
    MetricSample,
    SeriesStore,
    align_to_grid,
    counter_to_rate,
    fill_missing,
    load_trace,
    parse_trace,
    serialize_store,
)

# Derived metrics and pruning
from .derived import BUILTIN_SPECS, DerivedSpec, Formula, derive
from .pruning import (
    CorrelationMatrix,
    PruneResult,
    SweepDiagnostics,
    pearson_matrix,
    prune_at_threshold,
    threshold_sweep,
)

# Windows, features and detectors
from .features import (
    FeatureMatrix,
    Window,
    WindowSpec,
    build_matrix,
    extract_features,
    slice_windows,
)
from .detectors import (
    Detector,
    DetectorScores,
    EnsembleResult,
    ensemble,
    flag_top_percentile,
    isolation_forest_detect,
    pca_mahalanobis_detect,
    zscore_detect,
)

# Attribution and reporting
from .attribution import (
    AnomalyIntervalSet,
    CrossHostFinding,
    Reason,
    attribute_window,
    cross_host_compare,
    map_subsystems,
    merge_intervals,
)
from .report import AnomalyRecord, ReportDocument, render_report

# Formatters
from .formatters import ANSIFormatter, Formatter, MarkdownFormatter, PlainFormatter

# Evaluation and synthetic data
from .evaluation import (
    dtw_distance,
    hit_by_count,
    hit_by_length,
    interval_agreement,
    interval_iou,
    reproducibility_check,
    wilcoxon_signed_rank,
    window_granularity_sweep,
)
from .injector import Injection, InjectionKind, SynthScenario, ground_truth, synth_trace

# Pipeline
from .pipeline import RunConfig, run_pipeline

__all__ = [
    # Errors
    "ConfigError",
    "CorruptTraceError",
    "DegenerateMatrixError",
    "HwscopeError",
    "InsufficientDataError",
    "WindowMismatchError",
    # Registry
    "Category",
    "MetricDescriptor",
    "Registry",
    "Subsystem",
    "classify",
    "classify_channel",
    "default_registry",
    "load_registry",
    "resolve_metric",
    # Ingest
    "MetricSample",
    "SeriesStore",
    "align_to_grid",
    "counter_to_rate",
    "fill_missing",
    "load_trace",
    "parse_trace",
    "serialize_store",
    # Derived metrics and pruning
    "BUILTIN_SPECS",
    "DerivedSpec",
    "Formula",
    "derive",
    "CorrelationMatrix",
    "PruneResult",
    "SweepDiagnostics",
    "pearson_matrix",
    "prune_at_threshold",
    "threshold_sweep",
    # Windows, features and detectors
    "FeatureMatrix",
    "Window",
    "WindowSpec",
    "build_matrix",
    "extract_features",
    "slice_windows",
    "Detector",
    "DetectorScores",
    "EnsembleResult",
    "ensemble",
    "flag_top_percentile",
    "isolation_forest_detect",
    "pca_mahalanobis_detect",
    "zscore_detect",
    # Attribution and reporting
    "AnomalyIntervalSet",
    "AnomalyRecord",
    "CrossHostFinding",
    "Reason",
    "ReportDocument",
    "attribute_window",
    "cross_host_compare",
    "map_subsystems",
    "merge_intervals",
    "render_report",
    # Formatters
    "ANSIFormatter",
    "Formatter",
    "MarkdownFormatter",
    "PlainFormatter",
    # Evaluation and synthetic data
    "dtw_distance",
    "hit_by_count",
    "hit_by_length",
    "interval_agreement",
    "interval_iou",
    "reproducibility_check",
    "wilcoxon_signed_rank",
    "window_granularity_sweep",
    "Injection",
    "InjectionKind",
    "SynthScenario",
    "ground_truth",
    "synth_trace",
    # Pipeline
    "RunConfig",
    "run_pipeline",
]
