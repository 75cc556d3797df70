"""End-to-end run: ingest, derive, prune, extract, detect, attribute, report.

Every stage is a plain function over the previous stage's output so the CLI
subcommands can stop after any of them; `run_pipeline` chains all of them
and writes each intermediate artifact next to the report.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Literal

import numpy as np

from .attribution import (
    DEFAULT_CROSS_HOST_CUT,
    DEFAULT_TOP_K,
    AnomalyIntervalSet,
    Attributor,
    cross_host_scan,
    intervals_from_ids,
)
from .derived import derive, load_derived_specs
from .detectors import (
    DEFAULT_PERCENTILE,
    DEFAULT_SUBSAMPLE,
    DEFAULT_TREES,
    DEFAULT_VARIANCE_RETAINED,
    Detector,
    DetectorScores,
    EnsembleResult,
    ensemble,
    run_detectors,
    write_scores,
)
from .errors import ConfigError, DegenerateMatrixError, InsufficientDataError
from .features import (
    FeatureMatrix,
    MatrixBuildResult,
    WindowSpec,
    build_matrix,
    extract_features,
    slice_windows,
    write_feature_matrix,
)
from .ingest import SeriesStore, load_trace
from .pruning import (
    DEFAULT_THRESHOLD,
    CorrelationMatrix,
    PruneResult,
    SweepDiagnostics,
    channel_variances,
    pearson_matrix,
    prune_at_threshold,
    read_prune_result,
    threshold_sweep,
    write_prune_result,
)
from .registry import Category, Registry, default_registry, load_registry
from .report import AnomalyRecord, ReportDocument, build_record, render_report, write_report
from .timebase import parse_epoch

logger = logging.getLogger(__name__)

DEFAULT_SEED = 0
SEED_ENV = "REVEAL_SEED"
SWEEP_THRESHOLDS = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]

Mode = Literal["per-host", "aggregated"]


def resolve_seed(explicit: int | None = None) -> int:
    """`--seed` wins, then the REVEAL_SEED environment variable, then 0."""
    if explicit is not None:
        return explicit
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from e


def derive_seeds(seed: int, n: int) -> list[int]:
    """`n` independent integer sub-seeds of `seed`."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class RunConfig:
    """Settings for one pipeline run; defaults are the reference settings."""

    traces: list[Path] = field(default_factory=list)
    registry_path: Path | None = None
    derived_path: Path | None = None
    interval_ms: int | None = None  # None: from the trace header
    windows: WindowSpec = field(default_factory=WindowSpec)
    threshold_r: float = DEFAULT_THRESHOLD
    prune: bool = False
    retained_path: Path | None = None
    seed: int = DEFAULT_SEED
    percentile: float = DEFAULT_PERCENTILE
    n_trees: int = DEFAULT_TREES
    subsample: int = DEFAULT_SUBSAMPLE
    variance_retained: float = DEFAULT_VARIANCE_RETAINED
    top_k: int = DEFAULT_TOP_K
    cross_host_cut: float = DEFAULT_CROSS_HOST_CUT
    mode: Mode = "per-host"
    out: Path | None = None
    epoch: str | None = None
    min_agreement: int = 1
    workers: int = 1

    def load_registry(self) -> Registry:
        if self.registry_path is None:
            return default_registry()
        return load_registry(self.registry_path)


@dataclass
class HostRun:
    host: str
    matrix: FeatureMatrix
    results: list[DetectorScores]
    agreement: EnsembleResult
    records: list[AnomalyRecord]
    intervals: AnomalyIntervalSet


@dataclass
class PipelineResult:
    store: SeriesStore
    matrix: FeatureMatrix
    hosts: dict[str, HostRun]
    document: ReportDocument
    prune: PruneResult | None = None
    artifacts: list[Path] = field(default_factory=list)


# =============================================================================
# Stages
# =============================================================================


def merge_stores(stores: list[SeriesStore]) -> SeriesStore:
    """Combine per-file stores; every host must come from exactly one file."""
    if not stores:
        raise InsufficientDataError("no traces given", "ingest")
    first = stores[0]
    frames = {}
    for store in stores:
        if store.interval_ms != first.interval_ms:
            raise ConfigError(
                f"traces use different grids ({first.interval_ms} ms vs {store.interval_ms} ms)",
                "ingest",
            )
        for host, frame in store.frames.items():
            if host in frames:
                raise ConfigError(f"host {host} appears in more than one trace", "ingest")
            frames[host] = frame
    merged = first.with_frames(frames)
    merged.warnings = [w for s in stores for w in s.warnings]
    merged.malformed_count = sum(s.malformed_count for s in stores)
    merged.epoch_ms = min(s.epoch_ms for s in stores)
    return merged


def load_store(config: RunConfig, registry: Registry | None = None) -> SeriesStore:
    """Parse the configured traces and add derived channels."""
    registry = registry or config.load_registry()
    if not config.traces:
        raise ConfigError("no trace given (use --trace)")
    store = merge_stores([load_trace(p, registry, config.interval_ms) for p in config.traces])
    if store.is_empty():
        raise InsufficientDataError("trace holds no samples", "ingest")
    specs = load_derived_specs(config.derived_path) if config.derived_path else None
    derived = derive(store, specs)
    logger.info(
        "loaded %d host(s), %d channel(s) at %d ms",
        len(derived.hosts()),
        len(derived.channels()),
        derived.interval_ms,
    )
    return derived


def prune_candidates(store: SeriesStore) -> list[str]:
    return [c for c in store.channels() if store.category(c) != Category.STATIC]


def correlate(store: SeriesStore) -> CorrelationMatrix:
    return pearson_matrix(store, prune_candidates(store))


def prune_store(
    store: SeriesStore,
    threshold: float = DEFAULT_THRESHOLD,
    thresholds: list[float] | None = None,
) -> tuple[PruneResult, SweepDiagnostics | None]:
    """Prune the store's non-Static channels; optionally sweep thresholds too."""
    matrix = correlate(store)
    variance = channel_variances(store, matrix.channels)
    for message in matrix.warnings:
        store.warn(message)
    result = prune_at_threshold(matrix, threshold, variance, store.registry)
    sweep = None
    if thresholds:
        sweep = threshold_sweep(matrix, variance, store.registry, thresholds)
    return result, sweep


def select_channels(
    store: SeriesStore, config: RunConfig
) -> tuple[list[str] | None, PruneResult | None]:
    """Channels to extract from: a retained-set file, inline pruning, or all."""
    if config.retained_path is not None:
        result = read_prune_result(config.retained_path)
        missing = sorted(result.retained - set(store.channels()))
        if missing:
            store.warn(f"{len(missing)} retained channel(s) not in trace: {', '.join(missing[:5])}")
        return sorted(result.retained), result
    if config.prune:
        result, _ = prune_store(store, config.threshold_r)
        return sorted(result.retained), result
    return None, None


def extract_store(
    store: SeriesStore,
    spec: WindowSpec,
    channels: list[str] | None = None,
    workers: int = 1,
) -> MatrixBuildResult:
    """Window every host and build the column-aligned feature matrix."""
    windows = slice_windows(store, spec)
    if not windows:
        raise InsufficientDataError(
            f"no host trace is long enough for a {spec.size_ms} ms window", "features"
        )
    by_host: dict[str, list] = {}
    for window in windows:
        by_host.setdefault(window.host, []).append(window)

    def extract(host: str) -> FeatureMatrix:
        return extract_features(store, by_host[host], channels)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        matrices = list(pool.map(extract, sorted(by_host)))
    built = build_matrix(matrices)
    for message in built.warnings:
        store.warnings.append(message)
    return built


def detect_host(
    matrix: FeatureMatrix,
    host: str,
    seed: int,
    config: RunConfig,
    registry: Registry,
    epoch: datetime | None = None,
) -> HostRun:
    """Detectors, agreement and attribution for one host's windows."""
    host_matrix = matrix.for_host(host)
    results = run_detectors(
        host_matrix,
        seed,
        percentile=config.percentile,
        n_trees=config.n_trees,
        subsample=config.subsample,
        variance_retained=config.variance_retained,
    )
    for result in results:
        result.host = host
    agreement = ensemble(results)

    pca = next((r.model for r in results if r.detector == Detector.PCA_MAHALANOBIS), None)
    flagged = agreement.flagged(1)
    if flagged:
        try:
            attributor = Attributor(host_matrix, pca, config.top_k)
        except DegenerateMatrixError:
            logger.warning("host %s: constant feature matrix, nothing to attribute", host)
            flagged = []
    windows = {w.id: w for w in host_matrix.windows}
    records = []
    for window_id in flagged:
        attribution = attributor.attribute(window_id)
        if not attribution.reasons:
            continue
        records.append(
            build_record(
                windows[window_id],
                attribution,
                agreement.agreeing[window_id],
                registry,
                results,
                epoch,
            )
        )
    intervals = intervals_from_ids(agreement.flagged(config.min_agreement), config.windows, host)
    logger.info(
        "host %s: %d of %d window(s) flagged by at least one detector",
        host,
        len(records),
        len(host_matrix.windows),
    )
    return HostRun(host, host_matrix, results, agreement, records, intervals)


def detect_all(
    matrix: FeatureMatrix,
    config: RunConfig,
    registry: Registry,
    epoch: datetime | None = None,
) -> dict[str, HostRun]:
    """detect_host per host; hosts run concurrently in aggregated mode."""
    hosts = matrix.hosts()
    seeds = dict(zip(hosts, derive_seeds(config.seed, len(hosts))))
    workers = max(1, config.workers) if config.mode == "aggregated" else 1

    def run(host: str) -> HostRun:
        return detect_host(matrix, host, seeds[host], config, registry, epoch)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return dict(zip(hosts, pool.map(run, hosts)))


def detect_intervals(
    store: SeriesStore, spec: WindowSpec, config: RunConfig | None = None
) -> dict[str, AnomalyIntervalSet]:
    """Anomaly intervals per host at one window setting (the sweep pipeline)."""
    config = config or RunConfig()
    built = extract_store(store, spec)
    hosts = built.matrix.hosts()
    seeds = dict(zip(hosts, derive_seeds(config.seed, len(hosts))))
    intervals = {}
    for host in hosts:
        results = run_detectors(
            built.matrix.for_host(host),
            seeds[host],
            percentile=config.percentile,
            n_trees=config.n_trees,
            subsample=config.subsample,
            variance_retained=config.variance_retained,
        )
        flagged = ensemble(results).flagged(config.min_agreement)
        intervals[host] = intervals_from_ids(flagged, spec, host)
    return intervals


# =============================================================================
# Orchestration
# =============================================================================


def write_artifacts(result: PipelineResult, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "features.csv"]
    write_feature_matrix(result.matrix, paths[0])
    for host, run in result.hosts.items():
        path = out_dir / f"scores.{host}.csv"
        write_scores(run.results, path)
        paths.append(path)
    if result.prune is not None:
        path = out_dir / "prune.csv"
        write_prune_result(result.prune, path)
        paths.append(path)
    paths.extend(write_report(result.document, out_dir))
    return paths


def run_pipeline(config: RunConfig) -> PipelineResult:
    """Run every stage and, with `config.out`, write all artifacts.

    Raises:
        HwscopeError: any stage's hard error, tagged with its module.
    """
    registry = config.load_registry()
    store = load_store(config, registry)
    epoch = parse_epoch(config.epoch, store.epoch_ms) if config.epoch else None

    channels, prune = select_channels(store, config)
    built = extract_store(store, config.windows, channels, config.workers)
    hosts = detect_all(built.matrix, config, store.registry, epoch)

    findings = []
    if config.mode == "aggregated":
        findings = cross_host_scan(store, cut=config.cross_host_cut)
    document = render_report(
        records=[r for run in hosts.values() for r in run.records],
        intervals=[run.intervals for run in hosts.values()],
        findings=findings,
        mode=config.mode,
        registry=store.registry,
        spec=config.windows,
        window_counts={h: len(run.matrix.windows) for h, run in hosts.items()},
        min_agreement=config.min_agreement,
        warnings=store.warnings,
    )
    result = PipelineResult(
        store=store, matrix=built.matrix, hosts=hosts, document=document, prune=prune
    )
    if config.out is not None:
        result.artifacts = write_artifacts(result, config.out)
    return result
