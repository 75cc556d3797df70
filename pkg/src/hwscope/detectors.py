"""Unsupervised window detectors and their agreement.

All three detectors score every window of one workload trace and flag the
windows strictly above the 99th score percentile:

- ZScore: mean |z| over non-constant feature columns
- PcaMahalanobis: distance to the centroid in variance-normalized principal
  component coordinates (components retaining 95% of the variance)
- IsolationForest: 2^(-E[h]/c(n)) over random partition trees
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.special import digamma
from sklearn.decomposition import PCA
from sklearn.ensemble import IsolationForest

from .errors import ConfigError, DegenerateMatrixError, InsufficientDataError, WindowMismatchError
from .features import FeatureMatrix

logger = logging.getLogger(__name__)

DEFAULT_PERCENTILE = 0.99
DEFAULT_TREES = 100
DEFAULT_SUBSAMPLE = 256
DEFAULT_VARIANCE_RETAINED = 0.95
MIN_WINDOWS = 10
EIGENVALUE_FLOOR = 1e-12


class Detector(str, Enum):
    ZSCORE = "ZScore"
    PCA_MAHALANOBIS = "PcaMahalanobis"
    ISOLATION_FOREST = "IsolationForest"

    @property
    def tag(self) -> str:
        """Short method tag used in report tables."""
        return {"ZScore": "Z", "PcaMahalanobis": "MAHA", "IsolationForest": "IF"}[self.value]


DETECTOR_ORDER = (Detector.ZSCORE, Detector.PCA_MAHALANOBIS, Detector.ISOLATION_FOREST)


@dataclass
class PcaModel:
    columns: list[str]  # standardized (non-constant) columns
    means: np.ndarray
    stds: np.ndarray
    components: np.ndarray  # (k, columns), orthonormal rows
    variances: np.ndarray  # (k,), non-increasing
    k: int
    explained: float  # cumulative variance fraction of the first k components


@dataclass
class DetectorScores:
    detector: Detector
    window_ids: list[int]
    scores: np.ndarray
    threshold: float
    flagged: set[int]
    host: str | None = None
    model: PcaModel | None = None

    def score_of(self, window_id: int) -> float:
        return float(self.scores[self.window_ids.index(window_id)])

    def flag_rate(self) -> float:
        return len(self.flagged) / len(self.window_ids) if self.window_ids else 0.0


@dataclass
class EnsembleResult:
    window_ids: list[int]
    agreeing: dict[int, list[Detector]] = field(default_factory=dict)

    def count(self, window_id: int) -> int:
        return len(self.agreeing.get(window_id, []))

    def flagged(self, min_agreement: int = 1) -> list[int]:
        return [w for w in self.window_ids if self.count(w) >= min_agreement]


class Cut(NamedTuple):
    threshold: float
    flagged: set[int]  # positions into the score list


# =============================================================================
# Shared helpers
# =============================================================================


def flag_top_percentile(scores: np.ndarray | list[float], q: float = DEFAULT_PERCENTILE) -> Cut:
    """Linear-interpolation percentile cut with a strict `>` comparison."""
    values = np.asarray(scores, dtype=float)
    if values.size < 2:
        raise InsufficientDataError(
            f"percentile cut needs at least 2 scores, got {values.size}", "detectors"
        )
    if not 0.0 < q < 1.0:
        raise ConfigError(f"percentile must be in (0, 1), got {q}", "detectors")
    threshold = float(np.percentile(values, q * 100.0, method="linear"))
    return Cut(threshold, {int(i) for i in np.flatnonzero(values > threshold)})


def non_constant_columns(matrix: FeatureMatrix) -> list[int]:
    values = matrix.values
    std = values.std(axis=0)
    scale = np.maximum(1.0, np.abs(values).max(axis=0)) if values.size else np.ones(0)
    return [i for i in range(values.shape[1]) if std[i] > 1e-12 * scale[i]]


def standardize(matrix: FeatureMatrix) -> tuple[np.ndarray, list[str], np.ndarray, np.ndarray]:
    """Z-scores of the non-constant columns (population std).

    Raises:
        DegenerateMatrixError: every column is constant.
    """
    used = non_constant_columns(matrix)
    if not used:
        raise DegenerateMatrixError("degenerate matrix: every feature column is constant")
    values = matrix.values[:, used]
    means = values.mean(axis=0)
    stds = values.std(axis=0)
    return (values - means) / stds, [matrix.columns[i] for i in used], means, stds


def _scores(
    detector: Detector,
    matrix: FeatureMatrix,
    scores: np.ndarray,
    percentile: float,
    model: PcaModel | None = None,
) -> DetectorScores:
    cut = flag_top_percentile(scores, percentile)
    ids = matrix.window_ids()
    hosts = matrix.hosts()
    return DetectorScores(
        detector=detector,
        window_ids=ids,
        scores=scores,
        threshold=cut.threshold,
        flagged={ids[i] for i in cut.flagged},
        host=hosts[0] if len(hosts) == 1 else None,
        model=model,
    )


def _check_windows(matrix: FeatureMatrix, detector: Detector) -> None:
    n = matrix.shape[0]
    if n < 2:
        raise InsufficientDataError(f"{detector.value} needs windows, got {n}", "detectors")
    if n < MIN_WINDOWS:
        logger.warning("%s on only %d window(s); scores are unstable", detector.value, n)


# =============================================================================
# Detectors
# =============================================================================


def zscore_detect(matrix: FeatureMatrix, percentile: float = DEFAULT_PERCENTILE) -> DetectorScores:
    _check_windows(matrix, Detector.ZSCORE)
    z, _, _, _ = standardize(matrix)
    scores = np.abs(z).mean(axis=1)
    return _scores(Detector.ZSCORE, matrix, scores, percentile)


def fit_pca(matrix: FeatureMatrix, variance_retained: float = DEFAULT_VARIANCE_RETAINED) -> tuple[PcaModel, np.ndarray]:
    """Fit the principal subspace; returns the model and all-window projections."""
    if not 0.0 < variance_retained <= 1.0:
        raise ConfigError(f"variance_retained must be in (0, 1], got {variance_retained}")
    z, columns, means, stds = standardize(matrix)
    pca = PCA(svd_solver="full")
    pca.fit(z)
    projections = z @ pca.components_.T
    variances = np.maximum(projections.var(axis=0), EIGENVALUE_FLOOR)

    fractions = np.cumsum(variances) / variances.sum()
    k = int(np.searchsorted(fractions, variance_retained - 1e-9) + 1)
    k = min(k, len(variances))
    model = PcaModel(
        columns=columns,
        means=means,
        stds=stds,
        components=pca.components_[:k],
        variances=variances[:k],
        k=k,
        explained=float(fractions[k - 1]),
    )
    logger.info(
        "PCA subspace: %d of %d component(s), explained variance %.3f",
        k,
        len(variances),
        model.explained,
    )
    return model, projections[:, :k]


def pca_mahalanobis_detect(
    matrix: FeatureMatrix,
    percentile: float = DEFAULT_PERCENTILE,
    variance_retained: float = DEFAULT_VARIANCE_RETAINED,
) -> DetectorScores:
    n = matrix.shape[0]
    if n < 3:
        raise InsufficientDataError(f"PCA-Mahalanobis needs at least 3 windows, got {n}", "detectors")
    model, projections = fit_pca(matrix, variance_retained)
    recommended = max(MIN_WINDOWS, 2 * len(model.columns))
    if n < recommended:
        logger.warning(
            "PCA-Mahalanobis on %d window(s) for %d column(s); %d recommended",
            n,
            len(model.columns),
            recommended,
        )
    centroid = projections.mean(axis=0)
    scores = np.sqrt((((projections - centroid) ** 2) / model.variances).sum(axis=1))
    return _scores(Detector.PCA_MAHALANOBIS, matrix, scores, percentile, model)


def average_path_length(n: int | np.ndarray) -> np.ndarray | float:
    """c(n) = 2H(n-1) - 2(n-1)/n with exact harmonic numbers; c(n<=1) = 0."""
    m = np.asarray(n, dtype=float)
    safe = np.maximum(m, 2.0)
    harmonic = digamma(safe) + np.euler_gamma  # H(n-1)
    value = np.where(m > 1, 2.0 * harmonic - 2.0 * (safe - 1.0) / safe, 0.0)
    return float(value) if value.ndim == 0 else value


def isolation_forest_detect(
    matrix: FeatureMatrix,
    seed: int,
    percentile: float = DEFAULT_PERCENTILE,
    n_trees: int = DEFAULT_TREES,
    subsample: int = DEFAULT_SUBSAMPLE,
) -> DetectorScores:
    _check_windows(matrix, Detector.ISOLATION_FOREST)
    n = matrix.shape[0]
    psi = min(subsample, n)
    forest = IsolationForest(n_estimators=n_trees, max_samples=psi, random_state=seed)
    x = matrix.values.astype(np.float32)
    forest.fit(x)

    depths = np.zeros(n)
    for tree, features in zip(forest.estimators_, forest.estimators_features_):
        subset = x[:, features]
        leaves = tree.apply(subset)
        path_nodes = np.asarray(tree.decision_path(subset).sum(axis=1)).ravel()
        leaf_sizes = tree.tree_.n_node_samples[leaves]
        depths += (path_nodes - 1.0) + average_path_length(leaf_sizes)
    mean_depth = depths / len(forest.estimators_)
    scores = np.power(2.0, -mean_depth / average_path_length(psi))
    return _scores(Detector.ISOLATION_FOREST, matrix, scores, percentile)


# =============================================================================
# Agreement
# =============================================================================


def ensemble(results: list[DetectorScores]) -> EnsembleResult:
    """Per window, the detectors that flagged it.

    Raises:
        WindowMismatchError: the detectors scored different windows.
    """
    if not results:
        return EnsembleResult(window_ids=[])
    ids = results[0].window_ids
    for result in results[1:]:
        if result.window_ids != ids:
            raise WindowMismatchError(
                f"{result.detector.value} scored different windows than {results[0].detector.value}"
            )
    agreeing: dict[int, list[Detector]] = {}
    for result in sorted(results, key=lambda r: DETECTOR_ORDER.index(r.detector)):
        for window_id in sorted(result.flagged):
            agreeing.setdefault(window_id, []).append(result.detector)
    return EnsembleResult(window_ids=list(ids), agreeing=agreeing)


def _null_scores(detector: Detector, matrix: FeatureMatrix) -> DetectorScores:
    hosts = matrix.hosts()
    return DetectorScores(
        detector=detector,
        window_ids=matrix.window_ids(),
        scores=np.zeros(matrix.shape[0]),
        threshold=0.0,
        flagged=set(),
        host=hosts[0] if len(hosts) == 1 else None,
    )


def run_detectors(
    matrix: FeatureMatrix,
    seed: int,
    percentile: float = DEFAULT_PERCENTILE,
    n_trees: int = DEFAULT_TREES,
    subsample: int = DEFAULT_SUBSAMPLE,
    variance_retained: float = DEFAULT_VARIANCE_RETAINED,
    workers: int = 3,
) -> list[DetectorScores]:
    """Run the three detectors concurrently; results in fixed detector order.

    A matrix whose columns are all constant has nothing to flag: Z and PCA
    return zero scores with no flags instead of failing the run.
    """

    def guarded(detector: Detector, fn) -> DetectorScores:
        try:
            return fn()
        except DegenerateMatrixError as e:
            logger.warning("%s: %s; no windows flagged", detector.value, e.message)
            return _null_scores(detector, matrix)

    jobs = {
        Detector.ZSCORE: lambda: zscore_detect(matrix, percentile),
        Detector.PCA_MAHALANOBIS: lambda: pca_mahalanobis_detect(matrix, percentile, variance_retained),
        Detector.ISOLATION_FOREST: lambda: isolation_forest_detect(
            matrix, seed, percentile, n_trees, subsample
        ),
    }
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = {d: pool.submit(guarded, d, fn) for d, fn in jobs.items()}
        return [futures[d].result() for d in DETECTOR_ORDER]


# =============================================================================
# File IO
# =============================================================================


def serialize_scores(results: list[DetectorScores]) -> str:
    """CSV `window_id,detector,score,flagged`, window-major."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["window_id", "detector", "score", "flagged"])
    ordered = sorted(results, key=lambda r: DETECTOR_ORDER.index(r.detector))
    by_window = [dict(zip(r.window_ids, r.scores)) for r in ordered]
    if ordered:
        for window_id in ordered[0].window_ids:
            for result, scores in zip(ordered, by_window):
                flagged = int(window_id in result.flagged)
                writer.writerow(
                    [window_id, result.detector.value, f"{scores[window_id]:.17g}", flagged]
                )
    return out.getvalue()


def write_scores(results: list[DetectorScores], path: Path) -> None:
    path.write_text(serialize_scores(results), encoding="utf-8")


def parse_scores(text: str, host: str | None = None) -> list[DetectorScores]:
    """Read a scores CSV.

    The file does not carry thresholds; each result's threshold is restored
    as the highest unflagged score so `flagged = {score > threshold}` holds.
    """
    rows: dict[Detector, list[tuple[int, float, bool]]] = {}
    for row in csv.DictReader(io.StringIO(text)):
        try:
            detector = Detector(row["detector"])
            rows.setdefault(detector, []).append(
                (int(row["window_id"]), float(row["score"]), row["flagged"].strip() == "1")
            )
        except (KeyError, ValueError) as e:
            raise ConfigError(f"malformed scores row: {row}", "detectors") from e

    results: list[DetectorScores] = []
    for detector in DETECTOR_ORDER:
        if detector not in rows:
            continue
        entries = rows[detector]
        scores = np.array([s for _, s, _ in entries])
        unflagged = [s for _, s, f in entries if not f]
        results.append(
            DetectorScores(
                detector=detector,
                window_ids=[w for w, _, _ in entries],
                scores=scores,
                threshold=max(unflagged) if unflagged else float(scores.min()),
                flagged={w for w, _, f in entries if f},
                host=host,
            )
        )
    return results


def read_scores(path: Path, host: str | None = None) -> list[DetectorScores]:
    return parse_scores(path.read_text(encoding="utf-8"), host)
