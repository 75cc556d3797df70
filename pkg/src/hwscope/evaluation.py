"""Agreement and reproducibility statistics.

- interval agreement between two runs: length IoU, hit rate by segment
  count and by segment length
- reproducibility of repeated runs: DTW distance to the pointwise median
  trace, compared with time-shuffled surrogates by a Wilcoxon signed-rank test
- window granularity sweep: the agreement metrics across window settings
"""

from __future__ import annotations

import csv
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.stats import norm, rankdata
from typing_extensions import TypedDict

from .attribution import AnomalyIntervalSet
from .errors import InsufficientDataError
from .features import WindowSpec
from .ingest import SeriesStore

logger = logging.getLogger(__name__)

MIN_WILCOXON_N = 6
SIGNIFICANCE = 0.05

Pipeline = Callable[[SeriesStore, WindowSpec], dict[str, AnomalyIntervalSet]]


# =============================================================================
# Interval agreement
# =============================================================================


def intersection_length(a: AnomalyIntervalSet, b: AnomalyIntervalSet) -> int:
    """Total length of the overlap of two disjoint, sorted interval sets."""
    total = 0
    i = j = 0
    left, right = a.intervals, b.intervals
    while i < len(left) and j < len(right):
        start = max(left[i][0], right[j][0])
        end = min(left[i][1], right[j][1])
        if end > start:
            total += end - start
        if left[i][1] <= right[j][1]:
            i += 1
        else:
            j += 1
    return total


def interval_iou(a: AnomalyIntervalSet, b: AnomalyIntervalSet) -> float:
    """L(A∩B) / (L(A) + L(B) - L(A∩B)); two empty sets agree perfectly."""
    if not a.intervals and not b.intervals:
        return 1.0
    if not a.intervals or not b.intervals:
        return 0.0
    inter = intersection_length(a, b)
    return inter / (a.total_length() + b.total_length() - inter)


def hit_by_count(a: AnomalyIntervalSet, b: AnomalyIntervalSet) -> float:
    """Fraction of A's segments that intersect any segment of B.

    An empty A is vacuously fully hit (1.0); interval_agreement flags it.
    """
    if not a.intervals:
        return 1.0
    hits = sum(
        1
        for start, end in a.intervals
        if any(min(end, e) > max(start, s) for s, e in b.intervals)
    )
    return hits / len(a.intervals)


def hit_by_length(a: AnomalyIntervalSet, b: AnomalyIntervalSet) -> float:
    """Fraction of A's length overlapping B; 1.0 for an empty A."""
    if not a.intervals:
        return 1.0
    return intersection_length(a, b) / a.total_length()


class IntervalAgreement(NamedTuple):
    hit_count: float
    hit_len: float
    iou: float
    vacuous: bool  # A was empty, both hit rates are 1.0 by convention


def interval_agreement(a: AnomalyIntervalSet, b: AnomalyIntervalSet) -> IntervalAgreement:
    """Hit rates of A against B and their IoU, flagging an empty A."""
    return IntervalAgreement(
        hit_by_count(a, b), hit_by_length(a, b), interval_iou(a, b), not a.intervals
    )


# =============================================================================
# Reproducibility
# =============================================================================


def dtw_distance(x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> float:
    """Classic DTW with absolute-difference cost and no window constraint.

    The accumulated cost matrix is filled one anti-diagonal at a time.

    Raises:
        InsufficientDataError: either series is empty.
    """
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise InsufficientDataError("DTW needs non-empty series", "evaluation")

    cost = np.abs(a[:, None] - b[None, :])
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for diagonal in range(2, n + m + 1):
        i = np.arange(max(1, diagonal - m), min(n, diagonal - 1) + 1)
        j = diagonal - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = cost[i - 1, j - 1] + best
    return float(acc[n, m])


class WilcoxonResult(NamedTuple):
    statistic: float
    p_value: float
    n: int  # nonzero differences
    degenerate: bool  # every difference was zero
    small_sample: bool  # fewer than MIN_WILCOXON_N nonzero differences


def wilcoxon_signed_rank(diffs: Sequence[float] | np.ndarray) -> WilcoxonResult:
    """Two-sided signed-rank test, normal approximation.

    Zero differences are dropped, tied |d| share the average rank, the
    variance is tie-corrected and a continuity correction of 0.5 applied.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[np.isfinite(d) & (d != 0)]
    n = int(d.size)
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, True, True)

    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    statistic = min(w_plus, w_minus)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - float((tie_counts**3 - tie_counts).sum()) / 48.0
    z = max(abs(statistic - mean) - 0.5, 0.0) / np.sqrt(variance)
    p_value = min(1.0, 2.0 * float(norm.sf(z)))
    small = n < MIN_WILCOXON_N
    if small:
        logger.debug("Wilcoxon on %d nonzero difference(s); normal approximation is rough", n)
    return WilcoxonResult(statistic, p_value, n, False, small)


def median_trace(runs: Sequence[np.ndarray]) -> np.ndarray:
    """Pointwise median across grid-aligned runs, over their common length."""
    if not runs:
        raise InsufficientDataError("no runs for a median trace", "evaluation")
    length = min(len(r) for r in runs)
    stacked = np.vstack([np.asarray(r, dtype=float)[:length] for r in runs])
    return np.nanmedian(stacked, axis=0)


@dataclass
class ReproducibilityResult:
    distances: list[float]  # each run to the median trace
    surrogate_distances: list[float]  # each shuffled run to the median trace
    test: WilcoxonResult

    @property
    def reproducible(self) -> bool:
        """Runs are significantly closer to the median than their shuffles."""
        closer = float(np.median(np.subtract(self.surrogate_distances, self.distances))) > 0
        return closer and not self.test.degenerate and self.test.p_value < SIGNIFICANCE


def reproducibility_check(runs: Sequence[np.ndarray], seed: int) -> ReproducibilityResult:
    """DTW of repeated runs to their median trace against time-shuffled surrogates."""
    if len(runs) < 2:
        raise InsufficientDataError("reproducibility needs at least 2 runs", "evaluation")
    center = median_trace(runs)
    length = center.size
    rng = np.random.default_rng(seed)
    distances: list[float] = []
    surrogates: list[float] = []
    for run in runs:
        series = np.nan_to_num(np.asarray(run, dtype=float)[:length], nan=float(np.nanmedian(center)))
        distances.append(dtw_distance(series, center))
        surrogates.append(dtw_distance(rng.permutation(series), center))
    test = wilcoxon_signed_rank(np.subtract(surrogates, distances))
    return ReproducibilityResult(distances, surrogates, test)


def store_reproducibility(
    stores: Sequence[SeriesStore], seed: int
) -> dict[tuple[str, str], ReproducibilityResult]:
    """reproducibility_check for every (host, channel) present in all runs."""
    if len(stores) < 2:
        raise InsufficientDataError("reproducibility needs at least 2 runs", "evaluation")
    hosts = set(stores[0].hosts())
    for store in stores[1:]:
        hosts &= set(store.hosts())
    seeds = np.random.SeedSequence(seed)
    results: dict[tuple[str, str], ReproducibilityResult] = {}
    for host in sorted(hosts):
        channels = set(stores[0].channels(host))
        for store in stores[1:]:
            channels &= set(store.channels(host))
        for channel, child in zip(sorted(channels), seeds.spawn(len(channels))):
            runs = [store.signal(host, channel) for store in stores]
            sub_seed = int(child.generate_state(1)[0])
            results[(host, channel)] = reproducibility_check(runs, sub_seed)
    return results


# =============================================================================
# Window granularity sweep
# =============================================================================


@dataclass
class AgreementSummary:
    pair: str
    hit_count_mean: float
    hit_count_median: float
    hit_count_std: float
    hit_len_mean: float
    hit_len_median: float
    hit_len_std: float
    iou_mean: float
    iou_median: float
    samples: int
    vacuous: int = 0  # samples whose first interval set was empty


class AgreementRow(TypedDict):
    """One row of the agreement table, values pre-formatted."""

    pair: str
    hit_count_mean: str
    hit_count_median: str
    hit_count_std: str
    hit_len_mean: str
    hit_len_median: str
    hit_len_std: str
    iou_median: str


TABLE_COLUMNS = list(AgreementRow.__annotations__)


def summarize_pair(
    pair: str,
    first: list[dict[str, AnomalyIntervalSet]],
    second: list[dict[str, AnomalyIntervalSet]],
) -> AgreementSummary:
    """Agreement of two configurations over the same traces (one dict per trace)."""
    counts, lengths, ious = [], [], []
    vacuous = 0
    for a_hosts, b_hosts in zip(first, second):
        for host in sorted(set(a_hosts) | set(b_hosts)):
            a = a_hosts.get(host, AnomalyIntervalSet(host))
            b = b_hosts.get(host, AnomalyIntervalSet(host))
            agreement = interval_agreement(a, b)
            counts.append(agreement.hit_count)
            lengths.append(agreement.hit_len)
            ious.append(agreement.iou)
            vacuous += agreement.vacuous
    if not counts:
        raise InsufficientDataError(f"no hosts to compare for {pair}", "evaluation")
    if vacuous:
        logger.info(
            "%s: %d of %d sample(s) vacuous, no intervals in the first setting",
            pair,
            vacuous,
            len(counts),
        )
    return AgreementSummary(
        pair=pair,
        hit_count_mean=float(np.mean(counts)),
        hit_count_median=float(np.median(counts)),
        hit_count_std=float(np.std(counts)),
        hit_len_mean=float(np.mean(lengths)),
        hit_len_median=float(np.median(lengths)),
        hit_len_std=float(np.std(lengths)),
        iou_mean=float(np.mean(ious)),
        iou_median=float(np.median(ious)),
        samples=len(counts),
        vacuous=vacuous,
    )


def window_granularity_sweep(
    stores: SeriesStore | Sequence[SeriesStore],
    configs: list[WindowSpec],
    pipeline: Pipeline,
    workers: int = 1,
) -> list[AgreementSummary]:
    """Run detection per window setting and compare every pair of settings.

    The first setting is the reference; pairs are labeled `<a> vs <b>`.
    """
    traces = [stores] if isinstance(stores, SeriesStore) else list(stores)
    if len(configs) < 2:
        raise InsufficientDataError("window sweep needs at least 2 settings", "evaluation")

    def run(spec: WindowSpec) -> list[dict[str, AnomalyIntervalSet]]:
        logger.info("window sweep: running %s", spec.label())
        return [pipeline(store, spec) for store in traces]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_config = list(pool.map(run, configs))

    return [
        summarize_pair(f"{configs[i].label()} vs {configs[j].label()}", per_config[i], per_config[j])
        for i, j in itertools.combinations(range(len(configs)), 2)
    ]


def agreement_row(summary: AgreementSummary) -> AgreementRow:
    return AgreementRow(
        pair=summary.pair,
        hit_count_mean=f"{summary.hit_count_mean:.4f}",
        hit_count_median=f"{summary.hit_count_median:.4f}",
        hit_count_std=f"{summary.hit_count_std:.4f}",
        hit_len_mean=f"{summary.hit_len_mean:.4f}",
        hit_len_median=f"{summary.hit_len_median:.4f}",
        hit_len_std=f"{summary.hit_len_std:.4f}",
        iou_median=f"{summary.iou_median:.4f}",
    )


def write_agreement_table(summaries: list[AgreementSummary], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for summary in summaries:
            writer.writerow(agreement_row(summary))
