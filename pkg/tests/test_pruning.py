"""Tests for correlation-driven pruning."""

import numpy as np
import pytest

from hwscope.errors import ConfigError, InsufficientDataError
from hwscope.pruning import (
    CorrelationMatrix,
    PruneResult,
    average_matrices,
    channel_variances,
    parse_prune_result,
    pearson_matrix,
    prune_at_threshold,
    read_prune_result,
    serialize_prune_result,
    storage_footprint,
    threshold_sweep,
    union_retained,
    write_prune_result,
    write_sweep,
)
from hwscope.registry import Category, MetricDescriptor, Registry, Subsystem


def _clique(r, channels=("a", "b", "c")):
    n = len(channels)
    values = np.full((n, n), r)
    np.fill_diagonal(values, 1.0)
    return CorrelationMatrix(channels=list(channels), values=values)


@pytest.fixture
def copies_corpus(make_store):
    """10 independent base signals and a 1%-noise copy of each."""
    rng = np.random.default_rng(42)
    columns = {}
    descriptors = []
    for i in range(10):
        base = rng.normal(0.0, 1.0, 600)
        columns[f"base{i}"] = base
        columns[f"copy{i}"] = base + rng.normal(0.0, 0.01, 600)
        descriptors.append(MetricDescriptor(name=f"base{i}", subsystem=Subsystem.CPU, category=Category.DYNAMIC, priority_rank=1))
        descriptors.append(MetricDescriptor(name=f"copy{i}", subsystem=Subsystem.CPU, category=Category.DYNAMIC, priority_rank=2))
    reg = Registry(descriptors)
    store = make_store({"h1": columns}, reg=reg)
    mat = pearson_matrix(store, list(columns))
    return store, mat, channel_variances(store, list(columns)), reg


class TestPearsonMatrix:
    def test_perfect_linear(self, make_store):
        x = np.arange(10.0)
        store = make_store({"h1": {"a": x, "b": 2 * x + 1}})
        assert pearson_matrix(store, ["a", "b"]).r("a", "b") == pytest.approx(1.0, abs=1e-9)

    def test_anti_correlation(self, make_store):
        x = np.arange(10.0)
        store = make_store({"h1": {"a": x, "b": -x}})
        assert pearson_matrix(store, ["a", "b"]).r("a", "b") == pytest.approx(-1.0, abs=1e-9)

    def test_hand_computed(self, make_store):
        store = make_store({"h1": {"a": [1, 2, 3, 4], "b": [1, 3, 2, 4]}})
        assert pearson_matrix(store, ["a", "b"]).r("a", "b") == pytest.approx(0.8, abs=1e-12)

    def test_symmetric_with_unit_diagonal(self, make_store, rng):
        store = make_store({"h1": {c: rng.normal(size=50) for c in "abcd"}})
        mat = pearson_matrix(store, list("abcd"))
        np.testing.assert_allclose(mat.values, mat.values.T)
        np.testing.assert_array_equal(np.diag(mat.values), np.ones(4))
        assert np.all(np.abs(mat.values) <= 1.0 + 1e-12)

    def test_needs_two_channels(self, make_store):
        store = make_store({"h1": {"a": [1, 2, 3]}})
        with pytest.raises(InsufficientDataError):
            pearson_matrix(store, ["a"])

    def test_insufficient_overlap_is_zero(self, make_store):
        nan = np.nan
        store = make_store({"h1": {"a": [1, 2, nan, nan, 5], "b": [nan, nan, 3, 4, 1]}})
        mat = pearson_matrix(store, ["a", "b"])
        assert mat.r("a", "b") == 0.0
        assert ("a", "b") in mat.insufficient

    def test_zero_variance_is_zero_and_flagged(self, make_store):
        store = make_store({"h1": {"a": [1, 2, 3, 4], "b": [5, 5, 5, 5]}})
        mat = pearson_matrix(store, ["a", "b"])
        assert mat.r("a", "b") == 0.0
        assert mat.zero_variance == {"b"}

    def test_counters_correlate_as_rates(self, make_store, rng):
        # two independent increment streams: cumulative sums correlate, rates do not
        store = make_store(
            {
                "h1": {
                    "eth0.rx_bytes": np.cumsum(rng.poisson(100, 500)),
                    "eth0.tx_bytes": np.cumsum(rng.poisson(100, 500)),
                }
            }
        )
        assert abs(pearson_matrix(store, ["eth0.rx_bytes", "eth0.tx_bytes"]).r("eth0.rx_bytes", "eth0.tx_bytes")) < 0.2


class TestAverageMatrices:
    def test_identical(self):
        mat = _clique(0.3)
        np.testing.assert_array_equal(average_matrices([mat, mat]).values, mat.values)

    def test_mean(self):
        avg = average_matrices([_clique(1.0, ("a", "b")), _clique(0.0, ("a", "b"))])
        assert avg.r("a", "b") == 0.5

    def test_intersection_with_warning(self):
        avg = average_matrices([_clique(0.2), _clique(0.4, ("a", "b"))])
        assert avg.channels == ["a", "b"]
        assert avg.warnings

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            average_matrices([])


class TestPruneAtThreshold:
    def test_clique_keeps_highest_priority(self, tiny_registry):
        result = prune_at_threshold(_clique(0.9), 0.5, {c: 1.0 for c in "abc"}, tiny_registry)
        assert result.retained == {"a"}
        assert result.redundant == {"b": "a", "c": "a"}

    def test_no_edges_keeps_everything(self, tiny_registry):
        result = prune_at_threshold(_clique(0.2), 0.5, {c: 1.0 for c in "abc"}, tiny_registry)
        assert result.retained == {"a", "b", "c"}
        assert result.redundant == {}

    def test_chain_is_one_component(self, tiny_registry):
        values = np.array([[1.0, 0.9, 0.1], [0.9, 1.0, 0.9], [0.1, 0.9, 1.0]])
        mat = CorrelationMatrix(channels=["a", "b", "c"], values=values)
        result = prune_at_threshold(mat, 0.5, {}, tiny_registry)
        assert result.retained == {"a"}
        assert set(result.redundant) == {"b", "c"}

    def test_name_breaks_full_ties(self, registry):
        result = prune_at_threshold(_clique(0.9, ("y", "x")), 0.5, {}, registry)
        assert result.retained == {"x"}

    def test_order_independent(self, tiny_registry):
        values = np.array([[1.0, 0.7, 0.1], [0.7, 1.0, 0.6], [0.1, 0.6, 1.0]])
        forward = CorrelationMatrix(channels=["a", "b", "c"], values=values)
        order = [2, 0, 1]
        backward = CorrelationMatrix(
            channels=["c", "a", "b"], values=values[np.ix_(order, order)]
        )
        assert prune_at_threshold(forward, 0.5, {}, tiny_registry) == prune_at_threshold(
            backward, 0.5, {}, tiny_registry
        )

    def test_zero_variance_goes_static(self, tiny_registry):
        mat = _clique(0.9)
        mat.zero_variance = {"a"}
        result = prune_at_threshold(mat, 0.5, {"a": 0.0, "b": 1.0, "c": 1.0}, tiny_registry)
        assert result.static == {"a"}
        assert result.retained == {"b"}
        assert result.candidates() == {"a", "b", "c"}

    @pytest.mark.parametrize("threshold", [0.0, 1.0, -0.5])
    def test_threshold_range(self, tiny_registry, threshold):
        with pytest.raises(ConfigError):
            prune_at_threshold(_clique(0.9), threshold, {}, tiny_registry)

    def test_copies_pruned_onto_bases(self, copies_corpus):
        _, mat, variance, reg = copies_corpus
        result = prune_at_threshold(mat, 0.5, variance, reg)
        assert result.redundant == {f"copy{i}": f"base{i}" for i in range(10)}
        assert result.retained == {f"base{i}" for i in range(10)}

    def test_retained_and_redundant_partition(self, copies_corpus):
        _, mat, variance, reg = copies_corpus
        result = prune_at_threshold(mat, 0.5, variance, reg)
        assert not result.retained & set(result.redundant)
        assert result.candidates() == set(mat.channels)
        assert set(result.redundant.values()) <= result.retained


class TestUnionRetained:
    def test_union(self):
        a = PruneResult(retained={"a", "b"}, redundant={}, threshold=0.5)
        b = PruneResult(retained={"b", "c"}, redundant={}, threshold=0.5)
        assert union_retained([a, b]) == {"a", "b", "c"}

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            union_retained([])


class TestThresholdSweep:
    def test_copies_halve_selection(self, copies_corpus):
        _, mat, variance, reg = copies_corpus
        sweep = threshold_sweep(mat, variance, reg, [0.999])
        assert sweep.at(0.999).selected_ratio == 0.5

    def test_high_threshold_keeps_all(self, tiny_registry):
        sweep = threshold_sweep(_clique(0.3), {}, tiny_registry, [0.9])
        assert sweep.at(0.9).selected_ratio == 1.0

    def test_multi_r2_stays_saturated(self, copies_corpus):
        _, mat, variance, reg = copies_corpus
        thresholds = [0.99999, 0.9, 0.7, 0.5]
        sweep = threshold_sweep(mat, variance, reg, thresholds)
        unpruned = sweep.at(0.99999).avg_multi_r2
        for t in thresholds[1:]:
            assert sweep.at(t).avg_multi_r2 >= unpruned - 0.05
            assert 0.0 <= sweep.at(t).avg_multi_r2 <= 1.0

    def test_monotone_selection(self, make_store, rng):
        base = rng.normal(size=300)
        columns = {f"c{i}": base * (i / 10) + rng.normal(size=300) for i in range(10)}
        store = make_store({"h1": columns})
        mat = pearson_matrix(store, list(columns))
        thresholds = [0.9, 0.7, 0.5, 0.3, 0.1]
        sweep = threshold_sweep(mat, channel_variances(store, list(columns)), store.registry, thresholds)
        ratios = [p.selected_ratio for p in sweep.points]
        assert [p.threshold for p in sweep.points] == thresholds
        assert ratios == sorted(ratios, reverse=True)

    def test_write_sweep(self, tmp_path, tiny_registry):
        path = tmp_path / "sweep.csv"
        write_sweep(threshold_sweep(_clique(0.6), {}, tiny_registry, [0.5, 0.8]), path)
        header = path.read_text().splitlines()[0]
        assert header == "threshold,selected_ratio,avg_max_abs_r,avg_multi_r2,avg_redundancy_r2"


class TestStorageFootprint:
    def test_bytes(self):
        per_second, per_day = storage_footprint(10, 100)
        assert per_second == 800.0
        assert per_day == 800.0 * 86400


class TestPruneResultFile:
    def test_round_trip(self, tmp_path):
        result = PruneResult(
            retained={"a"}, redundant={"b": "a"}, threshold=0.5, static={"s"}
        )
        path = tmp_path / "prune.csv"
        write_prune_result(result, path)
        assert read_prune_result(path) == result

    def test_rows(self):
        result = PruneResult(retained={"a"}, redundant={"b": "a"}, threshold=0.5)
        lines = serialize_prune_result(result).splitlines()
        assert lines == [
            "channel,status,representative,threshold",
            "a,retained,a,0.5",
            "b,redundant,a,0.5",
        ]

    def test_unknown_status(self):
        with pytest.raises(ConfigError):
            parse_prune_result("channel,status,representative,threshold\na,maybe,,0.5\n")
