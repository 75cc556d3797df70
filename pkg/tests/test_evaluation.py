"""Tests for interval agreement and reproducibility statistics."""

import numpy as np
import pytest
from scipy import stats

from hwscope.attribution import AnomalyIntervalSet
from hwscope.errors import InsufficientDataError
from hwscope.evaluation import (
    TABLE_COLUMNS,
    dtw_distance,
    hit_by_count,
    hit_by_length,
    interval_agreement,
    interval_iou,
    median_trace,
    reproducibility_check,
    store_reproducibility,
    summarize_pair,
    wilcoxon_signed_rank,
    window_granularity_sweep,
    write_agreement_table,
)
from hwscope.features import WindowSpec
from hwscope.injector import make_scenario, synth_trace
from hwscope.pipeline import detect_intervals


def _set(*spans, host="h1"):
    return AnomalyIntervalSet(host, list(spans))


class TestIntervalIou:
    def test_half_overlap(self):
        assert interval_iou(_set((0, 10)), _set((5, 15))) == pytest.approx(1 / 3)

    def test_identical(self):
        a = _set((0, 10), (20, 30))
        assert interval_iou(a, a) == 1.0

    def test_disjoint(self):
        assert interval_iou(_set((0, 10)), _set((10, 20))) == 0.0

    def test_both_empty(self):
        assert interval_iou(_set(), _set()) == 1.0

    def test_one_empty(self):
        assert interval_iou(_set((0, 10)), _set()) == 0.0

    def test_symmetric_and_bounded(self):
        a = _set((0, 7), (12, 30), (40, 41))
        b = _set((5, 15), (29, 45))
        iou = interval_iou(a, b)
        assert iou == interval_iou(b, a)
        assert iou <= min(hit_by_length(a, b), hit_by_length(b, a))


class TestHitRates:
    def test_count_all_hit(self):
        assert hit_by_count(_set((0, 5), (10, 15)), _set((0, 20))) == 1.0

    def test_count_three_of_four(self):
        a = _set((0, 5), (10, 15), (20, 25), (30, 35))
        b = _set((4, 11), (24, 26))
        assert hit_by_count(a, b) == 0.75

    def test_count_empty_b(self):
        assert hit_by_count(_set((0, 5)), _set()) == 0.0

    def test_count_empty_a_is_vacuous(self):
        assert hit_by_count(_set(), _set((0, 5))) == 1.0

    def test_length_half(self):
        assert hit_by_length(_set((0, 10)), _set((5, 15))) == 0.5

    def test_length_subset(self):
        assert hit_by_length(_set((2, 4)), _set((0, 10))) == 1.0

    def test_length_disjoint(self):
        assert hit_by_length(_set((0, 4)), _set((6, 10))) == 0.0

    def test_not_symmetric(self):
        a, b = _set((0, 10)), _set((0, 2), (20, 30))
        assert hit_by_count(a, b) != hit_by_count(b, a)

    def test_empty_a_is_flagged_vacuous(self):
        agreement = interval_agreement(_set(), _set((0, 5)))
        assert agreement.vacuous
        assert agreement.hit_count == agreement.hit_len == 1.0
        assert agreement.iou == 0.0

    def test_nonempty_a_is_not_vacuous(self):
        agreement = interval_agreement(_set((0, 10)), _set((5, 15)))
        assert not agreement.vacuous
        assert agreement.hit_len == 0.5


class TestDtw:
    def test_identity(self):
        assert dtw_distance([3.0, 1.0, 4.0], [3.0, 1.0, 4.0]) == 0.0

    def test_constant_offset(self):
        assert dtw_distance([0, 0, 0], [1, 1, 1]) == 3.0

    def test_warping_absorbs_repeat(self):
        assert dtw_distance([1, 2, 3], [1, 2, 2, 3]) == 0.0

    def test_symmetric(self, rng):
        x, y = rng.normal(size=17), rng.normal(size=23)
        assert dtw_distance(x, y) == pytest.approx(dtw_distance(y, x))
        assert dtw_distance(x, y) >= 0.0

    def test_matches_reference_recursion(self, rng):
        x, y = rng.normal(size=9), rng.normal(size=6)
        acc = np.full((10, 7), np.inf)
        acc[0, 0] = 0.0
        for i in range(1, 10):
            for j in range(1, 7):
                acc[i, j] = abs(x[i - 1] - y[j - 1]) + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
        assert dtw_distance(x, y) == pytest.approx(acc[9, 6])

    def test_empty(self):
        with pytest.raises(InsufficientDataError):
            dtw_distance([], [1.0])


class TestWilcoxon:
    def test_symmetric_diffs(self):
        result = wilcoxon_signed_rank([1, -1, 2, -2, 3, -3])
        assert result.p_value == pytest.approx(1.0)
        assert not result.degenerate

    def test_all_positive(self):
        result = wilcoxon_signed_rank(np.arange(1.0, 11.0))
        assert result.statistic == 0.0
        assert result.p_value < 0.01
        assert result.n == 10

    def test_all_zero(self):
        result = wilcoxon_signed_rank([0.0, 0.0, 0.0])
        assert result.p_value == 1.0
        assert result.degenerate

    def test_zeros_dropped(self):
        assert wilcoxon_signed_rank([0.0, 1.0, 2.0, -3.0]).n == 3

    def test_scale_invariant(self, rng):
        diffs = rng.normal(0.3, 1.0, 30)
        assert wilcoxon_signed_rank(diffs).p_value == pytest.approx(wilcoxon_signed_rank(diffs * 7.5).p_value)

    def test_small_sample_flag(self):
        assert wilcoxon_signed_rank([1.0, 2.0, -0.5]).small_sample

    def test_agrees_with_scipy(self, rng):
        diffs = np.round(rng.normal(0.2, 1.0, 40), 1)
        ours = wilcoxon_signed_rank(diffs)
        theirs = stats.wilcoxon(diffs, correction=True, method="approx")
        assert ours.statistic == pytest.approx(theirs.statistic)
        assert ours.p_value == pytest.approx(theirs.pvalue, rel=1e-6)


class TestReproducibility:
    def test_median_trace(self):
        runs = [np.array([1.0, 5.0, 3.0]), np.array([2.0, 4.0]), np.array([3.0, 6.0, 0.0])]
        assert median_trace(runs).tolist() == [2.0, 5.0]

    def test_repeated_runs_reproducible(self, rng):
        base = np.sin(np.linspace(0, 6 * np.pi, 80)) * 10
        runs = [base + rng.normal(0, 0.5, 80) for _ in range(10)]
        result = reproducibility_check(runs, seed=0)
        assert result.reproducible
        assert all(d < s for d, s in zip(result.distances, result.surrogate_distances))

    def test_constant_runs_degenerate(self):
        result = reproducibility_check([np.full(20, 3.0)] * 4, seed=0)
        assert result.test.degenerate
        assert not result.reproducible

    def test_seeded(self, rng):
        runs = [rng.normal(size=30) for _ in range(5)]
        a = reproducibility_check(runs, seed=3)
        b = reproducibility_check(runs, seed=3)
        assert a.surrogate_distances == b.surrogate_distances

    def test_needs_two_runs(self):
        with pytest.raises(InsufficientDataError):
            reproducibility_check([np.zeros(5)], seed=0)

    def test_store_pairs(self, make_store, rng):
        base = np.sin(np.linspace(0, 4 * np.pi, 60)) * 10
        stores = [
            make_store({"h1": {"Busy%": base + rng.normal(0, 0.3, 60), "Bzy_MHz": rng.normal(size=60)}})
            for _ in range(8)
        ]
        results = store_reproducibility(stores, seed=0)
        assert set(results) == {("h1", "Busy%"), ("h1", "Bzy_MHz")}
        assert results[("h1", "Busy%")].reproducible


class TestWindowSweep:
    def test_identical_flagging(self, make_store):
        store = make_store({"h1": {"Busy%": np.zeros(10)}})
        fixed = {"h1": _set((1000, 5000))}
        configs = [WindowSpec.parse(t) for t in ("3000/1000", "1500/500", "5000/1000")]
        summaries = window_granularity_sweep(store, configs, lambda s, spec: fixed)
        assert [s.pair for s in summaries] == [
            "3000/1000 vs 1500/500",
            "3000/1000 vs 5000/1000",
            "1500/500 vs 5000/1000",
        ]
        for summary in summaries:
            assert summary.hit_count_mean == summary.hit_len_mean == summary.iou_median == 1.0
            assert summary.hit_count_std == 0.0

    def test_aggregates_across_traces(self):
        first = [{"h1": _set((0, 10))}, {"h1": _set((0, 10))}]
        second = [{"h1": _set((5, 15))}, {"h1": _set((0, 10))}]
        summary = summarize_pair("a vs b", first, second)
        assert summary.samples == 2
        assert summary.hit_len_mean == pytest.approx(0.75)
        assert summary.iou_median == pytest.approx((1 / 3 + 1) / 2)

    def test_vacuous_samples_counted(self):
        first = [{"h1": _set()}, {"h1": _set((0, 10))}]
        second = [{"h1": _set((0, 5))}, {"h1": _set((0, 10))}]
        summary = summarize_pair("a vs b", first, second)
        assert summary.samples == 2
        assert summary.vacuous == 1
        assert summary.hit_count_mean == 1.0

    def test_reference_agrees_with_finer_more_than_finer_with_coarser(self):
        scenarios = [make_scenario(n_windows=300, n_injections=4, magnitude=8.0, seed=seed) for seed in range(3)]
        stores = [synth_trace(scenario, WindowSpec()).store for scenario in scenarios]
        configs = [WindowSpec.parse(t) for t in ("3000/1000", "1500/500", "5000/2000")]
        sweep = window_granularity_sweep(stores, configs, lambda store, spec: detect_intervals(store, spec))
        summaries = {s.pair: s for s in sweep}
        reference = summaries["3000/1000 vs 1500/500"]
        assert reference.samples == 3
        assert reference.hit_count_mean >= summaries["1500/500 vs 5000/2000"].hit_count_mean

    def test_needs_two_settings(self, make_store):
        store = make_store({"h1": {"Busy%": np.zeros(10)}})
        with pytest.raises(InsufficientDataError):
            window_granularity_sweep(store, [WindowSpec()], lambda s, spec: {})

    def test_agreement_table(self, tmp_path):
        summary = summarize_pair("3000/1000 vs 1500/500", [{"h1": _set((0, 10))}], [{"h1": _set((5, 15))}])
        path = tmp_path / "agreement.csv"
        write_agreement_table([summary], path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(TABLE_COLUMNS)
        assert lines[1] == "3000/1000 vs 1500/500,1.0000,1.0000,0.0000,0.5000,0.5000,0.0000,0.3333"
