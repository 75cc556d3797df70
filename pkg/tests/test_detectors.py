"""Tests for the window detectors and their agreement."""

import time

import numpy as np
import pytest

from hwscope.detectors import (
    Detector,
    DetectorScores,
    EnsembleResult,
    average_path_length,
    ensemble,
    fit_pca,
    flag_top_percentile,
    isolation_forest_detect,
    parse_scores,
    pca_mahalanobis_detect,
    read_scores,
    run_detectors,
    serialize_scores,
    standardize,
    write_scores,
    zscore_detect,
)
from hwscope.errors import ConfigError, DegenerateMatrixError, InsufficientDataError, WindowMismatchError


class TestFlagTopPercentile:
    def test_integer_ramp(self):
        cut = flag_top_percentile(np.arange(1, 101))
        assert cut.threshold == pytest.approx(99.01)
        assert cut.flagged == {99}

    def test_two_points(self):
        cut = flag_top_percentile([0.0, 1.0])
        assert cut.threshold == pytest.approx(0.99)
        assert cut.flagged == {1}

    def test_ties_flag_nothing(self):
        assert flag_top_percentile(np.full(50, 3.0)).flagged == set()

    def test_too_few_scores(self):
        with pytest.raises(InsufficientDataError):
            flag_top_percentile([1.0])

    @pytest.mark.parametrize("q", [0.0, 1.0, 1.5])
    def test_percentile_range(self, q):
        with pytest.raises(ConfigError):
            flag_top_percentile([1.0, 2.0], q)


class TestZScore:
    def test_single_spike(self, make_matrix):
        values = np.zeros((100, 1))
        values[42] = 10.0
        result = zscore_detect(make_matrix(values))
        assert int(np.argmax(result.scores)) == 42
        assert result.flagged == {42}

    def test_matches_direct_standardization(self, make_matrix, rng):
        values = rng.normal(size=(60, 4)) * [1.0, 5.0, 0.1, 2.0]
        result = zscore_detect(make_matrix(values))
        z = (values - values.mean(axis=0)) / values.std(axis=0)
        np.testing.assert_allclose(result.scores, np.abs(z).mean(axis=1), atol=1e-12)

    def test_score_is_mean_not_max(self, make_matrix, rng):
        values = rng.normal(size=(60, 4))
        result = zscore_detect(make_matrix(values))
        z, _, _, _ = standardize(make_matrix(values))
        np.testing.assert_allclose(result.scores, np.abs(z).mean(axis=1), atol=1e-12)
        assert np.all(result.scores < np.abs(z).max(axis=1))

    def test_affine_invariance(self, make_matrix, rng):
        values = rng.normal(size=(80, 3))
        transformed = values * [3.0, -0.5, 100.0] + [7.0, 1.0, -40.0]
        a = zscore_detect(make_matrix(values))
        b = zscore_detect(make_matrix(transformed))
        np.testing.assert_allclose(a.scores, b.scores, atol=1e-9)
        assert a.flagged == b.flagged

    def test_constant_columns_excluded(self, make_matrix, rng):
        values = np.column_stack([rng.normal(size=50), np.full(50, 4.0)])
        _, columns, _, _ = standardize(make_matrix(values))
        assert columns == ["c0.Busy%__mean"]

    def test_degenerate(self, make_matrix):
        with pytest.raises(DegenerateMatrixError, match="degenerate"):
            zscore_detect(make_matrix(np.ones((20, 3))))

    def test_shifted_windows_all_flagged(self, make_matrix, rng):
        values = rng.normal(size=(1005, 20))
        shifted = rng.choice(1005, size=5, replace=False)
        values[np.ix_(shifted, range(6))] += 8.0
        result = zscore_detect(make_matrix(values))
        assert set(shifted.tolist()) <= result.flagged

    def test_few_windows_warn(self, make_matrix, rng, caplog):
        zscore_detect(make_matrix(rng.normal(size=(5, 2))))
        assert "unstable" in caplog.text


class TestPcaMahalanobis:
    def test_full_rank_matches_brute_force(self, make_matrix, rng):
        values = rng.normal(size=(200, 5)) @ rng.normal(size=(5, 5))
        result = pca_mahalanobis_detect(make_matrix(values), variance_retained=1.0)
        z = (values - values.mean(axis=0)) / values.std(axis=0)
        inv = np.linalg.inv(np.cov(z, rowvar=False, bias=True))
        brute = np.sqrt(np.einsum("ij,jk,ik->i", z, inv, z))
        np.testing.assert_allclose(result.scores, brute, atol=1e-6)

    def test_one_dimension_is_abs_z(self, make_matrix, rng):
        values = rng.normal(size=(50, 1))
        result = pca_mahalanobis_detect(make_matrix(values))
        z = (values[:, 0] - values.mean()) / values.std()
        np.testing.assert_allclose(result.scores, np.abs(z), atol=1e-9)

    def test_correlated_pair_keeps_one_component(self, make_matrix, rng):
        x = rng.normal(size=100)
        model, _ = fit_pca(make_matrix(np.column_stack([x, 2 * x + 1])))
        assert model.k == 1
        single = pca_mahalanobis_detect(make_matrix(x[:, None]))
        pair = pca_mahalanobis_detect(make_matrix(np.column_stack([x, 2 * x + 1])))
        np.testing.assert_allclose(pair.scores, single.scores, atol=1e-6)

    def test_far_point_has_max_score(self, make_matrix, rng):
        values = rng.normal(size=(300, 4))
        values[17] = 10.0
        result = pca_mahalanobis_detect(make_matrix(values))
        assert int(np.argmax(result.scores)) == 17
        assert 17 in result.flagged

    def test_model_shape(self, make_matrix, rng):
        model, projections = fit_pca(make_matrix(rng.normal(size=(100, 6))))
        assert projections.shape == (100, model.k)
        np.testing.assert_allclose(model.components @ model.components.T, np.eye(model.k), atol=1e-9)
        assert np.all(np.diff(model.variances) <= 1e-12)
        assert model.explained >= 0.95

    def test_needs_three_windows(self, make_matrix):
        with pytest.raises(InsufficientDataError):
            pca_mahalanobis_detect(make_matrix([[1.0], [2.0]]))

    def test_variance_retained_range(self, make_matrix, rng):
        with pytest.raises(ConfigError):
            fit_pca(make_matrix(rng.normal(size=(20, 2))), 0.0)


class TestIsolationForest:
    def test_average_path_length(self):
        assert average_path_length(2) == pytest.approx(1.0)
        assert average_path_length(1) == 0.0
        assert average_path_length(256) == pytest.approx(2 * (np.log(255) + np.euler_gamma) - 2 * 255 / 256, rel=1e-3)

    def test_outlier_scores_highest(self, make_matrix, rng):
        values = rng.normal(size=(300, 3))
        values[5] = [8.0, -8.0, 8.0]
        result = isolation_forest_detect(make_matrix(values), seed=0)
        assert int(np.argmax(result.scores)) == 5
        assert np.all((result.scores > 0) & (result.scores <= 1))

    def test_seeded(self, make_matrix, rng):
        matrix = make_matrix(rng.normal(size=(120, 3)))
        a = isolation_forest_detect(matrix, seed=7)
        b = isolation_forest_detect(matrix, seed=7)
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_identical_rows_flag_nothing(self, make_matrix):
        result = isolation_forest_detect(make_matrix(np.ones((40, 2))), seed=0)
        assert np.unique(result.scores).size == 1
        assert result.flagged == set()


class TestRunDetectors:
    def test_fixed_order(self, make_matrix, rng):
        results = run_detectors(make_matrix(rng.normal(size=(100, 3))), seed=0)
        assert [r.detector for r in results] == [
            Detector.ZSCORE,
            Detector.PCA_MAHALANOBIS,
            Detector.ISOLATION_FOREST,
        ]
        assert all(r.host == "h1" for r in results)

    def test_identical_windows_flag_nothing(self, make_matrix):
        results = run_detectors(make_matrix(np.full((30, 2), 3.0)), seed=0)
        assert all(r.flagged == set() for r in results)

    def test_tags(self):
        assert [d.tag for d in Detector] == ["Z", "MAHA", "IF"]


def _scored(detector, ids, flagged, scores=None):
    scores = np.asarray(scores if scores is not None else [float(i) for i in ids])
    return DetectorScores(detector=detector, window_ids=list(ids), scores=scores, threshold=0.0, flagged=set(flagged))


class TestEnsemble:
    def test_counts(self):
        ids = [0, 1, 2, 3]
        result = ensemble(
            [
                _scored(Detector.ISOLATION_FOREST, ids, {2}),
                _scored(Detector.ZSCORE, ids, {1, 2}),
                _scored(Detector.PCA_MAHALANOBIS, ids, {1, 2}),
            ]
        )
        assert result.count(0) == 0
        assert result.agreeing[1] == [Detector.ZSCORE, Detector.PCA_MAHALANOBIS]
        assert result.count(2) == 3
        assert result.flagged(1) == [1, 2]
        assert result.flagged(3) == [2]

    def test_mismatch(self):
        with pytest.raises(WindowMismatchError):
            ensemble([_scored(Detector.ZSCORE, [0, 1], set()), _scored(Detector.ISOLATION_FOREST, [0, 2], set())])

    def test_empty(self):
        assert ensemble([]) == EnsembleResult(window_ids=[])


class TestScoresFile:
    def test_round_trip(self, tmp_path, make_matrix, rng):
        results = run_detectors(make_matrix(rng.normal(size=(50, 2))), seed=1)
        path = tmp_path / "scores.csv"
        write_scores(results, path)
        again = read_scores(path, host="h1")
        for before, after in zip(results, again):
            assert after.detector == before.detector
            assert after.window_ids == before.window_ids
            assert after.flagged == before.flagged
            np.testing.assert_array_equal(after.scores, before.scores)
            assert {w for w, s in zip(after.window_ids, after.scores) if s > after.threshold} == after.flagged

    def test_window_major(self):
        text = serialize_scores(
            [_scored(Detector.ZSCORE, [0, 1], {1}), _scored(Detector.ISOLATION_FOREST, [0, 1], set())]
        )
        assert text.splitlines() == [
            "window_id,detector,score,flagged",
            "0,ZScore,0,0",
            "0,IsolationForest,0,0",
            "1,ZScore,1,1",
            "1,IsolationForest,1,0",
        ]

    def test_unknown_detector(self):
        with pytest.raises(ConfigError):
            parse_scores("window_id,detector,score,flagged\n0,Magic,1.0,0\n")


class TestDetectorTiming:
    """1000 windows of 180 features, timed against a per-detector budget with slack."""

    @pytest.fixture
    def matrix(self, make_matrix, rng):
        return make_matrix(rng.normal(size=(1000, 180)))

    def _elapsed(self, detect, matrix):
        started = time.perf_counter()
        result = detect(matrix)
        elapsed = time.perf_counter() - started
        assert len(result.window_ids) == 1000
        return elapsed

    def test_zscore(self, matrix):
        assert self._elapsed(zscore_detect, matrix) < 0.5

    def test_pca_mahalanobis(self, matrix):
        assert self._elapsed(pca_mahalanobis_detect, matrix) < 2.5

    def test_isolation_forest(self, matrix):
        assert self._elapsed(lambda m: isolation_forest_detect(m, seed=0), matrix) < 10.0
