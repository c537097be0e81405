"""Novelty detectors: one-class SVM, isolation forest, GMM, isotonic PAV."""

import itertools
import math

import numpy as np
import pytest

from camosig.anomaly import (
    DetectorError,
    average_path_length,
    detect,
    fit_gmm_calibrated,
    gmm_bic,
    gmm_fit,
    gmm_fit_bic,
    gmm_responsibilities,
    gmm_score,
    iforest_score,
    iforest_train,
    isolation_score,
    isotonic_apply,
    isotonic_fit,
    median_heuristic_sigma,
    ocsvm_decision,
    ocsvm_train,
    pav,
)


class TestOcSvm:
    def test_nu_property_on_tight_cluster(self):
        rng = np.random.default_rng(0)
        data = rng.normal(0, 1, size=(100, 3))
        model = ocsvm_train(data, nu=0.1, sigma=2.0)
        dec = ocsvm_decision(model, data)
        assert np.mean(dec >= 0) >= 0.89
        # Margin-error fraction is bounded near nu.
        assert np.mean(dec < 0) <= 0.1 + 0.02

    def test_far_outlier_scores_negative(self):
        rng = np.random.default_rng(1)
        data = rng.normal(0, 1, size=(80, 3))
        model = ocsvm_train(data, nu=0.1, sigma=2.0)
        assert ocsvm_decision(model, np.full((1, 3), 40.0))[0] < 0

    def test_alphas_sum_to_one(self):
        rng = np.random.default_rng(2)
        model = ocsvm_train(rng.normal(size=(50, 2)), nu=0.2, sigma=1.0)
        assert model.alphas.sum() == pytest.approx(1.0, abs=1e-9)

    def test_support_fraction_lower_bound(self):
        rng = np.random.default_rng(3)
        n, nu = 60, 0.25
        model = ocsvm_train(rng.normal(size=(n, 2)), nu=nu, sigma=1.5)
        assert len(model.alphas) >= nu * n - 1

    def test_single_point_rejected(self):
        with pytest.raises(DetectorError):
            ocsvm_train(np.zeros((1, 2)), nu=0.5, sigma=1.0)

    def test_degenerate_data_rejected(self):
        with pytest.raises(DetectorError):
            ocsvm_train(np.ones((10, 2)), nu=0.5, sigma=1.0)

    def test_bad_nu_rejected(self):
        rng = np.random.default_rng(4)
        for nu in (0.0, -0.5, 1.5):
            with pytest.raises(DetectorError):
                ocsvm_train(rng.normal(size=(10, 2)), nu=nu, sigma=1.0)

    def test_median_heuristic_positive(self):
        rng = np.random.default_rng(5)
        assert median_heuristic_sigma(rng.normal(size=(30, 4))) > 0


class TestIsolationForest:
    def test_average_path_length_formula(self):
        # 2(ln(m-1) + gamma) - 2(m-1)/m at m = 256
        assert average_path_length(256) == pytest.approx(10.2448, abs=5e-5)
        assert average_path_length(1) == 0.0
        assert average_path_length(0) == 0.0

    def test_score_half_at_reference_depth(self):
        assert isolation_score(average_path_length(256), 256) == 0.5

    def test_scores_in_open_unit_interval(self):
        rng = np.random.default_rng(6)
        data = rng.normal(size=(200, 3))
        forest = iforest_train(data, n_trees=50, psi=64, seed=1)
        scores = iforest_score(forest, data)
        assert np.all(scores > 0.0)
        assert np.all(scores < 1.0)

    def test_planted_outlier_has_max_score(self):
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            cluster = rng.normal(0, 1, size=(128, 2))
            data = np.vstack([cluster, [[10.0, 10.0]]])
            forest = iforest_train(data, n_trees=100, psi=min(256, len(data)), seed=seed)
            scores = iforest_score(forest, data)
            hits += int(np.argmax(scores) == len(data) - 1)
        assert hits >= 19

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(7)
        data = rng.normal(size=(64, 2))
        a = iforest_score(iforest_train(data, n_trees=20, psi=32, seed=5), data)
        b = iforest_score(iforest_train(data, n_trees=20, psi=32, seed=5), data)
        np.testing.assert_array_equal(a, b)

    def test_depth_capped(self):
        rng = np.random.default_rng(8)
        data = rng.normal(size=(300, 2))
        forest = iforest_train(data, n_trees=10, psi=64, seed=0)
        limit = math.ceil(math.log2(64))

        def depth(node):
            if node.is_leaf:
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        assert all(depth(t) <= limit for t in forest.trees)

    def test_tiny_subsample_rejected(self):
        with pytest.raises(DetectorError):
            iforest_train(np.zeros((1, 2)), psi=1)


class TestGmm:
    def test_single_component_closed_form(self):
        rng = np.random.default_rng(9)
        data = rng.normal(size=(150, 3)) * np.array([1.0, 2.0, 0.5])
        ridge = 1e-6
        model = gmm_fit(data, 1, seed=0, ridge=ridge)
        np.testing.assert_allclose(model.means[0], data.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(
            model.covariances[0], np.cov(data.T, ddof=0) + ridge * np.eye(3), atol=1e-10
        )
        assert model.weights[0] == pytest.approx(1.0)

    def test_log_likelihood_trace_nondecreasing(self):
        rng = np.random.default_rng(10)
        for trial in range(10):
            data = np.vstack(
                [rng.normal(0, 1, (40, 2)), rng.normal(4, 0.5, (40, 2))]
            )
            model = gmm_fit(data, int(rng.integers(1, 4)), seed=trial)
            trace = np.array(model.log_likelihood_trace)
            assert np.all(np.diff(trace) >= -1e-9)

    def test_fitted_mean_is_density_mode(self):
        rng = np.random.default_rng(11)
        data = rng.normal(size=(100, 2))
        model = gmm_fit(data, 1, seed=0)
        center = gmm_score(model, model.means[0][None, :])[0]
        others = gmm_score(model, data)
        assert center >= others.max()

    def test_responsibilities_sum_to_one(self):
        rng = np.random.default_rng(12)
        data = np.vstack([rng.normal(0, 1, (30, 2)), rng.normal(5, 1, (30, 2))])
        model = gmm_fit(data, 3, seed=1)
        resp = gmm_responsibilities(model, data)
        np.testing.assert_allclose(resp.sum(axis=1), 1.0, atol=1e-12)

    def test_weights_simplex(self):
        rng = np.random.default_rng(13)
        data = rng.normal(size=(60, 2))
        model = gmm_fit(data, 2, seed=2)
        assert np.all(model.weights >= 0)
        assert model.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_bic_prefers_true_component_count(self):
        rng = np.random.default_rng(14)
        data = np.vstack([rng.normal(-6, 0.5, (120, 2)), rng.normal(6, 0.5, (120, 2))])
        model = gmm_fit_bic(data, k_range=range(1, 4), seed=3)
        assert model.k == 2
        one = gmm_fit(data, 1, seed=3)
        assert gmm_bic(model, data) < gmm_bic(one, data)

    def test_too_few_instances_rejected(self):
        with pytest.raises(DetectorError):
            gmm_fit(np.zeros((3, 2)), 3, seed=0)


def pav_minimax_oracle(targets):
    """Closed-form isotonic solution: f_k = max_{i<=k} min_{j>=k} avg t[i..j]."""
    t = np.asarray(targets, dtype=float)
    n = len(t)
    out = np.empty(n)
    prefix = np.concatenate([[0.0], np.cumsum(t)])
    avg = lambda i, j: (prefix[j + 1] - prefix[i]) / (j + 1 - i)
    for k in range(n):
        out[k] = max(min(avg(i, j) for j in range(k, n)) for i in range(k + 1))
    return out


class TestIsotonic:
    def test_hand_example(self):
        cal = isotonic_fit(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0, 1, 0, 1]))
        np.testing.assert_allclose(cal.fitted, [0.0, 0.5, 0.5, 1.0])

    def test_monotone_targets_unchanged(self):
        cal = isotonic_fit(np.array([0.1, 0.2, 0.3, 0.9]), np.array([0, 0, 1, 1]))
        np.testing.assert_allclose(cal.fitted, [0, 0, 1, 1])

    def test_constant_targets(self):
        cal = isotonic_fit(np.array([1.0, 2.0, 3.0]), np.array([0.4, 0.4, 0.4]))
        np.testing.assert_allclose(cal.fitted, 0.4)

    def test_matches_minimax_oracle_exhaustive(self):
        scores = np.arange(8, dtype=float)
        for bits in itertools.product([0, 1], repeat=8):
            cal = isotonic_fit(scores, np.array(bits))
            np.testing.assert_allclose(
                cal.fitted, pav_minimax_oracle(bits), atol=1e-12
            )

    def test_pav_weighted(self):
        out = pav(np.array([1.0, 0.0]), np.array([1.0, 3.0]))
        np.testing.assert_allclose(out, [0.25, 0.25])

    def test_apply_left_constant_and_clamped(self):
        cal = isotonic_fit(np.array([0.0, 1.0, 2.0]), np.array([0, 0, 1]))
        assert isotonic_apply(cal, -5.0) == cal.fitted[0]
        assert isotonic_apply(cal, 0.5) == cal.fitted[0]
        assert isotonic_apply(cal, 1.0) == cal.fitted[1]
        assert isotonic_apply(cal, 99.0) == cal.fitted[-1]

    def test_tied_scores_pooled(self):
        cal = isotonic_fit(np.array([1.0, 1.0, 2.0]), np.array([0, 1, 1]))
        assert len(cal.breakpoints) == 2
        np.testing.assert_allclose(cal.fitted, [0.5, 1.0])

    def test_unsorted_scores_rejected(self):
        with pytest.raises(DetectorError):
            isotonic_fit(np.array([2.0, 1.0]), np.array([0, 1]))

    def test_output_nondecreasing_random(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            n = int(rng.integers(1, 30))
            cal = isotonic_fit(np.sort(rng.normal(size=n)), rng.integers(0, 2, n))
            assert np.all(np.diff(cal.fitted) >= -1e-12)


class TestDetect:
    def test_threshold_extremes(self):
        rng = np.random.default_rng(16)
        data = rng.normal(size=(20, 2))
        score_fn = lambda x: x[:, 0]
        assert np.all(detect(score_fn, data, -np.inf).labels == 1)
        assert np.all(detect(score_fn, data, np.inf).labels == 0)

    def test_confusion_matches_direct_oracle(self):
        from camosig.evaluation import confusion

        rng = np.random.default_rng(17)
        inliers = rng.normal(0, 1, size=(50, 2))
        outliers = rng.normal(8, 1, size=(20, 2))
        model = ocsvm_train(inliers, nu=0.1, sigma=2.0)
        eval_data = np.vstack([inliers, outliers])
        truth = np.array([1] * 50 + [0] * 20)
        result = detect(lambda x: ocsvm_decision(model, x), eval_data, 0.0)
        cm = confusion(truth, result.labels, positive_class=1)
        scores = ocsvm_decision(model, eval_data)
        assert cm.tp == int(np.sum((scores >= 0) & (truth == 1)))
        assert cm.fp == int(np.sum((scores >= 0) & (truth == 0)))
        assert cm.tn == int(np.sum((scores < 0) & (truth == 0)))
        assert cm.fn == int(np.sum((scores < 0) & (truth == 1)))

    def test_empty_evaluation_rejected(self):
        with pytest.raises(DetectorError):
            detect(lambda x: x[:, 0], np.empty((0, 2)), 0.0)

    def test_gmm_calibrated_scores_in_unit_interval(self):
        rng = np.random.default_rng(18)
        train = rng.normal(0, 1, size=(80, 2))
        model = fit_gmm_calibrated(train, seed=0)
        scores = model.inlier_score(np.vstack([train, rng.normal(6, 1, size=(20, 2))]))
        assert np.all((scores >= 0.0) & (scores <= 1.0))

    def test_gmm_calibrated_separates_planted_outliers(self):
        rng = np.random.default_rng(19)
        train = rng.normal(0, 1, size=(100, 2))
        model = fit_gmm_calibrated(train, seed=1)
        inl = model.inlier_score(train)
        out = model.inlier_score(np.full((5, 2), 12.0))
        assert out.max() < 0.5
        assert np.median(inl) > 0.5
