"""
バイアス解析サービスのテスト

α ブレンドの分解、結合最適解の閉形式、解析的バイアスとモンテカルロの一致、
バイアスが消える条件、特徴距離の診断をテストする。
"""
import numpy as np
import pytest

from gsloc.exceptions import (
    DegenerateWeights,
    FullContribution,
    InvalidParams,
    LengthMismatch,
    NoVisibleViews,
    ZeroVector,
)
from gsloc.services.bias import (
    alpha_optimum_features,
    analytic_bias,
    decompose_blend,
    distance_histogram,
    empirical_bias,
    feature_distance,
    joint_feature_gradient,
    joint_feature_loss,
    optimal_feature_joint,
    scene_blend_decomposition,
    scene_blend_decompositions,
    simplified_bias,
)
from gsloc.services.fusion import fuse_scene_features
from gsloc.services.synthesis import observe_all, render_feature_ray


def _gradient_descent(observations, weights, backgrounds, iterations=200):
    """二乗損失の勾配降下（歩幅は曲率の逆数の半分）"""
    f = np.zeros(observations.shape[1])
    step = 0.5 / (2.0 * np.sum(weights ** 2))
    for _ in range(iterations):
        f = f - step * joint_feature_gradient(f, observations, weights, backgrounds)
    return f


@pytest.mark.unit
class TestDecomposeBlend:
    """decompose_blend のテストクラス"""

    def test_reconstructs_blend(self, rng):
        """w_t f_t + (1 - w_t) B がレンダリング結果に一致することをテストする"""
        entries = [(rng.normal(size=4), a) for a in (0.3, 0.6, 0.2, 0.8)]
        blended, weights = render_feature_ray(entries)
        for t in range(len(entries)):
            w, b = decompose_blend(entries, t)
            assert w == pytest.approx(weights[t])
            np.testing.assert_allclose(w * entries[t][0] + (1.0 - w) * b, blended, atol=1e-12)

    def test_full_contribution(self):
        entries = [(np.ones(2), 1.0), (np.zeros(2), 0.5)]
        with pytest.raises(FullContribution):
            decompose_blend(entries, 0)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            decompose_blend([(np.ones(2), 0.5)], 3)


@pytest.mark.unit
class TestOptimalFeature:
    """optimal_feature_joint のテストクラス"""

    def test_matches_gradient_descent(self):
        """100 個のランダムな問題で閉形式解が勾配降下の極小と一致することをテストする"""
        rng = np.random.default_rng(2024)
        for _ in range(100):
            k = int(rng.integers(1, 11))
            d = int(rng.integers(1, 9))
            weights = rng.uniform(0.05, 1.0, k)
            backgrounds = rng.normal(size=(k, d))
            observations = rng.normal(size=(k, d))
            closed = optimal_feature_joint(observations, weights, backgrounds)
            descent = _gradient_descent(observations, weights, backgrounds)
            np.testing.assert_allclose(closed, descent, atol=1e-8)
            assert np.linalg.norm(joint_feature_gradient(closed, observations, weights, backgrounds)) < 1e-9

    def test_minimizes_loss(self, rng):
        observations = rng.normal(size=(4, 3))
        weights = np.array([0.2, 0.5, 0.9, 0.4])
        backgrounds = rng.normal(size=(4, 3))
        best = optimal_feature_joint(observations, weights, backgrounds)
        base = joint_feature_loss(best, observations, weights, backgrounds)
        for _ in range(10):
            other = best + 0.01 * rng.normal(size=3)
            assert joint_feature_loss(other, observations, weights, backgrounds) > base

    def test_analytic_bias_is_noiseless_error(self):
        """Σ = 0 の最適解と μ の差が解析的バイアスに一致することをテストする"""
        rng = np.random.default_rng(77)
        for _ in range(100):
            k = int(rng.integers(1, 11))
            d = int(rng.integers(1, 9))
            mu = rng.normal(size=d)
            weights = rng.uniform(0.05, 1.0, k)
            backgrounds = rng.normal(size=(k, d))
            observations = np.tile(mu, (k, 1))
            error = optimal_feature_joint(observations, weights, backgrounds) - mu
            np.testing.assert_allclose(analytic_bias(mu, weights, backgrounds), error, atol=1e-12)

    def test_degenerate_weights(self):
        with pytest.raises(DegenerateWeights):
            optimal_feature_joint(np.ones((2, 3)), [0.0, 0.0], np.zeros((2, 3)))

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            optimal_feature_joint(np.ones((3, 2)), [0.5, 0.5], np.zeros((2, 2)))


@pytest.mark.unit
class TestBiasNullity:
    """バイアスが消える条件のテストクラス"""

    def test_full_contribution_has_no_bias(self, rng):
        mu = rng.normal(size=5)
        bias = analytic_bias(mu, np.ones(4), rng.normal(size=(4, 5)))
        assert np.array_equal(bias, np.zeros(5))

    def test_consistent_background_has_no_bias(self, rng):
        mu = rng.normal(size=5)
        bias = analytic_bias(mu, [0.2, 0.7, 0.4], np.tile(mu, (3, 1)))
        assert np.array_equal(bias, np.zeros(5))

    def test_constructed_counterexample(self):
        """w = 0.5, B = μ + 1 でバイアスが成分ごとに -1 になることをテストする"""
        mu = np.array([0.3, -0.2, 0.5])
        bias = analytic_bias(mu, [0.5], (mu + 1.0)[None])
        np.testing.assert_allclose(bias, -np.ones(3), atol=1e-15)

    def test_simplified_bias(self):
        mu = np.zeros(2)
        simplified = simplified_bias(mu, [0.5, 0.25], [[1.0, 0.0], [0.0, 1.0]])
        # ((1 - 0.5)/0.5)(-1, 0) と ((1 - 0.25)/0.25)(0, -1) の平均
        np.testing.assert_allclose(simplified, [-0.5, -1.5])

    def test_simplified_bias_undefined_for_zero_weight(self):
        assert simplified_bias(np.zeros(2), [0.0, 0.5], np.zeros((2, 2))) is None


@pytest.mark.slow
class TestEmpiricalBias:
    """empirical_bias のテストクラス"""

    def test_agrees_with_analytic(self, rng):
        """経験的バイアスが解析値の 4 標準誤差以内に入ることをテストする"""
        d = 6
        mu = rng.normal(size=d)
        weights = np.array([0.3, 0.6, 0.15, 0.8, 0.45])
        backgrounds = rng.normal(size=(5, d))
        report = empirical_bias(mu, 0.05 ** 2 * np.eye(d), weights, backgrounds, trials=10000, seed=3)
        assert report.trials == 10000
        assert np.all(report.within(4.0))
        np.testing.assert_allclose(report.analytic_bias, analytic_bias(mu, weights, backgrounds))
        assert report.simplified_bias is not None

    def test_worker_count_does_not_change_result(self, rng):
        mu = rng.normal(size=3)
        args = (mu, 0.01 * np.eye(3), [0.4, 0.7], rng.normal(size=(2, 3)))
        single = empirical_bias(*args, trials=5000, seed=8, workers=1)
        parallel = empirical_bias(*args, trials=5000, seed=8, workers=3)
        assert np.array_equal(single.empirical_bias, parallel.empirical_bias)
        assert np.array_equal(single.stderr, parallel.stderr)

    def test_noiseless_single_trial(self):
        mu = np.array([1.0, 0.0])
        report = empirical_bias(mu, np.zeros((2, 2)), [0.5], [[0.0, 1.0]], trials=1, seed=0)
        np.testing.assert_allclose(report.empirical_bias, report.analytic_bias, atol=1e-12)
        assert np.array_equal(report.stderr, np.zeros(2))

    def test_too_few_trials(self):
        with pytest.raises(InvalidParams):
            empirical_bias(np.zeros(2), np.eye(2), [0.5], [[0.0, 1.0]], trials=50, seed=0)

    def test_covariance_shape(self):
        with pytest.raises(LengthMismatch):
            empirical_bias(np.zeros(2), np.eye(3), [0.5], [[0.0, 1.0]], trials=200, seed=0)


@pytest.mark.unit
class TestFeatureDistance:
    """feature_distance のテストクラス"""

    def test_identical_direction(self):
        assert feature_distance([1.0, 0.0], [[2.0, 0.0], [0.5, 0.0]]) == pytest.approx(0.0)

    def test_opposite_direction(self):
        assert feature_distance([1.0, 0.0], [[-1.0, 0.0]]) == pytest.approx(2.0)

    def test_zero_feature(self):
        with pytest.raises(ZeroVector):
            feature_distance([0.0, 0.0], [[1.0, 0.0]])

    def test_empty_observations(self):
        with pytest.raises(InvalidParams):
            feature_distance([1.0, 0.0], np.zeros((0, 2)))


@pytest.mark.unit
class TestSceneDecomposition:
    """シーンから求める (w, B) のテストクラス"""

    def test_single_matches_batch(self, small_scene, small_observations):
        batch = scene_blend_decompositions(small_scene, small_observations)
        for i in (0, 5, 17):
            if batch[i] is None:
                with pytest.raises(NoVisibleViews):
                    scene_blend_decomposition(small_scene, i, small_observations)
                continue
            single = scene_blend_decomposition(small_scene, i, small_observations)
            np.testing.assert_allclose(single.weights, batch[i].weights)
            np.testing.assert_allclose(single.backgrounds, batch[i].backgrounds)

    def test_weights_are_valid(self, small_scene, small_observations):
        for decomposition in scene_blend_decompositions(small_scene, small_observations):
            if decomposition is None:
                continue
            assert np.all((decomposition.weights >= 0) & (decomposition.weights <= 1))
            assert decomposition.view_count == len(decomposition.view_indices)

    def test_index_out_of_range(self, small_scene, small_observations):
        with pytest.raises(IndexError):
            scene_blend_decomposition(small_scene, small_scene.n_gaussians, small_observations)

    def test_histogram_counts(self, small_scene, small_observations):
        histogram = distance_histogram(small_scene, "fused", 20, small_observations)
        assert histogram.total == len(histogram.distances)
        assert len(histogram.edges) == 21
        assert histogram.edges[0] == 0.0 and histogram.edges[-1] == 2.0
        assert histogram.mean == pytest.approx(histogram.distances.mean())

    def test_unknown_source(self, small_scene, small_observations):
        with pytest.raises(InvalidParams):
            distance_histogram(small_scene, "median", 10, small_observations)


@pytest.mark.slow
@pytest.mark.integration
class TestFusedBeatsAlphaOptimum:
    """融合特徴と α ブレンド最適特徴の距離比較のテストクラス"""

    def test_fused_features_are_closer(self, default_scene):
        """95% 以上のガウシアンで融合特徴の距離が小さいことをテストする"""
        observations = observe_all(default_scene, seed=0)
        alpha = distance_histogram(default_scene, "alpha_optimum", 50, observations)
        fused = distance_histogram(default_scene, "fused", 50, observations)
        assert fused.mean < alpha.mean

        common, ia, ifu = np.intersect1d(alpha.gaussian_indices, fused.gaussian_indices, return_indices=True)
        assert len(common) >= 0.5 * default_scene.n_gaussians
        favoring = np.mean(fused.distances[ifu] < alpha.distances[ia])
        assert favoring >= 0.95

    def test_alpha_optimum_rows(self, small_scene, small_observations):
        features, valid = alpha_optimum_features(small_scene, small_observations)
        fused, fused_valid = fuse_scene_features(small_scene, small_observations)
        assert features.shape == fused.shape
        assert np.all(np.isnan(features[~valid]))
        assert np.array_equal(valid, fused_valid)
