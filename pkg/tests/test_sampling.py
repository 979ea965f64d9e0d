"""
ランドマークサンプリングサービスのテスト

合意スコアを総当たりの参照実装と比較し、k 近傍サンプリングの選択規則をテストする。
"""
import numpy as np
import pytest

from gsloc.exceptions import InvalidParams
from gsloc.models.landmarks import ConsensusScores
from gsloc.schemas.config import SceneConfig
from gsloc.services.geometry import in_frustum, project
from gsloc.services.sampling import consensus_scores, draw_anchors, kc_sample
from gsloc.services.synthesis import generate_scene


def _brute_force_scores(scene, tau_d):
    """ガウシアンとキーポイントの全組を調べる参照実装"""
    scores = np.zeros(scene.n_gaussians, dtype=np.int64)
    for camera, keypoints in zip(scene.cameras, scene.keypoints_per_view):
        for i, center in enumerate(scene.centers):
            if len(keypoints) == 0 or not in_frustum(camera, center):
                continue
            pixel, _ = project(camera, center)
            distances = np.hypot(keypoints.pixels[:, 0] - pixel.u, keypoints.pixels[:, 1] - pixel.v)
            if distances.min() <= tau_d:
                scores[i] += 1
    return scores


def _reference_sample(centers, scores, n, k, seed):
    """距離を全計算して k 近傍の最大スコアを選ぶ参照実装"""
    rng = np.random.default_rng(seed)
    anchors = rng.choice(len(centers), size=n, replace=n > len(centers))
    selected = set()
    for a in anchors:
        distances = np.linalg.norm(centers - centers[a], axis=1)
        neighbors = np.argsort(distances, kind="stable")[:min(k, len(centers))]
        best = max(neighbors, key=lambda j: (scores[j], -j))
        selected.add(int(best))
    return sorted(selected)


@pytest.mark.unit
class TestConsensusScores:
    """consensus_scores のテストクラス"""

    @pytest.mark.parametrize("tau_d", [0.5, 1.0, 4.0])
    def test_matches_brute_force(self, small_scene, tau_d):
        """KD 木による集計が総当たりと一致することをテストする"""
        scores = consensus_scores(small_scene, tau_d)
        assert np.array_equal(scores.scores, _brute_force_scores(small_scene, tau_d))

    def test_scores_are_bounded(self, small_scene):
        scores = consensus_scores(small_scene, 1.0)
        assert len(scores) == small_scene.n_gaussians
        assert scores.view_count == small_scene.n_views
        assert np.all((scores.scores >= 0) & (scores.scores <= small_scene.n_views))

    def test_textured_gaussians_score(self, small_scene):
        """テクスチャ付きの可視ガウシアンは自分のキーポイントで数えられることをテストする"""
        scores = consensus_scores(small_scene, 1e-6)
        for keypoints in small_scene.keypoints_per_view:
            real = keypoints.gaussian_ids[~keypoints.is_clutter]
            assert np.all(scores.scores[real] >= 1)

    def test_monotone_in_threshold(self, small_scene):
        small = consensus_scores(small_scene, 0.5).scores
        large = consensus_scores(small_scene, 5.0).scores
        assert np.all(large >= small)

    @pytest.mark.validation
    def test_rejects_non_positive_threshold(self, small_scene):
        with pytest.raises(InvalidParams):
            consensus_scores(small_scene, 0.0)


@pytest.mark.unit
class TestKCSample:
    """kc_sample のテストクラス"""

    @pytest.mark.parametrize("n,k,seed", [
        (50, 8, 0),
        (400, 4, 1),
        (20, 32, 2),
        (1000, 1, 3),
    ])
    def test_matches_reference(self, small_scene, n, k, seed):
        """同じ乱数ストリームの参照実装と同じ集合を選ぶことをテストする"""
        scores = consensus_scores(small_scene, 1.0)
        db = kc_sample(small_scene, scores, n=n, k=k, seed=seed)
        expected = _reference_sample(small_scene.centers, scores.scores, n, k, seed)
        assert list(db.indices) == expected

    @pytest.mark.parametrize("seed", range(5))
    def test_reference_on_small_scenes(self, seed):
        """100 個以下のガウシアンのシーンで参照実装と一致し、各ランドマークが近傍の最大スコアであることをテストする"""
        scene = generate_scene(
            SceneConfig(n_gaussians=80, n_cameras=6, feature_dim=8, image_width=160, image_height=120),
            seed=seed,
        )
        scores = consensus_scores(scene, 1.0)
        db = kc_sample(scene, scores, n=40, k=8, seed=seed)
        assert list(db.indices) == _reference_sample(scene.centers, scores.scores, 40, 8, seed)

        anchors = draw_anchors(scene.n_gaussians, 40, np.random.default_rng(seed))
        for a in anchors:
            neighborhood = np.argsort(np.linalg.norm(scene.centers - scene.centers[a], axis=1))[:8]
            best = scores.scores[neighborhood].max()
            winners = [j for j in neighborhood if scores.scores[j] == best]
            assert min(winners) in db.indices

    def test_sorted_unique_and_bounded(self, small_scene):
        scores = consensus_scores(small_scene, 1.0)
        db = kc_sample(small_scene, scores, n=20, k=8, seed=5)
        assert 1 <= len(db) <= 20
        assert np.all(np.diff(db.indices) > 0)
        assert db.n == 20 and db.k == 8 and db.seed == 5
        assert not db.has_features

    def test_k_one_returns_anchors(self, small_scene):
        """k = 1 では近傍が自身のみのためアンカーがそのまま選ばれることをテストする"""
        scores = consensus_scores(small_scene, 1.0)
        db = kc_sample(small_scene, scores, n=30, k=1, seed=9)
        anchors = draw_anchors(small_scene.n_gaussians, 30, np.random.default_rng(9))
        assert list(db.indices) == sorted(set(int(a) for a in anchors))

    def test_zero_scores_pick_smallest_index(self, small_scene):
        scores = ConsensusScores(np.zeros(small_scene.n_gaussians), 1.0, small_scene.n_views)
        db = kc_sample(small_scene, scores, n=40, k=6, seed=4)
        expected = _reference_sample(small_scene.centers, scores.scores, 40, 6, 4)
        assert list(db.indices) == expected

    def test_prefers_high_scores(self, small_scene):
        """選ばれたランドマークの平均スコアが全体平均以上になることをテストする"""
        scores = consensus_scores(small_scene, 1.0)
        db = kc_sample(small_scene, scores, n=100, k=16, seed=11)
        assert scores.scores[db.indices].mean() >= scores.scores.mean()

    def test_oversampling_uses_replacement(self):
        anchors = draw_anchors(5, 12, np.random.default_rng(0))
        assert len(anchors) == 12
        assert set(anchors) <= set(range(5))

    def test_deterministic(self, small_scene):
        scores = consensus_scores(small_scene, 1.0)
        a = kc_sample(small_scene, scores, n=60, k=8, seed=21)
        b = kc_sample(small_scene, scores, n=60, k=8, seed=21)
        assert np.array_equal(a.indices, b.indices)

    @pytest.mark.validation
    @pytest.mark.parametrize("n,k", [(0, 8), (10, 0), (-1, 4)])
    def test_rejects_invalid_parameters(self, small_scene, n, k):
        scores = consensus_scores(small_scene, 1.0)
        with pytest.raises(InvalidParams):
            kc_sample(small_scene, scores, n=n, k=k, seed=0)

    @pytest.mark.validation
    def test_rejects_mismatched_scores(self, small_scene):
        scores = ConsensusScores(np.zeros(3), 1.0, small_scene.n_views)
        with pytest.raises(InvalidParams):
            kc_sample(small_scene, scores, n=10, k=4, seed=0)
