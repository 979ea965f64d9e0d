"""
描画サービスと位置推定パイプラインのテスト

Z バッファ付きの書き込み、平均プーリング、クエリ生成の決定性、
誤差の集計、姿勢改善の一連の流れをテストする。
"""
import math

import numpy as np
import pytest

from gsloc.exceptions import InvalidParams, RefinementDiverged
from gsloc.models.geometry import Camera, Pose
from gsloc.models.matching import FeatureGrid, MatchSet, MatchStage
from gsloc.models.pipeline import QueryErrors
from gsloc.models.pose import PoseEstimate
from gsloc.models.scene import ViewObservation
from gsloc.schemas.config import (
    QueryConfig,
    RansacConfig,
    RecallThreshold,
    RefineConfig,
    SamplingConfig,
)
from gsloc.services.fusion import build_landmark_features
from gsloc.services.geometry import backproject_points, pose_error, project_points
from gsloc.services.pipeline import (
    DEFAULT_RECALL_THRESHOLDS,
    LocalizationService,
    localize_coarse,
    recall,
    refine,
    summarize,
)
from gsloc.services.pose import lift_to_3d
from gsloc.services.rendering import average_pool, make_query_view, render_synthetic_view, splat
from gsloc.services.sampling import consensus_scores, kc_sample
from gsloc.services.synthesis import generate_scene


def _observation(pixels, depths, features):
    n = len(pixels)
    return ViewObservation(
        None, np.ones(n, dtype=bool), np.asarray(features, dtype=np.float64),
        np.asarray(pixels, dtype=np.float64), np.asarray(depths, dtype=np.float64),
    )


def _build_db(scene, n=None, k=None, seed=0):
    sampling = SamplingConfig()
    scores = consensus_scores(scene, sampling.tau_d)
    db = kc_sample(scene, scores, n=n or sampling.n, k=k or sampling.k, seed=seed)
    return build_landmark_features(scene, db, seed=scene.seed)


def _errors(query_id, coarse, fine):
    return QueryErrors(query_id, coarse[0], coarse[1], fine[0], fine[1], {}, 1, False)


def _cell_owners(scene, camera, view):
    """占有セルごとに、そのセルへ投影され描画深度と一致するガウシアンの番号を返す"""
    pixels, depths = project_points(camera, scene.centers)
    owners = {}
    for r, c in zip(*np.nonzero(view.fine.valid)):
        inside = (np.floor(pixels[:, 0]) == c) & (np.floor(pixels[:, 1]) == r)
        ids = np.flatnonzero(inside & np.isclose(depths, view.depth[r, c], rtol=0.0, atol=1e-12))
        assert len(ids) >= 1
        owners[(int(r), int(c))] = int(ids[0])
    return owners


@pytest.fixture(scope="module")
def small_db(small_scene):
    return _build_db(small_scene, n=600, k=4, seed=1)


@pytest.mark.unit
class TestSplat:
    """splat と average_pool のテストクラス"""

    def test_nearest_splat_wins(self):
        """同じセルに落ちたガウシアンのうち手前のものが残ることをテストする"""
        camera = Camera(50.0, 50.0, 8.0, 8.0, 16, 16)
        observation = _observation(
            [[3.2, 4.7], [3.9, 4.1], [10.0, 12.0]], [5.0, 2.0, 3.0],
            [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
        )
        view = splat(observation, camera)
        assert view.fine.valid.sum() == 2
        np.testing.assert_array_equal(view.fine.features[4, 3], [0.0, 1.0])
        assert view.depth[4, 3] == 2.0
        assert view.depth[12, 10] == 3.0
        assert np.isnan(view.depth[0, 0])

    def test_coarse_grid_is_average_pool(self, rng):
        features = rng.normal(size=(16, 24, 3))
        valid = rng.uniform(size=(16, 24)) < 0.3
        features[~valid] = 0.0
        coarse = average_pool(FeatureGrid(features, valid, 1.0))
        assert (coarse.height, coarse.width) == (2, 3)
        assert coarse.cell_size == 8.0
        np.testing.assert_allclose(coarse.features[1, 2], features[8:16, 16:24].mean(axis=(0, 1)))
        assert coarse.valid[0, 0] == valid[:8, :8].any()

    def test_artifacts_move_splats(self, small_scene):
        camera = small_scene.cameras[0]
        clean = render_synthetic_view(small_scene, camera.pose, camera, 0.0, seed=3)
        shifted = render_synthetic_view(small_scene, camera.pose, camera, 0.0, seed=3, artifact_fraction=1.0)
        assert not np.array_equal(clean.fine.valid, shifted.fine.valid)
        assert shifted.fine.valid.any()

    def test_render_is_deterministic(self, small_scene):
        camera = small_scene.cameras[1]
        a = render_synthetic_view(small_scene, camera.pose, camera, 0.1, seed=5, keys=(0, 1))
        b = render_synthetic_view(small_scene, camera.pose, camera, 0.1, seed=5, keys=(0, 1))
        assert np.array_equal(a.fine.features, b.fine.features)
        assert np.array_equal(a.depth, b.depth, equal_nan=True)

    def test_noiseless_render_matches_truth(self, small_scene):
        """ノイズなしの描画で各セルの特徴がそのセルに投影されたガウシアンの真値と一致することをテストする"""
        camera = small_scene.cameras[2]
        view = render_synthetic_view(small_scene, camera.pose, camera, 0.0, seed=0)
        owners = _cell_owners(small_scene, camera, view)
        assert owners
        truth = small_scene.true_features
        for (r, c), gaussian in owners.items():
            np.testing.assert_allclose(view.fine.features[r, c], truth[gaussian], atol=1e-12)

    def test_depth_lifts_to_gaussian_centers(self, small_scene):
        """占有セルの中心を深度で持ち上げるとセル半分の量子化誤差以内でガウシアン中心に戻ることをテストする"""
        camera = small_scene.cameras[3]
        view = render_synthetic_view(small_scene, camera.pose, camera, 0.0, seed=0)
        owners = _cell_owners(small_scene, camera, view)
        cells = np.array(list(owners))
        centers = cells[:, ::-1] + 0.5
        m = len(cells)
        matches = MatchSet(np.arange(m), np.arange(m), np.ones(m), MatchStage.FINE,
                           query_points=centers, reference_points=centers)
        lifted, dropped = lift_to_3d(matches, view.depth, camera.pose, camera)
        assert dropped == 0
        assert len(lifted) == m

        gaussians = small_scene.centers[list(owners.values())]
        points = np.array([match.world_point for match in lifted])
        depths = view.depth[cells[:, 0], cells[:, 1]]
        bound = depths * 0.5 * math.hypot(1.0 / camera.fx, 1.0 / camera.fy)
        assert np.all(np.linalg.norm(points - gaussians, axis=1) <= bound + 1e-9)
        np.testing.assert_allclose(camera.pose.transform(points)[:, 2], depths, rtol=1e-12)
        np.testing.assert_allclose(points, backproject_points(camera, centers, depths), atol=1e-12)


@pytest.mark.unit
class TestQueryView:
    """make_query_view のテストクラス"""

    def test_deterministic(self, small_scene):
        a = make_query_view(small_scene, 4, seed=7)
        b = make_query_view(small_scene, 4, seed=7)
        assert np.array_equal(a.true_pose.rotation, b.true_pose.rotation)
        assert np.array_equal(a.keypoints.pixels, b.keypoints.pixels)

    def test_keypoint_budget(self, small_scene):
        query = make_query_view(small_scene, 0, seed=7, config=QueryConfig(max_keypoints=10))
        assert len(query.keypoints) <= 10

    def test_grids_match_camera(self, small_scene):
        query = make_query_view(small_scene, 1, seed=7)
        assert query.grids.fine.valid.shape == (query.camera.height, query.camera.width)
        assert query.grids.coarse.cell_size == 8.0


@pytest.mark.unit
class TestSummaries:
    """recall と summarize のテストクラス"""

    def test_recall_requires_both_thresholds(self):
        threshold = RecallThreshold(translation=0.05, rotation_deg=2.0)
        t = np.array([0.01, 0.01, 0.2, 0.04])
        r = np.array([1.0, 3.0, 1.0, 1.99])
        assert recall(t, r, threshold) == 0.5

    def test_recall_empty(self):
        assert recall(np.zeros(0), np.zeros(0), DEFAULT_RECALL_THRESHOLDS[0]) == 0.0

    def test_summary_medians_and_failures(self):
        rows = [
            _errors(0, (0.2, 3.0), (0.01, 0.3)),
            _errors(1, (0.4, 6.0), (0.03, 1.0)),
            _errors(2, (math.inf, math.inf), (math.inf, math.inf)),
        ]
        summary = summarize(rows, DEFAULT_RECALL_THRESHOLDS)
        assert summary.queries == 3
        assert summary.median["coarse_translation"] == 0.4
        assert summary.median["fine_rotation_deg"] == 1.0
        assert summary.recall["0.05/2"]["fine"] == pytest.approx(2 / 3)
        assert summary.recall["0.01/0.5"]["fine"] == 0.0
        assert summary.recall["0.1/5"]["coarse"] == 0.0

    def test_empty_summary(self):
        summary = summarize([], DEFAULT_RECALL_THRESHOLDS)
        assert summary.queries == 0
        assert math.isnan(summary.median["fine_translation"])


@pytest.mark.integration
class TestLocalization:
    """localize_coarse と refine のテストクラス"""

    def test_db_has_features(self, small_db, small_scene):
        assert small_db.has_features
        assert small_db.features.shape == (len(small_db), small_scene.feature_dim)

    def test_coarse_requires_features(self, small_scene):
        query = make_query_view(small_scene, 0, seed=7)
        db = kc_sample(small_scene, consensus_scores(small_scene, 1.0), n=50, k=4, seed=0)
        with pytest.raises(InvalidParams):
            localize_coarse(query.keypoints, db, small_scene, query.camera)

    def test_refine_records_stages(self, small_scene, small_db):
        """改善の各反復で段階ごとのマッチ数が記録されることをテストする"""
        query = make_query_view(small_scene, 2, seed=7)
        start = PoseEstimate(query.true_pose, np.ones(10, dtype=bool), 0.0, 1, 2.0)
        config = RefineConfig(iterations=2, render_noise=0.0, ransac=RansacConfig(seed=0, min_inliers=6))
        result = refine(query, start, small_scene, config, seed=7)
        assert 1 <= result.iterations <= 2
        for record in result.history:
            assert record.lgcv_filtered <= record.coarse_dense
        assert [m.stage for m in result.matches] == [
            MatchStage.COARSE_DENSE, MatchStage.LGCV_FILTERED, MatchStage.FINE,
        ]
        assert result.history[-1].fine == len(result.matches[2])

    def test_true_pose_is_fixed_point(self, small_config):
        """ノイズのないシーンで真の姿勢から改善を始めると姿勢が動かないことをテストする"""
        scene = generate_scene(small_config.model_copy(update={"sigma": 0.0}), seed=7)
        config = RefineConfig(iterations=2, render_noise=0.0, ransac=RansacConfig(seed=0, min_inliers=6))
        for query_id in (0, 1, 2):
            query = make_query_view(scene, query_id, seed=7)
            start = PoseEstimate(query.true_pose, np.ones(6, dtype=bool), 0.0, 1, 2.0)
            result = refine(query, start, scene, config, seed=7)
            assert not result.diverged
            t_err, r_err = pose_error(result.p_fine.pose, query.true_pose)
            assert t_err < 1e-6 and r_err < 1e-6

    def test_lgcv_raises_inlier_ratio_under_artifacts(self, small_scene):
        """描画アーティファクトがあるとき LGCV ありの PnP 入力の正対応率がなしを下回らないことをテストする"""
        ratios = {True: [], False: []}
        for query_id in range(6):
            query = make_query_view(small_scene, query_id, seed=7)
            start = PoseEstimate(query.true_pose, np.ones(6, dtype=bool), 0.0, 1, 2.0)
            results = {
                use_lgcv: refine(query, start, small_scene, RefineConfig(
                    iterations=1, artifact_fraction=0.3, use_lgcv=use_lgcv,
                    ransac=RansacConfig(seed=0, min_inliers=6),
                ), seed=7)
                for use_lgcv in (True, False)
            }
            if any(result.diverged for result in results.values()):
                continue
            for use_lgcv, result in results.items():
                ratios[use_lgcv].append(result.history[0].inlier_ratio)
        assert ratios[True]
        assert np.mean(ratios[True]) >= np.mean(ratios[False])

    def test_refine_without_iterations_keeps_coarse(self, small_scene):
        query = make_query_view(small_scene, 3, seed=7)
        start = PoseEstimate(query.true_pose, np.ones(6, dtype=bool), 0.0, 1, 2.0)
        result = refine(query, start, small_scene, RefineConfig(iterations=0))
        assert result.p_fine is start
        assert result.iterations == 0
        assert result.stage_counts()["fine"] == 0

    def test_strict_refinement_raises(self, small_scene):
        """合意が得られない反復で strict なら例外になることをテストする"""
        query = make_query_view(small_scene, 3, seed=7)
        far = Pose.look_at(-query.camera.center * 3.0, query.camera.center * 10.0)
        start = PoseEstimate(far, np.ones(6, dtype=bool), 0.0, 1, 2.0)
        config = RefineConfig(iterations=1, ransac=RansacConfig(min_inliers=10000, max_iterations=20))
        with pytest.raises(RefinementDiverged):
            refine(query, start, small_scene, config, strict=True)
        result = refine(query, start, small_scene, config)
        assert result.diverged
        assert result.p_fine is start

    def test_benchmark_zero_queries(self, small_scene, small_db):
        report = LocalizationService(small_scene, small_db).benchmark(0)
        assert report.rows == []
        assert report.summary.queries == 0

    def test_benchmark_rejects_negative(self, small_scene, small_db):
        with pytest.raises(InvalidParams):
            LocalizationService(small_scene, small_db).benchmark(-1)

    def test_benchmark_rows_in_order(self, small_scene, small_db):
        service = LocalizationService(small_scene, small_db, RefineConfig(iterations=1), seed=7)
        sequential = service.benchmark(3)
        parallel = service.benchmark(3, workers=3)
        assert [r.query_id for r in parallel.rows] == [0, 1, 2]
        assert sequential.rows == parallel.rows


@pytest.mark.slow
@pytest.mark.integration
class TestEndToEnd:
    """既定シーンでの位置推定の改善のテストクラス"""

    QUERIES = 50

    @pytest.fixture(scope="class")
    def default_db(self, default_scene):
        return _build_db(default_scene, seed=0)

    def _medians(self, scene, db, use_lgcv):
        config = RefineConfig(artifact_fraction=0.2, use_lgcv=use_lgcv)
        report = LocalizationService(scene, db, config, seed=0).benchmark(self.QUERIES, workers=4)
        rows = report.rows
        coarse = np.median([r.coarse_translation for r in rows])
        fine = np.median([r.fine_translation for r in rows])
        return coarse, fine

    def test_refinement_and_lgcv_improve_accuracy(self, default_scene, default_db):
        """改善後の誤差が初期推定より小さく、LGCV ありの誤差がなしを上回らないことをテストする"""
        coarse, fine = self._medians(default_scene, default_db, use_lgcv=True)
        assert fine < coarse
        _, fine_without = self._medians(default_scene, default_db, use_lgcv=False)
        assert fine <= fine_without
