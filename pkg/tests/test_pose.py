"""
姿勢推定サービスのテスト

DLT による PnP、RANSAC、ヤコビアン、Levenberg-Marquardt、深度による持ち上げをテストする。
"""
import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gsloc.exceptions import DegenerateConfiguration, InvalidParams, NoConsensus
from gsloc.models.geometry import Camera, Pose
from gsloc.models.matching import MatchSet, MatchStage
from gsloc.models.pose import Match2D3D
from gsloc.schemas.config import RansacConfig
from gsloc.services.geometry import backproject_points, pose_error, project_points
from gsloc.services.pose import (
    lift_to_3d,
    pnp_minimal,
    ransac_pnp,
    refine_pose,
    reprojection_jacobian,
    reprojection_residuals,
    required_iterations,
    retract,
)

INTRINSICS = dict(fx=500.0, fy=480.0, cx=320.0, cy=240.0, width=640, height=480)


def _random_pose(rng) -> Pose:
    q = Rotation.random(random_state=int(rng.integers(1 << 31))).as_quat()
    return Pose.from_quaternion(q, rng.uniform(-1.0, 1.0, 3))


def _scene_points(rng, pose, count):
    """カメラ座標で画像内に収まる点を作りワールド座標に戻す"""
    depth = rng.uniform(2.0, 6.0, count)
    u = rng.uniform(20.0, 620.0, count)
    v = rng.uniform(20.0, 460.0, count)
    cam = np.column_stack([
        (u - INTRINSICS["cx"]) / INTRINSICS["fx"] * depth,
        (v - INTRINSICS["cy"]) / INTRINSICS["fy"] * depth,
        depth,
    ])
    return pose.inverse_transform(cam)


def _camera(pose) -> Camera:
    return Camera(pose=pose, **INTRINSICS)


@pytest.mark.unit
class TestPnPMinimal:
    """pnp_minimal のテストクラス"""

    def test_exact_recovery(self, rng):
        pose = _random_pose(rng)
        points = _scene_points(rng, pose, 6)
        pixels, _ = project_points(_camera(pose), points)
        estimate = pnp_minimal((pixels, points), _camera(pose))
        t_err, r_err = pose_error(estimate, pose)
        assert t_err < 1e-6 and r_err < 1e-6

    def test_accepts_match_objects(self, rng):
        pose = _random_pose(rng)
        points = _scene_points(rng, pose, 8)
        pixels, _ = project_points(_camera(pose), points)
        matches = Match2D3D.from_arrays(pixels, points)
        estimate = pnp_minimal(matches, _camera(pose).intrinsics)
        assert pose_error(estimate, pose)[0] < 1e-6

    def test_planar_points_are_degenerate(self, rng):
        """同一平面上の点で DegenerateConfiguration が送出されることをテストする"""
        pose = Pose.look_at([0.0, -3.0, 2.0], [0.0, 0.0, 0.0])
        points = np.column_stack([rng.uniform(-1.0, 1.0, (10, 2)), np.zeros(10)])
        pixels, _ = project_points(_camera(pose), points)
        with pytest.raises(DegenerateConfiguration):
            pnp_minimal((pixels, points), _camera(pose))

    def test_too_few_points(self, rng):
        with pytest.raises(InvalidParams):
            pnp_minimal((np.zeros((5, 2)), rng.normal(size=(5, 3))), np.eye(3))


@pytest.mark.unit
class TestRansacPnP:
    """ransac_pnp のテストクラス"""

    def test_noiseless_recovery(self):
        """外れ値のない厳密な対応から 1e-6 以内で姿勢を復元することをテストする"""
        rng = np.random.default_rng(100)
        for _ in range(100):
            pose = _random_pose(rng)
            points = _scene_points(rng, pose, 40)
            pixels, _ = project_points(_camera(pose), points)
            estimate = ransac_pnp((pixels, points), _camera(pose), RansacConfig(seed=1))
            t_err, r_err = pose_error(estimate.pose, pose)
            assert t_err < 1e-6
            assert r_err < 1e-6
            assert estimate.inlier_count == 40

    @pytest.mark.parametrize("count", [6, 8])
    def test_default_config_accepts_few_points(self, count):
        """既定設定では最小サンプル数ちょうどの厳密な対応からも姿勢を復元することをテストする"""
        rng = np.random.default_rng(200 + count)
        for pose in (Pose.identity(), _random_pose(rng)):
            points = _scene_points(rng, pose, count)
            pixels, _ = project_points(_camera(pose), points)
            estimate = ransac_pnp((pixels, points), _camera(pose), RansacConfig())
            t_err, r_err = pose_error(estimate.pose, pose)
            assert t_err < 1e-6 and r_err < 1e-6
            assert estimate.inlier_count == count
        assert ransac_pnp((pixels, points), _camera(pose)).inlier_count == count

    def test_with_outliers(self, rng):
        pose = _random_pose(rng)
        points = _scene_points(rng, pose, 100)
        pixels, _ = project_points(_camera(pose), points)
        outliers = rng.choice(100, 30, replace=False)
        pixels[outliers] = rng.uniform((0.0, 0.0), (640.0, 480.0), size=(30, 2))
        estimate = ransac_pnp((pixels, points), _camera(pose), RansacConfig(seed=2))
        t_err, r_err = pose_error(estimate.pose, pose)
        assert t_err < 1e-5 and r_err < 1e-5
        truth = np.ones(100, dtype=bool)
        truth[outliers] = False
        assert np.count_nonzero(estimate.inlier_mask & ~truth) <= 1
        assert np.all(estimate.inlier_mask[truth])
        assert estimate.mean_error <= estimate.threshold_px

    def test_deterministic(self, rng):
        pose = _random_pose(rng)
        points = _scene_points(rng, pose, 30)
        pixels, _ = project_points(_camera(pose), points)
        pixels[:10] = rng.uniform((0.0, 0.0), (640.0, 480.0), size=(10, 2))
        a = ransac_pnp((pixels, points), _camera(pose), RansacConfig(seed=4))
        b = ransac_pnp((pixels, points), _camera(pose), RansacConfig(seed=4))
        assert np.array_equal(a.pose.rotation, b.pose.rotation)
        assert a.iterations == b.iterations

    def test_no_consensus(self, rng):
        pixels = rng.uniform((0.0, 0.0), (640.0, 480.0), size=(40, 2))
        points = rng.uniform(-1.0, 1.0, size=(40, 3)) + np.array([0.0, 0.0, 5.0])
        config = RansacConfig(max_iterations=50, min_inliers=30, seed=0)
        with pytest.raises(NoConsensus) as exc_info:
            ransac_pnp((pixels, points), np.array([[500.0, 0, 320], [0, 500.0, 240], [0, 0, 1]]), config)
        assert exc_info.value.required == 30

    @pytest.mark.validation
    def test_too_few_matches(self):
        with pytest.raises(InvalidParams):
            ransac_pnp((np.zeros((5, 2)), np.zeros((5, 3))), np.eye(3))

    @pytest.mark.parametrize("ratio,confidence,expected", [
        (1.0, 0.9999, 0.0),
        (0.0, 0.9999, math.inf),
        (0.5, 0.99, math.log(0.01) / math.log(1.0 - 0.5 ** 6)),
    ])
    def test_required_iterations(self, ratio, confidence, expected):
        assert required_iterations(ratio, confidence) == pytest.approx(expected)


@pytest.mark.unit
class TestJacobian:
    """reprojection_jacobian と retract のテストクラス"""

    def test_matches_finite_differences(self):
        """10 通りの姿勢と点で解析的ヤコビアンが中心差分と一致することをテストする"""
        rng = np.random.default_rng(55)
        K = _camera(Pose.identity()).intrinsics
        h = 1e-6
        for _ in range(10):
            pose = _random_pose(rng)
            points = _scene_points(rng, pose, 5)
            analytic = reprojection_jacobian(pose, points, K)
            numeric = np.zeros_like(analytic)
            for d in range(6):
                step = np.zeros(6)
                step[d] = h
                plus = reprojection_residuals(retract(pose, step), np.zeros((5, 2)), points, K)
                minus = reprojection_residuals(retract(pose, -step), np.zeros((5, 2)), points, K)
                numeric[:, :, d] = (plus - minus) / (2 * h)
            error = np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic)
            assert error <= 1e-4

    def test_zero_update_is_identity(self, rng):
        pose = _random_pose(rng)
        same = retract(pose, np.zeros(6))
        np.testing.assert_allclose(same.rotation, pose.rotation, atol=1e-12)
        np.testing.assert_allclose(same.translation, pose.translation, atol=1e-12)

    def test_pure_translation_update(self, rng):
        pose = _random_pose(rng)
        moved = retract(pose, [0.1, -0.2, 0.3, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(moved.translation - pose.translation, [0.1, -0.2, 0.3], atol=1e-12)


@pytest.mark.unit
class TestRefinePose:
    """refine_pose のテストクラス"""

    def test_recovers_from_perturbation(self, rng):
        pose = _random_pose(rng)
        points = _scene_points(rng, pose, 30)
        pixels, _ = project_points(_camera(pose), points)
        start = retract(pose, rng.normal(0.0, 0.01, 6))
        K = _camera(pose).intrinsics
        before = np.sum(reprojection_residuals(start, pixels, points, K) ** 2)
        refined = refine_pose(start, (pixels, points), K, iterations=30)
        after = np.sum(reprojection_residuals(refined, pixels, points, K) ** 2)
        assert after < before
        t_err, r_err = pose_error(refined, pose)
        assert t_err < 1e-6 and r_err < 1e-5

    def test_never_increases_cost(self, rng):
        pose = _random_pose(rng)
        points = _scene_points(rng, pose, 20)
        pixels, _ = project_points(_camera(pose), points)
        pixels += rng.normal(0.0, 1.0, pixels.shape)
        K = _camera(pose).intrinsics
        before = np.sum(reprojection_residuals(pose, pixels, points, K) ** 2)
        refined = refine_pose(pose, (pixels, points), K, iterations=10)
        assert np.sum(reprojection_residuals(refined, pixels, points, K) ** 2) <= before

    def test_zero_iterations_returns_initial(self, rng):
        pose = _random_pose(rng)
        points = _scene_points(rng, pose, 8)
        pixels, _ = project_points(_camera(pose), points)
        assert refine_pose(pose, (pixels + 1.0, points), np.eye(3), iterations=0) is pose


@pytest.mark.unit
class TestLiftTo3D:
    """lift_to_3d のテストクラス"""

    def test_backprojects_with_depth(self, camera):
        depth = np.full((camera.height, camera.width), 4.0)
        depth[:, :10] = np.nan
        reference = np.array([[100.5, 50.5], [200.5, 120.5], [5.5, 30.5]])
        matches = MatchSet([0, 1, 2], [0, 1, 2], [0.9, 0.8, 0.7], MatchStage.FINE,
                           query_points=reference + 1.0, reference_points=reference)
        lifted, dropped = lift_to_3d(matches, depth, camera.pose, camera)
        assert dropped == 1
        assert len(lifted) == 2
        expected = backproject_points(camera, reference[:2], np.full(2, 4.0))
        np.testing.assert_allclose([m.world_point for m in lifted], expected, atol=1e-12)
        assert lifted[0].pixel.u == pytest.approx(101.5)

    def test_coarse_depth_map(self, camera):
        """グリッドが粗い深度マップでもセル単位で参照されることをテストする"""
        depth = np.full((camera.height // 8, camera.width // 8), 3.0)
        matches = MatchSet([0], [0], [1.0], MatchStage.COARSE_DENSE,
                           query_points=[[20.0, 20.0]], reference_points=[[20.0, 20.0]])
        lifted, dropped = lift_to_3d(matches, depth, camera.pose, camera)
        assert dropped == 0
        assert camera.pose.transform(lifted[0].world_point)[2] == pytest.approx(3.0)

    def test_empty(self, camera):
        assert lift_to_3d(MatchSet.empty(MatchStage.FINE), np.ones((4, 4)), camera.pose, camera) == ([], 0)
