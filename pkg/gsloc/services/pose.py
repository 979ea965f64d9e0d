"""
姿勢推定サービス

6点 DLT による PnP、RANSAC、SE(3) 上の Levenberg-Marquardt による
再投影誤差の最小化、深度マップによる 2D→3D の持ち上げを実装する。
"""
from typing import List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np
from scipy.spatial.transform import Rotation

from gsloc.exceptions import DegenerateConfiguration, InvalidParams, NoConsensus
from gsloc.models.geometry import Camera, Pose
from gsloc.models.matching import MatchSet
from gsloc.models.pose import Match2D3D, PoseEstimate
from gsloc.schemas.config import MINIMAL_SAMPLE, RansacConfig
from gsloc.services.geometry import backproject_points

logger = logging.getLogger(__name__)

DEGENERATE_SINGULAR_RATIO = 1e-10
INITIAL_DAMPING = 1e-3
DRAW_BLOCK = 256

Intrinsics = Union[Camera, np.ndarray]
Correspondences = Union[Sequence[Match2D3D], Tuple[np.ndarray, np.ndarray]]


def _intrinsics_matrix(intrinsics: Intrinsics) -> np.ndarray:
    if isinstance(intrinsics, Camera):
        return intrinsics.intrinsics
    return np.asarray(intrinsics, dtype=np.float64).reshape(3, 3)


def _arrays(matches: Correspondences) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(matches, tuple):
        pixels, points = matches
        return (np.asarray(pixels, dtype=np.float64).reshape(-1, 2),
                np.asarray(points, dtype=np.float64).reshape(-1, 3))
    return Match2D3D.stack(matches)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def reprojection_residuals(pose: Pose, pixels: np.ndarray, points: np.ndarray, K: np.ndarray) -> np.ndarray:
    """(N, 2) の再投影残差 π(R X + t) - u（奥行きが正でない点は inf）"""
    cam = points @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    residuals = np.full((len(points), 2), np.inf)
    front = z > 0
    residuals[front, 0] = K[0, 0] * cam[front, 0] / z[front] + K[0, 2] - pixels[front, 0]
    residuals[front, 1] = K[1, 1] * cam[front, 1] / z[front] + K[1, 2] - pixels[front, 1]
    return residuals


def reprojection_errors(pose: Pose, pixels: np.ndarray, points: np.ndarray, K: np.ndarray) -> np.ndarray:
    return np.linalg.norm(reprojection_residuals(pose, pixels, points, K), axis=1)


def pnp_minimal(matches: Correspondences, intrinsics: Intrinsics) -> Pose:
    """
    正規化画像座標上の DLT で姿勢を線形に求める

    Args:
        matches: 6点以上の 2D-3D 対応
        intrinsics: カメラまたは 3x3 の K

    Returns:
        Pose: 最も近い回転行列に直交化し、点群重心の奥行きを正にした姿勢

    Raises:
        InvalidParams: 対応が6点未満の場合
        DegenerateConfiguration: 係数行列がランク落ちしている場合
    """
    pixels, points = _arrays(matches)
    if len(points) < MINIMAL_SAMPLE:
        raise InvalidParams(f"at least {MINIMAL_SAMPLE} correspondences are required", "matches")
    K = _intrinsics_matrix(intrinsics)

    rays = np.column_stack([pixels, np.ones(len(pixels))]) @ np.linalg.inv(K).T
    x = rays[:, 0] / rays[:, 2]
    y = rays[:, 1] / rays[:, 2]

    # 3次元点は重心を原点、平均距離 √3 に正規化する
    centroid = points.mean(axis=0)
    spread = np.mean(np.linalg.norm(points - centroid, axis=1))
    if spread <= 0:
        raise DegenerateConfiguration("all 3D points coincide")
    scale = math.sqrt(3.0) / spread
    T = np.diag([scale, scale, scale, 1.0])
    T[:3, 3] = -scale * centroid
    Xh = np.column_stack([(points - centroid) * scale, np.ones(len(points))])

    n = len(points)
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -x[:, None] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -y[:, None] * Xh

    _, singular, vt = np.linalg.svd(A)
    # 厳密なデータでは最小特異値は 0 になるため、2番目で退化を判定する
    if singular[-2] < DEGENERATE_SINGULAR_RATIO * singular[0]:
        raise DegenerateConfiguration(
            f"DLT system is rank deficient (singular ratio {singular[-2] / singular[0]:.3g})"
        )
    P = vt[-1].reshape(3, 4) @ T

    if (P @ np.append(centroid, 1.0))[2] < 0:
        P = -P
    u, s, vt_m = np.linalg.svd(P[:, :3])
    rotation = u @ vt_m
    if np.linalg.det(rotation) < 0:
        raise DegenerateConfiguration("DLT produced a reflection")
    translation = P[:, 3] / s.mean()
    return Pose(rotation, translation)


def retract(pose: Pose, xi) -> Pose:
    """
    接空間の更新 ξ = (ρ, φ) を左から適用する: exp(ξ)・T

    Args:
        pose (Pose): 現在の姿勢
        xi: 6次元の更新（並進 ρ、回転 φ）

    Returns:
        Pose: 更新後の姿勢
    """
    xi = np.asarray(xi, dtype=np.float64)
    rho, phi = xi[:3], xi[3:]
    theta = float(np.linalg.norm(phi))
    W = _skew(phi)
    if theta < 1e-12:
        V = np.eye(3) + 0.5 * W
    else:
        V = (
            np.eye(3)
            + (1.0 - math.cos(theta)) / theta ** 2 * W
            + (theta - math.sin(theta)) / theta ** 3 * (W @ W)
        )
    delta = Rotation.from_rotvec(phi).as_matrix()
    rotation = delta @ pose.rotation
    # 丸め誤差の蓄積を防ぐため直交化する
    u, _, vt = np.linalg.svd(rotation)
    rotation = u @ vt
    return Pose(rotation, delta @ pose.translation + V @ rho)


def reprojection_jacobian(pose: Pose, points, intrinsics: Intrinsics) -> np.ndarray:
    """
    再投影残差の ξ に関する解析的ヤコビアン

    Returns:
        np.ndarray: (N, 2, 6) の J_π・[I, -[p_c]x]
    """
    K = _intrinsics_matrix(intrinsics)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = points @ pose.rotation.T + pose.translation
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    fx, fy = K[0, 0], K[1, 1]

    j_pi = np.zeros((len(points), 2, 3))
    j_pi[:, 0, 0] = fx / z
    j_pi[:, 0, 2] = -fx * x / z ** 2
    j_pi[:, 1, 1] = fy / z
    j_pi[:, 1, 2] = -fy * y / z ** 2

    j_xi = np.zeros((len(points), 3, 6))
    j_xi[:, :, :3] = np.eye(3)
    j_xi[:, :, 3:] = -np.array([_skew(p) for p in cam])
    return j_pi @ j_xi


def refine_pose(
    initial: Pose, inliers: Correspondences, intrinsics: Intrinsics, iterations: int,
) -> Pose:
    """
    Levenberg-Marquardt で再投影誤差の二乗和を最小化する

    誤差が厳密に減る更新だけを採用し、棄却時は減衰係数を2倍にする。

    Args:
        initial (Pose): 初期姿勢
        inliers: 6点以上のインライア対応
        intrinsics: カメラまたは K
        iterations (int): 最大反復回数

    Returns:
        Pose: 改善後の姿勢（改善できなければ初期姿勢）
    """
    pixels, points = _arrays(inliers)
    if len(points) < MINIMAL_SAMPLE:
        raise InvalidParams(f"at least {MINIMAL_SAMPLE} inliers are required", "inliers")
    K = _intrinsics_matrix(intrinsics)

    pose = initial
    residuals = reprojection_residuals(pose, pixels, points, K)
    cost = float(np.sum(residuals ** 2))
    damping = INITIAL_DAMPING
    accepted = 0
    for _ in range(iterations):
        if not np.isfinite(cost) or cost == 0.0:
            break
        J = reprojection_jacobian(pose, points, K).reshape(-1, 6)
        r = residuals.reshape(-1)
        H = J.T @ J
        g = J.T @ r
        try:
            step = -np.linalg.solve(H + damping * np.diag(np.diag(H)), g)
        except np.linalg.LinAlgError:
            break
        candidate = retract(pose, step)
        candidate_residuals = reprojection_residuals(candidate, pixels, points, K)
        candidate_cost = float(np.sum(candidate_residuals ** 2))
        if candidate_cost < cost:
            pose, residuals, cost = candidate, candidate_residuals, candidate_cost
            damping *= 0.5
            accepted += 1
        else:
            damping *= 2.0
    logger.debug(f"Pose refinement: {accepted} accepted steps, final cost {cost:.6g}")
    return pose


def _draws(rng: np.random.Generator, n: int):
    """シードで決まる最小サンプルの列を順に返す"""
    while True:
        for _ in range(DRAW_BLOCK):
            yield rng.choice(n, MINIMAL_SAMPLE, replace=False)


def required_iterations(inlier_ratio: float, confidence: float) -> float:
    """log(1 - confidence) / log(1 - ρ^6)"""
    if inlier_ratio >= 1.0:
        return 0.0
    if inlier_ratio <= 0.0:
        return math.inf
    denominator = math.log(1.0 - inlier_ratio ** MINIMAL_SAMPLE)
    if denominator == 0.0:
        return math.inf
    return math.log(1.0 - confidence) / denominator


def ransac_pnp(
    matches: Correspondences, intrinsics: Intrinsics, config: Optional[RansacConfig] = None,
) -> PoseEstimate:
    """
    RANSAC と DLT で外れ値に頑健な姿勢を推定する

    Args:
        matches: 2D-3D 対応
        intrinsics: カメラまたは K
        config (RansacConfig): 閾値、反復回数、信頼度、シード

    Returns:
        PoseEstimate: 最終インライアで改善した姿勢とインライアフラグ

    Raises:
        InvalidParams: 対応が6点未満の場合
        NoConsensus: 最良仮説のインライア数が min_inliers 未満の場合
    """
    config = config or RansacConfig()
    pixels, points = _arrays(matches)
    n = len(points)
    if n < MINIMAL_SAMPLE:
        raise InvalidParams(f"at least {MINIMAL_SAMPLE} matches are required (got {n})", "matches")
    K = _intrinsics_matrix(intrinsics)
    threshold = config.threshold_px

    rng = np.random.default_rng(config.seed)
    best_pose, best_count = None, -1
    needed = math.inf
    iterations = 0
    for iterations, sample in enumerate(_draws(rng, n), start=1):
        if iterations > config.max_iterations:
            iterations -= 1
            break
        try:
            pose = pnp_minimal((pixels[sample], points[sample]), K)
        except DegenerateConfiguration:
            continue
        count = int(np.count_nonzero(reprojection_errors(pose, pixels, points, K) < threshold))
        # 同数なら先に見つかった仮説を残す
        if count > best_count:
            best_pose, best_count = pose, count
            needed = required_iterations(count / n, config.confidence)
        if iterations >= needed:
            break

    if best_pose is None or best_count < config.min_inliers:
        logger.error(f"RANSAC failed: {max(best_count, 0)} inliers after {iterations} iterations")
        raise NoConsensus(max(best_count, 0), config.min_inliers)

    mask = reprojection_errors(best_pose, pixels, points, K) < threshold
    pose = best_pose
    if config.refine_iterations > 0 and mask.sum() >= MINIMAL_SAMPLE:
        refined = refine_pose(best_pose, (pixels[mask], points[mask]), K, config.refine_iterations)
        refined_mask = reprojection_errors(refined, pixels, points, K) < threshold
        if refined_mask.sum() >= mask.sum():
            pose, mask = refined, refined_mask

    errors = reprojection_errors(pose, pixels, points, K)
    mean_error = float(errors[mask].mean()) if mask.any() else 0.0
    estimate = PoseEstimate(pose, mask, mean_error, iterations, threshold)
    logger.info(
        f"RANSAC PnP: {estimate.inlier_count}/{n} inliers, "
        f"mean error {mean_error:.4f}px, {iterations} iterations"
    )
    return estimate


def lift_to_3d(
    matches: MatchSet, depth_map: np.ndarray, render_pose: Pose, intrinsics: Camera,
) -> Tuple[List[Match2D3D], int]:
    """
    描画ビュー側の端点を深度マップで3次元に持ち上げる

    Args:
        matches (MatchSet): 画素座標付きの 2D-2D マッチ（query_points がクエリ、reference_points が描画ビュー）
        depth_map (np.ndarray): (H, W) の奥行き（未定義は NaN）
        render_pose (Pose): 描画時の姿勢
        intrinsics (Camera): 描画カメラの内部パラメータ

    Returns:
        Tuple[List[Match2D3D], int]: 持ち上げた対応と、深度が無効で捨てた件数
    """
    if len(matches) == 0:
        return [], 0
    height, width = depth_map.shape
    cell_u = intrinsics.width / width
    cell_v = intrinsics.height / height
    ref = matches.reference_points
    cols = np.floor(ref[:, 0] / cell_u).astype(np.int64)
    rows = np.floor(ref[:, 1] / cell_v).astype(np.int64)
    inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
    depths = np.full(len(matches), np.nan)
    depths[inside] = depth_map[rows[inside], cols[inside]]
    keep = matches.valid & np.isfinite(depths) & (depths > 0)

    camera = intrinsics.with_pose(render_pose)
    world = backproject_points(camera, ref[keep], depths[keep])
    lifted = Match2D3D.from_arrays(matches.query_points[keep], world, matches.scores[keep])
    dropped = int(np.count_nonzero(matches.valid)) - len(lifted)
    if dropped:
        logger.debug(f"Lifting dropped {dropped} matches without valid depth")
    return lifted, dropped
