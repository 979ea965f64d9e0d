"""
幾何サービス

ピンホール投影、視錐台判定、視線方向、姿勢誤差を実装する。
他のすべてのサービスから利用される。
"""
from typing import Tuple
import logging

import numpy as np

from gsloc.exceptions import DegenerateDirection, NonPositiveDepth
from gsloc.models.geometry import Camera, PixelPoint, Pose

logger = logging.getLogger(__name__)

DIRECTION_EPSILON = 1e-12


def project(camera: Camera, point) -> Tuple[PixelPoint, float]:
    """
    ワールド座標の点を画素に投影する

    Args:
        camera (Camera): 投影するカメラ
        point: ワールド座標の3次元点

    Returns:
        Tuple[PixelPoint, float]: 投影座標とカメラ座標系の奥行き

    Raises:
        NonPositiveDepth: 点がカメラ平面上または背後にある場合
    """
    x, y, z = camera.pose.transform(point)
    if z <= 0:
        raise NonPositiveDepth(float(z))
    return PixelPoint(camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy), float(z)


def project_points(camera: Camera, points) -> Tuple[np.ndarray, np.ndarray]:
    """
    複数の点をまとめて投影する

    奥行きが正でない点の画素座標は NaN になる。

    Args:
        camera (Camera): 投影するカメラ
        points: (N, 3) のワールド座標

    Returns:
        Tuple[np.ndarray, np.ndarray]: (N, 2) の画素座標と (N,) の奥行き
    """
    cam = camera.pose.transform(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    depth = cam[:, 2]
    pixels = np.full((len(cam), 2), np.nan)
    front = depth > 0
    pixels[front, 0] = camera.fx * cam[front, 0] / depth[front] + camera.cx
    pixels[front, 1] = camera.fy * cam[front, 1] / depth[front] + camera.cy
    return pixels, depth


def backproject(camera: Camera, pixel, depth: float) -> np.ndarray:
    """
    画素と奥行きからワールド座標の点を復元する

    Args:
        camera (Camera): カメラ
        pixel: PixelPoint または (u, v)
        depth (float): カメラ座標系の奥行き

    Returns:
        np.ndarray: ワールド座標の3次元点
    """
    u, v = (pixel.u, pixel.v) if isinstance(pixel, PixelPoint) else pixel
    cam = np.array([
        (u - camera.cx) / camera.fx * depth,
        (v - camera.cy) / camera.fy * depth,
        depth,
    ])
    return camera.pose.inverse_transform(cam)


def backproject_points(camera: Camera, pixels, depths) -> np.ndarray:
    """(N, 2) の画素と (N,) の奥行きをまとめてワールド座標に戻す"""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    depths = np.asarray(depths, dtype=np.float64).reshape(-1)
    cam = np.column_stack([
        (pixels[:, 0] - camera.cx) / camera.fx * depths,
        (pixels[:, 1] - camera.cy) / camera.fy * depths,
        depths,
    ])
    return camera.pose.inverse_transform(cam)


def in_frustum(camera: Camera, point, margin: float = 0.0) -> bool:
    """
    点が画像範囲（余白付き）に投影されるかを判定する

    Args:
        camera (Camera): カメラ
        point: ワールド座標の3次元点
        margin (float): 画像境界の外側に許す余白（画素）

    Returns:
        bool: 奥行きが正で [-margin, W+margin] x [-margin, H+margin] に入る場合True
    """
    return bool(in_frustum_points(camera, np.asarray(point).reshape(1, 3), margin)[0])


def in_frustum_points(camera: Camera, points, margin: float = 0.0) -> np.ndarray:
    """in_frustum のベクトル版"""
    pixels, depth = project_points(camera, points)
    with np.errstate(invalid="ignore"):
        inside = (
            (pixels[:, 0] >= -margin) & (pixels[:, 0] <= camera.width + margin)
            & (pixels[:, 1] >= -margin) & (pixels[:, 1] <= camera.height + margin)
        )
    return (depth > 0) & inside


def viewing_direction(center, camera: Camera) -> np.ndarray:
    """
    ガウシアン中心からカメラ中心への単位ベクトルを求める

    Args:
        center: ガウシアン中心 μ
        camera (Camera): カメラ

    Returns:
        np.ndarray: d = (C - μ) / ||C - μ||

    Raises:
        DegenerateDirection: カメラ中心とガウシアン中心が一致する場合
    """
    offset = camera.center - np.asarray(center, dtype=np.float64)
    norm = float(np.linalg.norm(offset))
    if norm < DIRECTION_EPSILON:
        raise DegenerateDirection(norm)
    return offset / norm


def rotation_error_deg(estimate: np.ndarray, truth: np.ndarray) -> float:
    """
    arccos((trace(R̂^T R) - 1) / 2) を度で返す

    arccos は単位回転付近で桁落ちするため、同じ角度を atan2(sin, cos) で求める。
    sin は相対回転の反対称成分から得る。
    """
    relative = estimate.T @ truth
    # 丸め誤差で定義域を外れないよう切り詰める
    cos_angle = np.clip((np.trace(relative) - 1.0) / 2.0, -1.0, 1.0)
    axis = np.array([
        relative[2, 1] - relative[1, 2],
        relative[0, 2] - relative[2, 0],
        relative[1, 0] - relative[0, 1],
    ])
    sin_angle = np.linalg.norm(axis) / 2.0
    return float(np.degrees(np.arctan2(sin_angle, cos_angle)))


def pose_error(estimate: Pose, truth: Pose) -> Tuple[float, float]:
    """
    推定姿勢と正解姿勢の誤差を求める

    Args:
        estimate (Pose): 推定姿勢
        truth (Pose): 正解姿勢

    Returns:
        Tuple[float, float]: 並進誤差（シーン単位）と回転誤差（度）
    """
    translation_error = float(np.linalg.norm(estimate.translation - truth.translation))
    return translation_error, rotation_error_deg(estimate.rotation, truth.rotation)
