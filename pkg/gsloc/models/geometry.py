"""
幾何モデル

SE(3) 姿勢、ピンホールカメラ、画素座標の値オブジェクトを定義する。
すべて生成後は不変で、配列は書き込み禁止にしている。
"""
from dataclasses import dataclass, field
from typing import Optional
import math

import numpy as np
from scipy.spatial.transform import Rotation

ORTHONORMAL_TOLERANCE = 1e-9


def _frozen_array(values, shape: tuple, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64)
    if array.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must be finite")
    array.setflags(write=False)
    return array


def rotation_from_quaternion(quaternion) -> np.ndarray:
    """
    四元数（x, y, z, w の順）から回転行列を求める

    Args:
        quaternion: 4要素の四元数（正規化されていなくてもよい）

    Returns:
        np.ndarray: 3x3 の回転行列
    """
    return Rotation.from_quat(np.asarray(quaternion, dtype=np.float64)).as_matrix()


@dataclass(frozen=True, eq=False)
class Pose:
    """
    ワールド座標系からカメラ座標系への剛体変換

    Attributes:
        rotation (np.ndarray): 3x3 の正規直交行列（det = +1）
        translation (np.ndarray): 並進ベクトル。カメラ中心は C = -R^T t
        quaternion (Optional[np.ndarray]): 回転の生成元の四元数（保存時に無損失で書き出す）
    """
    rotation: np.ndarray
    translation: np.ndarray
    quaternion: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        rotation = _frozen_array(self.rotation, (3, 3), "rotation")
        translation = _frozen_array(self.translation, (3,), "translation")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)
        if self.quaternion is not None:
            object.__setattr__(self, "quaternion", _frozen_array(self.quaternion, (4,), "quaternion"))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]))

    @classmethod
    def from_quaternion(cls, quaternion, translation) -> "Pose":
        """
        四元数と並進から姿勢を生成する

        同じ四元数からは常にビット単位で同じ回転行列が得られるため、
        四元数を保存すれば姿勢を無損失で復元できる。

        Args:
            quaternion: x, y, z, w の順の四元数
            translation: 並進ベクトル

        Returns:
            Pose: 生成された姿勢
        """
        q = np.asarray(quaternion, dtype=np.float64)
        return cls(rotation_from_quaternion(q), translation, q)

    @classmethod
    def look_at(cls, center, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """
        カメラ中心から注視点を向く姿勢を生成する

        Args:
            center: カメラ中心（ワールド座標）
            target: 注視点（ワールド座標）
            up: 上方向の目安

        Returns:
            Pose: 光軸 (+z) が注視点を向く姿勢
        """
        center = np.asarray(center, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - center
        forward /= np.linalg.norm(forward)
        up = np.asarray(up, dtype=np.float64)
        if abs(np.dot(forward, up)) > 1.0 - 1e-6:
            up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.vstack([right, down, forward])
        # 四元数経由で正規化し、保存と復元を一致させる
        quaternion = Rotation.from_matrix(rotation).as_quat()
        return cls.from_quaternion(quaternion, -rotation_from_quaternion(quaternion) @ center)

    @property
    def center(self) -> np.ndarray:
        """カメラ中心 C = -R^T t"""
        return -self.rotation.T @ self.translation

    def to_quaternion(self) -> np.ndarray:
        if self.quaternion is not None:
            return self.quaternion.copy()
        return Rotation.from_matrix(self.rotation).as_quat()

    def transform(self, points) -> np.ndarray:
        """
        ワールド座標の点をカメラ座標に変換する

        Args:
            points: (3,) または (N, 3) の点

        Returns:
            np.ndarray: カメラ座標の点（入力と同じ形状）
        """
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def inverse_transform(self, points) -> np.ndarray:
        """カメラ座標の点をワールド座標に戻す"""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.translation) @ self.rotation

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other（other を先に適用する）"""
        return Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __repr__(self) -> str:
        c = self.center
        return f"<Pose(center=({c[0]:.4f}, {c[1]:.4f}, {c[2]:.4f}))>"


@dataclass(frozen=True, eq=False)
class Camera:
    """
    ピンホールカメラ

    Attributes:
        fx, fy (float): 焦点距離（画素）
        cx, cy (float): 主点（画素）
        width, height (int): 画像サイズ（画素）
        pose (Pose): ワールド→カメラの外部パラメータ
    """
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width):
            raise ValueError("cx must lie inside the image")
        if not (0 < self.cy < self.height):
            raise ValueError("cy must lie inside the image")

    @property
    def intrinsics(self) -> np.ndarray:
        """3x3 の内部パラメータ行列 K"""
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    def with_pose(self, pose: Pose) -> "Camera":
        """内部パラメータを保ったまま姿勢だけ差し替える"""
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)


@dataclass(frozen=True)
class PixelPoint:
    """サブピクセル精度の画素座標"""
    u: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.u) and math.isfinite(self.v)):
            raise ValueError("pixel coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.u, self.v])
