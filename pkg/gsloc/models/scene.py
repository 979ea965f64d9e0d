"""
シーンモデル

ガウシアン、合成シーン、ビューごとの観測、キーポイント集合を定義する。
"""
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Optional, Tuple

import numpy as np

from gsloc.models.geometry import Camera, PixelPoint, _frozen_array, rotation_from_quaternion
from gsloc.schemas.config import SceneConfig


@dataclass(frozen=True, eq=False)
class Gaussian:
    """
    3次元ガウシアン

    Attributes:
        center (np.ndarray): 中心座標
        scales (np.ndarray): 局所軸ごとのスケール（すべて正）
        orientation (np.ndarray): 局所スケール軸の回転行列
        opacity (float): 不透明度 (0, 1]
        true_feature (np.ndarray): 潜在的な真の特徴 μ
        stored_feature (Optional[np.ndarray]): 学習または融合で得た特徴
        textured (bool): キーポイントを生むガウシアンかどうか
        quaternion (Optional[np.ndarray]): 向きの生成元の四元数
    """
    center: np.ndarray
    scales: np.ndarray
    orientation: np.ndarray
    opacity: float
    true_feature: np.ndarray
    stored_feature: Optional[np.ndarray] = None
    textured: bool = False
    quaternion: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen_array(self.center, (3,), "center"))
        scales = _frozen_array(self.scales, (3,), "scales")
        if np.any(scales <= 0):
            raise ValueError("scales must be positive")
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "orientation", _frozen_array(self.orientation, (3, 3), "orientation"))
        if not (0.0 < self.opacity <= 1.0):
            raise ValueError("opacity must lie in (0, 1]")
        feature = np.array(self.true_feature, dtype=np.float64)
        object.__setattr__(self, "true_feature", _frozen_array(feature, feature.shape, "true_feature"))
        if self.stored_feature is not None:
            stored = np.array(self.stored_feature, dtype=np.float64)
            object.__setattr__(self, "stored_feature", _frozen_array(stored, stored.shape, "stored_feature"))
        if self.quaternion is not None:
            object.__setattr__(self, "quaternion", _frozen_array(self.quaternion, (4,), "quaternion"))

    @classmethod
    def from_quaternion(cls, center, scales, quaternion, opacity, true_feature, **kwargs) -> "Gaussian":
        q = np.asarray(quaternion, dtype=np.float64)
        return cls(center, scales, rotation_from_quaternion(q), float(opacity), true_feature,
                   quaternion=q, **kwargs)

    @property
    def covariance(self) -> np.ndarray:
        """3x3 共分散行列 R S S^T R^T"""
        rs = self.orientation * self.scales
        return rs @ rs.T

    def with_feature(self, feature) -> "Gaussian":
        return replace(self, stored_feature=np.asarray(feature, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """
    1ビュー分のキーポイントと記述子

    Attributes:
        pixels (np.ndarray): (M, 2) の画素座標
        descriptors (np.ndarray): (M, D) の記述子
        gaussian_ids (np.ndarray): 元になったガウシアンの番号（クラッターは -1）
    """
    pixels: np.ndarray
    descriptors: np.ndarray
    gaussian_ids: np.ndarray

    def __post_init__(self):
        if not (len(self.pixels) == len(self.descriptors) == len(self.gaussian_ids)):
            raise ValueError("keypoint arrays must have equal length")

    def __len__(self) -> int:
        return len(self.pixels)

    def __iter__(self) -> Iterator[Tuple[PixelPoint, np.ndarray]]:
        for (u, v), descriptor in zip(self.pixels, self.descriptors):
            yield PixelPoint(float(u), float(v)), descriptor

    @property
    def is_clutter(self) -> np.ndarray:
        return self.gaussian_ids < 0

    @classmethod
    def empty(cls, feature_dim: int) -> "KeypointSet":
        return cls(np.zeros((0, 2)), np.zeros((0, feature_dim)), np.zeros(0, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class ViewObservation:
    """
    1ビューにおける全ガウシアンの2D観測

    Attributes:
        camera_index (Optional[int]): 学習ビューの番号（クエリの場合 None）
        visible (np.ndarray): (N,) 可視フラグ
        features (np.ndarray): (N, D) 観測特徴 f_k^2D（不可視の行は NaN）
        pixels (np.ndarray): (N, 2) 投影座標
        depths (np.ndarray): (N,) カメラ座標の奥行き
    """
    camera_index: Optional[int]
    visible: np.ndarray
    features: np.ndarray
    pixels: np.ndarray
    depths: np.ndarray

    @property
    def visible_indices(self) -> np.ndarray:
        return np.flatnonzero(self.visible)


@dataclass(frozen=True, eq=False)
class Scene:
    """
    正解の合成シーン

    Attributes:
        gaussians (Tuple[Gaussian, ...]): 順序付きのガウシアン列
        cameras (Tuple[Camera, ...]): 学習ビューのカメラ
        noise_cov (np.ndarray): 対角の D x D 共分散 Σ
        keypoints_per_view (Tuple[KeypointSet, ...]): ビューごとのキーポイント
        seed (int): 乱数シード
        config (SceneConfig): 生成設定
    """
    gaussians: Tuple[Gaussian, ...]
    cameras: Tuple[Camera, ...]
    noise_cov: np.ndarray
    keypoints_per_view: Tuple[KeypointSet, ...]
    seed: int
    config: SceneConfig

    def __post_init__(self):
        if np.any(np.diag(self.noise_cov) < 0):
            raise ValueError("noise covariance entries must be non-negative")
        for camera, keypoints in zip(self.cameras, self.keypoints_per_view):
            px = keypoints.pixels
            if len(px) and (
                np.any(px < 0) or np.any(px[:, 0] > camera.width) or np.any(px[:, 1] > camera.height)
            ):
                raise ValueError("keypoints must lie inside their image bounds")

    @property
    def n_gaussians(self) -> int:
        return len(self.gaussians)

    @property
    def n_views(self) -> int:
        return len(self.cameras)

    @property
    def feature_dim(self) -> int:
        return self.noise_cov.shape[0]

    @cached_property
    def centers(self) -> np.ndarray:
        return np.array([g.center for g in self.gaussians]).reshape(-1, 3)

    @cached_property
    def true_features(self) -> np.ndarray:
        return np.array([g.true_feature for g in self.gaussians]).reshape(-1, self.feature_dim)

    @cached_property
    def opacities(self) -> np.ndarray:
        return np.array([g.opacity for g in self.gaussians])

    @cached_property
    def scales(self) -> np.ndarray:
        return np.array([g.scales for g in self.gaussians]).reshape(-1, 3)

    @cached_property
    def textured(self) -> np.ndarray:
        return np.array([g.textured for g in self.gaussians], dtype=bool)

    @cached_property
    def camera_centers(self) -> np.ndarray:
        return np.array([c.center for c in self.cameras]).reshape(-1, 3)

    def __repr__(self) -> str:
        return (
            f"<Scene(gaussians={self.n_gaussians}, views={self.n_views}, "
            f"D={self.feature_dim}, seed={self.seed})>"
        )
