"""
姿勢推定モデル

2D-3D 対応と RANSAC による姿勢推定結果を定義する。
"""
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from gsloc.models.geometry import PixelPoint, Pose, _frozen_array


@dataclass(frozen=True, eq=False)
class Match2D3D:
    """
    クエリ画素とワールド座標の点の対応

    Attributes:
        pixel (PixelPoint): クエリ画像上の画素
        world_point (np.ndarray): ワールド座標の3次元点
        score (float): マッチのスコア
    """
    pixel: PixelPoint
    world_point: np.ndarray
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "world_point", _frozen_array(self.world_point, (3,), "world_point"))

    @staticmethod
    def stack(matches: Sequence["Match2D3D"]) -> Tuple[np.ndarray, np.ndarray]:
        """対応列を (N, 2) の画素と (N, 3) の点に変換する"""
        pixels = np.array([m.pixel.as_array() for m in matches]).reshape(-1, 2)
        points = np.array([m.world_point for m in matches]).reshape(-1, 3)
        return pixels, points

    @classmethod
    def from_arrays(cls, pixels, points, scores=None) -> list:
        pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        scores = np.ones(len(pixels)) if scores is None else np.asarray(scores, dtype=np.float64)
        return [
            cls(PixelPoint(float(u), float(v)), x, float(s))
            for (u, v), x, s in zip(pixels, points, scores)
        ]


@dataclass(frozen=True, eq=False)
class PoseEstimate:
    """
    RANSAC と非線形最適化による姿勢推定結果

    Attributes:
        pose (Pose): 推定姿勢
        inlier_mask (np.ndarray): インライアフラグ
        mean_error (float): インライアの平均再投影誤差（画素）
        iterations (int): 使った RANSAC 反復回数
        threshold_px (float): インライア判定の閾値
    """
    pose: Pose
    inlier_mask: np.ndarray = field(repr=False)
    mean_error: float
    iterations: int
    threshold_px: float

    def __post_init__(self):
        object.__setattr__(self, "inlier_mask", np.asarray(self.inlier_mask, dtype=bool))
        if self.inlier_count and self.mean_error > self.threshold_px:
            raise ValueError("mean inlier error must not exceed the threshold")

    @property
    def inlier_count(self) -> int:
        return int(np.count_nonzero(self.inlier_mask))

    @property
    def inlier_ratio(self) -> float:
        return self.inlier_count / len(self.inlier_mask) if len(self.inlier_mask) else 0.0
