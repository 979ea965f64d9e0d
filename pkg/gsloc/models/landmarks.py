"""
ランドマークモデル

合意スコア、融合重み、ランドマークデータベースを定義する。
"""
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class ConsensusScores:
    """
    ガウシアンごとの合意スコア

    Attributes:
        scores (np.ndarray): (N,) 非負整数のスコア
        tau_d (float): キーポイント距離の閾値（画素）
        view_count (int): 集計に使ったビュー数
    """
    scores: np.ndarray
    tau_d: float
    view_count: int

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.int64)
        if np.any(scores < 0) or np.any(scores > self.view_count):
            raise ValueError("scores must lie in [0, view_count]")
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return len(self.scores)


@dataclass(frozen=True, eq=False)
class FusionWeights:
    """
    1つのガウシアンに対するビューごとの融合重み

    Attributes:
        view_indices (np.ndarray): 可視ビューの番号
        raw (np.ndarray): 法線と視線方向の内積（下限 ε_w で切り上げ済み）
        normalized (np.ndarray): 和が1になる重み
    """
    view_indices: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray

    def __post_init__(self):
        if not (len(self.view_indices) == len(self.raw) == len(self.normalized)):
            raise ValueError("fusion weight arrays must have equal length")
        if np.any(self.normalized < 0) or abs(float(np.sum(self.normalized)) - 1.0) > 1e-12:
            raise ValueError("normalized weights must be non-negative and sum to 1")

    def __len__(self) -> int:
        return len(self.view_indices)


@dataclass(frozen=True, eq=False)
class LandmarkDB:
    """
    サンプリングされたランドマークと融合特徴

    Attributes:
        indices (np.ndarray): シーンのガウシアン番号（昇順、重複なし）
        features (Optional[np.ndarray]): (L, D) の融合特徴（未融合なら None）
        tau_d (float): サンプリングに使った距離閾値
        n (int): アンカー数
        k (int): 近傍数
        seed (int): サンプリングのシード
        scene_hash (Optional[str]): 元シーンファイルのハッシュ
    """
    indices: np.ndarray
    features: Optional[np.ndarray] = field(default=None, repr=False)
    tau_d: float = 1.0
    n: int = 1
    k: int = 1
    seed: int = 0
    scene_hash: Optional[str] = None

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if len(np.unique(indices)) != len(indices):
            raise ValueError("landmark indices must be unique")
        object.__setattr__(self, "indices", indices)
        if self.features is not None:
            features = np.asarray(self.features, dtype=np.float64)
            if features.ndim != 2 or len(features) != len(indices):
                raise ValueError("features must be an (L, D) array matching the indices")
            object.__setattr__(self, "features", features)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def has_features(self) -> bool:
        return self.features is not None

    def with_features(self, indices, features) -> "LandmarkDB":
        return replace(self, indices=np.asarray(indices, dtype=np.int64), features=features)

    def with_scene_hash(self, scene_hash: str) -> "LandmarkDB":
        return replace(self, scene_hash=scene_hash)
