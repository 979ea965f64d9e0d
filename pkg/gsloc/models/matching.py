"""
対応付けモデル

類似度行列、各段階のマッチ集合、特徴グリッドを定義する。
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np


class MatchStage(str, Enum):
    """マッチ集合の段階"""
    COARSE_SPARSE = "coarse-sparse"
    COARSE_DENSE = "coarse-dense"
    LGCV_FILTERED = "lgcv-filtered"
    FINE = "fine"


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """
    クエリ記述子と参照記述子のコサイン類似度

    Attributes:
        values (np.ndarray): (M, N) の類似度 [-1, 1]
        probabilities (Optional[np.ndarray]): dual-softmax の確率行列
    """
    values: np.ndarray
    probabilities: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("similarity must be a 2D matrix")
        if self.probabilities is not None:
            if self.probabilities.shape != self.values.shape:
                raise ValueError("probabilities must match the similarity shape")
            if np.any(self.probabilities < 0.0) or np.any(self.probabilities > 1.0):
                raise ValueError("probabilities must lie in [0, 1]")

    @property
    def shape(self):
        return self.values.shape

    def with_probabilities(self, probabilities: np.ndarray) -> "SimilarityMatrix":
        return replace(self, probabilities=probabilities)


@dataclass(frozen=True, eq=False)
class MatchSet:
    """
    1段階分の対応集合

    Attributes:
        query_indices (np.ndarray): クエリ側の番号
        reference_indices (np.ndarray): 参照側の番号（ランドマークまたはセル）
        scores (np.ndarray): 類似度または確率
        stage (MatchStage): 段階
        valid (Optional[np.ndarray]): 有効フラグ（省略時はすべて有効）
        query_points (Optional[np.ndarray]): (M, 2) クエリ側の画素座標
        reference_points (Optional[np.ndarray]): (M, 2) 参照側の画素座標
    """
    query_indices: np.ndarray
    reference_indices: np.ndarray
    scores: np.ndarray
    stage: MatchStage
    valid: Optional[np.ndarray] = None
    query_points: Optional[np.ndarray] = None
    reference_points: Optional[np.ndarray] = None

    def __post_init__(self):
        q = np.asarray(self.query_indices, dtype=np.int64).reshape(-1)
        r = np.asarray(self.reference_indices, dtype=np.int64).reshape(-1)
        s = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not (len(q) == len(r) == len(s)):
            raise ValueError("match arrays must have equal length")
        if len(np.unique(q)) != len(q):
            raise ValueError("a query index may appear at most once per stage")
        valid = np.ones(len(q), dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        if len(valid) != len(q):
            raise ValueError("valid mask must match the number of matches")
        object.__setattr__(self, "query_indices", q)
        object.__setattr__(self, "reference_indices", r)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "valid", valid)
        for name in ("query_points", "reference_points"):
            points = getattr(self, name)
            if points is not None:
                points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
                if len(points) != len(q):
                    raise ValueError(f"{name} must match the number of matches")
                object.__setattr__(self, name, points)

    def __len__(self) -> int:
        return len(self.query_indices)

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    def select(self, mask, stage: Optional[MatchStage] = None) -> "MatchSet":
        """mask で選んだマッチだけを持つ新しい集合を返す"""
        mask = np.asarray(mask, dtype=bool)
        return MatchSet(
            query_indices=self.query_indices[mask],
            reference_indices=self.reference_indices[mask],
            scores=self.scores[mask],
            stage=stage or self.stage,
            valid=self.valid[mask],
            query_points=None if self.query_points is None else self.query_points[mask],
            reference_points=None if self.reference_points is None else self.reference_points[mask],
        )

    @classmethod
    def empty(cls, stage: MatchStage) -> "MatchSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), stage,
                   query_points=np.zeros((0, 2)), reference_points=np.zeros((0, 2)))


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """
    画素格子上の特徴マップ

    Attributes:
        features (np.ndarray): (H, W, D) の特徴
        valid (np.ndarray): (H, W) 特徴を持つセル
        cell_size (float): 1セルあたりの画素数
    """
    features: np.ndarray
    valid: np.ndarray
    cell_size: float = 1.0

    def __post_init__(self):
        if self.features.ndim != 3 or self.valid.shape != self.features.shape[:2]:
            raise ValueError("feature grid must be (H, W, D) with an (H, W) validity mask")

    @property
    def height(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    def valid_cells(self) -> np.ndarray:
        """有効セルの (row, col) を行優先順で返す"""
        return np.argwhere(self.valid)

    def cell_centers(self, cells) -> np.ndarray:
        """(row, col) のセル中心を (u, v) 画素座標で返す"""
        cells = np.asarray(cells).reshape(-1, 2)
        return (cells[:, ::-1] + 0.5) * self.cell_size


@dataclass(frozen=True)
class SweepCell:
    """
    LGCV 閾値スイープの1セル

    Attributes:
        tau_a (float): 角度閾値
        tau_s (float): スケール閾値
        precision (float): 残したマッチのうち正解の割合
        recall (float): 正解マッチのうち残した割合
        kept (int): 残したマッチ数（全試行の合計）
        total (int): 入力マッチ数（全試行の合計）
    """
    tau_a: float
    tau_s: float
    precision: float
    recall: float
    kept: int
    total: int
