"""
バイアス解析モデル

α ブレンド分解、バイアス推定結果、特徴距離ヒストグラムを定義する。
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class BlendDecomposition:
    """
    対象ガウシアンのビューごとの寄与重みと背景特徴

    Attributes:
        weights (np.ndarray): (K,) 累積重み w_k = α_t T_t
        backgrounds (np.ndarray): (K, D) 正規化背景特徴 B_k
        view_indices (Optional[np.ndarray]): 元になったビュー番号
    """
    weights: np.ndarray
    backgrounds: np.ndarray
    view_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        backgrounds = np.asarray(self.backgrounds, dtype=np.float64)
        if backgrounds.ndim != 2 or len(backgrounds) != len(weights):
            raise ValueError("backgrounds must be a (K, D) array matching the weights")
        if np.any(weights < 0) or np.any(weights > 1):
            raise ValueError("weights must lie in [0, 1]")
        if not np.all(np.isfinite(backgrounds[weights < 1])):
            raise ValueError("backgrounds must be finite where the weight is below 1")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "backgrounds", backgrounds)

    @property
    def view_count(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class BiasReport:
    """
    α ブレンド最適解のバイアス推定結果

    Attributes:
        optimal_feature (np.ndarray): 試行平均した f_t*
        analytic_bias (np.ndarray): 重み正規化和による解析的バイアス
        empirical_bias (np.ndarray): 試行平均 - μ
        simplified_bias (Optional[np.ndarray]): 単一ビュー近似のバイアス（w_k > 0 のときのみ）
        trials (int): 試行回数
        stderr (np.ndarray): 成分ごとの標準誤差
    """
    optimal_feature: np.ndarray
    analytic_bias: np.ndarray
    empirical_bias: np.ndarray
    simplified_bias: Optional[np.ndarray]
    trials: int
    stderr: np.ndarray

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if np.any(self.stderr < 0):
            raise ValueError("standard errors must be non-negative")

    def within(self, n_sigma: float = 4.0) -> np.ndarray:
        """成分ごとに |経験 - 解析| <= n_sigma * 標準誤差 かどうか"""
        return np.abs(self.empirical_bias - self.analytic_bias) <= n_sigma * self.stderr + 1e-12


@dataclass(frozen=True, eq=False)
class DistanceHistogram:
    """
    ガウシアンごとの特徴距離の分布

    Attributes:
        edges (np.ndarray): [0, 2] 上のビン境界
        counts (np.ndarray): ビンごとの個数
        mean (float): 平均距離
        method (str): 特徴の出所（alpha_optimum または fused）
        distances (np.ndarray): ガウシアンごとの距離
        gaussian_indices (np.ndarray): distances に対応するガウシアン番号
    """
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    method: str
    distances: np.ndarray = field(repr=False)
    gaussian_indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        if int(np.sum(self.counts)) != len(self.distances):
            raise ValueError("histogram counts must sum to the number of scored Gaussians")

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))
