"""
LGCV 閾値スイープサービス

正解ラベル付きの合成マッチ集合を作り、角度閾値とスケール閾値の格子上で
LGCV の適合率・再現率・残存数を集計する。
"""
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.spatial.transform import Rotation

from gsloc.exceptions import InvalidParams, TooFewMatches
from gsloc.models.matching import SweepCell
from gsloc.schemas.config import LGCVConfig
from gsloc.services.matching import lgcv_filter, match_precision
from gsloc.services.synthesis import stream

logger = logging.getLogger(__name__)

STREAM_SWEEP = 7
IMAGE_SIZE = (320.0, 240.0)


def similarity_transform(points: np.ndarray, scale: float, angle: float, shift) -> np.ndarray:
    """2次元の相似変換 y = s R(θ) x + t を適用する"""
    rotation = Rotation.from_euler("z", angle).as_matrix()[:2, :2]
    return scale * points @ rotation.T + np.asarray(shift, dtype=np.float64)


def synthetic_match_set(
    n_matches: int,
    outlier_fraction: float,
    rng: np.random.Generator,
    noise_px: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    正解ラベル付きの合成マッチ集合を生成する

    正解マッチは画像内の一様な点に1つの相似変換を掛けたもの、
    誤マッチは参照側の点を画像内で一様に置き換えたもの。

    Args:
        n_matches (int): マッチ数
        outlier_fraction (float): 誤マッチの割合 [0, 1]
        rng (np.random.Generator): 乱数
        noise_px (float): 正解マッチの参照側に加える位置ノイズ

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: クエリ点、参照点、正解ラベル
    """
    if not 0.0 <= outlier_fraction <= 1.0:
        raise InvalidParams("outlier fraction must lie in [0, 1]", "outlier_fraction")
    width, height = IMAGE_SIZE
    points_x = rng.uniform((0.0, 0.0), (width, height), size=(n_matches, 2))
    scale = rng.uniform(0.8, 1.25)
    angle = rng.uniform(-np.pi, np.pi)
    shift = rng.uniform(-20.0, 20.0, size=2)
    centered = points_x - np.array([width, height]) / 2
    points_y = similarity_transform(centered, scale, angle, shift) + np.array([width, height]) / 2
    if noise_px > 0:
        points_y = points_y + rng.normal(0.0, noise_px, size=points_y.shape)

    n_outliers = int(round(outlier_fraction * n_matches))
    labels = np.ones(n_matches, dtype=bool)
    outliers = rng.choice(n_matches, n_outliers, replace=False)
    labels[outliers] = False
    points_y[outliers] = rng.uniform((0.0, 0.0), (width, height), size=(n_outliers, 2))
    return points_x, points_y, labels


def lgcv_sweep(
    tau_a_values: Sequence[float],
    tau_s_values: Sequence[float],
    seed: int,
    trials: int = 20,
    n_matches: int = 200,
    outlier_fraction: float = 0.5,
    noise_px: float = 0.5,
    base: Optional[LGCVConfig] = None,
) -> List[SweepCell]:
    """
    τ_a x τ_s の格子で LGCV を評価する

    すべてのセルで同じ合成マッチ集合（試行ごとに別ストリーム）を使う。

    Args:
        tau_a_values: 角度閾値の列（行）
        tau_s_values: スケール閾値の列（列）
        seed (int): 乱数シード
        trials (int): 合成マッチ集合の数
        n_matches (int): 1集合あたりのマッチ数
        outlier_fraction (float): 誤マッチの割合
        noise_px (float): 正解マッチの位置ノイズ
        base (Optional[LGCVConfig]): 閾値以外の LGCV 設定

    Returns:
        List[SweepCell]: 行優先の格子セル

    Raises:
        InvalidParams: 閾値の列が空、または試行数が不正な場合
    """
    if not tau_a_values or not tau_s_values:
        raise InvalidParams("threshold lists must not be empty", "tau")
    if trials < 1:
        raise InvalidParams("at least one trial is required", "trials")
    base = base or LGCVConfig()
    if n_matches <= base.k:
        raise InvalidParams(f"match sets need more than {base.k} matches", "n_matches")

    sets = [
        synthetic_match_set(n_matches, outlier_fraction, stream(seed, STREAM_SWEEP, t), noise_px)
        for t in range(trials)
    ]
    cells: List[SweepCell] = []
    for tau_a in tau_a_values:
        for tau_s in tau_s_values:
            config = LGCVConfig(**{**base.model_dump(), "tau_a": float(tau_a), "tau_s": float(tau_s)})
            kept = hits = inliers = total = 0
            for points_x, points_y, labels in sets:
                try:
                    mask = lgcv_filter(points_x, points_y, config)
                except TooFewMatches:
                    mask = np.ones(len(labels), dtype=bool)
                kept += int(mask.sum())
                hits += int(np.count_nonzero(mask & labels))
                inliers += int(labels.sum())
                total += len(labels)
            precision = hits / kept if kept else 0.0
            recall = hits / inliers if inliers else 0.0
            cells.append(SweepCell(float(tau_a), float(tau_s), precision, recall, kept, total))
            logger.debug(f"LGCV sweep tau_a={tau_a} tau_s={tau_s}: precision={precision:.3f} recall={recall:.3f}")
    logger.info(f"LGCV sweep: {len(cells)} cells over {trials} match sets")
    return cells


def sweep_precision_gain(points_x, points_y, labels, config: Optional[LGCVConfig] = None) -> Tuple[float, float]:
    """フィルタ前と後の適合率を返す"""
    labels = np.asarray(labels, dtype=bool)
    before = match_precision(np.ones(len(labels), dtype=bool), labels)
    after = match_precision(lgcv_filter(points_x, points_y, config), labels)
    return before, after
