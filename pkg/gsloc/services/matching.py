"""
対応付けサービス

ランドマークへの疎マッチング、dual-softmax、相互最近傍探索、
局所幾何整合性検証（LGCV）、8x8 窓の精密マッチングを実装する。
"""
from typing import Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.special import softmax
from scipy.spatial import cKDTree

from gsloc.exceptions import (
    DimensionMismatch,
    EmptyWindow,
    InvalidParams,
    LengthMismatch,
    TooFewMatches,
    ZeroVector,
)
from gsloc.models.matching import FeatureGrid, MatchSet, MatchStage, SimilarityMatrix
from gsloc.schemas.config import LGCVConfig

logger = logging.getLogger(__name__)

FINE_WINDOW = 8
# 三角形の辺がこれより短い組は支持にも棄却にも数えない
DEGENERATE_EDGE_PX = 1e-9


def _unit_rows(descriptors: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(descriptors, axis=1, keepdims=True)
    if np.any(norms <= 0):
        raise ZeroVector(what)
    return descriptors / norms


def cosine_similarity(query, reference) -> SimilarityMatrix:
    """
    記述子同士のコサイン類似度行列を求める

    Raises:
        InvalidParams: どちらかが空の場合
        DimensionMismatch: 次元が異なる場合
        ZeroVector: ノルムがゼロの記述子がある場合
    """
    query = np.atleast_2d(np.asarray(query, dtype=np.float64))
    reference = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if query.shape[0] == 0 or reference.shape[0] == 0:
        raise InvalidParams("descriptor sets must be non-empty", "descriptors")
    if query.shape[1] != reference.shape[1]:
        raise DimensionMismatch(query.shape[1], reference.shape[1])
    values = _unit_rows(query, "query descriptor") @ _unit_rows(reference, "reference descriptor").T
    return SimilarityMatrix(np.clip(values, -1.0, 1.0))


def sparse_match(query_descriptors, landmark_features) -> MatchSet:
    """
    クエリ記述子ごとに最も類似するランドマークを選ぶ（一方向の argmax）

    Args:
        query_descriptors: (M, D) クエリ記述子
        landmark_features: (L, D) ランドマーク特徴

    Returns:
        MatchSet: coarse-sparse 段階のマッチ（スコアはコサイン類似度）
    """
    sim = cosine_similarity(query_descriptors, landmark_features).values
    best = np.argmax(sim, axis=1)
    rows = np.arange(len(best))
    matches = MatchSet(rows, best, sim[rows, best], MatchStage.COARSE_SPARSE)
    logger.debug(f"Sparse matching: {len(matches)} queries against {sim.shape[1]} landmarks")
    return matches


def dual_softmax(sim, temperature: float) -> np.ndarray:
    """
    行方向と列方向の softmax の要素積を求める

    Args:
        sim: SimilarityMatrix または (M, N) 行列
        temperature (float): 温度 τ_t

    Returns:
        np.ndarray: 確率行列 P_c
    """
    if temperature <= 0:
        raise InvalidParams("temperature must be positive", "temperature")
    values = sim.values if isinstance(sim, SimilarityMatrix) else np.asarray(sim, dtype=np.float64)
    scaled = values / temperature
    return softmax(scaled, axis=1) * softmax(scaled, axis=0)


def mnn(probabilities, floor: Optional[float] = None, stage: MatchStage = MatchStage.COARSE_DENSE) -> MatchSet:
    """
    相互に argmax となる行と列の組を返す（同点は小さい番号）

    Args:
        probabilities: (M, N) 確率行列
        floor (Optional[float]): 指定時はこの値以下の組を除く

    Returns:
        MatchSet: 行・列がそれぞれ高々1回しか現れない部分マッチング
    """
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size == 0:
        raise InvalidParams("probability matrix must be non-empty", "probabilities")
    row_best = np.argmax(p, axis=1)
    col_best = np.argmax(p, axis=0)
    rows = np.flatnonzero(col_best[row_best] == np.arange(p.shape[0]))
    cols = row_best[rows]
    scores = p[rows, cols]
    if floor is not None:
        keep = scores > floor
        rows, cols, scores = rows[keep], cols[keep], scores[keep]
    return MatchSet(rows, cols, scores, stage)


def _as_points(points) -> np.ndarray:
    if len(points) and hasattr(points[0], "as_array"):
        return np.array([p.as_array() for p in points])
    return np.asarray(points, dtype=np.float64).reshape(-1, 2)


def lgcv_neighbors(points_x: np.ndarray, k: int) -> np.ndarray:
    """各点の自身を除く K 近傍（X 側のユークリッド距離）"""
    n = len(points_x)
    _, neighbors = cKDTree(points_x).query(points_x, k=k + 1)
    neighbors = np.asarray(neighbors).reshape(n, k + 1)
    is_self = neighbors == np.arange(n)[:, None]
    # 自身を末尾へ送り、残りの順序は保つ
    order = np.argsort(is_self, axis=1, kind="stable")
    return np.take_along_axis(neighbors, order, axis=1)[:, :k]


def lgcv_support(points_x, points_y, config: LGCVConfig) -> np.ndarray:
    """
    各マッチを支持する近傍三角形の組の数を数える

    Returns:
        np.ndarray: マッチごとの支持数（無順序の組 j < k を数える）
    """
    x = _as_points(points_x)
    y = _as_points(points_y)
    neighbors = lgcv_neighbors(x, config.k)
    a, b = np.triu_indices(config.k, 1)
    j, k = neighbors[:, a], neighbors[:, b]

    def edges(p):
        pi = p[:, None, :]
        e_ij = p[j] - pi
        e_ik = p[k] - pi
        e_jk = p[k] - p[j]
        return e_ij, e_ik, e_jk

    xe_ij, xe_ik, xe_jk = edges(x)
    ye_ij, ye_ik, ye_jk = edges(y)
    xl = [np.linalg.norm(e, axis=2) for e in (xe_ij, xe_ik, xe_jk)]
    yl = [np.linalg.norm(e, axis=2) for e in (ye_ij, ye_ik, ye_jk)]

    degenerate = np.zeros(j.shape, dtype=bool)
    for lengths in (*xl, *yl):
        degenerate |= lengths < DEGENERATE_EDGE_PX

    with np.errstate(divide="ignore", invalid="ignore"):
        cos_x = np.sum(xe_ij * xe_ik, axis=2) / (xl[0] * xl[1])
        cos_y = np.sum(ye_ij * ye_ik, axis=2) / (yl[0] * yl[1])
    angular = np.abs(cos_x - cos_y) < 1.0 - config.tau_a

    eps = config.epsilon
    if config.scale_mode == "pairwise":
        s = [lx / (ly + eps) for lx, ly in zip(xl, yl)]
        spread = np.maximum.reduce([np.abs(s[0] - s[1]), np.abs(s[0] - s[2]), np.abs(s[1] - s[2])])
        scale = spread < config.tau_s
    else:
        r_j = yl[0] / (xl[0] + eps)
        r_k = yl[1] / (xl[1] + eps)
        triplet = np.stack([r_k, r_j, r_k * r_j])
        scale = np.var(triplet, axis=0, ddof=1) < config.tau_s

    supported = angular & scale & ~degenerate
    support = np.count_nonzero(supported, axis=1)
    if config.scale_mode == "variance":
        # 順序付きの組として数えた場合の値に揃える
        support = 2 * support
    return support


def lgcv_filter(points_x, points_y, config: Optional[LGCVConfig] = None) -> np.ndarray:
    """
    局所三角形の角度と辺の比で誤マッチを除く

    Args:
        points_x: クエリ側の点（PixelPoint の列または (N, 2)）
        points_y: 参照側の点
        config (LGCVConfig): 近傍数と閾値

    Returns:
        np.ndarray: 支持数が τ_support 以上のマッチを True とする有効フラグ

    Raises:
        LengthMismatch: 点の数が異なる場合
        TooFewMatches: マッチ数が K 以下の場合
    """
    config = config or LGCVConfig()
    if len(points_x) != len(points_y):
        raise LengthMismatch(len(points_x), len(points_y), "LGCV point lists")
    if len(points_x) <= config.k:
        raise TooFewMatches(len(points_x), config.k + 1)
    support = lgcv_support(points_x, points_y, config)
    mask = support >= config.tau_support
    logger.debug(f"LGCV kept {int(mask.sum())}/{len(mask)} matches")
    return mask


def _window_origin(center: int, size: int, window: int) -> int:
    return int(np.clip(center - window // 2, 0, max(size - window, 0)))


def _window_cells(grid: FeatureGrid, point, window: int) -> np.ndarray:
    row = int(np.floor(point[1] / grid.cell_size))
    col = int(np.floor(point[0] / grid.cell_size))
    r0 = _window_origin(row, grid.height, window)
    c0 = _window_origin(col, grid.width, window)
    block = grid.valid[r0:r0 + window, c0:c0 + window]
    return np.argwhere(block) + np.array([r0, c0])


def fine_match_window(
    query_grid: FeatureGrid,
    reference_grid: FeatureGrid,
    query_point,
    reference_point,
    temperature: float,
    window: int = FINE_WINDOW,
) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    2つの窓の中で dual-softmax と相互最近傍を求め、確率最大の組を返す

    Args:
        query_grid (FeatureGrid): クエリの精密グリッド
        reference_grid (FeatureGrid): 参照の精密グリッド
        query_point: 窓の中心（クエリ側の画素座標）
        reference_point: 窓の中心（参照側の画素座標）
        temperature (float): dual-softmax の温度
        window (int): 窓の一辺のセル数

    Returns:
        Tuple[np.ndarray, np.ndarray, float]: クエリセル、参照セル（row, col）と確率

    Raises:
        EmptyWindow: どちらかの窓に有効セルがない、または相互最近傍がない場合
    """
    q_cells = _window_cells(query_grid, query_point, window)
    r_cells = _window_cells(reference_grid, reference_point, window)
    if len(q_cells) == 0 or len(r_cells) == 0:
        raise EmptyWindow("window contains no valid cells")
    q_feat = query_grid.features[q_cells[:, 0], q_cells[:, 1]]
    r_feat = reference_grid.features[r_cells[:, 0], r_cells[:, 1]]
    sim = cosine_similarity(q_feat, r_feat)
    sim = sim.with_probabilities(dual_softmax(sim, temperature))
    pairs = mnn(sim.probabilities, stage=MatchStage.FINE)
    if len(pairs) == 0:
        raise EmptyWindow("no mutual nearest neighbor inside the window")
    best = int(np.argmax(pairs.scores))
    return (
        q_cells[pairs.query_indices[best]],
        r_cells[pairs.reference_indices[best]],
        float(pairs.scores[best]),
    )


def fine_match(
    coarse: MatchSet,
    query_grid: FeatureGrid,
    reference_grid: FeatureGrid,
    temperature: float,
    window: int = FINE_WINDOW,
) -> MatchSet:
    """
    粗いマッチごとに窓内で精密な対応を求める

    窓が空のマッチは飛ばして件数を記録する。

    Args:
        coarse (MatchSet): 画素座標付きの粗いマッチ（有効なものだけを使う）
        query_grid (FeatureGrid): クエリの精密グリッド
        reference_grid (FeatureGrid): 参照の精密グリッド
        temperature (float): dual-softmax の温度
        window (int): 窓の一辺のセル数

    Returns:
        MatchSet: fine 段階のマッチ（番号は精密グリッドの行優先セル番号、座標はセル中心）
    """
    if coarse.query_points is None or coarse.reference_points is None:
        raise InvalidParams("coarse matches need pixel coordinates", "coarse")
    q_idx, r_idx, scores = [], [], []
    seen = set()
    skipped = 0
    for i in np.flatnonzero(coarse.valid):
        try:
            q_cell, r_cell, score = fine_match_window(
                query_grid, reference_grid, coarse.query_points[i], coarse.reference_points[i],
                temperature, window,
            )
        except EmptyWindow:
            skipped += 1
            continue
        q_flat = int(q_cell[0] * query_grid.width + q_cell[1])
        if q_flat in seen:
            continue
        seen.add(q_flat)
        q_idx.append(q_flat)
        r_idx.append(int(r_cell[0] * reference_grid.width + r_cell[1]))
        scores.append(score)
    if skipped:
        logger.warning(f"Fine matching skipped {skipped} matches with empty windows")
    if not q_idx:
        return MatchSet.empty(MatchStage.FINE)

    q_idx = np.array(q_idx)
    r_idx = np.array(r_idx)
    q_cells = np.column_stack(np.divmod(q_idx, query_grid.width))
    r_cells = np.column_stack(np.divmod(r_idx, reference_grid.width))
    return MatchSet(
        q_idx, r_idx, np.array(scores), MatchStage.FINE,
        query_points=query_grid.cell_centers(q_cells),
        reference_points=reference_grid.cell_centers(r_cells),
    )


def coarse_dense_match(
    query_grid: FeatureGrid,
    reference_grid: FeatureGrid,
    temperature: float,
    floor: Optional[float] = None,
) -> MatchSet:
    """
    粗いグリッドの有効セル同士を dual-softmax と相互最近傍で対応付ける

    Returns:
        MatchSet: coarse-dense 段階のマッチ（座標はセル中心）
    """
    q_cells = query_grid.valid_cells()
    r_cells = reference_grid.valid_cells()
    if len(q_cells) == 0 or len(r_cells) == 0:
        return MatchSet.empty(MatchStage.COARSE_DENSE)
    q_feat = query_grid.features[q_cells[:, 0], q_cells[:, 1]]
    r_feat = reference_grid.features[r_cells[:, 0], r_cells[:, 1]]
    sim = cosine_similarity(q_feat, r_feat)
    sim = sim.with_probabilities(dual_softmax(sim, temperature))
    pairs = mnn(sim.probabilities, floor)
    return MatchSet(
        pairs.query_indices, pairs.reference_indices, pairs.scores, MatchStage.COARSE_DENSE,
        query_points=query_grid.cell_centers(q_cells[pairs.query_indices]),
        reference_points=reference_grid.cell_centers(r_cells[pairs.reference_indices]),
    )


def match_precision(mask: np.ndarray, labels: Sequence[bool]) -> float:
    """有効とされたマッチのうち正解の割合（有効なものがなければ 0）"""
    mask = np.asarray(mask, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    kept = int(mask.sum())
    return float(np.count_nonzero(mask & labels) / kept) if kept else 0.0
