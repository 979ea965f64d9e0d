"""
キーポイント合意によるランドマークサンプリングサービス

学習ビューのキーポイントとの一致回数からガウシアンの合意スコアを求め、
ランダムなアンカーの k 近傍でスコア最大のガウシアンをランドマークとして選ぶ。
"""
import logging

import numpy as np
from scipy.spatial import cKDTree

from gsloc.exceptions import InvalidParams
from gsloc.models.landmarks import ConsensusScores, LandmarkDB
from gsloc.models.scene import Scene
from gsloc.services.geometry import in_frustum_points, project_points

logger = logging.getLogger(__name__)


def consensus_scores(scene: Scene, tau_d: float) -> ConsensusScores:
    """
    各ガウシアンの投影が τ_D 以内にキーポイントを持つビュー数を数える

    画像範囲外に投影されるビューは数えない。

    Args:
        scene (Scene): キーポイント付きのシーン
        tau_d (float): 距離閾値（画素）

    Returns:
        ConsensusScores: ガウシアンごとのスコア

    Raises:
        InvalidParams: τ_D が正でない場合
    """
    if tau_d <= 0:
        raise InvalidParams("tau_d must be positive", "tau_d")
    scores = np.zeros(scene.n_gaussians, dtype=np.int64)
    for camera, keypoints in zip(scene.cameras, scene.keypoints_per_view):
        if len(keypoints) == 0:
            continue
        inside = np.flatnonzero(in_frustum_points(camera, scene.centers))
        if len(inside) == 0:
            continue
        pixels, _ = project_points(camera, scene.centers[inside])
        nearest, _ = cKDTree(keypoints.pixels).query(pixels, k=1)
        scores[inside[nearest <= tau_d]] += 1
    logger.info(
        f"Consensus scores: tau_d={tau_d}, views={scene.n_views}, "
        f"scored={int(np.count_nonzero(scores))}/{scene.n_gaussians}"
    )
    return ConsensusScores(scores, tau_d, scene.n_views)


def draw_anchors(n_gaussians: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n <= |G| なら非復元、それ以外は復元抽出でアンカーを選ぶ"""
    return rng.choice(n_gaussians, size=n, replace=n > n_gaussians)


def kc_sample(scene: Scene, scores: ConsensusScores, n: int, k: int, seed: int) -> LandmarkDB:
    """
    合意スコアに導かれた k 近傍サンプリングでランドマークを選ぶ

    Args:
        scene (Scene): シーン
        scores (ConsensusScores): 合意スコア
        n (int): アンカー数
        k (int): 近傍数（自身を含む）
        seed (int): 乱数シード

    Returns:
        LandmarkDB: 重複を除いて昇順に並べたランドマーク

    Raises:
        InvalidParams: n, k が1未満、シーンが空、またはスコアの数が合わない場合
    """
    if n < 1:
        raise InvalidParams("n must be at least 1", "n")
    if k < 1:
        raise InvalidParams("k must be at least 1", "k")
    if scene.n_gaussians < 1:
        raise InvalidParams("scene has no Gaussians", "scene")
    if len(scores) != scene.n_gaussians:
        raise InvalidParams("scores do not match the scene", "scores")

    rng = np.random.default_rng(seed)
    anchors = draw_anchors(scene.n_gaussians, n, rng)
    k_eff = min(k, scene.n_gaussians)
    _, neighbors = cKDTree(scene.centers).query(scene.centers[anchors], k=k_eff)
    neighbors = np.asarray(neighbors).reshape(len(anchors), k_eff)

    values = scores.scores
    selected = set()
    for row in neighbors:
        # スコアの降順、同点は番号の小さい方
        best = row[np.lexsort((row, -values[row]))[0]]
        selected.add(int(best))

    indices = np.array(sorted(selected), dtype=np.int64)
    logger.info(f"Sampled {len(indices)} landmarks from {n} anchors (k={k_eff}, seed={seed})")
    return LandmarkDB(indices=indices, tau_d=scores.tau_d, n=n, k=k, seed=seed)
