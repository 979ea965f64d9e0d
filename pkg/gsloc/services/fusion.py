"""
幾何重み付き特徴融合サービス

ガウシアンの法線と視線方向から重みを作り、多視点の2D特徴を凸結合する。
"""
from typing import List, Literal, Optional, Sequence, Tuple
import logging

import numpy as np

from gsloc.exceptions import AmbiguousNormal, LengthMismatch, NoVisibleViews
from gsloc.models.geometry import Camera
from gsloc.models.landmarks import FusionWeights, LandmarkDB
from gsloc.models.scene import Gaussian, Scene, ViewObservation
from gsloc.services.geometry import viewing_direction
from gsloc.services.synthesis import observe_all

logger = logging.getLogger(__name__)

GRAZING_WEIGHT = 1e-6
AMBIGUOUS_SCALE_RATIO = 1e-9

NormalMode = Literal["global", "per_view"]


def gaussian_normal(g: Gaussian, cameras: Sequence[Camera]) -> np.ndarray:
    """
    最小スケール軸をガウシアンの法線として返す

    向きは可視カメラ中心の重心の側に揃える。

    Args:
        g (Gaussian): ガウシアン
        cameras: 可視ビューのカメラ

    Returns:
        np.ndarray: 単位法線ベクトル

    Raises:
        AmbiguousNormal: 小さい方から2つのスケールが相対 1e-9 以内の場合
    """
    order = np.argsort(g.scales, kind="stable")
    smallest, second = g.scales[order[0]], g.scales[order[1]]
    if second - smallest <= AMBIGUOUS_SCALE_RATIO * second:
        raise AmbiguousNormal(g.scales)
    normal = g.orientation[:, order[0]]
    normal = normal / np.linalg.norm(normal)
    if len(cameras):
        centroid = np.mean([c.center for c in cameras], axis=0)
        if normal @ (centroid - g.center) < 0:
            normal = -normal
    return normal


def fusion_weights(
    g: Gaussian,
    cameras: Sequence[Camera],
    view_indices: Optional[Sequence[int]] = None,
    mode: NormalMode = "global",
) -> FusionWeights:
    """
    可視ビューごとの融合重み w_k = n・d_k を求める

    Args:
        g (Gaussian): ガウシアン
        cameras: 可視ビューのカメラ
        view_indices: cameras に対応するビュー番号（省略時は 0..K-1）
        mode: global は法線の向きを全ビュー共通で決め、per_view はビューごとに反転する

    Returns:
        FusionWeights: ε_w で切り上げた生の重みと正規化した重み

    Raises:
        NoVisibleViews: 可視ビューがない場合
        AmbiguousNormal: 法線が決まらない場合
    """
    if len(cameras) == 0:
        raise NoVisibleViews()
    normal = gaussian_normal(g, cameras)
    directions = np.array([viewing_direction(g.center, c) for c in cameras])
    raw = directions @ normal
    if mode == "per_view":
        raw = np.abs(raw)
    # かすめるビューは負の重みではなくごく小さい重みにする
    raw = np.maximum(raw, GRAZING_WEIGHT)
    if view_indices is None:
        view_indices = np.arange(len(cameras))
    return FusionWeights(
        view_indices=np.asarray(view_indices, dtype=np.int64),
        raw=raw,
        normalized=raw / raw.sum(),
    )


def uniform_weights(view_indices: Sequence[int]) -> FusionWeights:
    count = len(view_indices)
    if count == 0:
        raise NoVisibleViews()
    return FusionWeights(
        view_indices=np.asarray(view_indices, dtype=np.int64),
        raw=np.ones(count),
        normalized=np.full(count, 1.0 / count),
    )


def fuse(observations, weights: FusionWeights) -> np.ndarray:
    """
    2D特徴を融合重みで加重平均する

    Args:
        observations: (K, D) の2D特徴
        weights (FusionWeights): 融合重み

    Returns:
        np.ndarray: f^fus = Σ w_k f_k^2D

    Raises:
        LengthMismatch: 観測数と重み数が一致しない、または0の場合
    """
    observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    if len(observations) != len(weights) or len(weights) == 0:
        raise LengthMismatch(len(weights), len(observations), "fusion observations")
    return weights.normalized @ observations


def fuse_gaussian(
    scene: Scene, i: int, observations: Sequence[ViewObservation], mode: NormalMode = "global",
) -> np.ndarray:
    """
    ガウシアン i の可視ビューの観測を融合する

    法線が決まらないガウシアンは一様重みにする。

    Raises:
        NoVisibleViews: 可視ビューがない場合
    """
    views = [k for k, o in enumerate(observations) if o.visible[i]]
    if not views:
        raise NoVisibleViews(i)
    g = scene.gaussians[i]
    cameras = [scene.cameras[observations[k].camera_index if observations[k].camera_index is not None else k]
               for k in views]
    try:
        weights = fusion_weights(g, cameras, views, mode)
    except AmbiguousNormal:
        logger.debug(f"Gaussian {i}: ambiguous normal, using uniform weights")
        weights = uniform_weights(views)
    return fuse(np.array([observations[k].features[i] for k in views]), weights)


def fuse_scene_features(
    scene: Scene, observations: Sequence[ViewObservation], mode: NormalMode = "global",
) -> Tuple[np.ndarray, np.ndarray]:
    """
    全ガウシアンの融合特徴を求める

    Returns:
        Tuple[np.ndarray, np.ndarray]: (N, D) の特徴（可視ビューがない行は NaN）と有効フラグ
    """
    features = np.full((scene.n_gaussians, scene.feature_dim), np.nan)
    for i in range(scene.n_gaussians):
        try:
            features[i] = fuse_gaussian(scene, i, observations, mode)
        except NoVisibleViews:
            continue
    valid = np.all(np.isfinite(features), axis=1)
    logger.info(f"Fused features: {int(valid.sum())}/{scene.n_gaussians} gaussians")
    return features, valid


def build_landmark_features(
    scene: Scene,
    db: LandmarkDB,
    seed: int,
    observations: Optional[List[ViewObservation]] = None,
    mode: NormalMode = "global",
) -> LandmarkDB:
    """
    ランドマークごとに融合特徴を計算してデータベースに格納する

    Args:
        scene (Scene): シーン
        db (LandmarkDB): サンプリング済みのデータベース
        seed (int): 観測ノイズの乱数シード
        observations: 学習ビューの観測（省略時は seed から生成）
        mode: 法線の向きの決め方

    Returns:
        LandmarkDB: 特徴付きのデータベース（可視ビューがないランドマークは除外）

    Raises:
        IndexError: ランドマーク番号がシーンの範囲外の場合
    """
    if len(db) and (db.indices.min() < 0 or db.indices.max() >= scene.n_gaussians):
        raise IndexError("landmark indices out of range for the scene")
    if observations is None:
        observations = observe_all(scene, seed)

    kept, features = [], []
    for i in db.indices:
        try:
            features.append(fuse_gaussian(scene, int(i), observations, mode))
        except NoVisibleViews:
            continue
        kept.append(int(i))

    dropped = len(db) - len(kept)
    if dropped:
        logger.warning(f"Dropped {dropped} landmarks without visible views")
    fused = np.array(features).reshape(len(kept), scene.feature_dim)
    logger.info(f"Built landmark features: {len(kept)} landmarks, D={scene.feature_dim}")
    return db.with_features(kept, fused)
