"""
バイアス解析サービス

α ブレンドの分解、結合最小二乗の最適特徴、解析的バイアス、
モンテカルロによる経験的バイアス、特徴距離の診断を実装する。
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Literal, Optional, Sequence, Tuple
import logging

import numpy as np

from gsloc.exceptions import (
    DegenerateWeights,
    FullContribution,
    InvalidParams,
    LengthMismatch,
    NoVisibleViews,
    ZeroVector,
)
from gsloc.models.bias import BiasReport, BlendDecomposition, DistanceHistogram
from gsloc.models.scene import Scene, ViewObservation
from gsloc.services.fusion import fuse_scene_features

logger = logging.getLogger(__name__)

FULL_CONTRIBUTION_TOLERANCE = 1e-12
DEGENERATE_WEIGHT_SUM = 1e-15
ZERO_NORM = 1e-300
MIN_TRIALS = 100
TRIAL_CHUNK = 2048
# 画面上の足跡はこの標準偏差倍で打ち切る
FOOTPRINT_CUTOFF = 3.0

FeatureSource = Literal["alpha_optimum", "fused"]


def _split_blend(features: np.ndarray, alphas: np.ndarray, t: int) -> Tuple[float, np.ndarray]:
    transmittance = np.concatenate([[1.0], np.cumprod(1.0 - alphas)[:-1]])
    weights = alphas * transmittance
    w_t = float(weights[t])
    if w_t >= 1.0 - FULL_CONTRIBUTION_TOLERANCE:
        raise FullContribution(w_t)
    others = weights @ features - w_t * features[t]
    # 残りの透過率はゼロ特徴の背景として B に含める
    return w_t, others / (1.0 - w_t)


def decompose_blend(entries, t: int) -> Tuple[float, np.ndarray]:
    """
    α ブレンドを対象ガウシアンの寄与と正規化背景に分解する

    Args:
        entries: (特徴ベクトル, α) の列（手前から奥の順）
        t (int): 対象の位置

    Returns:
        Tuple[float, np.ndarray]: w_t = α_t T_t と B = Σ_{i≠t} f_i α_i T_i / (1 - w_t)

    Raises:
        IndexError: t が範囲外の場合
        FullContribution: w_t >= 1 - 1e-12 で B が定義できない場合
    """
    entries = list(entries)
    if not 0 <= t < len(entries):
        raise IndexError(f"target {t} out of range for {len(entries)} entries")
    features = np.array([np.asarray(f, dtype=np.float64) for f, _ in entries])
    alphas = np.array([float(a) for _, a in entries])
    return _split_blend(features, alphas, t)


def _check_weights(weights, backgrounds, count: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray, float]:
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    backgrounds = np.atleast_2d(np.asarray(backgrounds, dtype=np.float64))
    if len(backgrounds) != len(weights):
        raise LengthMismatch(len(weights), len(backgrounds), "backgrounds")
    if count is not None and count != len(weights):
        raise LengthMismatch(len(weights), count, "observations")
    sum_sq = float(np.sum(weights ** 2))
    if sum_sq <= DEGENERATE_WEIGHT_SUM:
        raise DegenerateWeights(sum_sq)
    return weights, backgrounds, sum_sq


def joint_feature_loss(feature, observations, weights, backgrounds) -> float:
    """結合最適化の二乗損失 Σ_k ||w_k f + (1 - w_k) B_k - f_k^2D||^2"""
    observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    backgrounds = np.atleast_2d(np.asarray(backgrounds, dtype=np.float64))
    residual = weights * np.asarray(feature) + (1.0 - weights) * backgrounds - observations
    return float(np.sum(residual ** 2))


def joint_feature_gradient(feature, observations, weights, backgrounds) -> np.ndarray:
    """joint_feature_loss の f に関する勾配"""
    observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    backgrounds = np.atleast_2d(np.asarray(backgrounds, dtype=np.float64))
    residual = weights * np.asarray(feature) + (1.0 - weights) * backgrounds - observations
    return 2.0 * np.sum(weights * residual, axis=0)


def optimal_feature_joint(observations, weights, backgrounds) -> np.ndarray:
    """
    全ビューの二乗損失を最小化する対象特徴を閉形式で求める

    Args:
        observations: (K, D) の2D特徴 f_k^2D
        weights: (K,) の寄与重み w_k
        backgrounds: (K, D) の正規化背景 B_k

    Returns:
        np.ndarray: f_t* = Σ w_k (f_k^2D - (1 - w_k) B_k) / Σ w_k^2

    Raises:
        LengthMismatch: ビュー数が一致しない場合
        DegenerateWeights: Σ w_k^2 <= 1e-15 の場合
    """
    observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    weights, backgrounds, sum_sq = _check_weights(weights, backgrounds, len(observations))
    return weights @ (observations - (1.0 - weights)[:, None] * backgrounds) / sum_sq


def analytic_bias(mu, weights, backgrounds) -> np.ndarray:
    """
    結合最適解の期待バイアス Σ w_k (1 - w_k)(μ - B_k) / Σ w_k^2

    Raises:
        DegenerateWeights: Σ w_k^2 <= 1e-15 の場合
    """
    mu = np.asarray(mu, dtype=np.float64)
    weights, backgrounds, sum_sq = _check_weights(weights, backgrounds)
    return (weights * (1.0 - weights)) @ (mu - backgrounds) / sum_sq


def simplified_bias(mu, weights, backgrounds) -> Optional[np.ndarray]:
    """
    ビューごとに単独で最適化した場合のバイアス ((1 - w)/w)(μ - B) のビュー平均

    w_k = 0 のビューがある場合は定義できないため None を返す。
    """
    mu = np.asarray(mu, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    backgrounds = np.atleast_2d(np.asarray(backgrounds, dtype=np.float64))
    if len(weights) == 0 or np.any(weights <= 0):
        return None
    per_view = ((1.0 - weights) / weights)[:, None] * (mu - backgrounds)
    return per_view.mean(axis=0)


def _noise_factor(cov: np.ndarray) -> np.ndarray:
    # 半正定値の Σ でも使える平方根 L (L L^T = Σ)
    eigvals, eigvecs = np.linalg.eigh(cov)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def _trial_chunk(
    base: np.ndarray, weights: np.ndarray, factor: np.ndarray, sum_sq: float,
    seed: int, chunk_index: int, size: int,
) -> np.ndarray:
    rng = np.random.default_rng([int(seed), int(chunk_index)])
    eps = rng.standard_normal((size, len(weights), factor.shape[0])) @ factor.T
    return base + np.einsum("k,tkd->td", weights, eps) / sum_sq


def empirical_bias(
    mu, cov, weights, backgrounds, trials: int, seed: int, workers: int = 1,
) -> BiasReport:
    """
    観測ノイズを繰り返し生成して結合最適解の経験的バイアスを推定する

    試行は TRIAL_CHUNK 個ずつの塊に分け、塊の番号ごとに乱数ストリームを固定する。
    そのためワーカー数によらず結果は同一になる。

    Args:
        mu: 真の特徴 μ
        cov: D x D のノイズ共分散 Σ
        weights: (K,) の寄与重み
        backgrounds: (K, D) の正規化背景
        trials (int): 試行回数（Σ = 0 以外は 100 以上）
        seed (int): 乱数シード
        workers (int): 並列に処理するスレッド数

    Returns:
        BiasReport: 経験的バイアスと解析的バイアス

    Raises:
        InvalidParams: 試行回数が不足している場合
        DegenerateWeights: Σ w_k^2 <= 1e-15 の場合
    """
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape != (len(mu), len(mu)):
        raise LengthMismatch(len(mu), cov.shape[0], "noise covariance")
    noiseless = not np.any(cov)
    if trials < 1 or (trials < MIN_TRIALS and not noiseless):
        raise InvalidParams(
            f"trials must be at least {MIN_TRIALS} (got {trials})", "trials"
        )

    weights, backgrounds, sum_sq = _check_weights(weights, backgrounds)
    expected = np.broadcast_to(mu, backgrounds.shape)
    base = optimal_feature_joint(expected, weights, backgrounds)
    factor = _noise_factor(cov)

    sizes = [min(TRIAL_CHUNK, trials - start) for start in range(0, trials, TRIAL_CHUNK)]

    def run(chunk_index: int) -> np.ndarray:
        return _trial_chunk(base, weights, factor, sum_sq, seed, chunk_index, sizes[chunk_index])

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = np.vstack(list(pool.map(run, range(len(sizes)))))
    else:
        samples = np.vstack([run(i) for i in range(len(sizes))])

    optimum = samples.mean(axis=0)
    if trials > 1:
        stderr = samples.std(axis=0, ddof=1) / np.sqrt(trials)
    else:
        stderr = np.zeros_like(optimum)

    report = BiasReport(
        optimal_feature=optimum,
        analytic_bias=analytic_bias(mu, weights, backgrounds),
        empirical_bias=optimum - mu,
        simplified_bias=simplified_bias(mu, weights, backgrounds),
        trials=trials,
        stderr=stderr,
    )
    logger.info(
        f"Bias experiment: K={len(weights)}, trials={trials}, "
        f"|analytic|={np.linalg.norm(report.analytic_bias):.4g}, "
        f"|empirical|={np.linalg.norm(report.empirical_bias):.4g}"
    )
    return report


def feature_distance(feature, observations) -> float:
    """
    保存特徴と可視ビューの観測との平均コサイン距離

    Args:
        feature: 保存特徴 f_i
        observations: (K, D) の観測 f^2D

    Returns:
        float: 1 - 平均コサイン類似度（[0, 2]）

    Raises:
        InvalidParams: 観測が空の場合
        ZeroVector: ノルムがゼロのベクトルがある場合
    """
    feature = np.asarray(feature, dtype=np.float64)
    observations = np.atleast_2d(np.asarray(observations, dtype=np.float64))
    if observations.shape[0] == 0:
        raise InvalidParams("at least one observation is required", "observations")
    norm = np.linalg.norm(feature)
    if norm <= ZERO_NORM:
        raise ZeroVector("stored feature")
    obs_norms = np.linalg.norm(observations, axis=1)
    if np.any(obs_norms <= ZERO_NORM):
        raise ZeroVector("observation")
    cosines = (observations @ feature) / (obs_norms * norm)
    return float(np.clip(1.0 - cosines.mean(), 0.0, 2.0))


def _footprint_sigmas(scene: Scene, observation: ViewObservation, focal: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return focal * np.median(scene.scales, axis=1) / observation.depths


def _blend_at(
    scene: Scene, observation: ViewObservation, sigmas: np.ndarray, front: np.ndarray, i: int,
) -> Tuple[float, np.ndarray]:
    """観測ビューにおけるガウシアン i の中心画素での (w, B)"""
    candidates = np.flatnonzero(front)
    offsets = observation.pixels[candidates] - observation.pixels[i]
    d2 = np.einsum("nd,nd->n", offsets, offsets)
    s2 = sigmas[candidates] ** 2
    inside = d2 <= (FOOTPRINT_CUTOFF ** 2) * s2
    inside |= candidates == i
    candidates, d2, s2 = candidates[inside], d2[inside], s2[inside]

    alphas = scene.opacities[candidates] * np.exp(-0.5 * d2 / s2)
    alphas[candidates == i] = scene.opacities[i]
    # 奥行き順、同じ奥行きは番号順
    order = np.lexsort((candidates, observation.depths[candidates]))
    candidates, alphas = candidates[order], alphas[order]
    t = int(np.flatnonzero(candidates == i)[0])
    try:
        return _split_blend(scene.true_features[candidates], alphas, t)
    except FullContribution:
        # w = 1 では (1 - w) B が消えるため B は任意
        return 1.0, np.zeros(scene.feature_dim)


def scene_blend_decompositions(
    scene: Scene, observations: Sequence[ViewObservation],
) -> List[Optional[BlendDecomposition]]:
    """
    全ガウシアンについて可視ビューごとの (w_k, B_k) を求める

    画面上の足跡は等方的とし、σ_px = f・median(scale)/depth、
    α_j(u) = opacity_j・exp(-½||u - p_j||² / σ_px²) を 3σ_px で打ち切る。
    他のガウシアンの特徴は真の値に固定する。

    Args:
        scene (Scene): シーン
        observations: 学習ビューの観測

    Returns:
        List[Optional[BlendDecomposition]]: ガウシアンごとの分解（可視ビューがなければ None）
    """
    weights: Dict[int, List[float]] = {}
    backgrounds: Dict[int, List[np.ndarray]] = {}
    views: Dict[int, List[int]] = {}
    for k, observation in enumerate(observations):
        camera = scene.cameras[observation.camera_index if observation.camera_index is not None else k]
        sigmas = _footprint_sigmas(scene, observation, camera.fx)
        front = (observation.depths > 0) & np.all(np.isfinite(observation.pixels), axis=1)
        for i in observation.visible_indices:
            w, b = _blend_at(scene, observation, sigmas, front, int(i))
            weights.setdefault(int(i), []).append(w)
            backgrounds.setdefault(int(i), []).append(b)
            views.setdefault(int(i), []).append(k)

    return [
        BlendDecomposition(np.array(weights[i]), np.array(backgrounds[i]), np.array(views[i]))
        if i in weights else None
        for i in range(scene.n_gaussians)
    ]


def scene_blend_decomposition(
    scene: Scene, i: int, observations: Sequence[ViewObservation],
) -> BlendDecomposition:
    """
    ガウシアン i の可視ビューごとの (w_k, B_k) を求める

    Raises:
        IndexError: i が範囲外の場合
        NoVisibleViews: 可視ビューがない場合
    """
    if not 0 <= i < scene.n_gaussians:
        raise IndexError(f"gaussian {i} out of range for {scene.n_gaussians} gaussians")
    weights, backgrounds, views = [], [], []
    for k, observation in enumerate(observations):
        if not observation.visible[i]:
            continue
        camera = scene.cameras[observation.camera_index if observation.camera_index is not None else k]
        sigmas = _footprint_sigmas(scene, observation, camera.fx)
        front = (observation.depths > 0) & np.all(np.isfinite(observation.pixels), axis=1)
        w, b = _blend_at(scene, observation, sigmas, front, i)
        weights.append(w)
        backgrounds.append(b)
        views.append(k)
    if not weights:
        raise NoVisibleViews(i)
    return BlendDecomposition(np.array(weights), np.array(backgrounds), np.array(views))


def alpha_optimum_features(
    scene: Scene, observations: Sequence[ViewObservation],
) -> Tuple[np.ndarray, np.ndarray]:
    """
    各ガウシアンの α ブレンド最適特徴を求める

    他のガウシアンを真の特徴に固定した1段の座標降下に相当する。

    Returns:
        Tuple[np.ndarray, np.ndarray]: (N, D) の特徴（求まらない行は NaN）と有効フラグ
    """
    features = np.full((scene.n_gaussians, scene.feature_dim), np.nan)
    decompositions = scene_blend_decompositions(scene, observations)
    for i, decomposition in enumerate(decompositions):
        if decomposition is None:
            continue
        obs = np.array([observations[k].features[i] for k in decomposition.view_indices])
        try:
            features[i] = optimal_feature_joint(obs, decomposition.weights, decomposition.backgrounds)
        except DegenerateWeights:
            logger.debug(f"Gaussian {i}: degenerate blend weights, skipped")
    valid = np.all(np.isfinite(features), axis=1)
    logger.info(f"Alpha-optimum features: {int(valid.sum())}/{scene.n_gaussians} gaussians")
    return features, valid


def scene_feature_distances(
    features: np.ndarray, valid: np.ndarray, observations: Sequence[ViewObservation],
) -> Tuple[np.ndarray, np.ndarray]:
    """有効なガウシアンごとに feature_distance を計算する"""
    indices, distances = [], []
    for i in np.flatnonzero(valid):
        obs = np.array([o.features[i] for o in observations if o.visible[i]])
        if len(obs) == 0:
            continue
        try:
            distances.append(feature_distance(features[i], obs))
        except ZeroVector:
            logger.debug(f"Gaussian {i}: zero-norm feature, skipped")
            continue
        indices.append(int(i))
    return np.array(indices, dtype=np.int64), np.array(distances)


def distance_histogram(
    scene: Scene,
    source: FeatureSource,
    bins: int,
    observations: Sequence[ViewObservation],
) -> DistanceHistogram:
    """
    ガウシアンごとの特徴距離の分布を求める

    Args:
        scene (Scene): シーン
        source: 特徴の出所（alpha_optimum または fused）
        bins (int): [0, 2] を等分するビン数
        observations: 学習ビューの観測

    Returns:
        DistanceHistogram: 距離のヒストグラムと平均

    Raises:
        InvalidParams: bins や source が不正な場合、または評価できるガウシアンがない場合
    """
    if bins < 1:
        raise InvalidParams("bins must be positive", "bins")
    if source == "alpha_optimum":
        features, valid = alpha_optimum_features(scene, observations)
    elif source == "fused":
        features, valid = fuse_scene_features(scene, observations)
    else:
        raise InvalidParams(f"unknown feature source {source!r}", "source")

    indices, distances = scene_feature_distances(features, valid, observations)
    if len(distances) == 0:
        raise InvalidParams("no Gaussian has a visible view", "scene")
    edges = np.linspace(0.0, 2.0, bins + 1)
    counts, _ = np.histogram(distances, bins=edges)
    histogram = DistanceHistogram(
        edges=edges,
        counts=counts,
        mean=float(distances.mean()),
        method=source,
        distances=distances,
        gaussian_indices=indices,
    )
    logger.info(f"Distance histogram ({source}): n={histogram.total}, mean={histogram.mean:.5f}")
    return histogram
