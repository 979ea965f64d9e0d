"""
シーン合成サービス

学習済み 3DGS シーンと特徴抽出器の代わりとなる正解付き合成シーンを生成する。
ガウシアン、カメラ、ノイズ付き2D観測、合成キーポイントを扱う。
"""
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np
from pydantic import ValidationError
from scipy.spatial import cKDTree

from gsloc.exceptions import InvalidConfig
from gsloc.models.geometry import Camera, Pose
from gsloc.models.scene import Gaussian, KeypointSet, Scene, ViewObservation
from gsloc.schemas.config import SceneConfig
from gsloc.services.geometry import in_frustum_points, project_points

logger = logging.getLogger(__name__)

# 遮蔽判定: 0.5 画素以内に 1% 以上手前の中心があれば遮蔽
OCCLUSION_RADIUS_PX = 0.5
OCCLUSION_RELATIVE_DEPTH = 0.01

# 乱数ストリームの識別子（シードと混ぜて独立なストリームを作る）
STREAM_GEOMETRY = 0
STREAM_OBSERVATION = 1
STREAM_SHARED_NOISE = 2
STREAM_KEYPOINTS = 3
STREAM_QUERY = 4


def stream(seed: int, *keys: int) -> np.random.Generator:
    """
    シードと識別子から独立な乱数生成器を作る

    Args:
        seed (int): マスターシード
        *keys (int): ストリーム識別子（ビュー番号など）

    Returns:
        np.random.Generator: 識別子ごとに決定的な生成器
    """
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


def random_unit_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vectors = rng.standard_normal((count, dim))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def random_quaternions(rng: np.random.Generator, count: int) -> np.ndarray:
    q = rng.standard_normal((count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    # w >= 0 に揃える
    return q * np.where(q[:, 3:4] < 0, -1.0, 1.0)


def intrinsics_for(config: SceneConfig) -> Tuple[float, float, float, float]:
    """
    シーン全体が画像に収まる内部パラメータを求める

    Args:
        config (SceneConfig): シーン設定

    Returns:
        Tuple[float, float, float, float]: fx, fy, cx, cy
    """
    cx = config.image_width / 2.0
    cy = config.image_height / 2.0
    # 最も近い奥行き (distance - 1) * extent でも半径 extent の球が画像の 80% に収まる
    focal = 0.8 * min(cx, cy) * (config.camera_distance - 1.0)
    return focal, focal, cx, cy


def hemisphere_camera(
    config: SceneConfig, rng: np.random.Generator, centroid: np.ndarray
) -> Camera:
    """
    注視点を向く半球上のカメラを1台生成する

    Args:
        config (SceneConfig): シーン設定
        rng (np.random.Generator): 乱数生成器
        centroid (np.ndarray): 注視点

    Returns:
        Camera: 生成されたカメラ
    """
    azimuth = rng.uniform(0.0, 2.0 * np.pi)
    elevation = np.radians(rng.uniform(15.0, 75.0))
    direction = np.array([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])
    center = centroid + config.camera_distance * config.extent * direction
    fx, fy, cx, cy = intrinsics_for(config)
    return Camera(fx, fy, cx, cy, config.image_width, config.image_height,
                  Pose.look_at(center, centroid))


def build_gaussians(config: SceneConfig, rng: np.random.Generator) -> List[Gaussian]:
    n = config.n_gaussians
    # 球内一様: 方向は一様、半径は u^(1/3)
    directions = random_unit_vectors(rng, n, 3)
    radii = config.extent * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0)
    centers = directions * radii[:, None]
    base = config.extent * config.scale_base
    scales = base * np.column_stack([
        rng.uniform(0.7, 1.3, n),
        rng.uniform(0.7, 1.3, n),
        config.flatness * rng.uniform(0.7, 1.3, n),
    ])
    quaternions = random_quaternions(rng, n)
    opacities = rng.uniform(config.opacity_min, config.opacity_max, n)
    features = random_unit_vectors(rng, n, config.feature_dim)
    textured = rng.uniform(0.0, 1.0, n) < config.textured_fraction
    return [
        Gaussian.from_quaternion(
            centers[i], scales[i], quaternions[i], opacities[i], features[i],
            textured=bool(textured[i]),
        )
        for i in range(n)
    ]


def assemble_scene(
    config: SceneConfig,
    seed: int,
    gaussians: Sequence[Gaussian],
    cameras: Sequence[Camera],
) -> Scene:
    """
    ガウシアンとカメラからシーンを組み立て、キーポイントを合成する

    保存済みシーンの読み込みでも同じ関数を通すため、キーポイントは
    ファイルに保存せずシードから再生成する。

    Args:
        config (SceneConfig): シーン設定
        seed (int): マスターシード
        gaussians: ガウシアン列
        cameras: カメラ列

    Returns:
        Scene: キーポイント付きのシーン
    """
    noise_cov = np.diag(np.full(config.feature_dim, config.sigma ** 2))
    bare = Scene(tuple(gaussians), tuple(cameras), noise_cov, (), seed, config)
    keypoints = tuple(
        synthesize_keypoints(bare, k, config.clutter_fraction, seed)
        for k in range(bare.n_views)
    )
    return Scene(bare.gaussians, bare.cameras, noise_cov, keypoints, seed, config)


def generate_scene(config: SceneConfig, seed: int) -> Scene:
    """
    正解付きの合成シーンを生成する

    Args:
        config (SceneConfig): シーン設定
        seed (int): マスターシード

    Returns:
        Scene: 生成されたシーン（同じシードなら常に同一）

    Raises:
        InvalidConfig: 設定値が不正な場合
    """
    if not isinstance(config, SceneConfig):
        try:
            config = SceneConfig.model_validate(config)
        except ValidationError as e:
            logger.error(f"Invalid scene config: {e}")
            raise InvalidConfig(str(e))
    if config.n_gaussians <= 0 or config.n_cameras <= 0:
        raise InvalidConfig("n_gaussians and n_cameras must be positive", "n_gaussians")

    rng = stream(seed, STREAM_GEOMETRY)
    gaussians = build_gaussians(config, rng)
    centroid = np.mean([g.center for g in gaussians], axis=0)
    cameras = [hemisphere_camera(config, rng, centroid) for _ in range(config.n_cameras)]

    scene = assemble_scene(config, seed, gaussians, cameras)
    logger.info(
        f"Generated scene: {scene.n_gaussians} gaussians, {scene.n_views} views, "
        f"D={scene.feature_dim}, seed={seed}"
    )
    return scene


def query_camera(scene: Scene, query_id: int, seed: int) -> Camera:
    """
    学習ビューに含まれないクエリ用カメラを生成する

    Args:
        scene (Scene): シーン
        query_id (int): クエリ番号
        seed (int): マスターシード

    Returns:
        Camera: クエリカメラ
    """
    rng = stream(seed, STREAM_QUERY, query_id)
    return hemisphere_camera(scene.config, rng, scene.centers.mean(axis=0))


def visibility_mask(scene: Scene, camera: Camera) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    視錐台判定と中心の深度テストで可視性を求める

    Args:
        scene (Scene): シーン
        camera (Camera): カメラ

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: 可視フラグ、画素座標、奥行き
    """
    pixels, depths = project_points(camera, scene.centers)
    visible = in_frustum_points(camera, scene.centers)
    candidates = np.flatnonzero(visible)
    if len(candidates) > 1:
        tree = cKDTree(pixels[candidates])
        for a, b in tree.query_pairs(OCCLUSION_RADIUS_PX):
            i, j = candidates[a], candidates[b]
            if depths[j] < depths[i] * (1.0 - OCCLUSION_RELATIVE_DEPTH):
                visible[i] = False
            elif depths[i] < depths[j] * (1.0 - OCCLUSION_RELATIVE_DEPTH):
                visible[j] = False
    return visible, pixels, depths


def observe_camera(
    scene: Scene, camera: Camera, rng_keys: Tuple[int, ...], seed: int,
    sigma: Optional[float] = None, camera_index: Optional[int] = None,
) -> ViewObservation:
    """
    任意のカメラからのノイズ付き2D特徴を生成する

    Args:
        scene (Scene): シーン
        camera (Camera): 観測カメラ
        rng_keys: 観測ノイズの乱数ストリーム識別子
        seed (int): マスターシード
        sigma (Optional[float]): ノイズ標準偏差（未指定ならシーンの Σ を使う）
        camera_index (Optional[int]): 学習ビューの番号

    Returns:
        ViewObservation: 可視ガウシアンのみ特徴を持つ観測
    """
    visible, pixels, depths = visibility_mask(scene, camera)
    n, d = scene.n_gaussians, scene.feature_dim
    std = np.sqrt(np.diag(scene.noise_cov)) if sigma is None else np.full(d, float(sigma))

    eta = stream(seed, STREAM_OBSERVATION, *rng_keys).standard_normal((n, d))
    rho = scene.config.view_correlation
    if rho > 0:
        shared = stream(seed, STREAM_SHARED_NOISE).standard_normal((n, d))
        eta = np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * eta

    features = np.full((n, d), np.nan)
    features[visible] = scene.true_features[visible] + eta[visible] * std
    return ViewObservation(camera_index, visible, features, pixels, depths)


def observe_features(scene: Scene, k: int, seed: int) -> ViewObservation:
    """
    学習ビュー k の2D特徴 f_k^2D = μ + ε を生成する

    Args:
        scene (Scene): シーン
        k (int): ビュー番号
        seed (int): 乱数シード（ビュー番号と混ぜて使う）

    Returns:
        ViewObservation: ビュー k の観測
    """
    if not 0 <= k < scene.n_views:
        raise IndexError(f"view {k} out of range for {scene.n_views} views")
    return observe_camera(scene, scene.cameras[k], (k,), seed, camera_index=k)


def observe_all(scene: Scene, seed: int) -> List[ViewObservation]:
    return [observe_features(scene, k, seed) for k in range(scene.n_views)]


def render_feature_ray(entries, dim: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    前から順に並んだガウシアンの特徴を α ブレンドする

    Args:
        entries: (特徴ベクトル, α) の列（手前から奥の順）
        dim (int): 空の列に対して返すゼロベクトルの次元

    Returns:
        Tuple[np.ndarray, np.ndarray]: ブレンド特徴 F_s と各要素の重み w_i = α_i T_i
    """
    entries = list(entries)
    if not entries:
        return np.zeros(dim), np.zeros(0)
    features = np.array([np.asarray(f, dtype=np.float64) for f, _ in entries])
    alphas = np.array([float(a) for _, a in entries])
    transmittance = np.concatenate([[1.0], np.cumprod(1.0 - alphas)[:-1]])
    weights = alphas * transmittance
    return weights @ features, weights


def clutter_count(n_textured: int, clutter_fraction: float, fallback: int) -> int:
    """
    クラッターの個数 round(T c / (1 - c)) を求める

    c = 1 の場合は式が定義されないため fallback 個を返す。
    """
    if clutter_fraction >= 1.0:
        return fallback
    return int(round(n_textured * clutter_fraction / (1.0 - clutter_fraction)))


def keypoints_from_observation(
    scene: Scene,
    camera: Camera,
    observation: ViewObservation,
    clutter_fraction: float,
    rng: np.random.Generator,
    noise_px: float = 0.0,
    max_keypoints: Optional[int] = None,
) -> KeypointSet:
    """
    観測からテクスチャ付きガウシアンの投影とクラッターのキーポイントを作る

    Args:
        scene (Scene): シーン
        camera (Camera): 観測カメラ
        observation (ViewObservation): 観測
        clutter_fraction (float): クラッターの割合
        rng (np.random.Generator): クラッターと位置ノイズ用の乱数
        noise_px (float): キーポイント位置ノイズの標準偏差（画素）
        max_keypoints (Optional[int]): キーポイント数の上限

    Returns:
        KeypointSet: キーポイント集合
    """
    ids = np.flatnonzero(observation.visible & scene.textured)
    pixels = observation.pixels[ids].copy()
    if noise_px > 0 and len(ids):
        pixels += rng.normal(0.0, noise_px, pixels.shape)
        pixels[:, 0] = np.clip(pixels[:, 0], 0.0, camera.width)
        pixels[:, 1] = np.clip(pixels[:, 1], 0.0, camera.height)
    descriptors = observation.features[ids]

    fallback = max_keypoints if max_keypoints is not None else scene.n_gaussians
    n_clutter = clutter_count(len(ids), clutter_fraction, fallback)
    clutter_pixels = np.column_stack([
        rng.uniform(0.0, camera.width, n_clutter),
        rng.uniform(0.0, camera.height, n_clutter),
    ])
    clutter_descriptors = random_unit_vectors(rng, n_clutter, scene.feature_dim)

    all_pixels = np.vstack([pixels, clutter_pixels])
    all_descriptors = np.vstack([descriptors, clutter_descriptors])
    all_ids = np.concatenate([ids, np.full(n_clutter, -1)]).astype(np.int64)
    order = rng.permutation(len(all_ids))
    if max_keypoints is not None:
        order = order[:max_keypoints]
    return KeypointSet(all_pixels[order], all_descriptors[order], all_ids[order])


def synthesize_keypoints(scene: Scene, k: int, clutter_fraction: float, seed: int) -> KeypointSet:
    """
    学習ビュー k の合成キーポイントを生成する

    テクスチャ付きガウシアンの投影位置に観測特徴を記述子として置き、
    画像内一様な位置にランダム記述子のクラッターを加える。

    Args:
        scene (Scene): シーン
        k (int): ビュー番号
        clutter_fraction (float): クラッターの割合 c
        seed (int): 乱数シード

    Returns:
        KeypointSet: キーポイント集合
    """
    observation = observe_features(scene, k, seed)
    rng = stream(seed, STREAM_KEYPOINTS, k)
    keypoints = keypoints_from_observation(
        scene, scene.cameras[k], observation, clutter_fraction, rng
    )
    logger.debug(f"View {k}: {len(keypoints)} keypoints ({int(keypoints.is_clutter.sum())} clutter)")
    return keypoints
