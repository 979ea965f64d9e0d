"""
合成描画サービス

3DGS ラスタライザの代わりに、可視ガウシアンの特徴を最も近い画素セルへ
Z バッファ付きで書き込み、特徴グリッドと深度マップを作る。
"""
from typing import Optional, Tuple
import logging

import numpy as np

from gsloc.models.geometry import Camera, Pose
from gsloc.models.matching import FeatureGrid
from gsloc.models.pipeline import QueryView, RenderedView
from gsloc.models.scene import Scene, ViewObservation
from gsloc.schemas.config import QueryConfig
from gsloc.services.synthesis import (
    STREAM_QUERY,
    keypoints_from_observation,
    observe_camera,
    query_camera,
    stream,
)

logger = logging.getLogger(__name__)

COARSE_RATIO = 8
STREAM_RENDER_ARTIFACTS = 5
STREAM_QUERY_KEYPOINTS = 6
# 描画アーティファクトは粗いセル単位でこの範囲だけずらす
ARTIFACT_SHIFT_CELLS = (2, 6)


def average_pool(fine: FeatureGrid, ratio: int = COARSE_RATIO) -> FeatureGrid:
    """
    精密グリッドを ratio x ratio で平均して粗いグリッドを作る

    空セルはゼロ特徴として平均に含め、1つでも有効セルを含むブロックを有効とする。
    """
    h, w = fine.height // ratio, fine.width // ratio
    d = fine.feature_dim
    block = fine.features[:h * ratio, :w * ratio].reshape(h, ratio, w, ratio, d)
    features = block.mean(axis=(1, 3))
    valid = fine.valid[:h * ratio, :w * ratio].reshape(h, ratio, w, ratio).any(axis=(1, 3))
    return FeatureGrid(features, valid, fine.cell_size * ratio)


def splat(
    observation: ViewObservation,
    camera: Camera,
    artifact_fraction: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> RenderedView:
    """
    観測された特徴を画素セルに書き込む

    同じセルに複数のガウシアンが落ちた場合は最も手前のものを残す。

    Args:
        observation (ViewObservation): 描画するカメラからの観測
        camera (Camera): 描画カメラ
        artifact_fraction (float): 粗いセル 2〜6 個分ずらして書き込む割合
        rng (Optional[np.random.Generator]): アーティファクト用の乱数

    Returns:
        RenderedView: 特徴グリッドと深度マップ
    """
    height, width = camera.height, camera.width
    ids = observation.visible_indices
    pixels = observation.pixels[ids]
    cells = np.column_stack([
        np.clip(np.floor(pixels[:, 1]), 0, height - 1),
        np.clip(np.floor(pixels[:, 0]), 0, width - 1),
    ]).astype(np.int64)

    if artifact_fraction > 0 and len(ids):
        rng = rng if rng is not None else np.random.default_rng(0)
        displaced = rng.uniform(0.0, 1.0, len(ids)) < artifact_fraction
        lo, hi = ARTIFACT_SHIFT_CELLS
        shift = rng.integers(lo, hi + 1, size=(len(ids), 2)) * COARSE_RATIO
        shift *= rng.choice([-1, 1], size=(len(ids), 2))
        cells[displaced] += shift[displaced]
        cells[:, 0] = np.clip(cells[:, 0], 0, height - 1)
        cells[:, 1] = np.clip(cells[:, 1], 0, width - 1)

    depths = observation.depths[ids]
    flat = cells[:, 0] * width + cells[:, 1]
    # 奥行きの昇順に並べ、各セルの最初（最も手前）を採用する
    order = np.lexsort((ids, depths))
    _, first = np.unique(flat[order], return_index=True)
    winners = order[first]

    features = np.zeros((height, width, observation.features.shape[1]))
    valid = np.zeros((height, width), dtype=bool)
    depth = np.full((height, width), np.nan)
    rows, cols = cells[winners, 0], cells[winners, 1]
    features[rows, cols] = observation.features[ids[winners]]
    valid[rows, cols] = True
    depth[rows, cols] = depths[winners]

    fine = FeatureGrid(features, valid, 1.0)
    return RenderedView(average_pool(fine), fine, depth, camera)


def render_synthetic_view(
    scene: Scene,
    pose: Pose,
    camera: Camera,
    noise: float,
    seed: int,
    artifact_fraction: float = 0.0,
    keys: Tuple[int, ...] = (),
) -> RenderedView:
    """
    指定姿勢からシーンの特徴と深度を描画する

    Args:
        scene (Scene): シーン
        pose (Pose): 描画姿勢
        camera (Camera): 解像度と内部パラメータを与えるカメラ
        noise (float): 描画特徴のノイズ標準偏差 σ_r
        seed (int): 乱数シード
        artifact_fraction (float): ずらして書き込むガウシアンの割合
        keys: 描画ごとの乱数ストリーム識別子

    Returns:
        RenderedView: 決定的な描画結果
    """
    render_camera = camera.with_pose(pose)
    observation = observe_camera(scene, render_camera, (STREAM_RENDER_ARTIFACTS, *keys), seed, sigma=noise)
    rng = stream(seed, STREAM_RENDER_ARTIFACTS, *keys)
    view = splat(observation, render_camera, artifact_fraction, rng)
    logger.debug(
        f"Rendered view: {int(view.fine.valid.sum())} splats, "
        f"{int(view.coarse.valid.sum())} coarse cells, noise={noise}"
    )
    return view


def make_query_view(scene: Scene, query_id: int, seed: int, config: Optional[QueryConfig] = None) -> QueryView:
    """
    学習ビューに含まれないクエリビューを生成する

    キーポイントには検出位置のノイズとクラッターを加える。

    Args:
        scene (Scene): シーン
        query_id (int): クエリ番号
        seed (int): マスターシード
        config (QueryConfig): キーポイント数、位置ノイズ、クラッター割合

    Returns:
        QueryView: カメラ、観測、キーポイント、格子化した観測
    """
    config = config or QueryConfig()
    camera = query_camera(scene, query_id, seed)
    observation = observe_camera(scene, camera, (STREAM_QUERY, query_id), seed)
    clutter = scene.config.clutter_fraction if config.clutter_fraction is None else config.clutter_fraction
    keypoints = keypoints_from_observation(
        scene, camera, observation, clutter,
        stream(seed, STREAM_QUERY_KEYPOINTS, query_id),
        noise_px=config.keypoint_noise_px,
        max_keypoints=config.max_keypoints,
    )
    grids = splat(observation, camera)
    logger.debug(f"Query {query_id}: {len(keypoints)} keypoints, {int(grids.fine.valid.sum())} splats")
    return QueryView(query_id, camera, observation, keypoints, grids)
