"""
パイプラインモデル

描画ビュー、クエリビュー、位置推定結果を定義する。
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from gsloc.models.geometry import Camera, Pose
from gsloc.models.matching import FeatureGrid, MatchSet
from gsloc.models.pose import PoseEstimate
from gsloc.models.scene import KeypointSet, ViewObservation


@dataclass(frozen=True, eq=False)
class RenderedView:
    """
    ガウシアンを格子に描画した特徴と深度

    Attributes:
        coarse (FeatureGrid): 1/8 解像度の特徴（精密グリッドの 8x8 平均）
        fine (FeatureGrid): 画素解像度の特徴
        depth (np.ndarray): (H, W) の奥行き（未定義は NaN）
        camera (Camera): 描画に使ったカメラ（姿勢を含む）
    """
    coarse: FeatureGrid
    fine: FeatureGrid
    depth: np.ndarray = field(repr=False)
    camera: Camera

    def __post_init__(self):
        if self.depth.shape != self.fine.valid.shape:
            raise ValueError("depth map must match the fine grid")
        defined = np.isfinite(self.depth)
        if np.any(self.depth[defined] <= 0):
            raise ValueError("depth must be positive where defined")

    @property
    def pose(self) -> Pose:
        return self.camera.pose


@dataclass(frozen=True, eq=False)
class QueryView:
    """
    位置推定の対象となるクエリ画像の代わり

    Attributes:
        query_id (int): クエリ番号
        camera (Camera): 正解姿勢を持つクエリカメラ
        observation (ViewObservation): クエリカメラからの観測
        keypoints (KeypointSet): 疎マッチング用のキーポイント
        grids (RenderedView): 観測を同じ手順で格子化したもの
    """
    query_id: int
    camera: Camera
    observation: ViewObservation = field(repr=False)
    keypoints: KeypointSet = field(repr=False)
    grids: RenderedView = field(repr=False)

    @property
    def true_pose(self) -> Pose:
        return self.camera.pose


@dataclass(frozen=True)
class IterationRecord:
    """改善1回分の段階ごとのマッチ数"""
    iteration: int
    coarse_dense: int
    lgcv_filtered: int
    fine: int
    lifted: int
    inliers: int
    inlier_ratio: float


@dataclass(frozen=True, eq=False)
class LocalizationResult:
    """
    粗い推定から改善までの結果

    Attributes:
        query_id (int): クエリ番号
        p_coarse (PoseEstimate): 疎マッチングによる初期推定
        p_fine (PoseEstimate): 改善後の推定（発散時は最後に成功した推定）
        coarse_sparse (int): 疎マッチ数
        history (Tuple[IterationRecord, ...]): 反復ごとの記録
        diverged (bool): 改善中に合意が得られなかったか
        matches (Tuple[MatchSet, ...]): 最後の反復の段階ごとのマッチ集合
        wall_time (float): 経過時間（秒）
    """
    query_id: int
    p_coarse: PoseEstimate
    p_fine: PoseEstimate
    coarse_sparse: int
    history: Tuple[IterationRecord, ...] = ()
    diverged: bool = False
    matches: Tuple[MatchSet, ...] = field(default=(), repr=False)
    wall_time: float = 0.0

    def __post_init__(self):
        for record in self.history:
            if record.lgcv_filtered > record.coarse_dense:
                raise ValueError("LGCV must not increase the match count")

    @property
    def iterations(self) -> int:
        return len(self.history)

    def stage_counts(self) -> Dict[str, int]:
        """最後の反復の段階ごとのマッチ数"""
        last: Optional[IterationRecord] = self.history[-1] if self.history else None
        return {
            "coarse_sparse": self.coarse_sparse,
            "coarse_dense": last.coarse_dense if last else 0,
            "lgcv_filtered": last.lgcv_filtered if last else 0,
            "fine": last.fine if last else 0,
        }


@dataclass(frozen=True)
class QueryErrors:
    """1クエリ分の姿勢誤差"""
    query_id: int
    coarse_translation: float
    coarse_rotation_deg: float
    fine_translation: float
    fine_rotation_deg: float
    counts: Dict[str, int]
    iterations: int
    diverged: bool


@dataclass(frozen=True)
class BenchmarkSummary:
    """
    ベンチマーク全体の集計

    Attributes:
        queries (int): クエリ数
        median (Dict[str, float]): 段階ごとの並進・回転誤差の中央値
        recall (Dict[str, Dict[str, float]]): 閾値ラベルごとの段階別の割合
    """
    queries: int
    median: Dict[str, float]
    recall: Dict[str, Dict[str, float]]


@dataclass(frozen=True)
class BenchmarkReport:
    rows: List[QueryErrors]
    summary: BenchmarkSummary
