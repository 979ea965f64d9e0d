"""
位置推定パイプラインサービス

ランドマークへの疎マッチングで初期姿勢を求め、描画と密マッチングを
繰り返して姿勢を改善する。複数クエリのベンチマークも提供する。
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import time

import numpy as np

from gsloc.exceptions import (
    InvalidParams,
    NoConsensus,
    RefinementDiverged,
    TooFewMatches,
)
from gsloc.models.geometry import Camera
from gsloc.models.landmarks import LandmarkDB
from gsloc.models.matching import MatchSet, MatchStage
from gsloc.models.pipeline import (
    BenchmarkReport,
    BenchmarkSummary,
    IterationRecord,
    LocalizationResult,
    QueryErrors,
    QueryView,
)
from gsloc.models.pose import PoseEstimate
from gsloc.models.scene import KeypointSet, Scene
from gsloc.schemas.config import MINIMAL_SAMPLE, QueryConfig, RansacConfig, RecallThreshold, RefineConfig
from gsloc.services.geometry import pose_error
from gsloc.services.matching import coarse_dense_match, fine_match, lgcv_filter, sparse_match
from gsloc.services.pose import lift_to_3d, ransac_pnp
from gsloc.services.rendering import make_query_view, render_synthetic_view

logger = logging.getLogger(__name__)

DEFAULT_RECALL_THRESHOLDS = (
    RecallThreshold(translation=0.01, rotation_deg=0.5),
    RecallThreshold(translation=0.05, rotation_deg=2.0),
    RecallThreshold(translation=0.1, rotation_deg=5.0),
)


def localize_coarse(
    keypoints: KeypointSet,
    db: LandmarkDB,
    scene: Scene,
    camera: Camera,
    config: Optional[RansacConfig] = None,
):
    """
    クエリキーポイントをランドマークに疎マッチングして初期姿勢を求める

    Args:
        keypoints (KeypointSet): クエリのキーポイントと記述子
        db (LandmarkDB): 特徴付きのランドマーク
        scene (Scene): ランドマーク中心を与えるシーン
        camera (Camera): クエリカメラの内部パラメータ
        config (RansacConfig): RANSAC 設定

    Returns:
        Tuple[PoseEstimate, MatchSet]: P_coarse と疎マッチ

    Raises:
        InvalidParams: キーポイントが6点未満、または DB に特徴がない場合
        NoConsensus: RANSAC が合意を得られない場合
    """
    if len(keypoints) < MINIMAL_SAMPLE:
        raise InvalidParams(
            f"at least {MINIMAL_SAMPLE} query keypoints are required (got {len(keypoints)})", "keypoints"
        )
    if not db.has_features or len(db) == 0:
        raise InvalidParams("landmark DB has no fused features", "db")
    matches = sparse_match(keypoints.descriptors, db.features)
    matches = replace(matches, query_points=keypoints.pixels[matches.query_indices])
    world = scene.centers[db.indices[matches.reference_indices]]
    pixels = keypoints.pixels[matches.query_indices]
    estimate = ransac_pnp((pixels, world), camera, config)
    return estimate, matches


def _lgcv_stage(matches: MatchSet, config: RefineConfig) -> MatchSet:
    if not config.use_lgcv:
        return matches.select(np.ones(len(matches), dtype=bool), MatchStage.LGCV_FILTERED)
    try:
        mask = lgcv_filter(matches.query_points, matches.reference_points, config.lgcv)
    except TooFewMatches as e:
        logger.warning(f"LGCV skipped: {e}")
        mask = np.ones(len(matches), dtype=bool)
    return matches.select(mask, MatchStage.LGCV_FILTERED)


def refine(
    query: QueryView,
    p_coarse: PoseEstimate,
    scene: Scene,
    config: Optional[RefineConfig] = None,
    seed: int = 0,
    iterations: Optional[int] = None,
    coarse_sparse: int = 0,
    strict: bool = False,
) -> LocalizationResult:
    """
    描画と密マッチングを繰り返して姿勢を改善する

    各反復で現在の姿勢から描画し直し、粗いグリッドの dual-softmax と相互最近傍、
    LGCV、8x8 窓の精密マッチング、深度による持ち上げ、RANSAC PnP を順に行う。

    Args:
        query (QueryView): クエリビュー
        p_coarse (PoseEstimate): 初期推定
        scene (Scene): シーン
        config (RefineConfig): 改善の設定
        seed (int): 描画ノイズの乱数シード
        iterations (Optional[int]): 反復回数（省略時は config.iterations）
        coarse_sparse (int): 結果に記録する疎マッチ数
        strict (bool): True なら合意が得られないとき例外を送出する

    Returns:
        LocalizationResult: 反復の記録と P_fine

    Raises:
        RefinementDiverged: strict で反復が合意を得られなかった場合
    """
    config = config or RefineConfig()
    n_iters = config.iterations if iterations is None else iterations
    noise = 2.0 * scene.config.sigma if config.render_noise is None else config.render_noise
    ransac_config = config.ransac

    current = p_coarse
    history: List[IterationRecord] = []
    stages: Tuple[MatchSet, ...] = ()
    diverged = False
    for it in range(n_iters):
        render = render_synthetic_view(
            scene, current.pose, query.camera, noise, seed,
            config.artifact_fraction, keys=(query.query_id, it),
        )
        dense = coarse_dense_match(query.grids.coarse, render.coarse, config.temperature, config.probability_floor)
        filtered = _lgcv_stage(dense, config)
        fine = fine_match(filtered, query.grids.fine, render.fine, config.temperature)
        lifted, _ = lift_to_3d(fine, render.depth, current.pose, query.camera)
        stages = (dense, filtered, fine)
        try:
            estimate = ransac_pnp(lifted, query.camera, ransac_config)
        except (NoConsensus, InvalidParams) as e:
            logger.warning(f"Query {query.query_id}: refinement iteration {it} diverged: {e}")
            history.append(IterationRecord(it, len(dense), len(filtered), len(fine), len(lifted), 0, 0.0))
            diverged = True
            if strict:
                raise RefinementDiverged(it, e)
            break
        history.append(IterationRecord(
            it, len(dense), len(filtered), len(fine), len(lifted),
            estimate.inlier_count, estimate.inlier_ratio,
        ))
        current = estimate

    return LocalizationResult(
        query_id=query.query_id,
        p_coarse=p_coarse,
        p_fine=current,
        coarse_sparse=coarse_sparse,
        history=tuple(history),
        diverged=diverged,
        matches=stages,
    )


def recall(errors_t: np.ndarray, errors_r: np.ndarray, threshold: RecallThreshold) -> float:
    """並進・回転ともに閾値未満のクエリの割合"""
    if len(errors_t) == 0:
        return 0.0
    hits = (errors_t < threshold.translation) & (errors_r < threshold.rotation_deg)
    return float(np.mean(hits))


def summarize(rows: Sequence[QueryErrors], thresholds: Sequence[RecallThreshold]) -> BenchmarkSummary:
    """
    クエリごとの誤差から中央値と再現率を集計する

    Args:
        rows: クエリごとの誤差
        thresholds: 再現率の (並進, 回転) 閾値

    Returns:
        BenchmarkSummary: 段階ごとの中央値と閾値ごとの再現率
    """
    columns = {
        "coarse": (np.array([r.coarse_translation for r in rows]), np.array([r.coarse_rotation_deg for r in rows])),
        "fine": (np.array([r.fine_translation for r in rows]), np.array([r.fine_rotation_deg for r in rows])),
    }
    median: Dict[str, float] = {}
    recalls: Dict[str, Dict[str, float]] = {}
    for stage, (t, r) in columns.items():
        median[f"{stage}_translation"] = float(np.median(t)) if len(t) else float("nan")
        median[f"{stage}_rotation_deg"] = float(np.median(r)) if len(r) else float("nan")
    for threshold in thresholds:
        recalls[threshold.label()] = {
            stage: recall(t, r, threshold) for stage, (t, r) in columns.items()
        }
    return BenchmarkSummary(queries=len(rows), median=median, recall=recalls)


class LocalizationService:
    """
    シーンとランドマーク DB を共有してクエリの位置推定を行うサービス

    シーンと DB は読み取り専用で、クエリごとに独立した乱数ストリームを使う。
    """

    def __init__(
        self,
        scene: Scene,
        db: LandmarkDB,
        refine_config: Optional[RefineConfig] = None,
        query_config: Optional[QueryConfig] = None,
        seed: int = 0,
    ):
        self.scene = scene
        self.db = db
        self.refine_config = refine_config or RefineConfig()
        self.query_config = query_config or QueryConfig()
        self.seed = seed

    def query(self, query_id: int) -> QueryView:
        return make_query_view(self.scene, query_id, self.seed, self.query_config)

    def localize(self, query: QueryView) -> LocalizationResult:
        """
        1つのクエリの姿勢を推定する

        Args:
            query (QueryView): クエリビュー

        Returns:
            LocalizationResult: P_coarse と P_fine

        Raises:
            NoConsensus: 初期推定で合意が得られない場合
        """
        start = time.perf_counter()
        p_coarse, sparse = localize_coarse(
            query.keypoints, self.db, self.scene, query.camera, self.refine_config.ransac
        )
        result = refine(
            query, p_coarse, self.scene, self.refine_config, self.seed,
            coarse_sparse=len(sparse),
        )
        elapsed = time.perf_counter() - start
        logger.info(
            f"Query {query.query_id}: {len(sparse)} sparse matches, "
            f"{result.iterations} refinement iterations, {elapsed:.2f}s"
        )
        return LocalizationResult(
            query_id=result.query_id,
            p_coarse=result.p_coarse,
            p_fine=result.p_fine,
            coarse_sparse=result.coarse_sparse,
            history=result.history,
            diverged=result.diverged,
            matches=(sparse, *result.matches),
            wall_time=elapsed,
        )

    def evaluate(self, query_id: int) -> QueryErrors:
        """クエリを生成して位置推定し、正解姿勢との誤差を返す"""
        query = self.query(query_id)
        try:
            result = self.localize(query)
        except (NoConsensus, InvalidParams) as e:
            # 初期推定に失敗したクエリは誤差無限大として集計する
            logger.warning(f"Query {query_id}: coarse localization failed: {e}")
            return QueryErrors(
                query_id=query_id,
                coarse_translation=float("inf"),
                coarse_rotation_deg=float("inf"),
                fine_translation=float("inf"),
                fine_rotation_deg=float("inf"),
                counts={"coarse_sparse": 0, "coarse_dense": 0, "lgcv_filtered": 0, "fine": 0},
                iterations=0,
                diverged=True,
            )
        coarse_t, coarse_r = pose_error(result.p_coarse.pose, query.true_pose)
        fine_t, fine_r = pose_error(result.p_fine.pose, query.true_pose)
        return QueryErrors(
            query_id=query_id,
            coarse_translation=coarse_t,
            coarse_rotation_deg=coarse_r,
            fine_translation=fine_t,
            fine_rotation_deg=fine_r,
            counts=result.stage_counts(),
            iterations=result.iterations,
            diverged=result.diverged,
        )

    def benchmark(
        self,
        n_queries: int,
        thresholds: Sequence[RecallThreshold] = DEFAULT_RECALL_THRESHOLDS,
        workers: int = 1,
    ) -> BenchmarkReport:
        """
        複数クエリの位置推定を行い誤差を集計する

        Args:
            n_queries (int): クエリ数（0 なら空の結果）
            thresholds: 再現率の閾値
            workers (int): 並列に処理するスレッド数

        Returns:
            BenchmarkReport: クエリ番号順の誤差と集計
        """
        if n_queries < 0:
            raise InvalidParams("number of queries must be non-negative", "queries")
        ids = range(n_queries)
        if workers > 1 and n_queries > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                rows = list(pool.map(self.evaluate, ids))
        else:
            rows = [self.evaluate(i) for i in ids]
        summary = summarize(rows, thresholds)
        logger.info(f"Benchmark: {n_queries} queries, medians {summary.median}")
        return BenchmarkReport(rows=rows, summary=summary)
