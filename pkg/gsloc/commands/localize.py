"""
localize コマンド

シーンと DB からクエリを生成して位置推定を行い、ベンチマークを書き出す。
"""
from argparse import ArgumentTypeError, Namespace
from typing import List
import logging

from gsloc.commands.common import add_common_arguments, add_workers_argument, resolved_config
from gsloc.config import settings
from gsloc.exceptions import InvalidConfig
from gsloc.repositories.landmarks import LandmarkRepository
from gsloc.repositories.reports import ReportRepository
from gsloc.repositories.scene import SceneRepository, file_hash
from gsloc.schemas.config import LGCVConfig, QueryConfig, RansacConfig, RecallThreshold, RefineConfig
from gsloc.services.pipeline import DEFAULT_RECALL_THRESHOLDS, LocalizationService

logger = logging.getLogger(__name__)

NAME = "localize"


def thresholds(text: str) -> List[RecallThreshold]:
    """'0.01/0.5,0.05/2' の形式の再現率閾値を解析する"""
    pairs = []
    for item in text.split(","):
        try:
            t, r = item.split("/")
            pairs.append(RecallThreshold(translation=float(t), rotation_deg=float(r)))
        except ValueError:
            raise ArgumentTypeError(f"expected translation/rotation pairs, got {item!r}")
    return pairs


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="Localize synthetic queries and report pose errors")
    parser.add_argument("--scene", required=True, help="Scene file")
    parser.add_argument("--db", required=True, help="Landmark DB file")
    parser.add_argument("--queries", type=int, default=20)
    parser.add_argument("--iters", type=int, default=settings.refine_iterations, help="Refinement iterations")
    parser.add_argument("--render-noise", type=float, default=None, help="Rendering noise (default 2 sigma)")
    parser.add_argument("--artifact-fraction", type=float, default=0.0)
    parser.add_argument("--temperature", type=float, default=settings.dual_softmax_temperature)
    parser.add_argument("--keypoints", type=int, default=settings.query_keypoints)
    parser.add_argument("--keypoint-noise", type=float, default=settings.query_keypoint_noise_px)
    parser.add_argument("--no-lgcv", action="store_true", help="Disable LGCV filtering")
    parser.add_argument("--lgcv-k", type=int, default=settings.lgcv_k)
    parser.add_argument("--tau-a", type=float, default=settings.lgcv_tau_a)
    parser.add_argument("--tau-s", type=float, default=settings.lgcv_tau_s)
    parser.add_argument("--tau-support", type=int, default=settings.lgcv_tau_support)
    parser.add_argument("--lgcv-mode", choices=["pairwise", "variance"], default="pairwise")
    parser.add_argument("--ransac-threshold", type=float, default=settings.ransac_threshold_px)
    parser.add_argument("--ransac-iterations", type=int, default=settings.ransac_max_iterations)
    parser.add_argument("--ransac-confidence", type=float, default=settings.ransac_confidence)
    parser.add_argument("--min-inliers", type=int, default=settings.ransac_min_inliers)
    parser.add_argument("--recall", type=thresholds, default=list(DEFAULT_RECALL_THRESHOLDS),
                        help="Recall thresholds as translation/rotation pairs")
    parser.add_argument("--dump-matches", type=int, default=0, help="Write match dumps for the first N queries")
    add_workers_argument(parser)
    add_common_arguments(parser)
    parser.set_defaults(func=run)


def refine_config(args: Namespace) -> RefineConfig:
    """引数から改善の設定を作る（不正な値は ValidationError）"""
    return RefineConfig(
        iterations=args.iters,
        render_noise=args.render_noise,
        artifact_fraction=args.artifact_fraction,
        temperature=args.temperature,
        use_lgcv=not args.no_lgcv,
        lgcv=LGCVConfig(
            k=args.lgcv_k, tau_a=args.tau_a, tau_s=args.tau_s,
            tau_support=args.tau_support, scale_mode=args.lgcv_mode,
        ),
        ransac=RansacConfig(
            max_iterations=args.ransac_iterations, threshold_px=args.ransac_threshold,
            confidence=args.ransac_confidence, min_inliers=args.min_inliers, seed=args.seed,
        ),
    )


def run(args: Namespace) -> int:
    """
    クエリの位置推定を行いベンチマークを書き出す

    Args:
        args (Namespace): 解析済みの引数

    Returns:
        int: 終了コード

    Raises:
        InvalidConfig: クエリ数が負の場合
        SceneHashMismatch: DB が別のシーンから作られている場合
        OSError: 入出力に失敗した場合
    """
    if args.queries < 0:
        raise InvalidConfig("queries must be non-negative", "queries")
    config = refine_config(args)
    query_config = QueryConfig(max_keypoints=args.keypoints, keypoint_noise_px=args.keypoint_noise)

    scene, scene_hash = SceneRepository().load(args.scene)
    db = LandmarkRepository().load(args.db, expected_scene_hash=scene_hash)

    service = LocalizationService(scene, db, config, query_config, args.seed)
    report = service.benchmark(args.queries, args.recall, workers=args.workers)

    reports = ReportRepository(args.out)
    reports.write_benchmark(report)
    for query_id in range(min(args.dump_matches, args.queries)):
        result = service.localize(service.query(query_id))
        reports.write_match_dump(f"matches_q{query_id:04d}.csv", result.matches)

    config_record = resolved_config(args)
    config_record["recall"] = [t.label() for t in args.recall]
    reports.write_manifest(NAME, config_record, args.seed, {"scene": scene_hash, "db": file_hash(args.db)})
    return 0
