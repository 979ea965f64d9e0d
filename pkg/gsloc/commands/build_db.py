"""
build-db コマンド

シーンファイルからキーポイント合意サンプリングでランドマークを選び、
融合特徴を付けたランドマーク DB を保存する。
"""
from argparse import Namespace
import logging

from gsloc.commands.common import add_common_arguments, resolved_config
from gsloc.config import settings
from gsloc.repositories.landmarks import LandmarkRepository
from gsloc.repositories.reports import ReportRepository
from gsloc.repositories.scene import SceneRepository
from gsloc.schemas.config import SamplingConfig
from gsloc.services.fusion import build_landmark_features
from gsloc.services.sampling import consensus_scores, kc_sample

logger = logging.getLogger(__name__)

NAME = "build-db"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="Sample landmarks and fuse their features")
    parser.add_argument("--scene", required=True, help="Scene file")
    parser.add_argument("--tau-d", type=float, default=settings.sampling_tau_d, help="Keypoint distance threshold (px)")
    parser.add_argument("--n", type=int, default=settings.sampling_n, help="Number of anchors")
    parser.add_argument("--k", type=int, default=settings.sampling_k, help="Neighborhood size")
    parser.add_argument("--normal-mode", choices=["global", "per_view"], default="global")
    add_common_arguments(parser)
    parser.set_defaults(func=run)


def run(args: Namespace) -> int:
    """
    ランドマーク DB を作成して保存する

    Args:
        args (Namespace): 解析済みの引数

    Returns:
        int: 終了コード

    Raises:
        ValidationError: サンプリング設定が不正な場合
        FormatError: シーンファイルが不正な場合
        OSError: 入出力に失敗した場合
    """
    config = SamplingConfig(tau_d=args.tau_d, n=args.n, k=args.k)
    scene, scene_hash = SceneRepository().load(args.scene)

    scores = consensus_scores(scene, config.tau_d)
    db = kc_sample(scene, scores, config.n, config.k, args.seed)
    db = build_landmark_features(scene, db, args.seed, mode=args.normal_mode)
    db = db.with_scene_hash(scene_hash)

    reports = ReportRepository(args.out)
    path = reports.path(settings.landmark_file_name)
    LandmarkRepository().save(db, path)
    reports.register(path)
    reports.write_manifest(NAME, resolved_config(args), args.seed, {"scene": scene_hash})
    logger.info(f"Landmark DB with {len(db)} landmarks written to {path}")
    return 0
