"""
scene-gen コマンド

設定とシードから合成シーンを生成してシーンファイルに保存する。
"""
from argparse import Namespace
import logging

from gsloc.commands.common import add_common_arguments, resolved_config
from gsloc.config import settings
from gsloc.repositories.reports import ReportRepository
from gsloc.repositories.scene import SceneRepository
from gsloc.schemas.config import SceneConfig
from gsloc.services.synthesis import generate_scene

logger = logging.getLogger(__name__)

NAME = "scene-gen"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="Generate a synthetic Gaussian scene")
    parser.add_argument("--n-gaussians", type=int, default=settings.scene_n_gaussians)
    parser.add_argument("--n-cameras", type=int, default=settings.scene_n_cameras)
    parser.add_argument("--feature-dim", type=int, default=settings.scene_feature_dim)
    parser.add_argument("--sigma", type=float, default=settings.scene_sigma)
    parser.add_argument("--extent", type=float, default=settings.scene_extent)
    parser.add_argument("--clutter", type=float, default=settings.scene_clutter_fraction)
    parser.add_argument("--textured", type=float, default=settings.scene_textured_fraction)
    parser.add_argument("--width", type=int, default=settings.scene_image_width)
    parser.add_argument("--height", type=int, default=settings.scene_image_height)
    parser.add_argument("--view-correlation", type=float, default=settings.scene_view_correlation)
    add_common_arguments(parser)
    parser.set_defaults(func=run)


def scene_config(args: Namespace) -> SceneConfig:
    """引数からシーン設定を作る（不正な値は ValidationError）"""
    return SceneConfig(
        n_gaussians=args.n_gaussians,
        n_cameras=args.n_cameras,
        feature_dim=args.feature_dim,
        sigma=args.sigma,
        extent=args.extent,
        clutter_fraction=args.clutter,
        textured_fraction=args.textured,
        image_width=args.width,
        image_height=args.height,
        view_correlation=args.view_correlation,
    )


def run(args: Namespace) -> int:
    """
    シーンを生成して保存する

    Args:
        args (Namespace): 解析済みの引数

    Returns:
        int: 終了コード

    Raises:
        ValidationError: 設定が不正な場合
        OSError: 書き込みに失敗した場合
    """
    config = scene_config(args)
    scene = generate_scene(config, args.seed)
    reports = ReportRepository(args.out)
    path = reports.path(settings.scene_file_name)
    SceneRepository().save(scene, path)
    reports.register(path)
    reports.write_manifest(NAME, resolved_config(args), args.seed)
    logger.info(f"Scene written to {path}")
    return 0
