"""
bias-experiment コマンド

α ブレンド最適特徴のバイアスをモンテカルロで測り、解析式と比較する。
シーンを与えた場合は融合特徴と α ブレンド最適特徴の距離分布も出力する。
"""
from argparse import Namespace
from typing import List
import logging

import numpy as np

from gsloc.commands.common import add_common_arguments, add_workers_argument, float_list, resolved_config
from gsloc.config import settings
from gsloc.exceptions import DegenerateWeights, InvalidConfig
from gsloc.models.bias import BiasReport
from gsloc.repositories.reports import ReportRepository
from gsloc.repositories.scene import SceneRepository
from gsloc.schemas.files import BiasRecord
from gsloc.services.bias import distance_histogram, empirical_bias, scene_blend_decompositions
from gsloc.services.synthesis import STREAM_GEOMETRY, observe_all, random_unit_vectors, stream

logger = logging.getLogger(__name__)

NAME = "bias-experiment"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="Compare empirical and analytic alpha-blend bias")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--scene", help="Scene file")
    source.add_argument("--synthetic-weights", type=float_list, help="Comma-separated per-view weights w_k")
    parser.add_argument("--trials", type=int, default=10000)
    parser.add_argument("--gaussians", type=int, default=8, help="Scene Gaussians to run the bias experiment on")
    parser.add_argument("--bins", type=int, default=50, help="Histogram bins over [0, 2]")
    parser.add_argument("--feature-dim", type=int, default=settings.scene_feature_dim,
                        help="Feature dimension of the synthetic experiment")
    parser.add_argument("--sigma", type=float, default=settings.scene_sigma,
                        help="Noise std of the synthetic experiment")
    parser.add_argument("--background-offset", type=float, default=1.0,
                        help="B_k = mu + offset in the synthetic experiment")
    add_workers_argument(parser)
    add_common_arguments(parser)
    parser.set_defaults(func=run)


def to_record(label: str, weights: np.ndarray, report: BiasReport) -> BiasRecord:
    simplified = None if report.simplified_bias is None else [float(v) for v in report.simplified_bias]
    return BiasRecord(
        label=label,
        views=len(weights),
        trials=report.trials,
        weights=[float(w) for w in weights],
        analytic_bias=[float(v) for v in report.analytic_bias],
        empirical_bias=[float(v) for v in report.empirical_bias],
        simplified_bias=simplified,
        stderr=[float(v) for v in report.stderr],
        within_4_stderr=bool(np.all(report.within(4.0))),
    )


def synthetic_records(args: Namespace) -> List[BiasRecord]:
    """与えた重みと一定の背景オフセットでバイアス実験を行う"""
    weights = np.asarray(args.synthetic_weights, dtype=np.float64)
    if np.any(weights < 0) or np.any(weights > 1):
        raise InvalidConfig("synthetic weights must lie in [0, 1]", "synthetic_weights")
    if args.feature_dim < 1 or args.sigma < 0:
        raise InvalidConfig("feature_dim must be positive and sigma non-negative", "feature_dim")
    mu = random_unit_vectors(stream(args.seed, STREAM_GEOMETRY), 1, args.feature_dim)[0]
    backgrounds = np.tile(mu + args.background_offset, (len(weights), 1))
    cov = np.eye(args.feature_dim) * args.sigma ** 2
    report = empirical_bias(mu, cov, weights, backgrounds, args.trials, args.seed, workers=args.workers)
    return [to_record("synthetic", weights, report)]


def scene_records(args: Namespace, scene, observations) -> List[BiasRecord]:
    """シーンから求めた (w_k, B_k) を持つ先頭のガウシアンでバイアス実験を行う"""
    records: List[BiasRecord] = []
    for i, decomposition in enumerate(scene_blend_decompositions(scene, observations)):
        if len(records) >= args.gaussians:
            break
        if decomposition is None:
            continue
        try:
            report = empirical_bias(
                scene.gaussians[i].true_feature, scene.noise_cov, decomposition.weights,
                decomposition.backgrounds, args.trials, args.seed + i, workers=args.workers,
            )
        except DegenerateWeights:
            logger.debug(f"Gaussian {i}: degenerate blend weights, skipped")
            continue
        records.append(to_record(f"gaussian-{i}", decomposition.weights, report))
    return records


def run(args: Namespace) -> int:
    """
    バイアス実験を実行してレポートを書き出す

    Args:
        args (Namespace): 解析済みの引数

    Returns:
        int: 終了コード

    Raises:
        InvalidConfig: 試行回数や重みが不正な場合
        FormatError: シーンファイルが不正な場合
    """
    if args.trials < 1:
        raise InvalidConfig("trials must be positive", "trials")
    if args.gaussians < 0:
        raise InvalidConfig("gaussians must be non-negative", "gaussians")

    reports = ReportRepository(args.out)
    input_hashes = {}
    if args.synthetic_weights is not None:
        records = synthetic_records(args)
    else:
        scene, digest = SceneRepository().load(args.scene)
        input_hashes["scene"] = digest
        observations = observe_all(scene, args.seed)
        records = scene_records(args, scene, observations)
        alpha = distance_histogram(scene, "alpha_optimum", args.bins, observations)
        fused = distance_histogram(scene, "fused", args.bins, observations)
        reports.write_histograms([alpha, fused])
        reports.write_paired_distances(alpha, fused)
        logger.info(f"Mean feature distance: alpha-optimum={alpha.mean:.5f}, fused={fused.mean:.5f}")

    reports.write_bias_records(records)
    reports.write_manifest(NAME, resolved_config(args), args.seed, input_hashes)
    return 0
