"""
lgcv-sweep コマンド

角度閾値とスケール閾値の格子で LGCV の適合率と再現率を集計する。
"""
from argparse import Namespace
import logging

from gsloc.commands.common import add_common_arguments, float_list, resolved_config
from gsloc.config import settings
from gsloc.schemas.config import LGCVConfig
from gsloc.repositories.reports import ReportRepository
from gsloc.services.sweep import lgcv_sweep

logger = logging.getLogger(__name__)

NAME = "lgcv-sweep"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="Sweep LGCV thresholds on labeled synthetic matches")
    parser.add_argument("--tau-a", type=float_list, default=[0.9, 0.94, settings.lgcv_tau_a, 0.99])
    parser.add_argument("--tau-s", type=float_list, default=[0.05, settings.lgcv_tau_s, 0.2, 0.4])
    parser.add_argument("--trials", type=int, default=20, help="Synthetic match sets")
    parser.add_argument("--matches", type=int, default=200, help="Matches per set")
    parser.add_argument("--outlier-fraction", type=float, default=0.5)
    parser.add_argument("--noise-px", type=float, default=0.5)
    parser.add_argument("--lgcv-k", type=int, default=settings.lgcv_k)
    parser.add_argument("--tau-support", type=int, default=settings.lgcv_tau_support)
    parser.add_argument("--lgcv-mode", choices=["pairwise", "variance"], default="pairwise")
    add_common_arguments(parser)
    parser.set_defaults(func=run)


def run(args: Namespace) -> int:
    """
    閾値スイープを実行して CSV を書き出す

    Returns:
        int: 終了コード

    Raises:
        InvalidParams: 試行数やマッチ数が不正な場合
    """
    base = LGCVConfig(k=args.lgcv_k, tau_support=args.tau_support, scale_mode=args.lgcv_mode)
    cells = lgcv_sweep(
        args.tau_a, args.tau_s, args.seed,
        trials=args.trials, n_matches=args.matches,
        outlier_fraction=args.outlier_fraction, noise_px=args.noise_px, base=base,
    )
    reports = ReportRepository(args.out)
    reports.write_sweep(cells)
    reports.write_manifest(NAME, resolved_config(args), args.seed)
    return 0
