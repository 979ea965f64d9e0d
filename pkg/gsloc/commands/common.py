"""
コマンド共通処理

サブコマンドが共有する引数定義、値の解析、マニフェスト用の設定の解決を行う。
"""
from argparse import ArgumentParser, ArgumentTypeError, Namespace
from typing import Any, Dict, List
import logging

from gsloc.config import settings

logger = logging.getLogger(__name__)


def float_list(text: str) -> List[float]:
    """カンマ区切りの数値列を解析する"""
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise ArgumentTypeError("expected at least one number")
    return values


def add_common_arguments(parser: ArgumentParser) -> None:
    """--seed と --out を追加する"""
    parser.add_argument("--seed", type=int, default=settings.default_seed, help="Master seed")
    parser.add_argument("--out", required=True, help="Output directory")


def add_workers_argument(parser: ArgumentParser) -> None:
    parser.add_argument("--workers", type=int, default=1, help="Worker threads (results do not depend on it)")


def resolved_config(args: Namespace) -> Dict[str, Any]:
    """
    マニフェストに書く解決済みの引数

    Args:
        args (Namespace): 解析済みの引数

    Returns:
        Dict[str, Any]: 出力先と内部用の値を除いた引数
    """
    skip = {"func", "out", "command", "log_level"}
    return {key: value for key, value in sorted(vars(args).items()) if key not in skip}
