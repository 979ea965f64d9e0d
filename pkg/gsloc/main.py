"""
gsloc コマンドラインのエントリーポイント

ログ設定、例外ハンドラーの登録、サブコマンドの登録を行い、
例外を機械可読なエラー行と終了コードに変換する。
"""
from argparse import ArgumentParser
from typing import List, Optional
import logging
import sys

from gsloc.commands import bias_experiment, build_db, lgcv_sweep, localize, scene_gen
from gsloc.config import settings
from gsloc.exceptions import ExceptionHandlerRegistry, register_exception_handlers

logger = logging.getLogger(__name__)

COMMANDS = (scene_gen, bias_experiment, build_db, localize, lgcv_sweep)


def configure_logging(level: Optional[str] = None) -> None:
    """
    ログを標準エラー出力（と設定があればファイル）に出す

    Args:
        level (Optional[str]): 設定のログレベルを上書きする値
    """
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper()),
        format=settings.log_format,
        datefmt=settings.log_date_format,
        handlers=handlers,
        force=True,
    )


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog=settings.app_name, description=settings.app_description)
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    parser.add_argument("--log-level", default=None, help="Override the configured log level")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    コマンドを実行して終了コードを返す

    Args:
        argv (Optional[List[str]]): 引数（省略時は sys.argv）

    Returns:
        int: 0 は成功、2 は入力不正、3 はハッシュ不一致、4 は数値計算の失敗、5 は入出力エラー
    """
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    registry = register_exception_handlers(ExceptionHandlerRegistry())

    logger.info(f"Starting {settings.app_name} {args.command}")
    try:
        code = args.func(args)
    except Exception as e:
        record = registry.handle(e)
        print(record.to_line(), file=sys.stderr)
        return record.exit_code
    logger.info(f"Finished {args.command}")
    return code


if __name__ == "__main__":
    sys.exit(main())
