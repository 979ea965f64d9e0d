"""
カスタム例外と例外ハンドラー

ドメイン例外クラスと、CLI 用の例外ハンドラーを定義する。
各ハンドラーは機械可読なエラーレコードと終了コードを返す。
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Type
import json
import logging

from pydantic import ValidationError

logger = logging.getLogger(__name__)


# 終了コード
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INVALID_INPUT = 2
EXIT_HASH_MISMATCH = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


class GslocError(Exception):
    """すべてのドメイン例外の基底クラス"""
    error_type = "gsloc_error"

    def __init__(self, message: str):
        self.message = message
        super().__init__(message)

    def context(self) -> Dict[str, Any]:
        """エラーレコードに含める追加情報"""
        return {}


# ---------------------------------------------------------------------------
# 入力・設定エラー
# ---------------------------------------------------------------------------

class InvalidConfig(GslocError):
    """設定値のバリデーションエラー"""
    error_type = "invalid_config"

    def __init__(self, message: str, field_name: Optional[str] = None):
        self.field_name = field_name
        super().__init__(message)

    def context(self) -> Dict[str, Any]:
        return {"field": self.field_name} if self.field_name else {}


class InvalidParams(InvalidConfig):
    """アルゴリズム引数のバリデーションエラー"""
    error_type = "invalid_params"


class LengthMismatch(GslocError):
    """対応するリストの長さが一致しない"""
    error_type = "length_mismatch"

    def __init__(self, expected: int, actual: int, what: str = "inputs"):
        self.expected = expected
        self.actual = actual
        super().__init__(f"Length mismatch in {what}: expected {expected}, got {actual}")

    def context(self) -> Dict[str, Any]:
        return {"expected": self.expected, "actual": self.actual}


class DimensionMismatch(GslocError):
    """記述子の次元が一致しない"""
    error_type = "dimension_mismatch"

    def __init__(self, left: int, right: int):
        self.left = left
        self.right = right
        super().__init__(f"Descriptor dimensions differ: {left} vs {right}")

    def context(self) -> Dict[str, Any]:
        return {"left": self.left, "right": self.right}


class FormatError(GslocError):
    """ファイル形式の読み込みエラー"""
    error_type = "format_error"

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")

    def context(self) -> Dict[str, Any]:
        return {"path": self.path}


class SceneHashMismatch(GslocError):
    """ランドマークDBが別のシーンから作られている"""
    error_type = "scene_hash_mismatch"

    def __init__(self, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"Landmark DB was built for scene {expected[:12]}, got scene {actual[:12]}"
        )

    def context(self) -> Dict[str, Any]:
        return {"expected": self.expected, "actual": self.actual}


# ---------------------------------------------------------------------------
# 数値・幾何エラー
# ---------------------------------------------------------------------------

class NumericalError(GslocError):
    """数値計算エラーの基底クラス"""
    error_type = "numerical_error"


class NonPositiveDepth(NumericalError):
    """点がカメラ平面上または背後にある"""
    error_type = "non_positive_depth"

    def __init__(self, depth: float):
        self.depth = depth
        super().__init__(f"Point has non-positive depth {depth:.6g}")

    def context(self) -> Dict[str, Any]:
        return {"depth": self.depth}


class DegenerateDirection(NumericalError):
    """カメラ中心とガウシアン中心が一致する"""
    error_type = "degenerate_direction"

    def __init__(self, distance: float):
        self.distance = distance
        super().__init__(f"Camera center coincides with point (distance {distance:.3g})")


class FullContribution(NumericalError):
    """対象ガウシアンが画素を完全に占有しており背景特徴が定義できない"""
    error_type = "full_contribution"

    def __init__(self, weight: float):
        self.weight = weight
        super().__init__(f"Target weight {weight:.15g} leaves no background")


class DegenerateWeights(NumericalError):
    """重みの二乗和がゼロに近い"""
    error_type = "degenerate_weights"

    def __init__(self, sum_sq: float):
        self.sum_sq = sum_sq
        super().__init__(f"Sum of squared weights {sum_sq:.3g} is degenerate")


class ZeroVector(NumericalError):
    """ノルムがゼロの特徴ベクトル"""
    error_type = "zero_vector"

    def __init__(self, what: str = "feature"):
        super().__init__(f"Zero-norm {what} vector")


class AmbiguousNormal(NumericalError):
    """最小スケール軸が一意に決まらない"""
    error_type = "ambiguous_normal"

    def __init__(self, scales):
        self.scales = tuple(float(s) for s in scales)
        super().__init__(f"Two smallest scales coincide: {self.scales}")


class NoVisibleViews(NumericalError):
    """ガウシアンが可視なビューが存在しない"""
    error_type = "no_visible_views"

    def __init__(self, gaussian_index: Optional[int] = None):
        self.gaussian_index = gaussian_index
        super().__init__(f"Gaussian {gaussian_index} has no visible views")


class TooFewMatches(NumericalError):
    """マッチ数が近傍数以下"""
    error_type = "too_few_matches"

    def __init__(self, count: int, required: int):
        self.count = count
        self.required = required
        super().__init__(f"{count} matches, at least {required} required")

    def context(self) -> Dict[str, Any]:
        return {"count": self.count, "required": self.required}


class EmptyWindow(NumericalError):
    """切り出した窓に有効なセルが存在しない"""
    error_type = "empty_window"


class DegenerateConfiguration(NumericalError):
    """DLT の係数行列がランク落ちしている"""
    error_type = "degenerate_configuration"


class NoConsensus(NumericalError):
    """RANSAC が十分なインライアを得られなかった"""
    error_type = "no_consensus"

    def __init__(self, inliers: int, required: int):
        self.inliers = inliers
        self.required = required
        super().__init__(f"Best hypothesis has {inliers} inliers, {required} required")

    def context(self) -> Dict[str, Any]:
        return {"inliers": self.inliers, "required": self.required}


class RefinementDiverged(NumericalError):
    """姿勢改善の反復で合意が得られなかった"""
    error_type = "refinement_diverged"

    def __init__(self, iteration: int, cause: Optional[Exception] = None):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"Refinement diverged at iteration {iteration}: {cause}")


# ---------------------------------------------------------------------------
# 例外ハンドラー
# ---------------------------------------------------------------------------

@dataclass
class ErrorRecord:
    """CLI が標準エラー出力に書き出す機械可読なエラー"""
    exit_code: int
    error_type: str
    detail: str
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_line(self) -> str:
        """
        エラーレコードを1行の JSON に変換する

        Returns:
            str: error: {...} 形式の1行
        """
        payload = {"error_type": self.error_type, "detail": self.detail}
        payload.update(self.extra)
        return "error: " + json.dumps(payload, sort_keys=True, default=str)


Handler = Callable[[Exception], ErrorRecord]


def invalid_input_handler(exc: GslocError) -> ErrorRecord:
    """
    入力・設定エラーの例外ハンドラー

    Args:
        exc (GslocError): 入力エラー

    Returns:
        ErrorRecord: 終了コード2のエラーレコード
    """
    logger.warning(f"Invalid input: {exc}")
    return ErrorRecord(EXIT_INVALID_INPUT, exc.error_type, str(exc), exc.context())


def validation_error_handler(exc: ValidationError) -> ErrorRecord:
    """
    pydantic のバリデーションエラーの例外ハンドラー

    Args:
        exc (ValidationError): バリデーションエラー

    Returns:
        ErrorRecord: invalid_config として扱うエラーレコード
    """
    logger.warning(f"Config validation error: {exc}")
    fields = [".".join(str(p) for p in err["loc"]) for err in exc.errors()]
    return ErrorRecord(
        EXIT_INVALID_INPUT, InvalidConfig.error_type, str(exc), {"fields": fields}
    )


def hash_mismatch_handler(exc: SceneHashMismatch) -> ErrorRecord:
    """
    シーンハッシュ不一致の例外ハンドラー

    Args:
        exc (SceneHashMismatch): ハッシュ不一致

    Returns:
        ErrorRecord: 終了コード3のエラーレコード
    """
    logger.error(f"Scene hash mismatch: {exc}")
    return ErrorRecord(EXIT_HASH_MISMATCH, exc.error_type, str(exc), exc.context())


def numerical_error_handler(exc: NumericalError) -> ErrorRecord:
    """
    数値計算エラーの例外ハンドラー

    Args:
        exc (NumericalError): 数値計算エラー

    Returns:
        ErrorRecord: 終了コード4のエラーレコード
    """
    logger.error(f"Numerical failure: {exc}")
    return ErrorRecord(EXIT_NUMERICAL, exc.error_type, str(exc), exc.context())


def io_error_handler(exc: OSError) -> ErrorRecord:
    """
    ファイル入出力エラーの例外ハンドラー

    Args:
        exc (OSError): 入出力エラー

    Returns:
        ErrorRecord: 終了コード5のエラーレコード
    """
    logger.error(f"IO error: {exc}")
    return ErrorRecord(EXIT_IO, "io_error", str(exc), {"path": getattr(exc, "filename", None)})


def general_exception_handler(exc: Exception) -> ErrorRecord:
    """
    想定外の例外の例外ハンドラー

    Args:
        exc (Exception): 一般的な例外

    Returns:
        ErrorRecord: 終了コード1のエラーレコード
    """
    logger.error(f"Unexpected error: {exc}", exc_info=True)
    return ErrorRecord(EXIT_UNEXPECTED, "internal_error", "An unexpected error occurred")


class ExceptionHandlerRegistry:
    """例外型からハンドラーを解決するテーブル"""

    def __init__(self):
        self._handlers: Dict[Type[BaseException], Handler] = {}

    def add_exception_handler(self, exc_type: Type[BaseException], handler: Handler) -> None:
        self._handlers[exc_type] = handler

    def handle(self, exc: Exception) -> ErrorRecord:
        """
        例外の MRO を辿って最も具体的なハンドラーを呼び出す

        Args:
            exc (Exception): 処理する例外

        Returns:
            ErrorRecord: ハンドラーが生成したエラーレコード
        """
        for klass in type(exc).__mro__:
            handler = self._handlers.get(klass)
            if handler is not None:
                return handler(exc)
        return general_exception_handler(exc)


def register_exception_handlers(registry: ExceptionHandlerRegistry) -> ExceptionHandlerRegistry:
    """
    CLI の例外ハンドラーテーブルにハンドラーを登録する

    Args:
        registry (ExceptionHandlerRegistry): 登録先のテーブル

    Returns:
        ExceptionHandlerRegistry: 登録済みのテーブル
    """
    registry.add_exception_handler(InvalidConfig, invalid_input_handler)
    registry.add_exception_handler(LengthMismatch, invalid_input_handler)
    registry.add_exception_handler(DimensionMismatch, invalid_input_handler)
    registry.add_exception_handler(FormatError, invalid_input_handler)
    registry.add_exception_handler(ValidationError, validation_error_handler)
    registry.add_exception_handler(SceneHashMismatch, hash_mismatch_handler)
    registry.add_exception_handler(NumericalError, numerical_error_handler)
    registry.add_exception_handler(OSError, io_error_handler)
    registry.add_exception_handler(Exception, general_exception_handler)

    logger.debug("Exception handlers registered successfully")
    return registry
