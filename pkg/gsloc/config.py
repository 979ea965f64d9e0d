"""
アプリケーション設定管理

環境変数（接頭辞 GSLOC_）と .env ファイルで上書きできる既定値を管理する。
ログ設定、シーン生成、ランドマークサンプリング、LGCV、RANSAC の既定値を含める。
"""
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """アプリケーション設定クラス"""

    model_config = SettingsConfigDict(
        env_prefix="GSLOC_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # アプリケーション設定
    app_name: str = "gsloc"
    app_version: str = "1.0.0"
    app_description: str = (
        "Landmark-based visual localization toolkit on synthetic Gaussian scenes"
    )

    # ログ設定
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    log_date_format: str = "%Y-%m-%d %H:%M:%S"

    # 乱数シード
    default_seed: int = 0

    # シーン生成の既定値
    scene_n_gaussians: int = 600
    scene_n_cameras: int = 24
    scene_feature_dim: int = 16
    scene_sigma: float = 0.05
    scene_extent: float = 1.0
    scene_clutter_fraction: float = 0.3
    scene_textured_fraction: float = 0.6
    scene_image_width: int = 320
    scene_image_height: int = 240
    scene_view_correlation: float = 0.0

    # ランドマークサンプリングの既定値
    sampling_tau_d: float = 1.0
    sampling_n: int = 20000
    sampling_k: int = 32

    # LGCV の既定値
    lgcv_k: int = 8
    lgcv_tau_a: float = 0.9659
    lgcv_tau_s: float = 0.1
    lgcv_tau_support: int = 4

    # RANSAC の既定値
    ransac_threshold_px: float = 2.0
    ransac_max_iterations: int = 10000
    ransac_confidence: float = 0.9999
    ransac_min_inliers: int = 12

    # マッチングと姿勢改善の既定値
    dual_softmax_temperature: float = 0.1
    refine_iterations: int = 1
    query_keypoints: int = 2048
    query_keypoint_noise_px: float = 1.0

    # 出力ファイルの既定名
    scene_file_name: str = "scene.json"
    landmark_file_name: str = "landmarks.json"
    manifest_file_name: str = "manifest.json"

    # ログファイル（未指定の場合は標準エラー出力のみ）
    log_file: Optional[str] = None


# グローバル設定インスタンス
settings = Settings()
