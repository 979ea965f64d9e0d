from typing import Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gsloc.config import settings


class SceneConfig(BaseModel):
    """Parameters of a synthetic Gaussian scene."""
    model_config = ConfigDict(frozen=True)

    n_gaussians: int = Field(settings.scene_n_gaussians, gt=0, description="Number of Gaussians")
    n_cameras: int = Field(settings.scene_n_cameras, gt=0, description="Number of training cameras")
    feature_dim: int = Field(settings.scene_feature_dim, ge=2, description="Feature dimension D")
    sigma: float = Field(settings.scene_sigma, ge=0.0, description="Per-component noise std of 2D features")
    extent: float = Field(settings.scene_extent, gt=0.0, description="Radius of the ball holding Gaussian centers")
    clutter_fraction: float = Field(
        settings.scene_clutter_fraction, ge=0.0, le=1.0,
        description="Share of keypoints that are clutter (not on a Gaussian)"
    )
    textured_fraction: float = Field(
        settings.scene_textured_fraction, ge=0.0, le=1.0,
        description="Share of Gaussians that produce keypoints"
    )
    image_width: int = Field(settings.scene_image_width, ge=16)
    image_height: int = Field(settings.scene_image_height, ge=16)
    camera_distance: float = Field(3.0, gt=1.0, description="Camera distance in units of extent")
    opacity_min: float = Field(0.1, gt=0.0, le=1.0)
    opacity_max: float = Field(0.7, gt=0.0, le=1.0)
    scale_base: float = Field(0.07, gt=0.0, description="Gaussian scale in units of extent")
    flatness: float = Field(0.15, gt=0.0, lt=1.0, description="Ratio of the thin axis to the others")
    view_correlation: float = Field(
        settings.scene_view_correlation, ge=0.0, lt=1.0,
        description="Share of the feature noise variance shared across views"
    )

    @model_validator(mode='after')
    def validate_opacity_range(self) -> 'SceneConfig':
        """Validate that opacity_min is not above opacity_max."""
        if self.opacity_min > self.opacity_max:
            raise ValueError('opacity_min must be less than or equal to opacity_max')
        return self


class SamplingConfig(BaseModel):
    """Keypoint-consensus landmark sampling parameters."""
    model_config = ConfigDict(frozen=True)

    tau_d: float = Field(settings.sampling_tau_d, gt=0.0, description="Keypoint distance threshold (px)")
    n: int = Field(settings.sampling_n, ge=1, description="Number of anchors")
    k: int = Field(settings.sampling_k, ge=1, description="Neighborhood size")


class LGCVConfig(BaseModel):
    """Local geometric consistency verification parameters."""
    model_config = ConfigDict(frozen=True)

    k: int = Field(settings.lgcv_k, ge=2, description="Neighbors per match")
    tau_a: float = Field(settings.lgcv_tau_a, gt=0.0, lt=1.0, description="Angular threshold")
    tau_s: float = Field(settings.lgcv_tau_s, gt=0.0, description="Scale threshold")
    tau_support: int = Field(settings.lgcv_tau_support, ge=0, description="Support score threshold")
    epsilon: float = Field(1e-12, gt=0.0, description="Guard for ratio denominators")
    scale_mode: Literal["pairwise", "variance"] = Field(
        "pairwise",
        description="pairwise: max pairwise ratio difference; variance: triplet variance rule"
    )


# PnP の最小サンプル数
MINIMAL_SAMPLE = 6


class RansacConfig(BaseModel):
    """RANSAC + PnP parameters."""
    model_config = ConfigDict(frozen=True)

    max_iterations: int = Field(settings.ransac_max_iterations, ge=1)
    threshold_px: float = Field(settings.ransac_threshold_px, gt=0.0, description="Inlier reprojection threshold")
    confidence: float = Field(settings.ransac_confidence, gt=0.0, lt=1.0)
    seed: int = Field(settings.default_seed, ge=0)
    min_inliers: int = Field(MINIMAL_SAMPLE, ge=MINIMAL_SAMPLE, description="Inliers required to accept a pose")
    refine_iterations: int = Field(20, ge=0, description="Levenberg-Marquardt iterations on the final inliers")


class RefineConfig(BaseModel):
    """Render-and-match refinement parameters."""
    model_config = ConfigDict(frozen=True)

    iterations: int = Field(settings.refine_iterations, ge=0)
    render_noise: Optional[float] = Field(
        None, ge=0.0, description="Rendering feature noise; defaults to twice the scene sigma"
    )
    artifact_fraction: float = Field(0.0, ge=0.0, le=1.0, description="Share of displaced splats")
    temperature: float = Field(settings.dual_softmax_temperature, gt=0.0)
    probability_floor: Optional[float] = Field(None, ge=0.0, le=1.0)
    use_lgcv: bool = True
    lgcv: LGCVConfig = Field(default_factory=LGCVConfig)
    ransac: RansacConfig = Field(
        default_factory=lambda: RansacConfig(min_inliers=settings.ransac_min_inliers),
        description="Pipeline RANSAC; requires settings.ransac_min_inliers inliers",
    )


class QueryConfig(BaseModel):
    """Synthetic query view parameters."""
    model_config = ConfigDict(frozen=True)

    max_keypoints: int = Field(settings.query_keypoints, ge=6)
    keypoint_noise_px: float = Field(settings.query_keypoint_noise_px, ge=0.0)
    clutter_fraction: Optional[float] = Field(
        None, ge=0.0, le=1.0, description="Defaults to the scene clutter fraction"
    )


class RecallThreshold(BaseModel):
    """A (translation, rotation) recall threshold pair."""
    model_config = ConfigDict(frozen=True)

    translation: float = Field(..., gt=0.0)
    rotation_deg: float = Field(..., gt=0.0)

    @field_validator('rotation_deg')
    @classmethod
    def validate_rotation(cls, v: float) -> float:
        """Validate the rotation threshold is below a half turn."""
        if v > 180.0:
            raise ValueError('rotation threshold must not exceed 180 degrees')
        return v

    def label(self) -> str:
        return f"{self.translation:g}/{self.rotation_deg:g}"
