from datetime import datetime
from typing import Any, Dict, List, Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gsloc.schemas.config import SceneConfig


SCENE_FORMAT = "gsloc-scene"
LANDMARK_FORMAT = "gsloc-landmarks"
MANIFEST_FORMAT = "gsloc-manifest"
FORMAT_VERSION = 1

SCENE_FIELD_ORDER = {
    "gaussian": ["center", "scales", "quaternion", "opacity", "true_feature", "textured"],
    "camera": ["fx", "fy", "cx", "cy", "width", "height", "quaternion", "translation"],
    "quaternion": ["x", "y", "z", "w"],
}
LANDMARK_FIELD_ORDER = {
    "landmark": ["index", "feature"],
}


def _check_length(values: List[float], length: int, name: str) -> List[float]:
    if len(values) != length:
        raise ValueError(f"{name} must have {length} components")
    return values


class GaussianRecord(BaseModel):
    """One Gaussian as stored in a scene file."""
    model_config = ConfigDict(extra="forbid")

    center: List[float]
    scales: List[float]
    quaternion: List[float]
    opacity: float = Field(..., gt=0.0, le=1.0)
    true_feature: List[float]
    textured: bool = False

    @field_validator('center', 'scales')
    @classmethod
    def validate_vector3(cls, v: List[float]) -> List[float]:
        """Validate 3-vectors."""
        return _check_length(v, 3, "vector")

    @field_validator('quaternion')
    @classmethod
    def validate_quaternion(cls, v: List[float]) -> List[float]:
        """Validate quaternions have four components."""
        return _check_length(v, 4, "quaternion")


class CameraRecord(BaseModel):
    """One pinhole camera as stored in a scene file."""
    model_config = ConfigDict(extra="forbid")

    fx: float = Field(..., gt=0.0)
    fy: float = Field(..., gt=0.0)
    cx: float
    cy: float
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    quaternion: List[float]
    translation: List[float]

    @field_validator('quaternion')
    @classmethod
    def validate_quaternion(cls, v: List[float]) -> List[float]:
        """Validate quaternions have four components."""
        return _check_length(v, 4, "quaternion")

    @field_validator('translation')
    @classmethod
    def validate_translation(cls, v: List[float]) -> List[float]:
        """Validate the translation is a 3-vector."""
        return _check_length(v, 3, "translation")


class SceneFile(BaseModel):
    """Versioned scene file: config, seed, Gaussians and cameras."""
    model_config = ConfigDict(extra="forbid")

    format: Literal["gsloc-scene"] = SCENE_FORMAT
    version: int = FORMAT_VERSION
    field_order: Dict[str, List[str]] = Field(default_factory=lambda: dict(SCENE_FIELD_ORDER))
    config: SceneConfig
    seed: int = Field(..., ge=0)
    gaussians: List[GaussianRecord]
    cameras: List[CameraRecord]

    @field_validator('version')
    @classmethod
    def validate_version(cls, v: int) -> int:
        """Validate the file version is supported."""
        if v != FORMAT_VERSION:
            raise ValueError(f'unsupported scene file version {v}')
        return v

    @model_validator(mode='after')
    def validate_feature_dims(self) -> 'SceneFile':
        """Validate every true feature has the configured dimension."""
        for g in self.gaussians:
            if len(g.true_feature) != self.config.feature_dim:
                raise ValueError('true_feature length must equal config.feature_dim')
        return self


class LandmarkFile(BaseModel):
    """Versioned landmark DB file with sampling parameters and fused features."""
    model_config = ConfigDict(extra="forbid")

    format: Literal["gsloc-landmarks"] = LANDMARK_FORMAT
    version: int = FORMAT_VERSION
    field_order: Dict[str, List[str]] = Field(default_factory=lambda: dict(LANDMARK_FIELD_ORDER))
    scene_hash: str = Field(..., min_length=64, max_length=64)
    tau_d: float = Field(..., gt=0.0)
    n: int = Field(..., ge=1)
    k: int = Field(..., ge=1)
    seed: int = Field(..., ge=0)
    indices: List[int]
    features: Optional[List[List[float]]] = None

    @field_validator('version')
    @classmethod
    def validate_version(cls, v: int) -> int:
        """Validate the file version is supported."""
        if v != FORMAT_VERSION:
            raise ValueError(f'unsupported landmark file version {v}')
        return v

    @model_validator(mode='after')
    def validate_features(self) -> 'LandmarkFile':
        """Validate the feature block matches the landmark indices."""
        if len(set(self.indices)) != len(self.indices):
            raise ValueError('landmark indices must be unique')
        if self.features is not None:
            if len(self.features) != len(self.indices):
                raise ValueError('one feature per landmark is required')
            if len({len(f) for f in self.features}) > 1:
                raise ValueError('all features must have the same dimension')
        return self


class RunManifest(BaseModel):
    """Everything needed to replay a command run."""
    format: Literal["gsloc-manifest"] = MANIFEST_FORMAT
    version: int = FORMAT_VERSION
    command: str
    config: Dict[str, Any]
    seed: int
    input_hashes: Dict[str, str] = Field(default_factory=dict)
    output_hashes: Dict[str, str] = Field(default_factory=dict)
    tool_version: str
    created_at: datetime = Field(..., description="Run timestamp; never part of any hashed output")


class BiasRecord(BaseModel):
    """One bias experiment: analytic, empirical and simplified bias per component."""
    label: str
    views: int = Field(..., ge=1)
    trials: int = Field(..., ge=1)
    weights: List[float]
    analytic_bias: List[float]
    empirical_bias: List[float]
    simplified_bias: Optional[List[float]] = None
    stderr: List[float]
    within_4_stderr: bool
