# Pydantic schemas
from .config import LGCVConfig, QueryConfig, RansacConfig, RecallThreshold, RefineConfig, SamplingConfig, SceneConfig
