"""
モデルパッケージ

幾何、シーン、バイアス解析、ランドマーク、対応付け、姿勢、パイプラインの値オブジェクトをまとめる。
"""
from gsloc.models.geometry import Camera, PixelPoint, Pose
from gsloc.models.landmarks import LandmarkDB
from gsloc.models.scene import Gaussian, KeypointSet, Scene, ViewObservation

__all__ = ["Camera", "PixelPoint", "Pose", "LandmarkDB", "Gaussian", "KeypointSet", "Scene", "ViewObservation"]
