"""
シーンリポジトリ

シーンファイル（バージョン付き JSON）の読み書きとシーンハッシュの計算を行う。
キーポイントは保存せず、読み込み時にシードから再生成する。
"""
from pathlib import Path
from typing import Tuple, Union
import hashlib
import logging

import numpy as np
from pydantic import ValidationError

from gsloc.exceptions import FormatError
from gsloc.models.geometry import Camera, Pose
from gsloc.models.scene import Gaussian, Scene
from gsloc.schemas.files import CameraRecord, GaussianRecord, SceneFile
from gsloc.services.synthesis import assemble_scene

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def file_hash(path: PathLike) -> str:
    """
    ファイルの SHA-256 を求める

    Args:
        path: ファイルパス

    Returns:
        str: 16進表記のハッシュ
    """
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _floats(values) -> list:
    return [float(v) for v in np.asarray(values).reshape(-1)]


class SceneRepository:
    """
    シーンファイルの永続化を管理するリポジトリクラス
    """

    def to_record(self, scene: Scene) -> SceneFile:
        """シーンをファイルレコードに変換する"""
        gaussians = [
            GaussianRecord(
                center=_floats(g.center),
                scales=_floats(g.scales),
                quaternion=_floats(g.quaternion if g.quaternion is not None
                                   else Pose(g.orientation, np.zeros(3)).to_quaternion()),
                opacity=float(g.opacity),
                true_feature=_floats(g.true_feature),
                textured=bool(g.textured),
            )
            for g in scene.gaussians
        ]
        cameras = [
            CameraRecord(
                fx=c.fx, fy=c.fy, cx=c.cx, cy=c.cy, width=c.width, height=c.height,
                quaternion=_floats(c.pose.to_quaternion()),
                translation=_floats(c.pose.translation),
            )
            for c in scene.cameras
        ]
        return SceneFile(config=scene.config, seed=scene.seed, gaussians=gaussians, cameras=cameras)

    def from_record(self, record: SceneFile) -> Scene:
        """ファイルレコードからシーンを復元し、キーポイントを再生成する"""
        gaussians = [
            Gaussian.from_quaternion(
                g.center, g.scales, g.quaternion, g.opacity, g.true_feature, textured=g.textured
            )
            for g in record.gaussians
        ]
        cameras = [
            Camera(c.fx, c.fy, c.cx, c.cy, c.width, c.height,
                   Pose.from_quaternion(c.quaternion, c.translation))
            for c in record.cameras
        ]
        return assemble_scene(record.config, record.seed, gaussians, cameras)

    def save(self, scene: Scene, path: PathLike) -> str:
        """
        シーンをファイルに保存する

        Args:
            scene (Scene): 保存するシーン
            path: 保存先

        Returns:
            str: 保存したファイルのハッシュ

        Raises:
            OSError: 書き込みに失敗した場合
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        text = self.to_record(scene).model_dump_json(indent=2)
        path.write_text(text + "\n", encoding="utf-8")
        digest = file_hash(path)
        logger.info(f"Saved scene to {path} ({scene.n_gaussians} gaussians, hash {digest[:12]})")
        return digest

    def load(self, path: PathLike) -> Tuple[Scene, str]:
        """
        シーンファイルを読み込む

        Args:
            path: シーンファイル

        Returns:
            Tuple[Scene, str]: シーンとファイルハッシュ

        Raises:
            OSError: ファイルが読めない場合
            FormatError: 形式が不正な場合
        """
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        try:
            record = SceneFile.model_validate_json(text)
        except ValidationError as e:
            logger.error(f"Invalid scene file {path}: {e}")
            raise FormatError(str(path), f"invalid scene file: {e.error_count()} validation errors")
        try:
            scene = self.from_record(record)
        except ValueError as e:
            raise FormatError(str(path), str(e))
        digest = file_hash(path)
        logger.info(f"Loaded scene from {path} (hash {digest[:12]})")
        return scene, digest
