"""
ランドマークリポジトリ

ランドマーク DB ファイルの読み書きとシーンハッシュの照合を行う。
"""
from pathlib import Path
from typing import Optional, Union
import logging

import numpy as np
from pydantic import ValidationError

from gsloc.exceptions import FormatError, SceneHashMismatch
from gsloc.models.landmarks import LandmarkDB
from gsloc.schemas.files import LandmarkFile

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class LandmarkRepository:
    """
    ランドマーク DB の永続化を管理するリポジトリクラス
    """

    def to_record(self, db: LandmarkDB) -> LandmarkFile:
        if db.scene_hash is None:
            raise ValueError("landmark DB must carry the scene hash before saving")
        features = None
        if db.features is not None:
            features = [[float(v) for v in row] for row in db.features]
        return LandmarkFile(
            scene_hash=db.scene_hash,
            tau_d=db.tau_d,
            n=db.n,
            k=db.k,
            seed=db.seed,
            indices=[int(i) for i in db.indices],
            features=features,
        )

    def from_record(self, record: LandmarkFile) -> LandmarkDB:
        features = None if record.features is None else np.array(record.features, dtype=np.float64)
        if features is not None and len(record.indices) == 0:
            features = features.reshape(0, 0)
        return LandmarkDB(
            indices=np.array(record.indices, dtype=np.int64),
            features=features,
            tau_d=record.tau_d,
            n=record.n,
            k=record.k,
            seed=record.seed,
            scene_hash=record.scene_hash,
        )

    def save(self, db: LandmarkDB, path: PathLike) -> None:
        """
        ランドマーク DB を保存する

        Raises:
            OSError: 書き込みに失敗した場合
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_record(db).model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"Saved {len(db)} landmarks to {path}")

    def load(self, path: PathLike, expected_scene_hash: Optional[str] = None) -> LandmarkDB:
        """
        ランドマーク DB を読み込む

        Args:
            path: DB ファイル
            expected_scene_hash (Optional[str]): 一致すべきシーンハッシュ

        Returns:
            LandmarkDB: 読み込んだ DB

        Raises:
            OSError: ファイルが読めない場合
            FormatError: 形式が不正な場合
            SceneHashMismatch: シーンハッシュが一致しない場合
        """
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        try:
            record = LandmarkFile.model_validate_json(text)
        except ValidationError as e:
            logger.error(f"Invalid landmark file {path}: {e}")
            raise FormatError(str(path), f"invalid landmark file: {e.error_count()} validation errors")
        if expected_scene_hash is not None and record.scene_hash != expected_scene_hash:
            raise SceneHashMismatch(record.scene_hash, expected_scene_hash)
        db = self.from_record(record)
        logger.info(f"Loaded {len(db)} landmarks from {path}")
        return db
