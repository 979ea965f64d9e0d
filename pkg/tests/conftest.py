"""
テスト設定ファイル

小さな合成シーン、乱数生成器、CLI 実行ヘルパーなどのフィクスチャを提供する。
シーンの生成は重いため session スコープで共有する。
"""
import os
from typing import Callable, List, Tuple

import numpy as np
import pytest

# テスト環境用の環境変数を設定
os.environ.setdefault("GSLOC_LOG_LEVEL", "WARNING")

from gsloc.main import main
from gsloc.models.geometry import Camera, Pose
from gsloc.schemas.config import SceneConfig
from gsloc.services.synthesis import generate_scene, observe_all


SMALL_SCENE = dict(
    n_gaussians=150,
    n_cameras=8,
    feature_dim=8,
    image_width=160,
    image_height=120,
)


@pytest.fixture
def rng() -> np.random.Generator:
    """テストごとに固定シードの乱数生成器を返す"""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_config() -> SceneConfig:
    return SceneConfig(**SMALL_SCENE)


@pytest.fixture(scope="session")
def small_scene(small_config):
    """
    単体テスト用の小さなシーン

    Returns:
        Scene: 150 ガウシアン、8 ビュー、D = 8
    """
    return generate_scene(small_config, seed=7)


@pytest.fixture(scope="session")
def small_observations(small_scene):
    return observe_all(small_scene, seed=7)


@pytest.fixture(scope="session")
def default_scene():
    """既定設定のシーン（600 ガウシアン、24 ビュー、σ = 0.05）"""
    return generate_scene(SceneConfig(), seed=0)


@pytest.fixture
def camera() -> Camera:
    """原点を 4 単位先から見るカメラ"""
    return Camera(200.0, 200.0, 160.0, 120.0, 320, 240,
                  Pose.look_at([0.0, -4.0, 1.0], [0.0, 0.0, 0.0]))


@pytest.fixture
def run_cli(capsys) -> Callable[[List[str]], Tuple[int, str]]:
    """
    CLI を実行して終了コードと標準エラー出力を返すヘルパー

    Returns:
        Callable: 引数リストを受け取り (終了コード, stderr) を返す関数
    """
    def _run(argv: List[str]) -> Tuple[int, str]:
        code = main(argv)
        captured = capsys.readouterr()
        return code, captured.err

    return _run


@pytest.fixture(scope="session")
def cli_workspace(tmp_path_factory):
    """
    scene-gen と build-db を済ませた出力ディレクトリ

    Returns:
        Path: scene/scene.json と db/landmarks.json を含むディレクトリ
    """
    root = tmp_path_factory.mktemp("cli")
    scene_args = [f"--{k.replace('_', '-')}={v}" for k, v in {
        "n_gaussians": 150, "n_cameras": 8, "feature_dim": 8, "width": 160, "height": 120,
    }.items()]
    assert main(["scene-gen", *scene_args, "--seed", "3", "--out", str(root / "scene")]) == 0
    assert main([
        "build-db", "--scene", str(root / "scene" / "scene.json"),
        "--n", "400", "--k", "4", "--seed", "3", "--out", str(root / "db"),
    ]) == 0
    return root
