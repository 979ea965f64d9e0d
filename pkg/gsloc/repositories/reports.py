"""
レポートリポジトリ

実行マニフェスト、CSV レポート、テキストの集計を出力ディレクトリに書き出す。
浮動小数点は最短の往復可能表現で書き、同じ入力から同じバイト列を得る。
"""
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union
import csv
import logging

import numpy as np

from gsloc.config import settings
from gsloc.models.bias import DistanceHistogram
from gsloc.models.matching import MatchSet, SweepCell
from gsloc.models.pipeline import BenchmarkReport, BenchmarkSummary
from gsloc.repositories.scene import file_hash
from gsloc.schemas.files import BiasRecord, RunManifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BENCHMARK_COLUMNS = [
    "query_id",
    "coarse_translation",
    "coarse_rotation_deg",
    "fine_translation",
    "fine_rotation_deg",
    "coarse_sparse",
    "coarse_dense",
    "lgcv_filtered",
    "fine",
    "iterations",
    "diverged",
]
MATCH_COLUMNS = ["stage", "query_index", "query_u", "query_v", "ref_index", "ref_u", "ref_v", "score", "valid"]
HISTOGRAM_COLUMNS = ["method", "bin_lo", "bin_hi", "count"]
DISTANCE_COLUMNS = ["gaussian_index", "alpha_optimum", "fused"]
BIAS_COLUMNS = ["label", "component", "analytic_bias", "empirical_bias", "simplified_bias", "stderr"]
SWEEP_COLUMNS = ["tau_a", "tau_s", "precision", "recall", "kept", "total"]


def format_value(value: Any) -> str:
    """CSV のセル表現（浮動小数点は repr で往復可能にする）"""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


class ReportRepository:
    """
    1回の実行の出力ディレクトリを管理するリポジトリクラス
    """

    def __init__(self, out_dir: PathLike):
        """
        リポジトリの初期化

        Args:
            out_dir: 出力ディレクトリ（なければ作成する）
        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.outputs: Dict[str, str] = {}

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _record(self, path: Path) -> Path:
        self.outputs[path.name] = file_hash(path)
        return path

    def register(self, path: PathLike) -> Path:
        """リポジトリ外で書かれた出力をマニフェストに載せる"""
        return self._record(Path(path))

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """
        CSV を書き出す

        Args:
            name (str): ファイル名
            header: 列名
            rows: 行の列

        Returns:
            Path: 書き出したファイル

        Raises:
            OSError: 書き込みに失敗した場合
        """
        path = self.path(name)
        count = 0
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(v) for v in row])
                count += 1
        logger.info(f"Wrote {count} rows to {path}")
        return self._record(path)

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        path.write_text(text, encoding="utf-8")
        logger.info(f"Wrote {path}")
        return self._record(path)

    def write_json(self, name: str, model) -> Path:
        """pydantic モデルを整形 JSON で書き出す"""
        return self.write_text(name, model.model_dump_json(indent=2) + "\n")

    def write_bias_records(self, records: Sequence[BiasRecord]) -> List[Path]:
        """
        バイアス実験の構造化テキストと成分ごとの CSV を書き出す

        Args:
            records: 実験ごとの結果

        Returns:
            List[Path]: bias_report.txt と bias_report.csv
        """
        blocks = [record.model_dump_json(indent=2) for record in records]
        text_path = self.write_text("bias_report.txt", "\n".join(blocks) + "\n")
        rows = []
        for record in records:
            simplified = record.simplified_bias or [None] * len(record.analytic_bias)
            for c, (a, e, s, err) in enumerate(zip(
                record.analytic_bias, record.empirical_bias, simplified, record.stderr
            )):
                rows.append([record.label, c, a, e, s, err])
        csv_path = self.write_csv("bias_report.csv", BIAS_COLUMNS, rows)
        return [text_path, csv_path]

    def write_histograms(self, histograms: Sequence[DistanceHistogram]) -> Path:
        """手法ごとの距離ヒストグラムを bin_lo, bin_hi, count で書き出す"""
        rows = []
        for hist in histograms:
            for lo, hi, count in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
                rows.append([hist.method, lo, hi, int(count)])
        return self.write_csv("distance_histogram.csv", HISTOGRAM_COLUMNS, rows)

    def write_paired_distances(self, alpha: DistanceHistogram, fused: DistanceHistogram) -> Path:
        """両手法で採点できたガウシアンの距離を対にして書き出す"""
        common, ia, ifu = np.intersect1d(alpha.gaussian_indices, fused.gaussian_indices, return_indices=True)
        rows = [[int(g), alpha.distances[a], fused.distances[f]] for g, a, f in zip(common, ia, ifu)]
        return self.write_csv("feature_distances.csv", DISTANCE_COLUMNS, rows)

    def write_match_dump(self, name: str, match_sets: Sequence[MatchSet]) -> Path:
        """
        各段階のマッチ集合を1つの CSV にまとめて書き出す

        参照側の画素座標がない段階（疎マッチ）はランドマーク番号のみを書く。
        """
        rows = []
        for matches in match_sets:
            for i in range(len(matches)):
                q = matches.query_points[i] if matches.query_points is not None else (None, None)
                r = matches.reference_points[i] if matches.reference_points is not None else (None, None)
                rows.append([
                    matches.stage.value, matches.query_indices[i], q[0], q[1],
                    matches.reference_indices[i], r[0], r[1], matches.scores[i], bool(matches.valid[i]),
                ])
        return self.write_csv(name, MATCH_COLUMNS, rows)

    def write_benchmark(self, report: BenchmarkReport) -> List[Path]:
        """
        ベンチマークのクエリごとの CSV と集計テキストを書き出す

        経過時間は出力に含めない。
        """
        rows = [
            [
                r.query_id, r.coarse_translation, r.coarse_rotation_deg,
                r.fine_translation, r.fine_rotation_deg,
                r.counts.get("coarse_sparse", 0), r.counts.get("coarse_dense", 0),
                r.counts.get("lgcv_filtered", 0), r.counts.get("fine", 0),
                r.iterations, r.diverged,
            ]
            for r in report.rows
        ]
        csv_path = self.write_csv("benchmark.csv", BENCHMARK_COLUMNS, rows)
        summary_path = self.write_text("summary.txt", render_summary(report.summary))
        return [csv_path, summary_path]

    def write_sweep(self, cells: Sequence[SweepCell]) -> Path:
        rows = [[c.tau_a, c.tau_s, c.precision, c.recall, c.kept, c.total] for c in cells]
        return self.write_csv("lgcv_sweep.csv", SWEEP_COLUMNS, rows)

    def write_manifest(
        self,
        command: str,
        config: Dict[str, Any],
        seed: int,
        input_hashes: Optional[Dict[str, str]] = None,
    ) -> Path:
        """
        実行を再現するためのマニフェストを書き出す

        マニフェスト自体は出力ハッシュの対象に含めない。

        Args:
            command (str): コマンド名
            config (Dict[str, Any]): 解決済みの設定
            seed (int): マスターシード
            input_hashes: 入力ファイルのハッシュ

        Returns:
            Path: マニフェストファイル
        """
        manifest = RunManifest(
            command=command,
            config=config,
            seed=seed,
            input_hashes=dict(input_hashes or {}),
            output_hashes=dict(sorted(self.outputs.items())),
            tool_version=settings.app_version,
            created_at=datetime.now(timezone.utc),
        )
        path = self.path(settings.manifest_file_name)
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"Wrote manifest {path} ({len(self.outputs)} outputs)")
        return path


def render_summary(summary: BenchmarkSummary) -> str:
    """集計をキー=値のテキストにする"""
    lines = [f"queries={summary.queries}"]
    for key in sorted(summary.median):
        lines.append(f"median_{key}={format_value(summary.median[key])}")
    for label in summary.recall:
        for stage in sorted(summary.recall[label]):
            lines.append(f"recall[{label}]_{stage}={format_value(summary.recall[label][stage])}")
    return "\n".join(lines) + "\n"
