"""実験結果のCSV/JSONファイルを出力するクライアント

このモジュールは収束実験の結果を、図を描くための外部ツールが読める形で
出力ディレクトリに書き出します。

主な機能:
- 収束CSV（N,mean_sup_sq_error,std_across_runs,runs,trajectories_per_run）
- 収束率JSON（slope, intercept, r_squared, points）
- コスト差CSV・軌道CSV・summary.json・error.json の出力
- 浮動小数点数は repr（最短の往復可能な表記）で書くので、同じ値なら同じバイト列になる
"""

import csv  # CSV作成用
import io  # CSVを文字列に組み立てる用
import json  # JSON出力用
from pathlib import Path  # パス操作用
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union  # 型ヒント用

from loguru import logger  # ログ出力用（loguru）

from src.analysis import ConvergenceRecord, CostGapRecord, RateFit  # 結果の型
from src.errors import OutputError  # 書き込みエラー
from src.integrators import Trajectory  # 軌道

CONVERGENCE_HEADER = ['N', 'mean_sup_sq_error', 'std_across_runs', 'runs', 'trajectories_per_run']  # 収束CSVのヘッダー
COST_GAP_HEADER = ['N', 'mean_discrete_cost', 'mean_relaxed_cost', 'gap', 'gap_std_error']  # コスト差CSVのヘッダー
RATE_FIT_KEYS = ('slope', 'intercept', 'r_squared', 'points')  # 収束率JSONのキー


def format_value(value: Any) -> str:
    """CSVのセル値を文字列にする（floatはrepr）"""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def study_label(setting: str, vol_mode: str, c_sigma: Optional[float] = None) -> str:
    """ファイル名に使うラベル（例: setting3_c0.2_sqrt）"""
    if c_sigma is None:
        return f"{setting}_{vol_mode}"
    return f"{setting}_c{c_sigma!r}_{vol_mode}"


class ResultWriter:
    """出力ディレクトリに結果ファイルを書き出すクラス

    書き出したファイルは written に記録し、summary.json のファイル一覧に使います。
    """  # クラスの説明

    def __init__(self, output_dir: Union[str, Path]):
        """初期化処理

        Args:
            output_dir: 出力先ディレクトリ（なければ作成する）
        """
        self.output_dir = Path(output_dir)  # 出力先を保存
        self.written: List[str] = []  # 書き出したファイル名の一覧

    def _write_text(self, name: str, content: str) -> Path:
        """ファイルを1つ書き出す（失敗したら OutputError）"""
        path = self.output_dir / name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)  # ディレクトリがなければ作成
            with open(path, 'w', encoding='utf-8', newline='') as f:  # 改行コードを固定
                f.write(content)
        except OSError as e:
            logger.error(f"ファイルの書き込みに失敗しました: {path}: {e}")
            raise OutputError(f"ファイルの書き込みに失敗しました: {path}: {e}", path=str(path)) from e
        if name not in self.written:
            self.written.append(name)
        logger.info(f"ファイルを出力しました: {path}")
        return path

    @staticmethod
    def _csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(value) for value in row])
        return buffer.getvalue()

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        """辞書をJSONで書き出す（キーの順序は payload のまま）"""
        return self._write_text(name, json.dumps(payload, indent=2, ensure_ascii=False) + '\n')

    def write_convergence_csv(self, records: Sequence[ConvergenceRecord], label: str) -> Path:
        """収束CSV convergence_<label>.csv を書き出す"""
        rows = [(r.steps, r.mean_sup_sq_error, r.std_across_runs, r.runs, r.trajectories_per_run) for r in records]
        return self._write_text(f"convergence_{label}.csv", self._csv_text(CONVERGENCE_HEADER, rows))

    def write_rate_fit(self, fit: RateFit, label: str) -> Path:
        """収束率JSON rate_fit_<label>.json を書き出す"""
        payload = {
            'slope': fit.slope,
            'intercept': fit.intercept,
            'r_squared': fit.r_squared,
            'points': [list(point) for point in fit.points],
        }
        return self.write_json(f"rate_fit_{label}.json", payload)

    def write_cost_gap_csv(self, records: Sequence[CostGapRecord], label: str) -> Path:
        """コスト差CSV cost_gap_<label>.csv を書き出す"""
        rows = [(r.steps, r.mean_discrete_cost, r.mean_relaxed_cost, r.gap, r.gap_std_error) for r in records]
        return self._write_text(f"cost_gap_{label}.csv", self._csv_text(COST_GAP_HEADER, rows))

    def write_trajectory_csv(self, trajectory: Trajectory, label: str, trajectory_index: int) -> Path:
        """軌道CSV trajectory_<label>_<scheme>_N<N>_idx<index>.csv を書き出す

        列は t, x_1..x_d と（混合スキームなら）a_1..a_k。行動は区間の左端に置き、
        最後の行（t = T）の行動セルは空にする。
        """
        grid = trajectory.grid
        state_columns = [f"x_{i + 1}" for i in range(trajectory.states.shape[1])]
        action_columns = []
        if trajectory.actions is not None:
            action_columns = [f"a_{i + 1}" for i in range(trajectory.actions.shape[1])]
        rows = []
        for n, t in enumerate(grid.nodes()):
            row = [float(t)] + [float(v) for v in trajectory.states[n]]
            if trajectory.actions is not None:
                row += [float(v) for v in trajectory.actions[n]] if n < grid.steps else [''] * len(action_columns)
            rows.append(row)
        name = f"trajectory_{label}_{trajectory.scheme}_N{grid.steps}_idx{trajectory_index}.csv"
        return self._write_text(name, self._csv_text(['t'] + state_columns + action_columns, rows))

    def write_error(self, record: Dict[str, Any]) -> Optional[Path]:
        """error.json を書き出す（書けなければ None を返し、例外は出さない）"""
        try:
            return self.write_json('error.json', record)
        except OutputError:
            return None
