"""結果ファイル出力（ResultWriter）のテスト"""  # テストモジュールの説明

import json  # JSONの検証用

import numpy as np  # 数値計算用
import pytest  # テストフレームワーク

from src.analysis import ConvergenceRecord, CostGapRecord, RateFit  # 結果の型
from src.errors import OutputError  # 書き込みエラー
from src.integrators import Trajectory  # 軌道
from src.model_core import TimeGrid  # 時間格子
from src.result_writer import (  # テスト対象
    CONVERGENCE_HEADER,
    COST_GAP_HEADER,
    RATE_FIT_KEYS,
    ResultWriter,
    format_value,
    study_label,
)


@pytest.fixture
def writer(tmp_path):
    """一時ディレクトリに書き出す ResultWriter"""
    return ResultWriter(tmp_path / 'out')


class TestFormat:
    """format_value / study_label のテスト"""  # テストクラスの説明

    def test_floats_use_repr(self):
        """floatは最短の往復可能な表記"""
        assert format_value(0.1) == '0.1'
        assert format_value(1e-07) == '1e-07'
        assert float(format_value(2 / 3)) == 2 / 3
        assert format_value(50) == '50'

    def test_labels(self):
        """c_sigma があればラベルに含める"""
        assert study_label('setting1', 'uncontrolled') == 'setting1_uncontrolled'
        assert study_label('setting3', 'sqrt', 0.2) == 'setting3_c0.2_sqrt'


class TestConvergenceCsv:
    """収束CSVのテスト"""  # テストクラスの説明

    def test_header_and_rows(self, writer):
        """ヘッダーと行の内容"""
        records = [ConvergenceRecord(50, 0.004, 0.0001, 10, 2000), ConvergenceRecord(100, 0.002, 5e-05, 10, 2000)]
        path = writer.write_convergence_csv(records, 'setting1_uncontrolled')
        assert path.name == 'convergence_setting1_uncontrolled.csv'
        assert path.read_text(encoding='utf-8') == (
            'N,mean_sup_sq_error,std_across_runs,runs,trajectories_per_run\n'
            '50,0.004,0.0001,10,2000\n'
            '100,0.002,5e-05,10,2000\n'
        )
        assert CONVERGENCE_HEADER[0] == 'N'
        assert writer.written == ['convergence_setting1_uncontrolled.csv']

    def test_same_records_same_bytes(self, writer, tmp_path):
        """同じレコードなら同じバイト列"""
        records = [ConvergenceRecord(50, 1 / 3, 0.0, 1, 1)]
        first = writer.write_convergence_csv(records, 'a').read_bytes()
        second = ResultWriter(tmp_path / 'other').write_convergence_csv(records, 'a').read_bytes()
        assert first == second


class TestRateFitJson:
    """収束率JSONのテスト"""  # テストクラスの説明

    def test_keys(self, writer):
        """slope, intercept, r_squared, points の順"""
        fit = RateFit(slope=-1.0, intercept=0.5, r_squared=0.99, points=((3.9, -5.0), (4.6, -5.7)))
        path = writer.write_rate_fit(fit, 'setting2_uncontrolled')
        payload = json.loads(path.read_text(encoding='utf-8'))
        assert tuple(payload) == RATE_FIT_KEYS
        assert payload['slope'] == -1.0
        assert payload['points'] == [[3.9, -5.0], [4.6, -5.7]]


class TestCostGapCsv:
    """コスト差CSVのテスト"""  # テストクラスの説明

    def test_header(self, writer):
        """ヘッダーは N,mean_discrete_cost,mean_relaxed_cost,gap,gap_std_error"""
        path = writer.write_cost_gap_csv([CostGapRecord(50, 2.5, 2.25, 0.25, 0.01)], 'setting1_uncontrolled')
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == ','.join(COST_GAP_HEADER)
        assert lines[1] == '50,2.5,2.25,0.25,0.01'


class TestTrajectoryCsv:
    """軌道CSVのテスト"""  # テストクラスの説明

    def test_mixed_trajectory(self, writer):
        """混合スキームは行動列つき、最後の行の行動は空"""
        trajectory = Trajectory(grid=TimeGrid(1.0, 2), states=np.array([[0.0], [0.5], [0.75]]),
                                actions=np.array([[1.0], [0.5]]), scheme='mixed')
        path = writer.write_trajectory_csv(trajectory, 'setting1_uncontrolled', 3)
        assert path.name == 'trajectory_setting1_uncontrolled_mixed_N2_idx3.csv'
        assert path.read_text(encoding='utf-8') == 't,x_1,a_1\n0.0,0.0,1.0\n0.5,0.5,0.5\n1.0,0.75,\n'

    def test_relaxed_trajectory(self, writer):
        """緩和スキームは状態列のみ"""
        trajectory = Trajectory(grid=TimeGrid(2.0, 1), states=np.array([[0.0, 1.0], [0.25, -1.0]]), scheme='relaxed')
        path = writer.write_trajectory_csv(trajectory, 'lbl', 0)
        assert path.read_text(encoding='utf-8').splitlines() == ['t,x_1,x_2', '0.0,0.0,1.0', '2.0,0.25,-1.0']


class TestErrors:
    """書き込み失敗のテスト"""  # テストクラスの説明

    def test_os_error_becomes_output_error(self, writer, mocker):
        """OSError は OutputError（終了コード4）"""
        mocker.patch('builtins.open', side_effect=PermissionError('read-only'))
        with pytest.raises(OutputError) as excinfo:
            writer.write_json('summary.json', {'command': 'study'})
        assert excinfo.value.exit_code == 4
        assert excinfo.value.kind == 'io_error'
        assert writer.written == []

    def test_write_error_never_raises(self, writer, mocker):
        """error.json が書けなくても例外は出さない"""
        mocker.patch('builtins.open', side_effect=OSError('disk full'))
        assert writer.write_error({'error': 'configuration_error'}) is None

    def test_write_error(self, writer):
        """error.json の内容"""
        path = writer.write_error({'error': 'configuration_error', 'field': 'n_list', 'exit_code': 2})
        assert json.loads(path.read_text(encoding='utf-8'))['field'] == 'n_list'
