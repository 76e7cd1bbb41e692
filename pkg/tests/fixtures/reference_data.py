"""
テスト用の参照データ定義（事前に高精度で計算した値と小さな実験設定）
"""
import math  # 定数の計算用
from typing import Dict, List, Tuple  # 型ヒント用

from src.analysis import StudyParams  # 実験パラメータ


class ReferenceData:
    """テストの期待値として使う固定値のクラス"""

    # 標準正規分布の分位点 Φ⁻¹(0.975)（逆誤差関数から高精度で計算した値）
    NORMAL_QUANTILE_0975 = 1.959963984540054

    # 対称な確率の組 (u, Φ⁻¹(u))
    @staticmethod
    def get_quantile_table() -> List[Tuple[float, float]]:
        """分位点の参照表を返す"""
        return [
            (0.5, 0.0),
            (0.841344746068543, 1.0),  # Φ(1)
            (0.158655253931457, -1.0),  # Φ(-1)
            (0.977249868051821, 2.0),  # Φ(2)
            (0.001349898031630, -3.0),  # Φ(-3)（下側の裾）
            (0.999968328758167, 4.0),  # Φ(4)（上側の裾）
            (1e-8, -5.612001244174789),  # 遠い下側の裾
            (1e-10, -6.361340902404056),
        ]

    # 上側の裾で使う 1-u の値（u = 1 - t は t が厳密に表せる）
    @staticmethod
    def get_upper_tail_probabilities() -> List[float]:
        """上側の裾の確率 t の一覧（u = 1 - t）"""
        return [1e-8, 1e-10, 1e-12, 2.0 ** -53]

    # 低次のガウス・エルミート則（手計算できる値）
    @staticmethod
    def get_small_rules() -> Dict[int, Tuple[List[float], List[float]]]:
        """点数 -> (ノード, 重み)"""
        sqrt_pi = math.sqrt(math.pi)
        return {
            1: ([0.0], [sqrt_pi]),
            2: ([-1 / math.sqrt(2), 1 / math.sqrt(2)], [sqrt_pi / 2, sqrt_pi / 2]),
            3: ([-math.sqrt(1.5), 0.0, math.sqrt(1.5)], [sqrt_pi / 6, 2 * sqrt_pi / 3, sqrt_pi / 6]),
        }

    # テスト用の小さな実験パラメータ
    @staticmethod
    def get_small_params(**overrides) -> StudyParams:
        """数秒で終わる規模の StudyParams"""
        values = dict(horizon=5.0, x0=0.0, fine_steps=100, runs=2, trajectories_per_run=20,
                      master_seed=7, vol_mode='uncontrolled', quadrature_order=10, threads=1)
        values.update(overrides)
        return StudyParams(**values)

    # CLIテスト用の小さな設定ファイル
    @staticmethod
    def get_small_config_text(output_dir: str) -> str:
        """数秒で終わる規模の設定文書"""
        return f"""# 小さな実験
setting=setting1
T=5
N_fine=100
N_list=10,20,50,100
runs=2
trajectories_per_run=30
master_seed=11
trajectory_indices=0,1
trajectory_N_list=10,100
output_dir={output_dir}
"""
