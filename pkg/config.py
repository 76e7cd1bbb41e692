"""
実験設定管理モジュール (config.py)
このファイルは、論文規模の実験とCI規模の軽い実験で使い分けるための既定値を管理します。
例えば、CIでは軌道数を減らして数分で終わるようにし、論文規模では10ラン×10000軌道で動かします。
規模ごとの既定値と、config/study_presets.json のプリセットをここで読み込みます。
"""

import json  # プリセットファイルの読み込み用
import os  # 環境変数を読み込むためのツール
from enum import IntEnum  # 規模を番号で管理するためのツール
from pathlib import Path  # パス操作用

from dotenv import load_dotenv  # .envファイルから設定を読み込むためのツール

load_dotenv()  # .envファイルから環境変数を読み込む（出力先などをマシンごとに変えられる）

PRESETS_PATH = Path(__file__).parent / 'config' / 'study_presets.json'  # プリセットファイルのパス
OUTPUT_DIR_ENV = 'RELAXED_RL_OUTPUT_DIR'  # 既定の出力先を指定する環境変数
SCALE_ENV = 'RELAXED_RL_SCALE'  # 既定の規模を指定する環境変数


class Scale(IntEnum):
    """
    実験規模の定義（2つのモードを番号で管理）
    """
    PAPER = 0  # 論文規模（10ラン × 10000軌道）
    CI = 1  # CI規模（10ラン × 2000軌道、数分で終わる）


def get_config(scale: Scale = Scale.CI) -> dict:
    """
    指定された規模の既定値をすべて取得する関数
    設定ファイルやコマンドライン引数で上書きされる前の一番下の層です
    """
    trajectories = {Scale.PAPER: 10000, Scale.CI: 2000}[Scale(scale)]  # 1ランあたりの軌道数

    return {
        'setting': 'setting1',  # 組み込みモデル（setting1/setting2/setting3）
        'c_sigma': None,  # setting3のボラティリティ係数（setting3では必須）
        'c_sigma_sweep': [],  # setting3でまとめて回すc_sigmaの一覧（空なら c_sigma のみ）
        'sigma_pi': 0.2,  # 方策の標準偏差
        't': 5.0,  # 終端時刻 T
        'x0': 0.0,  # 初期状態
        'n_fine': 1000,  # 最も細かいステップ数
        'n_list': [50, 100, 200, 500, 1000],  # 誤差を測るステップ数の一覧
        'runs': 10,  # ラン数
        'trajectories_per_run': trajectories,  # 1ランあたりの軌道数
        'master_seed': 12345,  # マスターシード
        'vol_modes': [],  # 緩和ボラティリティ（空ならsettingから自動で決める）
        'quadrature_order': 10,  # ガウス・エルミート則の点数
        'cost': 'default',  # コスト関数の指定
        'discount_rate': 0.0,  # 割引率
        'action_clip': None,  # 行動の切り詰め幅（Noneなら切り詰めない）
        'output_dir': os.getenv(OUTPUT_DIR_ENV, 'results'),  # 出力先ディレクトリ
        'threads': 1,  # ワーカースレッド数（結果には影響しない）
        'trajectory_indices': [0, 1, 2, 3],  # 軌道図に使う軌道番号
        'trajectory_n_list': [100, 1000],  # 軌道図を出力するステップ数
        'scale': int(scale),  # 規模（summary.json用に保存）
    }


def load_presets(path: Path = PRESETS_PATH) -> dict:
    """
    プリセットファイルを読み込む関数
    説明用のキー（_で始まるもの）は取り除きます
    """
    with open(path, 'r', encoding='utf-8') as f:  # UTF-8で読み込む
        presets = json.load(f)
    return {name: {k: v for k, v in values.items() if not k.startswith('_')}
            for name, values in presets.items() if not name.startswith('_')}


def get_scale_from_arg(scale_arg: int = None) -> Scale:
    """
    コマンドライン引数から規模を判定する関数
    例：python relaxed_rl_study.py study --scale 0 → 論文規模として実行
    """
    if scale_arg is None:  # 規模が指定されていない場合
        scale_arg = os.getenv(SCALE_ENV)  # 環境変数を確認
        if scale_arg in (None, ''):
            return Scale.CI  # デフォルトはCI規模（一番軽い選択）
    try:
        return Scale(int(scale_arg))  # 指定された番号を規模に変換（0→PAPER、1→CI）
    except (ValueError, TypeError):  # 無効な番号が指定された場合（例：3や"abc"など）
        raise ValueError(f"無効な規模指定: {scale_arg}. 0(論文規模), 1(CI規模)のいずれかを指定してください")
