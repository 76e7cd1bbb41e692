"""Relaxed RL Study - 緩和制御とランダム化行動の強収束を比較する実験スクリプト

サブコマンド:
- study: N ごとの強収束誤差を推定し、収束CSVと収束率JSONを出力
- trajectories: カップリングされた軌道（緩和・混合）をCSVで出力
- cost-gap: 離散コストと緩和コストの差を N ごとに出力
- quadrature-check: ガウス・エルミート則の自己診断

終了コード: 0=成功, 1=想定外のエラー（quadrature-checkの不合格を含む）, 2=設定エラー, 3=数値エラー, 4=入出力エラー
"""  # スクリプトの説明

import argparse  # コマンドライン引数処理用
import json  # エラーレコードの出力用
import os  # ディレクトリ作成用
import sys  # システム関連操作用
import traceback  # トレースバック用
from datetime import datetime  # ログファイル名のタイムスタンプ用
from pathlib import Path  # パス操作用
from typing import Any, Dict, List, Optional  # 型ヒント用

from loguru import logger  # ログ出力用（loguru）

from config import OUTPUT_DIR_ENV, Scale, load_presets  # 規模とプリセット
from src.analysis import coupled_pair, convergence_study, cost_gap_study, fit_rate  # 実験
from src.errors import ConfigurationError, FitError, OutputError, StudyError  # 例外クラス
from src.noise_lattice import dump_lattice, generate_lattice  # 格子のダンプ用
from src.quadrature_relaxation import quadrature_self_check  # 求積則の自己診断
from src.result_writer import ResultWriter, study_label  # 結果ファイルの出力
from src.study_config import StudyConfig, parse_config  # 設定の読み込み

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level} | {name}.py | def: {function} | {message}"  # ログの書式

# フラグ名 -> 設定キー（値は文字列のまま parse_config に渡して型変換する）
CONFIG_FLAGS = {
    '--setting': 'setting',
    '--c-sigma': 'c_sigma',
    '--c-sigma-sweep': 'c_sigma_sweep',
    '--sigma-pi': 'sigma_pi',
    '--T': 't',
    '--x0': 'x0',
    '--n-fine': 'n_fine',
    '--n-list': 'n_list',
    '--runs': 'runs',
    '--trajectories-per-run': 'trajectories_per_run',
    '--master-seed': 'master_seed',
    '--vol-modes': 'vol_modes',
    '--quadrature-order': 'quadrature_order',
    '--cost': 'cost',
    '--discount-rate': 'discount_rate',
    '--action-clip': 'action_clip',
    '--output-dir': 'output_dir',
    '--threads': 'threads',
    '--trajectory-indices': 'trajectory_indices',
    '--trajectory-n-list': 'trajectory_n_list',
}


def setup_logging(debug: bool = False, log_dir: str = 'logs') -> None:
    """loguruの設定（コンソールと実行ごとのログファイル）"""
    logger.remove()  # デフォルトハンドラーを削除
    logger.add(sys.stderr, level="DEBUG" if debug else "INFO", format=LOG_FORMAT)  # コンソール出力
    os.makedirs(log_dir, exist_ok=True)  # logsフォルダを作成（既に存在する場合はスキップ）
    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")  # 現在時刻をフォーマット（例: 20241216_143025）
    logger.add(f"{log_dir}/relaxed_rl_study_{timestamp}.log", level="DEBUG", encoding="utf-8", format=LOG_FORMAT)  # ファイル出力


def build_parser() -> argparse.ArgumentParser:
    """引数パーサーを作る（設定キーと同じ名前のフラグは全サブコマンド共通）"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='key=value 形式の設定ファイル')
    common.add_argument('--preset', help=f"プリセット名（{', '.join(load_presets())}）")
    common.add_argument('--scale', type=int, choices=[int(s) for s in Scale], help='0=論文規模, 1=CI規模（既定）')
    for flag, key in CONFIG_FLAGS.items():
        common.add_argument(flag, dest=key, help=f"設定キー {key} を上書き")
    common.add_argument('--seed', dest='master_seed', help='--master-seed の別名')
    common.add_argument('--vol-mode', dest='vol_modes', help='--vol-modes の別名')
    common.add_argument('--dump-lattice', action='store_true', help='軌道図の軌道番号のブラウン増分をバイナリで保存')
    common.add_argument('--debug', action='store_true', help='DEBUGレベルのログをコンソールに出す')

    parser = argparse.ArgumentParser(description='Relaxed RL Study - 緩和制御とランダム化行動の強収束の比較')
    subparsers = parser.add_subparsers(dest='command', required=True)
    study = subparsers.add_parser('study', parents=[common], help='強収束誤差と収束率')
    study.add_argument('--with-trajectories', action='store_true', help='軌道CSVも出力する')
    subparsers.add_parser('trajectories', parents=[common], help='カップリングされた軌道のCSV')
    subparsers.add_parser('cost-gap', parents=[common], help='コストの差')
    subparsers.add_parser('quadrature-check', parents=[common], help='求積則の自己診断')
    return parser


def load_study_config(args: argparse.Namespace) -> StudyConfig:
    """設定ファイルとフラグから StudyConfig を作る"""
    text = ''
    if args.config:
        try:
            text = Path(args.config).read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigurationError(f"設定ファイルを読み込めません: {args.config}: {e}", field='config')
    overrides = {key: getattr(args, key) for key in set(CONFIG_FLAGS.values())}
    overrides['preset'] = args.preset
    return parse_config(text, overrides=overrides, scale=args.scale)


def _study_cases(config: StudyConfig):
    """(c_sigma, vol_mode) の組を順に返す"""
    for c_sigma in config.c_sigma_values():
        for vol_mode in config.vol_modes:
            yield c_sigma, vol_mode


def write_trajectories(config: StudyConfig, writer: ResultWriter, c_sigma: Optional[float], vol_mode: str) -> None:
    """trajectory_n_list × trajectory_indices の軌道CSVを出力する"""
    model = config.model(c_sigma)
    label = study_label(config.setting, vol_mode, c_sigma)
    params = config.study_params(vol_mode)
    for steps in config.trajectory_n_list:
        for index in config.trajectory_indices:
            pair = coupled_pair(model, config.policy(), steps, params, index)
            writer.write_trajectory_csv(pair.relaxed, label, index)
            writer.write_trajectory_csv(pair.mixed, label, index)


def dump_lattices(config: StudyConfig, writer: ResultWriter) -> None:
    """軌道図の軌道番号のブラウン増分を lattices/ に保存する"""
    for index in config.trajectory_indices:
        lattice = generate_lattice(config.master_seed, index, config.n_fine, config.t)
        name = f"lattices/lattice_idx{index}.bin"
        dump_lattice(lattice, writer.output_dir / name)
        writer.written.append(name)


def run_study(config: StudyConfig, writer: ResultWriter, with_trajectories: bool = False) -> Dict[str, Any]:
    """収束実験を実行し、(c_sigma, vol_mode) ごとに収束CSVと収束率JSONを出力する"""
    results = []
    for c_sigma, vol_mode in _study_cases(config):
        label = study_label(config.setting, vol_mode, c_sigma)
        records = convergence_study(config.model(c_sigma), config.policy(), config.n_list, config.study_params(vol_mode))
        writer.write_convergence_csv(records, label)
        try:
            fit = fit_rate(records)
            writer.write_rate_fit(fit, label)
            slope = fit.slope
        except FitError as e:
            # 誤差が0のとき（退化方策など）は直線を当てはめられない
            logger.warning(f"{label}: 収束率を推定できませんでした: {e.message}")
            writer.write_json(f"rate_fit_{label}.json", {'slope': None, 'intercept': None, 'r_squared': None, 'points': []})
            slope = None
        results.append({'label': label, 'c_sigma': c_sigma, 'vol_mode': vol_mode, 'slope': slope})
        if with_trajectories:
            write_trajectories(config, writer, c_sigma, vol_mode)
    return {'results': results}


def run_trajectories(config: StudyConfig, writer: ResultWriter) -> Dict[str, Any]:
    for c_sigma, vol_mode in _study_cases(config):
        write_trajectories(config, writer, c_sigma, vol_mode)
    return {}


def run_cost_gap(config: StudyConfig, writer: ResultWriter) -> Dict[str, Any]:
    """コストの差を (c_sigma, vol_mode) ごとに出力する"""
    results = []
    for c_sigma, vol_mode in _study_cases(config):
        label = study_label(config.setting, vol_mode, c_sigma)
        records = cost_gap_study(config.model(c_sigma), config.policy(), config.costs(), config.n_list,
                                 config.study_params(vol_mode))
        writer.write_cost_gap_csv(records, label)
        results.append({'label': label, 'gaps': [record.gap for record in records]})
    return {'results': results}


def run_command(command: str, config: StudyConfig, writer: ResultWriter, args: argparse.Namespace) -> int:
    """サブコマンドを実行し、summary.json を書いて終了コードを返す"""
    exit_code = 0
    if command == 'study':
        extra = run_study(config, writer, with_trajectories=args.with_trajectories)
    elif command == 'trajectories':
        extra = run_trajectories(config, writer)
    elif command == 'cost-gap':
        extra = run_cost_gap(config, writer)
    else:
        check = quadrature_self_check(config.quadrature_order)
        writer.write_json('quadrature_check.json', check)
        extra = {'passed': check['passed']}
        exit_code = 0 if check['passed'] else 1
    if args.dump_lattice:
        dump_lattices(config, writer)
    summary = {'command': command, 'config': config.to_dict(), **extra, 'files': list(writer.written) + ['summary.json']}
    writer.write_json('summary.json', summary)
    return exit_code


def report_error(record: Dict[str, Any], writer: Optional[ResultWriter]) -> None:
    """error.json を書き、同じ内容を1行のJSONで標準エラーに出す"""
    if writer is not None:
        writer.write_error(record)
    print(json.dumps(record, ensure_ascii=False), file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    """メイン処理

    Args:
        argv: コマンドライン引数（省略時は sys.argv）

    Returns:
        終了コード
    """  # 関数の説明
    args = build_parser().parse_args(argv)
    setup_logging(args.debug)
    logger.info(f"コマンド: {args.command}")

    # 設定を読む前に失敗した場合の出力先
    writer = ResultWriter(args.output_dir or os.getenv(OUTPUT_DIR_ENV, 'results'))
    try:
        config = load_study_config(args)
        writer = ResultWriter(config.output_dir)
        scale_name = {Scale.PAPER: "論文規模", Scale.CI: "CI規模"}[Scale(config.scale)]
        logger.info(f"設定: {config.setting}, 規模={scale_name}, runs={config.runs}, "
                    f"trajectories_per_run={config.trajectories_per_run}, threads={config.threads}")
        exit_code = run_command(args.command, config, writer, args)
        if exit_code == 0:
            logger.info("処理が正常に完了しました")
        return exit_code
    except StudyError as e:
        logger.error(f"処理を中断しました: {e.message}")
        report_error(e.to_record(), writer)  # 書けなければ標準エラーのみ
        return e.exit_code
    except OSError as e:
        error = OutputError(f"入出力エラー: {e}")
        logger.error(error.message)
        report_error(error.to_record(), None)
        return error.exit_code
    except Exception as e:  # 想定外のエラー
        logger.error(f"処理中にエラーが発生しました: {e}")
        logger.error(f"詳細なエラー情報: {traceback.format_exc()}")
        report_error({'error': 'unexpected_error', 'message': str(e), 'exit_code': 1}, writer)
        return 1


if __name__ == "__main__":  # スクリプト直接実行時
    sys.exit(main())
