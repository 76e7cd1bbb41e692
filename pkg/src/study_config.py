"""実験設定（StudyConfig）の読み込みと検証

設定はフラットな key=value 形式の文書で与えます（.env と同じ文法なので
python-dotenv の dotenv_values で読みます）。

    # setting3 を2つの緩和ボラティリティで
    setting=setting3
    c_sigma=0.2
    vol_modes=naive,sqrt
    N_list=50,100,200,500,1000

キーは大文字小文字を区別せず、'-' と '_' は同じ扱いです。リストはカンマ区切りです。
値の優先順位は「規模の既定値 → プリセット → 設定ファイル → コマンドライン引数」です。
"""  # モジュールの説明

import io  # 文字列をストリームとして渡す用
import math  # 有限値チェック用
from dataclasses import asdict, dataclass  # イミュータブルなデータ型の定義用
from typing import Any, Callable, Dict, List, Optional, Tuple  # 型ヒント用

from dotenv import dotenv_values  # key=value 文書のパース用
from loguru import logger  # ログ出力用（loguru）

import config as study_defaults  # 規模ごとの既定値とプリセット
from src.analysis import STUDY_VOL_MODES, StudyParams  # 実験パラメータ
from src.errors import ConfigurationError  # 設定エラー
from src.model_core import (  # モデル・方策・コスト
    COST_SELECTORS,
    SETTING_IDS,
    CostSpec,
    FeedbackPolicy,
    ModelSpec,
    builtin_setting,
    clip_actions,
    cost_from_selector,
    default_policy,
)
from src.quadrature_relaxation import MAX_ORDER, MIN_ORDER  # 求積則の次数の範囲

KEY_ALIASES = {  # 別名 -> 正式なキー
    'horizon': 't',
    'seed': 'master_seed',
    'vol_mode': 'vol_modes',
    'trajectories': 'trajectories_per_run',
    'order': 'quadrature_order',
}


def _to_str(value: Any) -> str:
    return str(value).strip()


def _to_int(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(value)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(value)
        return int(value)
    return int(str(value).strip())


def _to_float(value: Any) -> float:
    return float(str(value).strip()) if isinstance(value, str) else float(value)


def _optional(convert: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def parse(value):
        if value is None or (isinstance(value, str) and value.strip().lower() in ('', 'none', 'null')):
            return None
        return convert(value)
    return parse


def _list_of(convert: Callable[[Any], Any]) -> Callable[[Any], Tuple]:
    def parse(value):
        if value is None:
            return ()
        items = value.split(',') if isinstance(value, str) else list(value)
        return tuple(convert(item) for item in items if _to_str(item) != '')
    return parse


FIELD_PARSERS: Dict[str, Callable[[Any], Any]] = {  # キー -> 値の変換関数
    'setting': _to_str,
    'c_sigma': _optional(_to_float),
    'c_sigma_sweep': _list_of(_to_float),
    'sigma_pi': _to_float,
    't': _to_float,
    'x0': _to_float,
    'n_fine': _to_int,
    'n_list': _list_of(_to_int),
    'runs': _to_int,
    'trajectories_per_run': _to_int,
    'master_seed': _to_int,
    'vol_modes': _list_of(_to_str),
    'quadrature_order': _to_int,
    'cost': _to_str,
    'discount_rate': _to_float,
    'action_clip': _optional(_to_float),
    'output_dir': _to_str,
    'threads': _to_int,
    'trajectory_indices': _list_of(_to_int),
    'trajectory_n_list': _list_of(_to_int),
    'scale': _to_int,
}


@dataclass(frozen=True)
class StudyConfig:
    """検証済みの実験設定"""  # クラスの説明

    setting: str  # 組み込みモデルID
    c_sigma: Optional[float]  # setting3のボラティリティ係数
    c_sigma_sweep: Tuple[float, ...]  # setting3で回すc_sigmaの一覧
    sigma_pi: float  # 方策の標準偏差
    t: float  # 終端時刻 T
    x0: float  # 初期状態
    n_fine: int  # 最も細かいステップ数
    n_list: Tuple[int, ...]  # 誤差を測るステップ数
    runs: int  # ラン数
    trajectories_per_run: int  # 1ランあたりの軌道数
    master_seed: int  # マスターシード
    vol_modes: Tuple[str, ...]  # 緩和ボラティリティ（解決済み）
    quadrature_order: int  # 求積則の点数
    cost: str  # コスト関数の指定
    discount_rate: float  # 割引率
    action_clip: Optional[float]  # 行動の切り詰め幅
    output_dir: str  # 出力先
    threads: int  # ワーカースレッド数
    trajectory_indices: Tuple[int, ...]  # 軌道図の軌道番号
    trajectory_n_list: Tuple[int, ...]  # 軌道図のステップ数
    scale: int  # 規模（0=論文、1=CI）
    preset: Optional[str] = None  # 使ったプリセット名

    def c_sigma_values(self) -> List[Optional[float]]:
        """実験するc_sigmaの一覧（setting3以外は [None]）"""
        if self.setting != 'setting3':
            return [None]
        if self.c_sigma_sweep:
            return list(self.c_sigma_sweep)
        return [self.c_sigma]

    def model(self, c_sigma: Optional[float] = None) -> ModelSpec:
        """設定のモデル（c_sigmaを省略すると設定値を使う）"""
        model = builtin_setting(self.setting, self.c_sigma if c_sigma is None else c_sigma)
        return clip_actions(model, self.action_clip)

    def policy(self) -> FeedbackPolicy:
        return default_policy(self.sigma_pi)

    def costs(self) -> CostSpec:
        return cost_from_selector(self.cost, self.discount_rate)

    def study_params(self, vol_mode: str) -> StudyParams:
        """緩和ボラティリティ vol_mode での StudyParams"""
        return StudyParams(horizon=self.t, x0=self.x0, fine_steps=self.n_fine, runs=self.runs,
                           trajectories_per_run=self.trajectories_per_run, master_seed=self.master_seed,
                           vol_mode=vol_mode, quadrature_order=self.quadrature_order, threads=self.threads)

    def to_dict(self) -> Dict[str, Any]:
        """summary.json 用の辞書（タプルはリストにする）"""
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}


def normalize_key(key: str) -> str:
    """キーを正規化する（小文字化、'-' → '_'、別名の解決）"""
    normalized = key.strip().lower().replace('-', '_')
    return KEY_ALIASES.get(normalized, normalized)


def _read_document(text: str) -> Dict[str, Any]:
    """key=value 文書を正規化済みキーの辞書にする"""
    raw = dotenv_values(stream=io.StringIO(text or ''))
    values = {}
    for key, value in raw.items():
        if value is None:  # '=' のない行
            raise ConfigurationError(f"'{key}' に値がありません（key=value の形式で書いてください）", field=normalize_key(key))
        values[normalize_key(key)] = value
    return values


def _convert(key: str, value: Any) -> Any:
    if key not in FIELD_PARSERS:
        raise ConfigurationError(f"未知の設定キーです: {key}", field=key)
    try:
        return FIELD_PARSERS[key](value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key} の値を解釈できません: {value!r}", field=key)


def _resolve_preset(name: Optional[str]) -> Dict[str, Any]:
    if name is None:
        return {}
    presets = study_defaults.load_presets()
    if name not in presets:
        raise ConfigurationError(f"未知のプリセットです: {name}（{', '.join(sorted(presets))}のいずれか）", field='preset')
    return {normalize_key(key): value for key, value in presets[name].items()}


def _default_vol_modes(setting: str, c_values: List[Optional[float]]) -> Tuple[str, ...]:
    if setting == 'setting3' and any(c not in (None, 0.0) for c in c_values):
        return ('naive', 'sqrt')  # 制御されたボラティリティ
    return ('uncontrolled',)


def _require(condition: bool, field: str, message: str):
    if not condition:
        raise ConfigurationError(f"{field}: {message}", field=field)


def _validate(values: Dict[str, Any]) -> None:
    """フィールドごとの制約を確認し、違反したフィールド名つきで例外を出す"""
    _require(values['setting'] in SETTING_IDS, 'setting', f"{', '.join(SETTING_IDS)}のいずれかが必要です（{values['setting']}）")
    if values['setting'] == 'setting3':
        _require(values['c_sigma'] is not None or len(values['c_sigma_sweep']) > 0, 'c_sigma',
                 "setting3にはc_sigmaの指定が必要です")
    for c in ([values['c_sigma']] if values['c_sigma'] is not None else []) + list(values['c_sigma_sweep']):
        _require(math.isfinite(c), 'c_sigma', f"有限値が必要です（{c}）")
    _require(math.isfinite(values['sigma_pi']) and values['sigma_pi'] >= 0, 'sigma_pi', f"0以上の有限値が必要です（{values['sigma_pi']}）")
    _require(math.isfinite(values['t']) and values['t'] > 0, 't', f"正の値が必要です（{values['t']}）")
    _require(math.isfinite(values['x0']), 'x0', f"有限値が必要です（{values['x0']}）")
    _require(values['n_fine'] >= 1, 'n_fine', f"1以上が必要です（{values['n_fine']}）")
    _require(len(values['n_list']) > 0, 'n_list', "1つ以上のNが必要です")
    for key in ('n_list', 'trajectory_n_list'):
        for steps in values[key]:
            _require(steps >= 1 and values['n_fine'] % steps == 0, key,
                     f"N={steps}はN_fine={values['n_fine']}を割り切る必要があります")
    _require(values['runs'] >= 1, 'runs', f"1以上が必要です（{values['runs']}）")
    _require(values['trajectories_per_run'] >= 1, 'trajectories_per_run', f"1以上が必要です（{values['trajectories_per_run']}）")
    _require(values['master_seed'] >= 0, 'master_seed', f"0以上が必要です（{values['master_seed']}）")
    _require(MIN_ORDER <= values['quadrature_order'] <= MAX_ORDER, 'quadrature_order',
             f"{MIN_ORDER}〜{MAX_ORDER}が必要です（{values['quadrature_order']}）")
    _require(values['cost'] in COST_SELECTORS, 'cost', f"{', '.join(COST_SELECTORS)}のいずれかが必要です（{values['cost']}）")
    _require(math.isfinite(values['discount_rate']) and values['discount_rate'] >= 0, 'discount_rate',
             f"0以上が必要です（{values['discount_rate']}）")
    _require(values['action_clip'] is None or values['action_clip'] > 0, 'action_clip', f"正の値が必要です（{values['action_clip']}）")
    _require(values['threads'] >= 1, 'threads', f"1以上が必要です（{values['threads']}）")
    _require(all(i >= 0 for i in values['trajectory_indices']), 'trajectory_indices', "0以上の軌道番号が必要です")
    _require(values['output_dir'] != '', 'output_dir', "出力先が空です")
    for mode in values['vol_modes']:
        _require(mode in STUDY_VOL_MODES, 'vol_modes', f"{', '.join(STUDY_VOL_MODES)}のいずれかが必要です（{mode}）")
    controlled = values['setting'] == 'setting3' and any(
        c not in (None, 0.0) for c in [values['c_sigma']] + list(values['c_sigma_sweep']))
    _require(not (controlled and 'uncontrolled' in values['vol_modes']), 'vol_modes',
             "ボラティリティが行動に依存するモデルではuncontrolledは使えません")


def parse_config(text: str = '', overrides: Optional[Dict[str, Any]] = None,
                 scale: Optional[int] = None) -> StudyConfig:
    """設定文書を読み込み、既定値を補って検証済みの StudyConfig を返す

    Args:
        text: key=value 形式の設定文書（空なら既定値のみ）
        overrides: コマンドライン引数など、文書より優先する値（None の値は無視）
        scale: 規模（省略時はプリセット → 環境変数 → CI規模の順に決める）

    Returns:
        StudyConfig
    """
    document = _read_document(text)
    flags = {normalize_key(key): value for key, value in (overrides or {}).items() if value is not None}

    # 両方から取り除いてからフラグを優先する
    flag_preset = flags.pop('preset', None)
    document_preset = document.pop('preset', None)
    preset_name = flag_preset if flag_preset is not None else document_preset
    preset = _resolve_preset(preset_name)

    scale_value = scale if scale is not None else flags.get('scale', document.get('scale', preset.get('scale')))
    try:
        resolved_scale = study_defaults.get_scale_from_arg(None if scale_value is None else _to_int(scale_value))
    except ValueError as e:
        raise ConfigurationError(str(e), field='scale')

    values = {key: _convert(key, value) for key, value in study_defaults.get_config(resolved_scale).items()}
    for layer in (preset, document, flags):  # 後の層ほど優先
        for key, value in layer.items():
            values[key] = _convert(key, value)
    values['scale'] = int(resolved_scale)

    _validate(values)
    if not values['vol_modes']:
        c_values = [values['c_sigma']] + list(values['c_sigma_sweep'])
        values['vol_modes'] = _default_vol_modes(values['setting'], c_values)
    config = StudyConfig(preset=preset_name, **values)
    logger.debug(f"設定を読み込みました: {config}")
    return config
