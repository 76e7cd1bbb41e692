"""制御付きSDEモデルの定義 - ドリフト・ボラティリティ・方策・時間格子・コスト

このモジュールはシミュレーションの「部品」を定義します。

主な機能:
- ModelSpec: ドリフト b(x,a) とボラティリティ σ(x,a) を持つ制御付きSDEモデル
- FeedbackPolicy: 状態 x からガウス分布 N(mean(x), std²) を返すフィードバック方策
- TimeGrid: [0, T] を N 等分した時間格子
- CostSpec: 走行コスト f・終端コスト g・割引率 β
- builtin_setting: 数値実験で使う3つの標準モデル（setting1〜3）
- sample_action: 一様乱数を正規分布の逆関数で行動に変換

配列の形の約束:
- 状態 x は (..., state_dim)、行動 a は (..., action_dim)
- drift(x, a) は (..., state_dim)、volatility(x, a) は (..., state_dim, state_dim)
"""  # モジュールの説明

from dataclasses import dataclass, field  # イミュータブルなデータ型の定義用
from typing import Callable, Dict, Optional, Tuple  # 型ヒント用

import numpy as np  # 数値計算用
from scipy.special import erfc  # 分位点の精度補正用
from loguru import logger  # ログ出力用（loguru）

from src.errors import ConfigurationError, DomainError  # 設定エラー・定義域エラー

DriftFn = Callable[[np.ndarray, np.ndarray], np.ndarray]  # (x, a) -> (..., d)
VolatilityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]  # (x, a) -> (..., d, d)
MeanFn = Callable[[np.ndarray], np.ndarray]  # x -> (..., k)
RunningCostFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]  # (t, x, a) -> (...)
TerminalCostFn = Callable[[np.ndarray], np.ndarray]  # x -> (...)

SETTING_IDS = ('setting1', 'setting2', 'setting3')  # 組み込みモデルのID一覧
BASE_VOLATILITY = 0.1  # 全settingに共通する定数ボラティリティ


@dataclass(frozen=True)
class ModelSpec:
    """制御付きSDE dX = b(X,a)dt + σ(X,a)dW の係数を保持するクラス

    volatility_controlled が False のモデルでは σ(x,a) は a に依存しない。
    drift_bound が None のときドリフトは非有界として扱う。
    """  # クラスの説明

    name: str  # モデル名（ログ・ファイル名用）
    state_dim: int  # 状態の次元 d
    action_dim: int  # 行動の次元
    drift: DriftFn  # ドリフト b(x, a)
    volatility: VolatilityFn  # ボラティリティ σ(x, a)
    volatility_controlled: bool = False  # σが行動に依存するかどうか
    drift_bound: Optional[float] = None  # sup|b|（None = 非有界）
    lipschitz_hints: Dict[str, float] = field(default_factory=dict)  # b, σのリプシッツ定数の目安

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:  # 次元は正の整数
            raise ConfigurationError(f"次元は1以上が必要です: state_dim={self.state_dim}, action_dim={self.action_dim}", field='state_dim')
        if self.drift_bound is not None and self.drift_bound < 0:
            raise ConfigurationError(f"drift_boundは0以上が必要です: {self.drift_bound}", field='drift_bound')


@dataclass(frozen=True)
class FeedbackPolicy:
    """等方ガウス方策 π(x) = N(mean_fn(x), std²·I)

    std = 0 は退化した（純粋な）方策 δ_{mean_fn(x)} を表します。
    方策は時間に依存しません。
    """  # クラスの説明

    mean_fn: MeanFn  # 平均関数 x -> 行動
    std: float  # 標準偏差 σ_π

    def __post_init__(self):
        if not np.isfinite(self.std) or self.std < 0:  # 標準偏差は0以上の有限値
            raise ConfigurationError(f"方策の標準偏差は0以上が必要です: {self.std}", field='sigma_pi')


@dataclass(frozen=True)
class TimeGrid:
    """[0, T] を N 等分した一様な時間格子 t_n = nT/N"""  # クラスの説明

    horizon: float  # 終端時刻 T
    steps: int  # ステップ数 N

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigurationError(f"Tは正の値が必要です: {self.horizon}", field='T')
        if self.steps < 1:
            raise ConfigurationError(f"Nは1以上が必要です: {self.steps}", field='N')

    @property
    def dt(self) -> float:
        """時間刻み T/N"""
        return self.horizon / self.steps

    def node(self, n: int) -> float:
        """n番目の格子点 t_n（t_0 = 0, t_N = T ちょうど）"""
        if not 0 <= n <= self.steps:
            raise IndexError(f"格子点の番号が範囲外です: {n}")
        if n == self.steps:
            return float(self.horizon)  # 丸め誤差なしで終端時刻を返す
        return n * self.horizon / self.steps

    def nodes(self) -> np.ndarray:
        """全格子点 (N+1,)"""
        return np.array([self.node(n) for n in range(self.steps + 1)])


@dataclass(frozen=True)
class CostSpec:
    """走行コスト f(t,x,a)・終端コスト g(x)・割引率 β"""  # クラスの説明

    running_cost: RunningCostFn  # 走行コスト f
    terminal_cost: TerminalCostFn  # 終端コスト g
    discount_rate: float = 0.0  # 割引率 β（0なら割引なし）

    def __post_init__(self):
        if not np.isfinite(self.discount_rate) or self.discount_rate < 0:
            raise ConfigurationError(f"割引率は0以上が必要です: {self.discount_rate}", field='discount_rate')


# ========== 正規分布の分位点 ==========

# 有理関数近似の係数表（下側・中央・上側の3領域）
_Q_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
        1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_Q_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
        6.680131188771972e+01, -1.328068155288572e+01)
_Q_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
        -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_Q_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
        3.754408661907416e+00)
_P_LOW = 0.02425  # 下側領域の境界
_P_HIGH = 1.0 - _P_LOW  # 上側領域の境界


def _tail_rational(q: np.ndarray) -> np.ndarray:
    """裾の領域の有理関数近似（q = √(-2 log p)）"""
    num = ((((_Q_C[0] * q + _Q_C[1]) * q + _Q_C[2]) * q + _Q_C[3]) * q + _Q_C[4]) * q + _Q_C[5]  # 分子（ホーナー法）
    den = (((_Q_D[0] * q + _Q_D[1]) * q + _Q_D[2]) * q + _Q_D[3]) * q + 1.0  # 分母
    return num / den  # 下側の裾の z（上側は符号を反転して使う）


def normal_quantile(u) -> np.ndarray:
    """標準正規分布の分位点 Φ⁻¹(u)

    有理関数近似（相対誤差 1e-9 程度）に Halley 法を1回かけて
    倍精度近くまで精度を上げる。u は開区間 (0, 1) の値であること。

    Args:
        u: 確率（スカラーまたは配列）

    Returns:
        Φ(z) = u を満たす z（u と同じ形）
    """
    p = np.asarray(u, dtype=float)  # スカラーも配列として扱う
    if not np.all((p > 0.0) & (p < 1.0)):  # NaNもここで弾く
        raise DomainError(f"uは開区間(0,1)の値が必要です: {p[~((p > 0.0) & (p < 1.0))].ravel()[:3]}")

    z = np.empty_like(p)
    low = p < _P_LOW  # 下側の裾
    high = p > _P_HIGH  # 上側の裾
    mid = ~(low | high)  # 中央領域

    if np.any(low):
        z[low] = _tail_rational(np.sqrt(-2.0 * np.log(p[low])))  # 下側: q = √(-2 log p)
    if np.any(high):
        z[high] = -_tail_rational(np.sqrt(-2.0 * np.log1p(-p[high])))  # 上側: 1-p で対称に計算
    if np.any(mid):
        q = p[mid] - 0.5  # 中央からのずれ
        r = q * q
        num = (((((_Q_A[0] * r + _Q_A[1]) * r + _Q_A[2]) * r + _Q_A[3]) * r + _Q_A[4]) * r + _Q_A[5]) * q  # 分子
        den = ((((_Q_B[0] * r + _Q_B[1]) * r + _Q_B[2]) * r + _Q_B[3]) * r + _Q_B[4]) * r + 1.0  # 分母
        z[mid] = num / den  # 中央領域の z

    # Halley法で1回補正
    # 上側の残差は 1-Φ(z) と 1-p の差（どちらも erfc と同じく小さい数のまま扱う）
    upper = p > 0.5
    e = np.where(upper,
                 (1.0 - p) - 0.5 * erfc(z / np.sqrt(2.0)),  # 上側: (1-p) - (1-Φ(z))
                 0.5 * erfc(-z / np.sqrt(2.0)) - p)  # 下側: Φ(z) - p
    step = e * np.sqrt(2.0 * np.pi) * np.exp(0.5 * z * z)  # ニュートン法の補正量 e / φ(z)
    z = z - step / (1.0 + 0.5 * z * step)  # Halley法の3次収束の補正
    return z


# ========== 組み込みモデル ==========

def _action_drift(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """setting1: b(x,a) = a"""
    a = np.asarray(a, dtype=float)
    return np.broadcast_to(a, np.broadcast_shapes(np.shape(x), a.shape)).copy()


def _tanh_drift(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """setting2, 3: b(x,a) = tanh(a)"""
    a = np.asarray(a, dtype=float)
    return np.broadcast_to(np.tanh(a), np.broadcast_shapes(np.shape(x), a.shape)).copy()


def _constant_volatility(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """σ(x,a) = 0.1（1次元）"""
    batch = np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1])
    return np.full(batch + (1, 1), BASE_VOLATILITY)


def _linear_action_volatility(c_sigma: float) -> VolatilityFn:
    """σ(x,a) = 0.1 + c·a を返す関数を作る"""

    def volatility(x: np.ndarray, a: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        batch = np.broadcast_shapes(np.shape(x)[:-1], a.shape[:-1])
        return np.broadcast_to((BASE_VOLATILITY + c_sigma * a)[..., None], batch + (1, 1)).copy()

    return volatility


def builtin_setting(setting_id: str, c_sigma: Optional[float] = None) -> ModelSpec:
    """数値実験の標準モデルを返す

    - setting1: b = a,       σ = 0.1
    - setting2: b = tanh(a), σ = 0.1
    - setting3: b = tanh(a), σ = 0.1 + c_sigma·a（c_sigmaが必須）

    Args:
        setting_id: 'setting1' / 'setting2' / 'setting3'
        c_sigma: setting3のボラティリティ係数（他のsettingでは無視）

    Returns:
        1次元の ModelSpec
    """
    if setting_id == 'setting1':
        return ModelSpec(name='setting1', state_dim=1, action_dim=1, drift=_action_drift,
                         volatility=_constant_volatility, lipschitz_hints={'b': 1.0, 'sigma': 0.0})
    if setting_id == 'setting2':
        return ModelSpec(name='setting2', state_dim=1, action_dim=1, drift=_tanh_drift,
                         volatility=_constant_volatility, drift_bound=1.0,
                         lipschitz_hints={'b': 1.0, 'sigma': 0.0})
    if setting_id == 'setting3':
        if c_sigma is None:  # setting3はc_sigmaが必須
            raise ConfigurationError("setting3にはc_sigmaの指定が必要です", field='c_sigma')
        if not np.isfinite(c_sigma):
            raise ConfigurationError(f"c_sigmaは有限値が必要です: {c_sigma}", field='c_sigma')
        if c_sigma == 0:
            volatility = _constant_volatility  # c=0 は setting2 と同じ関数
        else:
            volatility = _linear_action_volatility(float(c_sigma))
        return ModelSpec(name='setting3', state_dim=1, action_dim=1, drift=_tanh_drift,
                         volatility=volatility, volatility_controlled=c_sigma != 0,
                         drift_bound=1.0, lipschitz_hints={'b': 1.0, 'sigma': abs(float(c_sigma))})
    raise ConfigurationError(f"未知のsettingです: {setting_id}（{', '.join(SETTING_IDS)}のいずれか）", field='setting')


def clip_actions(model: ModelSpec, bound: Optional[float]) -> ModelSpec:
    """行動を [-bound, bound] に切り詰めてから係数を評価するモデルを返す

    緩和側（求積）と混合側（サンプリング）の両方が同じ切り詰めを見るように、
    方策ではなくモデル側で切り詰める。bound が None ならそのまま返す。
    """
    if bound is None:
        return model
    if not bound > 0:
        raise ConfigurationError(f"action_clipは正の値が必要です: {bound}", field='action_clip')
    logger.debug(f"行動を±{bound}で切り詰めます: {model.name}")

    def drift(x, a):
        return model.drift(x, np.clip(a, -bound, bound))

    def volatility(x, a):
        return model.volatility(x, np.clip(a, -bound, bound))

    return ModelSpec(name=model.name, state_dim=model.state_dim, action_dim=model.action_dim,
                     drift=drift, volatility=volatility, volatility_controlled=model.volatility_controlled,
                     drift_bound=model.drift_bound, lipschitz_hints=dict(model.lipschitz_hints))


# ========== 方策 ==========

def default_policy(sigma_pi: float) -> FeedbackPolicy:
    """状態を x=1 に引き寄せる方策 π(x) = N(1 - x, σ_π²)"""
    return FeedbackPolicy(mean_fn=lambda x: 1.0 - np.asarray(x, dtype=float), std=float(sigma_pi))


def policy_at(policy: FeedbackPolicy, x) -> Tuple[np.ndarray, float]:
    """状態 x での方策の (平均, 標準偏差) を返す"""
    return np.asarray(policy.mean_fn(np.asarray(x, dtype=float)), dtype=float), policy.std


def sample_action(policy: FeedbackPolicy, x, u) -> np.ndarray:
    """一様乱数 u を π(x) に従う行動へ押し出す（逆関数法）

    a = mean(x) + std·Φ⁻¹(u) を成分ごとに計算する。std = 0 なら平均そのもの。

    Args:
        policy: フィードバック方策
        x: 状態 (..., d)
        u: 開区間 (0,1) の一様乱数（平均と同じ形、またはブロードキャスト可能な形）

    Returns:
        行動 (..., action_dim)
    """
    mean, std = policy_at(policy, x)
    z = normal_quantile(u)  # 定義域チェックもここで行う
    if std == 0:
        return np.broadcast_to(mean, np.broadcast_shapes(mean.shape, z.shape)).copy()  # 退化方策
    return mean + std * z


# ========== コスト ==========

def default_costs(discount_rate: float = 0.0) -> CostSpec:
    """既定のコスト f(t,x,a) = |x-1|² + 0.1|a|²、g(x) = |x|²"""

    def running_cost(t, x, a):
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        return np.sum((x - 1.0) ** 2, axis=-1) + 0.1 * np.sum(a ** 2, axis=-1)

    def terminal_cost(x):
        return np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)

    return CostSpec(running_cost=running_cost, terminal_cost=terminal_cost, discount_rate=discount_rate)


COST_SELECTORS = ('default',)  # 設定ファイルで選べるコスト


def cost_from_selector(selector: str, discount_rate: float = 0.0) -> CostSpec:
    """設定ファイルのコスト名から CostSpec を作る"""
    if selector == 'default':
        return default_costs(discount_rate)
    raise ConfigurationError(f"未知のコスト指定です: {selector}（{', '.join(COST_SELECTORS)}のいずれか）", field='cost')
