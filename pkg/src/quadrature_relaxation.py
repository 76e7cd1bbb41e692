"""ガウス・エルミート求積による緩和係数の計算

方策 π(x) = N(m, s²) に関する積分 ∫ φ(a) π(x)(da) を、変数変換
a = m + √2·s·t とガウス・エルミート則（重み exp(-t²)）で近似します。

主な機能:
- build_rule: Golub–Welsch法（ヤコビ行列の固有値）で求積則を作る
- gaussian_expectation: 1次元ガウス期待値
- relaxed_drift / relaxed_volatility / diffusion_matrix: 緩和係数
- psd_sqrt / residual_volatility: マルチンゲール問題形式のための行列平方根
- quadrature_self_check: 求積則の自己診断（quadrature-check コマンド用）
"""  # モジュールの説明

import math  # 補償付き総和用
from dataclasses import dataclass  # イミュータブルなデータ型の定義用
from functools import lru_cache  # 求積則のキャッシュ用
from typing import Any, Callable, Dict, Optional, Tuple  # 型ヒント用

import numpy as np  # 数値計算用
from scipy.linalg import eigh_tridiagonal  # 三重対角行列の固有値計算用
from loguru import logger  # ログ出力用（loguru）

from src.errors import ConfigurationError, EvaluationError, NotPSDError  # 例外クラス
from src.model_core import FeedbackPolicy, ModelSpec, policy_at  # モデルと方策

MIN_ORDER = 1  # 求積則の最小次数
MAX_ORDER = 64  # 求積則の最大次数
DEFAULT_ORDER = 10  # 数値実験の既定値（10点）
PSD_RELATIVE_TOL = 1e-10  # 負の固有値の許容量（‖M‖に対する比）
VOL_MODES = ('uncontrolled', 'naive', 'sqrt')  # 緩和ボラティリティの種類

SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True, eq=False)
class GaussHermiteRule:
    """物理学者流ガウス・エルミート則（重み関数 exp(-t²)）"""  # クラスの説明

    order: int  # 点数 n
    nodes: np.ndarray  # 昇順のノード（H_n の根）
    weights: np.ndarray  # 正の重み（合計 √π）


@lru_cache(maxsize=None, typed=True)  # True と 1 を別のキーにする
def build_rule(order: int = DEFAULT_ORDER) -> GaussHermiteRule:
    """n点ガウス・エルミート則を作る（一度作ったものはキャッシュ）

    ノードはヤコビ行列（対角0、副対角 √(k/2)）の固有値、
    重みはクリストッフェル関数 1 / Σ_k p_k(t)² で求める（p_k は正規直交エルミート多項式）。

    Args:
        order: 点数（1〜64）

    Returns:
        GaussHermiteRule
    """
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)) or not MIN_ORDER <= order <= MAX_ORDER:
        raise ConfigurationError(f"quadrature_orderは{MIN_ORDER}〜{MAX_ORDER}の整数が必要です: {order}", field='quadrature_order')
    order = int(order)

    if order == 1:
        nodes = np.zeros(1)  # H_1(t) = 2t の根
    else:
        off_diagonal = np.sqrt(np.arange(1, order) / 2.0)  # ヤコビ行列の副対角
        nodes = eigh_tridiagonal(np.zeros(order), off_diagonal, eigvals_only=True)
        nodes = np.sort(nodes)
        nodes = 0.5 * (nodes - nodes[::-1])  # 0について厳密に対称化

    # 正規直交多項式の漸化式で Σ p_k(t)² を計算
    p_prev = np.zeros_like(nodes)
    p_curr = np.full_like(nodes, math.pi ** -0.25)
    christoffel = p_curr ** 2
    for k in range(1, order):
        p_next = nodes * math.sqrt(2.0 / k) * p_curr - math.sqrt((k - 1) / k) * p_prev
        p_prev, p_curr = p_curr, p_next
        christoffel = christoffel + p_curr ** 2
    weights = 1.0 / christoffel
    weights = 0.5 * (weights + weights[::-1])  # 対称化
    weights = weights * (SQRT_PI / math.fsum(weights))  # 合計を √π に合わせる

    nodes.setflags(write=False)  # キャッシュを書き換えられないようにする
    weights.setflags(write=False)
    logger.debug(f"ガウス・エルミート則を作成しました: order={order}")
    return GaussHermiteRule(order=order, nodes=nodes, weights=weights)


@lru_cache(maxsize=None)
def _tensor_rule(order: int, dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """dim次元のテンソル積則（標準化済み: 重み合計1、ノードは √2·t）"""
    rule = build_rule(order)
    grids = np.meshgrid(*([rule.nodes] * dim), indexing='ij')
    points = np.stack([g.ravel() for g in grids], axis=-1) * math.sqrt(2.0)  # (P, dim)
    weight_grids = np.meshgrid(*([rule.weights] * dim), indexing='ij')
    weights = np.prod(np.stack([w.ravel() for w in weight_grids], axis=-1), axis=-1) / SQRT_PI ** dim  # (P,)
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def _check_finite(values: np.ndarray, points: np.ndarray, batch_ndim: int, what: str):
    """ノードでの評価値が有限か確認し、だめならノード付きで例外を出す"""
    if np.all(np.isfinite(values)):
        return
    bad = ~np.isfinite(values)
    bad_nodes = np.any(bad.reshape(bad.shape[:batch_ndim + 1] + (-1,)), axis=-1)  # (..., P)
    index = int(np.argwhere(bad_nodes)[0][-1])  # 最初に見つかったノード番号
    node = points[index] / math.sqrt(2.0)
    node_value = float(node[0]) if node.size == 1 else node.tolist()
    raise EvaluationError(f"{what}がノード t={node_value} で非有限値になりました", node=node_value)


def _node_actions(mean: np.ndarray, std: float, rule: GaussHermiteRule) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """求積ノードに対応する行動 a = mean + √2·std·t を (..., P, k) で返す"""
    points, weights = _tensor_rule(rule.order, mean.shape[-1])  # 行動次元 k のテンソル積則
    return mean[..., None, :] + std * points, points, weights


def _weighted_sum(values: np.ndarray, weights: np.ndarray, batch_ndim: int) -> np.ndarray:
    """ノード軸（batch_ndim番目）について重み付き和をとる

    ノードの番号順に1つずつ足すので、バッチの大きさによらず各要素の値は同じになる。
    """
    nodes = np.moveaxis(values, batch_ndim, 0)  # ノード軸を先頭へ
    total = nodes[0] * weights[0]  # 最初のノード
    for p in range(1, weights.size):  # 残りのノードを番号順に加える
        total = total + nodes[p] * weights[p]
    return total


def policy_expectation(integrand: Callable[[np.ndarray], np.ndarray], mean: np.ndarray, std: float,
                       rule: GaussHermiteRule, what: str = "被積分関数") -> np.ndarray:
    """∫ integrand(a) N(mean, std²I)(da) をテンソル積則で計算する

    integrand は (..., P, k) の行動を受け取り (..., P, *out) を返すこと。
    """
    mean = np.asarray(mean, dtype=float)
    actions, points, weights = _node_actions(mean, std, rule)
    values = np.asarray(integrand(actions), dtype=float)
    _check_finite(values, points, mean.ndim - 1, what)
    return _weighted_sum(values, weights, mean.ndim - 1)


def gaussian_expectation(fn: Callable[[np.ndarray], np.ndarray], mean: float, std: float,
                         rule: Optional[GaussHermiteRule] = None) -> float:
    """1次元ガウス期待値 E[fn(A)], A ~ N(mean, std²)

    (1/√π) Σ w_i fn(mean + √2·std·t_i) を返す。std = 0 なら fn(mean) ちょうど。
    """
    if std < 0:
        raise ConfigurationError(f"stdは0以上が必要です: {std}", field='std')
    rule = rule or build_rule()
    if std == 0:
        value = float(fn(np.asarray(mean, dtype=float)))
        if not math.isfinite(value):  # ディラック方策でも非有限値は通さない
            raise EvaluationError(f"被積分関数が平均 a={mean} で非有限値になりました", node=0.0)
        return value
    points = rule.nodes * math.sqrt(2.0)
    values = np.asarray(fn(mean + std * points), dtype=float)
    if not np.all(np.isfinite(values)):
        index = int(np.argwhere(~np.isfinite(values))[0][0])
        raise EvaluationError(f"被積分関数がノード t={rule.nodes[index]} で非有限値になりました", node=float(rule.nodes[index]))
    return math.fsum(values * rule.weights) / SQRT_PI


def relaxed_drift(model: ModelSpec, policy: FeedbackPolicy, x, rule: Optional[GaussHermiteRule] = None) -> np.ndarray:
    """緩和ドリフト b̃(x, π) = ∫ b(x,a) π(x)(da)

    Args:
        model: モデル
        policy: 方策
        x: 状態 (..., d)
        rule: 求積則（省略時は10点）

    Returns:
        (..., d)
    """
    x = np.asarray(x, dtype=float)
    mean, std = policy_at(policy, x)
    if std == 0:
        return model.drift(x, mean)  # ディラック方策
    rule = rule or build_rule()
    return policy_expectation(lambda a: model.drift(x[..., None, :], a), mean, std, rule, "ドリフト")


def _outer(sigma: np.ndarray) -> np.ndarray:
    """σσ*"""
    return np.einsum('...ij,...kj->...ik', sigma, sigma)


def volatility_moments(model: ModelSpec, policy: FeedbackPolicy, x,
                       rule: Optional[GaussHermiteRule] = None) -> Tuple[np.ndarray, np.ndarray]:
    """ボラティリティの1次・2次モーメント (∫σ π, ∫σσ* π) を一度の評価で返す"""
    x = np.asarray(x, dtype=float)
    mean, std = policy_at(policy, x)
    if std == 0 or not model.volatility_controlled:
        sigma = model.volatility(x, mean)  # 被積分関数が定数
        return sigma, _outer(sigma)
    rule = rule or build_rule()
    actions, points, weights = _node_actions(mean, std, rule)
    sigma = np.asarray(model.volatility(x[..., None, :], actions), dtype=float)  # (..., P, d, d)
    batch_ndim = mean.ndim - 1
    _check_finite(sigma, points, batch_ndim, "ボラティリティ")
    naive = _weighted_sum(sigma, weights, batch_ndim)  # ∫σ π
    diffusion = _weighted_sum(_outer(sigma), weights, batch_ndim)  # ∫σσ* π
    return naive, 0.5 * (diffusion + np.swapaxes(diffusion, -1, -2))  # 丸め誤差の非対称分を除く


def diffusion_matrix(model: ModelSpec, policy: FeedbackPolicy, x, rule: Optional[GaussHermiteRule] = None) -> np.ndarray:
    """マルチンゲール問題の拡散係数 𝔞(x, π) = ∫ σσ*(x,a) π(x)(da)（対称）"""
    return volatility_moments(model, policy, x, rule)[1]


def relaxed_volatility(model: ModelSpec, policy: FeedbackPolicy, x, mode: str = 'uncontrolled',
                       rule: Optional[GaussHermiteRule] = None) -> np.ndarray:
    """緩和ボラティリティ

    - uncontrolled: σ(x,·)（行動に依存しないモデル専用）
    - naive: ∫ σ(x,a) π(x)(da)（成分ごとの平均）
    - sqrt: (∫ σσ* π(x)(da)) の対称半正定値平方根
    """
    x = np.asarray(x, dtype=float)
    if mode == 'uncontrolled':
        if model.volatility_controlled:
            raise ConfigurationError(f"{model.name}はボラティリティが制御されているためuncontrolledモードは使えません", field='vol_mode')
        mean, _ = policy_at(policy, x)
        return model.volatility(x, mean)
    if mode == 'naive':
        return volatility_moments(model, policy, x, rule)[0]
    if mode == 'sqrt':
        return psd_sqrt(diffusion_matrix(model, policy, x, rule))
    raise ConfigurationError(f"未知のvol_modeです: {mode}（{', '.join(VOL_MODES)}のいずれか）", field='vol_mode')


def psd_sqrt(matrix) -> np.ndarray:
    """対称半正定値行列の対称平方根（固有値分解、負の固有値は許容範囲内なら0に切り上げ）

    Args:
        matrix: (..., d, d) の対称行列

    Returns:
        S·S = M となる対称行列 S
    """
    m = np.asarray(matrix, dtype=float)
    m = 0.5 * (m + np.swapaxes(m, -1, -2))  # 対称部分だけを使う
    tol = PSD_RELATIVE_TOL * np.linalg.norm(m, axis=(-2, -1))  # フロベニウスノルムに対する相対許容量

    if m.shape[-1] == 1:  # 1次元は固有値分解不要
        eigenvalues = m[..., 0, 0]
        _raise_if_negative(eigenvalues, tol)
        return np.sqrt(np.maximum(eigenvalues, 0.0))[..., None, None]

    eigenvalues, vectors = np.linalg.eigh(m)  # 昇順の固有値と正規直交な固有ベクトル
    _raise_if_negative(np.min(eigenvalues, axis=-1), tol)  # 最小固有値で判定
    roots = np.sqrt(np.maximum(eigenvalues, 0.0))  # 許容範囲内の負の固有値は0に切り上げ
    return np.einsum('...ik,...k,...jk->...ij', vectors, roots, vectors)


def _raise_if_negative(min_eigenvalues: np.ndarray, tol: np.ndarray):
    bad = min_eigenvalues < -tol  # 許容範囲を超えて負
    if np.any(bad):
        worst = float(np.min(np.where(bad, min_eigenvalues, np.inf)))
        raise NotPSDError(f"行列が半正定値ではありません（最小固有値 {worst}）", min_eigenvalue=worst)


def residual_volatility(model: ModelSpec, policy: FeedbackPolicy, x, rule: Optional[GaussHermiteRule] = None) -> np.ndarray:
    """残差ボラティリティ s̃ = (𝔞 - σ̄σ̄*)^{1/2}（1次元では σ(x,A) の標準偏差）"""
    x = np.asarray(x, dtype=float)
    mean, std = policy_at(policy, x)
    if std == 0 or not model.volatility_controlled:
        batch = np.broadcast_shapes(x.shape[:-1], mean.shape[:-1])
        return np.zeros(batch + (model.state_dim, model.state_dim))  # 分散0
    naive, diffusion = volatility_moments(model, policy, x, rule)
    gap = diffusion - _outer(naive)  # 𝔞 - σ̄σ̄*（半正定値）
    return psd_sqrt(gap)  # 許容量は gap 自身のノルムが基準


def gaussian_moment(k: int) -> float:
    """標準正規分布のモーメント E[Z^k]（奇数は0、偶数は (k-1)!!）"""
    if k % 2 == 1:
        return 0.0
    return float(math.prod(range(k - 1, 0, -2)))


def quadrature_self_check(order: int = DEFAULT_ORDER, tolerance: float = 1e-10) -> Dict[str, Any]:
    """求積則の自己診断（重みの合計・対称性・モーメントの厳密性）

    n点則は次数 2n-1 までの多項式を厳密に積分するので、
    E[Z^k]（k ≤ 2n-1）を相対誤差 tolerance 以内で再現できるかを確認する。

    Returns:
        quadrature_check.json 用の辞書（passed が全体の合否）
    """
    rule = build_rule(order)
    weight_sum_error = abs(math.fsum(rule.weights) - SQRT_PI) / SQRT_PI
    node_symmetry_error = float(np.max(np.abs(rule.nodes + rule.nodes[::-1])))
    weight_symmetry_error = float(np.max(np.abs(rule.weights - rule.weights[::-1]))) / SQRT_PI
    moments = []
    for k in range(2 * order):
        exact = gaussian_moment(k)
        approx = gaussian_expectation(lambda a: a ** k, 0.0, 1.0, rule)
        error = abs(approx - exact) / max(1.0, abs(exact))
        moments.append({'k': k, 'exact': exact, 'quadrature': approx, 'relative_error': error})
    worst = max(m['relative_error'] for m in moments)
    passed = max(weight_sum_error, node_symmetry_error, weight_symmetry_error, worst) <= tolerance
    if passed:
        logger.info(f"求積則の自己診断に合格しました: order={order}, 最大誤差={worst:.2e}")
    else:
        logger.error(f"求積則の自己診断に失敗しました: order={order}, 最大誤差={worst:.2e}")
    return {
        'order': order,
        'tolerance': tolerance,
        'weight_sum_error': weight_sum_error,
        'node_symmetry_error': node_symmetry_error,
        'weight_symmetry_error': weight_symmetry_error,
        'max_moment_error': worst,
        'moments': moments,
        'passed': passed,
    }
