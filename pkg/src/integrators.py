"""状態方程式の離散時間シミュレーション（オイラー・丸山法）

3種類の時間発展を実装します。どれも係数を区間の左端で評価する陽的スキームです。

- 緩和スキーム: X̃_{n+1} = X̃_n + (T/N)·b̃(X̃_n, π(X̃_n)) + σ̃(X̃_n)·ΔW_n
- 混合スキーム: â_n ~ π(X̂_n) を一様乱数から作り、
                X̂_{n+1} = X̂_n + (T/N)·b(X̂_n, â_n) + σ(X̂_n, â_n)·ΔW_n
- マルチンゲール問題形式: X_{n+1} = X_n + (T/N)·b̃ + σ̄·ΔW_n + s̃·ΔB_n（W と B は独立）

*_paths 関数は M 本の軌道を (M, N+1, d) の配列でまとめて計算し、
simulate_* 関数は1本分を Trajectory として返します。
"""  # モジュールの説明

from dataclasses import dataclass  # イミュータブルなデータ型の定義用
from typing import Optional, Sequence, Tuple  # 型ヒント用

import numpy as np  # 数値計算用
from loguru import logger  # ログ出力用（loguru）

from src.errors import ConfigurationError, DivergenceError  # 例外クラス
from src.model_core import FeedbackPolicy, ModelSpec, TimeGrid, sample_action  # モデル・方策・格子
from src.quadrature_relaxation import (  # 緩和係数
    GaussHermiteRule,
    build_rule,
    relaxed_drift,
    relaxed_volatility,
    residual_volatility,
    volatility_moments,
)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """格子上の1本の軌道（状態と、混合スキームなら行動も）"""  # クラスの説明

    grid: TimeGrid  # 時間格子
    states: np.ndarray  # 状態 (N+1, d)
    actions: Optional[np.ndarray] = None  # 行動 (N, action_dim)（混合スキームのみ）
    scheme: str = 'relaxed'  # スキーム名

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.shape[0] != self.grid.steps + 1:
            raise ConfigurationError(f"状態の長さがN+1={self.grid.steps + 1}と一致しません: {self.states.shape}", field='states')
        if self.actions is not None and (self.actions.ndim != 2 or self.actions.shape[0] != self.grid.steps):
            raise ConfigurationError(f"行動の長さがN={self.grid.steps}と一致しません: {self.actions.shape}", field='actions')
        if not np.all(np.isfinite(self.states)):
            raise DivergenceError("軌道に非有限値が含まれています", scheme=self.scheme)


def _as_increments(increments, grid: TimeGrid, dim: int, name: str) -> np.ndarray:
    """増分を (M, N, dim) にそろえ、長さを確認する"""
    array = np.asarray(increments, dtype=float)
    if array.ndim == 1:
        array = array[:, None]  # (N,) -> (N, 1)
    if array.ndim == 2:
        array = array[None]  # (N, dim) -> (1, N, dim)
    if array.ndim != 3 or array.shape[1] != grid.steps or array.shape[2] != dim:
        raise ConfigurationError(f"{name}の形が(M, N={grid.steps}, {dim})と一致しません: {np.shape(increments)}", field=name)
    return array


def _initial_states(x0, batch: int, dim: int) -> np.ndarray:
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (dim,))
    if not np.all(np.isfinite(x0)):
        raise ConfigurationError(f"x0は有限値が必要です: {x0}", field='x0')
    return np.broadcast_to(x0, (batch, dim)).copy()


def _apply(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """行列 × ベクトル（バッチ対応）"""
    return np.einsum('...ij,...j->...i', matrix, vector)


def _euler_step(x: np.ndarray, dt: float, drift: np.ndarray, sigma: np.ndarray, dw: np.ndarray) -> np.ndarray:
    """x + dt·b + σ·ΔW（全スキーム共通の1ステップ）"""
    return x + dt * drift + _apply(sigma, dw)


def _check_step(x: np.ndarray, step: int, scheme: str, trajectory_indices: Optional[Sequence[int]]):
    if np.all(np.isfinite(x)):
        return
    row = int(np.argwhere(~np.all(np.isfinite(x), axis=-1))[0][0])
    index = trajectory_indices[row] if trajectory_indices is not None else row
    logger.error(f"{scheme}スキームが発散しました: step={step}, trajectory={index}")
    raise DivergenceError(f"{scheme}スキームの状態がステップ{step}で非有限値になりました", step=step,
                          trajectory_index=int(index), scheme=scheme)


def relaxed_paths(model: ModelSpec, policy: FeedbackPolicy, grid: TimeGrid, increments, x0,
                  vol_mode: str = 'uncontrolled', rule: Optional[GaussHermiteRule] = None,
                  trajectory_indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """緩和スキームで M 本の軌道を計算する（行動の乱数は使わない）

    Returns:
        状態 (M, N+1, d)
    """
    rule = rule or build_rule()
    dw = _as_increments(increments, grid, model.state_dim, 'increments')
    states = np.empty((dw.shape[0], grid.steps + 1, model.state_dim))
    x = _initial_states(x0, dw.shape[0], model.state_dim)
    states[:, 0] = x
    dt = grid.dt
    for n in range(grid.steps):
        drift = relaxed_drift(model, policy, x, rule)
        sigma = relaxed_volatility(model, policy, x, vol_mode, rule)
        x = _euler_step(x, dt, drift, sigma, dw[:, n])
        _check_step(x, n + 1, 'relaxed', trajectory_indices)
        states[:, n + 1] = x
    return states


def mixed_paths(model: ModelSpec, policy: FeedbackPolicy, grid: TimeGrid, increments, uniforms, x0,
                trajectory_indices: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, np.ndarray]:
    """混合（ランダム化行動）スキームで M 本の軌道を計算する

    ステップ m の行動は u_m だけから作るので、行動 m は (x0, ΔW_{<m}, u_{≤m}) にのみ依存する。

    Returns:
        (状態 (M, N+1, d), 行動 (M, N, action_dim))
    """
    dw = _as_increments(increments, grid, model.state_dim, 'increments')
    u = _as_increments(uniforms, grid, model.action_dim, 'uniforms')
    if u.shape[0] != dw.shape[0]:
        raise ConfigurationError(f"増分と一様乱数の本数が一致しません: {dw.shape[0]} != {u.shape[0]}", field='uniforms')
    states = np.empty((dw.shape[0], grid.steps + 1, model.state_dim))
    actions = np.empty((dw.shape[0], grid.steps, model.action_dim))
    x = _initial_states(x0, dw.shape[0], model.state_dim)
    states[:, 0] = x
    dt = grid.dt
    for m in range(grid.steps):
        a = sample_action(policy, x, u[:, m])
        actions[:, m] = a
        x = _euler_step(x, dt, model.drift(x, a), model.volatility(x, a), dw[:, m])
        _check_step(x, m + 1, 'mixed', trajectory_indices)
        states[:, m + 1] = x
    return states, actions


def martingale_paths(model: ModelSpec, policy: FeedbackPolicy, grid: TimeGrid, increments_w, increments_b, x0,
                     rule: Optional[GaussHermiteRule] = None,
                     trajectory_indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """マルチンゲール問題形式 dX = b̃dt + σ̄dW + s̃dB で M 本の軌道を計算する

    Returns:
        状態 (M, N+1, d)
    """
    rule = rule or build_rule()
    dw = _as_increments(increments_w, grid, model.state_dim, 'increments_w')
    db = _as_increments(increments_b, grid, model.state_dim, 'increments_b')
    if db.shape[0] != dw.shape[0]:
        raise ConfigurationError(f"WとBの本数が一致しません: {dw.shape[0]} != {db.shape[0]}", field='increments_b')
    states = np.empty((dw.shape[0], grid.steps + 1, model.state_dim))
    x = _initial_states(x0, dw.shape[0], model.state_dim)
    states[:, 0] = x
    dt = grid.dt
    for n in range(grid.steps):
        drift = relaxed_drift(model, policy, x, rule)
        naive, _ = volatility_moments(model, policy, x, rule)
        residual = residual_volatility(model, policy, x, rule)
        x = _euler_step(x, dt, drift, naive, dw[:, n]) + _apply(residual, db[:, n])
        _check_step(x, n + 1, 'martingale', trajectory_indices)
        states[:, n + 1] = x
    return states


def simulate_relaxed(model: ModelSpec, policy: FeedbackPolicy, grid: TimeGrid, increments, x0,
                     vol_mode: str = 'uncontrolled', rule: Optional[GaussHermiteRule] = None) -> Trajectory:
    """緩和スキームの軌道を1本計算する

    Args:
        model: モデル
        policy: 方策
        grid: 時間格子
        increments: ブラウン増分 (N, d)
        x0: 初期状態
        vol_mode: 'uncontrolled' / 'naive' / 'sqrt'
        rule: 求積則

    Returns:
        Trajectory（行動なし）
    """
    states = relaxed_paths(model, policy, grid, increments, x0, vol_mode, rule)
    return Trajectory(grid=grid, states=states[0], scheme='relaxed')


def simulate_mixed(model: ModelSpec, policy: FeedbackPolicy, grid: TimeGrid, increments, uniforms, x0) -> Trajectory:
    """混合スキームの軌道を1本計算する（行動も記録する）"""
    states, actions = mixed_paths(model, policy, grid, increments, uniforms, x0)
    return Trajectory(grid=grid, states=states[0], actions=actions[0], scheme='mixed')


def simulate_martingale_form(model: ModelSpec, policy: FeedbackPolicy, grid: TimeGrid, increments_w, increments_b, x0,
                             rule: Optional[GaussHermiteRule] = None) -> Trajectory:
    """マルチンゲール問題形式の軌道を1本計算する"""
    states = martingale_paths(model, policy, grid, increments_w, increments_b, x0, rule)
    return Trajectory(grid=grid, states=states[0], scheme='martingale')
