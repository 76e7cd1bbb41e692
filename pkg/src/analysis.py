"""強収束誤差のモンテカルロ推定・収束率の推定・コスト収束の確認

緩和スキームと混合スキームを同じブラウン増分で動かし（カップリング）、
E[max_n |X̃_{t_n} - X̂_{t_n}|²] を N ごとに推定します。

主な機能:
- sup_sq_error: 2本の軌道の格子上での最大二乗距離
- estimate_error / convergence_study: N ごとの誤差推定（ConvergenceRecord）
- fit_rate: log N に対する log 誤差の最小二乗直線（RateFit）
- discrete_cost / relaxed_cost / cost_gap_study: コスト汎関数の収束
- coupled_pair: 図用にカップリングされた軌道の組を作る

集計は軌道番号の昇順に math.fsum で行うので、スレッド数によらず結果は同じになります。
"""  # モジュールの説明

import math  # 補償付き総和用
from concurrent.futures import ThreadPoolExecutor  # 軌道チャンクの並列処理用
from dataclasses import dataclass  # イミュータブルなデータ型の定義用
from typing import Callable, Dict, List, Optional, Sequence, Tuple  # 型ヒント用

import numpy as np  # 数値計算用
from loguru import logger  # ログ出力用（loguru）

from src.errors import ConfigurationError, FitError  # 例外クラス
from src.integrators import Trajectory, martingale_paths, mixed_paths, relaxed_paths  # スキーム
from src.model_core import CostSpec, FeedbackPolicy, ModelSpec, TimeGrid, policy_at  # モデル・方策・格子
from src.noise_lattice import STREAM_BROWNIAN, STREAM_BROWNIAN_B, coarsen, lattice_block, uniform_block  # 乱数
from src.quadrature_relaxation import VOL_MODES, GaussHermiteRule, build_rule, policy_expectation  # 求積

STUDY_VOL_MODES = VOL_MODES + ('martingale',)  # 実験で選べる緩和側のスキーム
CHUNK_SIZE = 250  # 1タスクで計算する軌道数（スレッド数とは無関係に固定）


@dataclass(frozen=True)
class StudyParams:
    """モンテカルロ実験のパラメータ"""  # クラスの説明

    horizon: float = 5.0  # 終端時刻 T
    x0: float = 0.0  # 初期状態
    fine_steps: int = 1000  # 最も細かいステップ数 N_fine
    runs: int = 10  # ラン数
    trajectories_per_run: int = 2000  # 1ランあたりの軌道数
    master_seed: int = 0  # マスターシード
    vol_mode: str = 'uncontrolled'  # 緩和側のボラティリティ
    quadrature_order: int = 10  # 求積の点数
    threads: int = 1  # ワーカースレッド数（結果には影響しない）

    def __post_init__(self):
        if self.runs < 1 or self.trajectories_per_run < 1:
            raise ConfigurationError(f"runsとtrajectories_per_runは1以上が必要です: {self.runs}, {self.trajectories_per_run}", field='runs')
        if self.vol_mode not in STUDY_VOL_MODES:
            raise ConfigurationError(f"未知のvol_modeです: {self.vol_mode}（{', '.join(STUDY_VOL_MODES)}のいずれか）", field='vol_mode')
        if self.threads < 1:
            raise ConfigurationError(f"threadsは1以上が必要です: {self.threads}", field='threads')

    def trajectory_indices(self, run_index: int) -> List[int]:
        """ラン run_index が使う軌道番号（ランどうしで重ならない）"""
        start = run_index * self.trajectories_per_run
        return list(range(start, start + self.trajectories_per_run))


@dataclass(frozen=True)
class ConvergenceRecord:
    """N ごとの誤差推定（ラン平均の平均とラン間の標準偏差）"""  # クラスの説明

    steps: int  # ステップ数 N
    mean_sup_sq_error: float  # 各ランのモンテカルロ平均の平均
    std_across_runs: float  # ラン平均の標本標準偏差（runs=1なら0）
    runs: int  # ラン数
    trajectories_per_run: int  # 1ランあたりの軌道数
    within_run_std_error: float = 0.0  # ラン内の標準誤差の平均（CSVには出さない）


@dataclass(frozen=True)
class RateFit:
    """log 誤差 = slope·log N + intercept の当てはめ結果"""  # クラスの説明

    slope: float  # 傾き
    intercept: float  # 切片
    r_squared: float  # 決定係数
    points: Tuple[Tuple[float, float], ...]  # (log N, log 誤差) の点列


@dataclass(frozen=True)
class CostGapRecord:
    """N ごとのコストの差 |E[離散コスト] - E[緩和コスト]|"""  # クラスの説明

    steps: int  # ステップ数 N
    mean_discrete_cost: float  # 混合スキームの離散コストの平均
    mean_relaxed_cost: float  # 緩和スキームの緩和コストの平均
    gap: float  # 差の絶対値
    gap_std_error: float  # 対応のある差の標準誤差


@dataclass(frozen=True)
class TrajectoryPair:
    """同じブラウン増分で動かした緩和軌道と混合軌道の組"""  # クラスの説明

    relaxed: Trajectory  # 緩和スキームの軌道
    mixed: Trajectory  # 混合スキームの軌道
    trajectory_index: int  # 軌道番号


# ========== 誤差 ==========

def _sup_sq_errors(states_a: np.ndarray, states_b: np.ndarray) -> np.ndarray:
    """(M, N+1, d) どうしの格子上での最大二乗距離 (M,)"""
    return np.max(np.sum((states_a - states_b) ** 2, axis=-1), axis=-1)


def sup_sq_error(a: Trajectory, b: Trajectory) -> float:
    """max_n |a(t_n) - b(t_n)|²"""
    if a.grid != b.grid or a.states.shape != b.states.shape:
        raise ConfigurationError(f"格子が一致しません: {a.grid} / {b.grid}", field='grid')
    return float(_sup_sq_errors(a.states[None], b.states[None])[0])


# ========== カップリングされたシミュレーション ==========

ChunkReducer = Callable[[TimeGrid, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _relaxed_side(model: ModelSpec, policy: FeedbackPolicy, grid: TimeGrid, dw: np.ndarray, db: Optional[np.ndarray],
                  params: StudyParams, rule: GaussHermiteRule, indices: Sequence[int]) -> np.ndarray:
    """緩和側の軌道（vol_mode='martingale' のときはマルチンゲール問題形式）"""
    if params.vol_mode == 'martingale':
        return martingale_paths(model, policy, grid, dw, db, params.x0, rule, trajectory_indices=indices)
    return relaxed_paths(model, policy, grid, dw, params.x0, params.vol_mode, rule, trajectory_indices=indices)


def _simulate_chunk(model: ModelSpec, policy: FeedbackPolicy, n_list: Sequence[int], params: StudyParams,
                    indices: Sequence[int], reducer: ChunkReducer) -> Dict[int, np.ndarray]:
    """軌道チャンク1つ分を全ての N で計算し、reducer で軌道ごとの値にする"""
    rule = build_rule(params.quadrature_order)
    fine_w = lattice_block(params.master_seed, indices, params.fine_steps, params.horizon, model.state_dim, STREAM_BROWNIAN)
    fine_b = None
    if params.vol_mode == 'martingale':
        fine_b = lattice_block(params.master_seed, indices, params.fine_steps, params.horizon, model.state_dim, STREAM_BROWNIAN_B)
    uniforms = uniform_block(params.master_seed, indices, max(n_list), model.action_dim)  # 先頭N個が各格子の乱数

    values = {}
    for steps in n_list:
        grid = TimeGrid(params.horizon, steps)
        dw = coarsen(fine_w, steps)
        db = coarsen(fine_b, steps) if fine_b is not None else None
        relaxed = _relaxed_side(model, policy, grid, dw, db, params, rule, indices)
        mixed, actions = mixed_paths(model, policy, grid, dw, uniforms[:, :steps], params.x0, trajectory_indices=indices)
        values[steps] = reducer(grid, relaxed, mixed, actions)
    return values


def _per_trajectory_values(model: ModelSpec, policy: FeedbackPolicy, n_list: Sequence[int], params: StudyParams,
                           indices: Sequence[int], reducer: ChunkReducer) -> Dict[int, np.ndarray]:
    """indices の全軌道について軌道ごとの値を昇順で返す（チャンクをスレッドで並列計算）"""
    chunks = [indices[i:i + CHUNK_SIZE] for i in range(0, len(indices), CHUNK_SIZE)]

    def task(chunk):
        return _simulate_chunk(model, policy, n_list, params, chunk, reducer)

    if params.threads == 1:
        results = [task(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=params.threads) as executor:
            results = list(executor.map(task, chunks))  # mapは投入順に結果を返す
    return {steps: np.concatenate([result[steps] for result in results], axis=0) for steps in n_list}


def _validate_n_list(n_list: Sequence[int], params: StudyParams) -> List[int]:
    """N_list を整数のリストにし、各 N が N_fine の約数か確認する"""
    n_list = [int(n) for n in n_list]
    if not n_list:
        raise ConfigurationError("N_listが空です", field='n_list')
    for steps in n_list:
        if steps < 1 or params.fine_steps % steps != 0:  # 粗い格子は細かい格子の増分の和で作る
            raise ConfigurationError(f"N={steps}はN_fine={params.fine_steps}を割り切りません", field='n_list')
    return n_list


def _sup_error_reducer(grid, relaxed, mixed, actions):
    return _sup_sq_errors(relaxed, mixed)  # 軌道ごとの max_n |X̃ - X̂|²（行動は使わない）


def _mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / len(values)  # 足し算の順序に依存しない正確な和


def _sample_std(values: np.ndarray) -> float:
    if len(values) < 2:  # ラン数1ではばらつきを0とする
        return 0.0
    mean = _mean(values)
    return math.sqrt(math.fsum(((values - mean) ** 2).tolist()) / (len(values) - 1))  # 不偏分散（ddof=1）の平方根


def convergence_study(model: ModelSpec, policy: FeedbackPolicy, n_list: Sequence[int], params: StudyParams) -> List[ConvergenceRecord]:
    """N_list の各 N について強収束誤差を推定する

    同じ軌道番号は全ての N で同じブラウン経路（細かい格子の増分を足し合わせたもの）を使う。

    Returns:
        N_list と同じ順の ConvergenceRecord のリスト
    """
    n_list = _validate_n_list(n_list, params)
    logger.info(f"収束実験を開始します: model={model.name}, vol_mode={params.vol_mode}, N={n_list}, "
                f"runs={params.runs}, trajectories={params.trajectories_per_run}")
    run_means = {steps: [] for steps in n_list}  # N -> ランごとの平均誤差
    run_errors = {steps: [] for steps in n_list}  # N -> ランごとの標準誤差
    for run_index in range(params.runs):
        per_trajectory = _per_trajectory_values(model, policy, n_list, params, params.trajectory_indices(run_index),
                                                _sup_error_reducer)
        for steps in n_list:
            errors = per_trajectory[steps]
            run_means[steps].append(_mean(errors))  # 1ランの軌道平均
            run_errors[steps].append(_sample_std(errors) / math.sqrt(len(errors)))
        logger.debug(f"ラン{run_index + 1}/{params.runs}が完了しました")

    records = []
    for steps in n_list:
        means = np.array(run_means[steps])
        record = ConvergenceRecord(steps=steps, mean_sup_sq_error=_mean(means), std_across_runs=_sample_std(means),
                                   runs=params.runs, trajectories_per_run=params.trajectories_per_run,
                                   within_run_std_error=_mean(np.array(run_errors[steps])))
        logger.info(f"N={steps}: mean_sup_sq_error={record.mean_sup_sq_error:.6e}, std_across_runs={record.std_across_runs:.3e}")
        records.append(record)
    return records


def estimate_error(model: ModelSpec, policy: FeedbackPolicy, steps: int, params: StudyParams) -> ConvergenceRecord:
    """1つの N について強収束誤差を推定する"""
    return convergence_study(model, policy, [steps], params)[0]


# ========== 収束率 ==========

def fit_rate(records: Sequence[ConvergenceRecord]) -> RateFit:
    """log(mean_sup_sq_error) を log(N) に最小二乗で当てはめる

    Args:
        records: 2つ以上の ConvergenceRecord（誤差は正であること）

    Returns:
        RateFit
    """
    if len(records) < 2:
        raise FitError(f"収束率の推定には2点以上が必要です: {len(records)}点")
    for record in records:
        if not record.mean_sup_sq_error > 0:
            raise FitError(f"N={record.steps}の誤差が正ではないため対数をとれません: {record.mean_sup_sq_error}",
                           steps=record.steps)
    log_n = np.log([float(record.steps) for record in records])  # log N
    log_error = np.log([record.mean_sup_sq_error for record in records])  # log 誤差
    slope, intercept = np.polyfit(log_n, log_error, 1)  # 1次の最小二乗
    residual = log_error - (slope * log_n + intercept)  # 当てはめの残差
    total = np.sum((log_error - np.mean(log_error)) ** 2)  # 全変動
    r_squared = 1.0 if total == 0 else float(np.clip(1.0 - np.sum(residual ** 2) / total, 0.0, 1.0))
    points = tuple((float(a), float(b)) for a, b in zip(log_n, log_error))
    logger.info(f"収束率: slope={slope:.4f}, r²={r_squared:.4f}")
    return RateFit(slope=float(slope), intercept=float(intercept), r_squared=r_squared, points=points)


# ========== コスト ==========

def _discount(grid: TimeGrid, costs: CostSpec) -> Tuple[np.ndarray, np.ndarray]:
    """走行コストを評価する時刻 t_0..t_{N-1} と割引係数 e^{-βt}"""
    times = grid.nodes()[:-1]  # 左端点 t_0..t_{N-1}
    if costs.discount_rate == 0:
        return times, np.ones_like(times)  # 割引なし
    return times, np.exp(-costs.discount_rate * times)


def _discrete_costs(grid: TimeGrid, states: np.ndarray, actions: np.ndarray, costs: CostSpec) -> np.ndarray:
    """g(X̂_N) + (T/N) Σ e^{-βt_n} f(t_n, X̂_n, â_n)（軌道ごと）"""
    times, discount = _discount(grid, costs)
    running = np.asarray(costs.running_cost(times, states[:, :-1], actions), dtype=float)  # (M, N)
    return costs.terminal_cost(states[:, -1]) + grid.dt * np.sum(discount * running, axis=-1)


def _relaxed_costs(grid: TimeGrid, states: np.ndarray, policy: FeedbackPolicy, costs: CostSpec,
                   rule: GaussHermiteRule) -> np.ndarray:
    """g(X_N) + (T/N) Σ e^{-βt_n} ∫ f(t_n, X_n, a) π(X_n)(da)（軌道ごと）"""
    times, discount = _discount(grid, costs)
    x = states[:, :-1]  # (M, N, d)
    mean, std = policy_at(policy, x)
    if std == 0:
        running = np.asarray(costs.running_cost(times, x, mean), dtype=float)  # ディラック方策は平均の行動
    else:
        running = policy_expectation(lambda a: costs.running_cost(times[:, None], x[..., None, :], a),
                                     mean, std, rule, "走行コスト")
    return costs.terminal_cost(states[:, -1]) + grid.dt * np.sum(discount * running, axis=-1)


def discrete_cost(trajectory: Trajectory, costs: CostSpec) -> float:
    """混合スキームの軌道の離散コスト g(X̂_{t_N}) + (T/N) Σ f(t_n, X̂_{t_n}, â_n)"""
    if trajectory.actions is None:
        raise ConfigurationError("離散コストには行動つきの軌道（混合スキーム）が必要です", field='actions')
    return float(_discrete_costs(trajectory.grid, trajectory.states[None], trajectory.actions[None], costs)[0])


def relaxed_cost(trajectory: Trajectory, policy: FeedbackPolicy, costs: CostSpec,
                 rule: Optional[GaussHermiteRule] = None) -> float:
    """緩和スキームの軌道の緩和コスト（走行コストを方策で平均したもの）"""
    return float(_relaxed_costs(trajectory.grid, trajectory.states[None], policy, costs, rule or build_rule())[0])


def cost_gap_study(model: ModelSpec, policy: FeedbackPolicy, costs: CostSpec, n_list: Sequence[int],
                   params: StudyParams) -> List[CostGapRecord]:
    """N ごとに |E[離散コスト] - E[緩和コスト]| をカップリングした軌道で推定する"""
    n_list = _validate_n_list(n_list, params)
    rule = build_rule(params.quadrature_order)
    logger.info(f"コスト収束の実験を開始します: model={model.name}, N={n_list}")

    def reducer(grid, relaxed, mixed, actions):
        return np.stack([_discrete_costs(grid, mixed, actions, costs),
                         _relaxed_costs(grid, relaxed, policy, costs, rule)], axis=-1)

    indices = list(range(params.runs * params.trajectories_per_run))  # 全ランの軌道をまとめて使う
    per_trajectory = _per_trajectory_values(model, policy, n_list, params, indices, reducer)
    records = []
    for steps in n_list:
        pairs = per_trajectory[steps]
        mean_discrete = _mean(pairs[:, 0])
        mean_relaxed = _mean(pairs[:, 1])
        gap_std_error = _sample_std(pairs[:, 0] - pairs[:, 1]) / math.sqrt(len(pairs))
        record = CostGapRecord(steps=steps, mean_discrete_cost=mean_discrete, mean_relaxed_cost=mean_relaxed,
                               gap=abs(mean_discrete - mean_relaxed), gap_std_error=gap_std_error)
        logger.info(f"N={steps}: gap={record.gap:.6e} (±{gap_std_error:.2e})")
        records.append(record)
    return records


# ========== 図用の軌道 ==========

def coupled_pair(model: ModelSpec, policy: FeedbackPolicy, steps: int, params: StudyParams,
                 trajectory_index: int) -> TrajectoryPair:
    """軌道番号 trajectory_index の緩和軌道と混合軌道を N=steps で作る"""
    _validate_n_list([steps], params)
    grid = TimeGrid(params.horizon, steps)
    captured = {}

    def reducer(grid, relaxed, mixed, actions):
        captured['relaxed'], captured['mixed'], captured['actions'] = relaxed[0], mixed[0], actions[0]
        return np.zeros(1)

    _simulate_chunk(model, policy, [steps], params, [trajectory_index], reducer)
    scheme = 'martingale' if params.vol_mode == 'martingale' else 'relaxed'
    relaxed = Trajectory(grid=grid, states=captured['relaxed'], scheme=scheme)
    mixed = Trajectory(grid=grid, states=captured['mixed'], actions=captured['actions'], scheme='mixed')
    return TrajectoryPair(relaxed=relaxed, mixed=mixed, trajectory_index=trajectory_index)
