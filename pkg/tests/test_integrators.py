"""オイラー・丸山法による緩和・混合・マルチンゲール形式スキームのユニットテスト"""  # テストモジュールの説明

import numpy as np  # 数値計算用
import pytest  # テストフレームワーク

from src.errors import ConfigurationError, DivergenceError  # 例外クラス
from src.integrators import (  # テスト対象
    Trajectory,
    martingale_paths,
    mixed_paths,
    relaxed_paths,
    simulate_martingale_form,
    simulate_mixed,
    simulate_relaxed,
)
from src.model_core import FeedbackPolicy, ModelSpec, TimeGrid, builtin_setting, default_policy  # モデルと方策
from src.noise_lattice import coarsen, generate_lattice, uniform_block  # 乱数
from src.quadrature_relaxation import relaxed_drift  # 緩和ドリフト


def exploding_model() -> ModelSpec:
    """状態が4ステップ目で非有限になるモデル（発散の検証用）"""
    return ModelSpec(name='explode', state_dim=1, action_dim=1,
                     drift=lambda x, a: np.where(np.abs(x) > 0.5, np.inf, 1.0) + 0 * a,
                     volatility=lambda x, a: np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1]) + (1, 1)))


class TestSimulateRelaxed:
    """simulate_relaxed / relaxed_paths のテスト"""  # テストクラスの説明

    def test_hand_computed_steps(self):
        """setting1、σ_π=0.2、ΔW=0: X_{n+1} = X_n + dt·(1 - X_n)"""
        grid = TimeGrid(1.0, 2)
        trajectory = simulate_relaxed(builtin_setting('setting1'), default_policy(0.2), grid, np.zeros((2, 1)), 0.0)
        assert trajectory.states[:, 0] == pytest.approx([0.0, 0.5, 0.75])
        assert trajectory.actions is None

    def test_noise_enters_with_volatility(self):
        """拡散項は σ·ΔW"""
        grid = TimeGrid(1.0, 1)
        trajectory = simulate_relaxed(builtin_setting('setting1'), default_policy(0.2), grid, np.array([[2.0]]), 1.0)
        assert trajectory.states[1, 0] == pytest.approx(1.0 + 0.1 * 2.0)

    def test_batch_matches_single(self):
        """まとめて計算しても1本ずつと同じ値"""
        model, policy = builtin_setting('setting2'), default_policy(0.2)
        grid = TimeGrid(5.0, 20)
        block = np.stack([coarsen(generate_lattice(3, i, 100, 5.0), 20) for i in range(4)])
        states = relaxed_paths(model, policy, grid, block, 0.0)
        for i in range(4):
            single = simulate_relaxed(model, policy, grid, block[i], 0.0)
            assert np.array_equal(states[i], single.states)

    def test_deterministic_ode_first_order(self):
        """σ ≡ 0 の setting1 は x(t) = 1 + (x0 - 1)e^{-t} に誤差 C/N で近づき、N を倍にすると誤差が半分"""
        model = ModelSpec(name='setting1-noiseless', state_dim=1, action_dim=1, drift=lambda x, a: a + 0 * x,
                          volatility=lambda x, a: np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1]) + (1, 1)))
        lattice = generate_lattice(7, 0, 400, 5.0)  # 拡散項が0なので増分は効かない
        x0 = 0.0
        errors = []
        for steps in (100, 200, 400):
            grid = TimeGrid(5.0, steps)
            states = simulate_relaxed(model, default_policy(0.2), grid, coarsen(lattice, steps), x0).states[:, 0]
            times = np.linspace(0.0, 5.0, steps + 1)
            exact = 1.0 + (x0 - 1.0) * np.exp(-times)
            errors.append(float(np.max(np.abs(states - exact))))
            assert errors[-1] * steps <= 1.5  # sup 誤差 ≤ C/N
        for coarse, fine in zip(errors, errors[1:]):
            assert 0.45 <= fine / coarse <= 0.55

    def test_increment_length_mismatch(self):
        """増分の長さが N と違えば設定エラー"""
        with pytest.raises(ConfigurationError):
            simulate_relaxed(builtin_setting('setting1'), default_policy(0.2), TimeGrid(1.0, 5), np.zeros((4, 1)), 0.0)

    def test_divergence_reports_step_and_trajectory(self):
        """非有限値になったら最初のステップと軌道番号つきで DivergenceError"""
        grid = TimeGrid(1.0, 4)
        with pytest.raises(DivergenceError) as excinfo:
            relaxed_paths(exploding_model(), default_policy(0.0), grid, np.zeros((2, 4, 1)), 0.0,
                          trajectory_indices=[40, 41])
        assert excinfo.value.step == 4  # x: 0 → 0.25 → 0.5 → 0.75 → inf
        assert excinfo.value.trajectory_index == 40
        assert excinfo.value.exit_code == 3


class TestSimulateMixed:
    """simulate_mixed / mixed_paths のテスト"""  # テストクラスの説明

    def test_actions_recorded(self):
        """行動は N 個記録され、u=0.5 なら平均 1 - X_n"""
        grid = TimeGrid(1.0, 2)
        trajectory = simulate_mixed(builtin_setting('setting1'), default_policy(0.2), grid, np.zeros((2, 1)),
                                    np.full((2, 1), 0.5), 0.0)
        assert trajectory.actions.shape == (2, 1)
        assert trajectory.actions[:, 0] == pytest.approx([1.0, 0.5], abs=1e-15)
        assert trajectory.states[:, 0] == pytest.approx([0.0, 0.5, 0.75])

    def test_uniform_mismatch(self):
        """一様乱数の長さが N と違えば設定エラー"""
        with pytest.raises(ConfigurationError):
            simulate_mixed(builtin_setting('setting1'), default_policy(0.2), TimeGrid(1.0, 3), np.zeros((3, 1)),
                           np.full((2, 1), 0.5), 0.0)

    def test_action_depends_only_on_past(self):
        """行動 m は ΔW_{<m} と u_{≤m} だけで決まる（後の増分を変えても変わらない）"""
        model, policy = builtin_setting('setting2'), default_policy(0.2)
        grid = TimeGrid(5.0, 10)
        dw = coarsen(generate_lattice(1, 0, 10, 5.0), 10)
        u = uniform_block(1, [0], 10)[0]
        _, actions = mixed_paths(model, policy, grid, dw, u, 0.0)
        changed = dw.copy()
        changed[6:] += 1.0
        _, actions_changed = mixed_paths(model, policy, grid, changed, u, 0.0)
        assert np.array_equal(actions[0, :7], actions_changed[0, :7])
        assert not np.array_equal(actions[0, 7:], actions_changed[0, 7:])

    def test_dirac_policy_matches_relaxed_bitwise(self):
        """σ_π=0、uncontrolled σ では混合と緩和の軌道がビット単位で一致"""
        grid = TimeGrid(5.0, 50)
        dw = coarsen(generate_lattice(8, 0, 1000, 5.0), 50)
        u = uniform_block(8, [0], 50)[0]
        for setting in ('setting1', 'setting2'):
            model, policy = builtin_setting(setting), default_policy(0.0)
            relaxed = simulate_relaxed(model, policy, grid, dw, 0.0)
            mixed = simulate_mixed(model, policy, grid, dw, u, 0.0)
            assert np.array_equal(relaxed.states, mixed.states)

    def test_shared_noise_term(self):
        """setting1〜2 では各ステップの拡散項が両スキームで同じ σ·ΔW"""
        grid = TimeGrid(5.0, 20)
        dw = coarsen(generate_lattice(2, 0, 100, 5.0), 20)
        u = uniform_block(2, [0], 20)[0]
        model, policy = builtin_setting('setting2'), default_policy(0.2)
        relaxed = simulate_relaxed(model, policy, grid, dw, 0.0)
        mixed = simulate_mixed(model, policy, grid, dw, u, 0.0)
        relaxed_noise = np.diff(relaxed.states[:, 0]) - grid.dt * relaxed_drift(model, policy, relaxed.states[:-1])[:, 0]
        mixed_noise = np.diff(mixed.states[:, 0]) - grid.dt * model.drift(mixed.states[:-1], mixed.actions)[:, 0]
        assert np.allclose(relaxed_noise, 0.1 * dw[:, 0], atol=1e-13)
        assert np.allclose(mixed_noise, 0.1 * dw[:, 0], atol=1e-13)

    def test_martingale_residual_is_centered(self):
        """d_m = b(X̂_m, â_m) - b̃(X̂_m) の標本平均は各 m で 0 から4標準誤差以内"""
        model, policy = builtin_setting('setting1'), default_policy(0.2)
        m_paths, steps = 10_000, 10
        grid = TimeGrid(5.0, steps)
        indices = range(m_paths)
        dw = coarsen(np.stack([generate_lattice(5, i, steps, 5.0).increments for i in indices]), steps)
        states, actions = mixed_paths(model, policy, grid, dw, uniform_block(5, indices, steps), 0.0)
        residual = model.drift(states[:, :-1], actions) - relaxed_drift(model, policy, states[:, :-1])
        means = residual[..., 0].mean(axis=0)
        standard_errors = residual[..., 0].std(axis=0, ddof=1) / np.sqrt(m_paths)
        assert np.all(np.abs(means) <= 4 * standard_errors)


class TestMartingaleForm:
    """simulate_martingale_form / martingale_paths のテスト"""  # テストクラスの説明

    def test_reduces_to_relaxed_when_uncontrolled(self):
        """σ が行動に依存しなければ残差は0で、緩和スキームと一致"""
        grid = TimeGrid(5.0, 10)
        dw = coarsen(generate_lattice(1, 0, 10, 5.0), 10)
        db = np.ones((10, 1))
        model, policy = builtin_setting('setting2'), default_policy(0.2)
        relaxed = simulate_relaxed(model, policy, grid, dw, 0.0)
        martingale = simulate_martingale_form(model, policy, grid, dw, db, 0.0)
        assert np.array_equal(relaxed.states, martingale.states)
        assert martingale.scheme == 'martingale'

    def test_one_step_controlled(self):
        """setting3 の1ステップ: x + dt·b̃ + σ̄·ΔW + s̃·ΔB"""
        c, s = 0.2, 0.3
        model = builtin_setting('setting3', c_sigma=c)
        policy = default_policy(s)
        grid = TimeGrid(1.0, 1)
        state = simulate_martingale_form(model, policy, grid, np.array([[1.0]]), np.array([[2.0]]), 0.0).states[1, 0]
        drift = relaxed_drift(model, policy, np.array([0.0]))[0]
        assert state == pytest.approx(drift + (0.1 + c * 1.0) * 1.0 + c * s * 2.0, abs=1e-12)

    def test_batch_size_mismatch(self):
        """W と B の本数が違えば設定エラー"""
        with pytest.raises(ConfigurationError):
            martingale_paths(builtin_setting('setting1'), default_policy(0.2), TimeGrid(1.0, 2),
                             np.zeros((2, 2, 1)), np.zeros((3, 2, 1)), 0.0)


class TestTrajectory:
    """Trajectory のテスト"""  # テストクラスの説明

    def test_length_validation(self):
        """状態は N+1 点、行動は N 点"""
        grid = TimeGrid(1.0, 3)
        with pytest.raises(ConfigurationError):
            Trajectory(grid=grid, states=np.zeros((3, 1)))
        with pytest.raises(ConfigurationError):
            Trajectory(grid=grid, states=np.zeros((4, 1)), actions=np.zeros((4, 1)))

    def test_non_finite_states(self):
        """非有限の状態は DivergenceError"""
        with pytest.raises(DivergenceError):
            Trajectory(grid=TimeGrid(1.0, 1), states=np.array([[0.0], [np.nan]]))

    def test_multidimensional_policy(self):
        """多次元の行動でも1ステップ1組の一様乱数で動く"""
        model = ModelSpec(name='plane', state_dim=2, action_dim=2, drift=lambda x, a: a + 0 * x,
                          volatility=lambda x, a: np.broadcast_to(0.1 * np.eye(2), np.broadcast_shapes(np.shape(x)[:-1], np.shape(a)[:-1]) + (2, 2)))
        policy = FeedbackPolicy(mean_fn=lambda x: -x, std=0.1)
        grid = TimeGrid(1.0, 4)
        trajectory = simulate_mixed(model, policy, grid, np.zeros((4, 2)), uniform_block(0, [0], 4, 2)[0], [1.0, -1.0])
        assert trajectory.states.shape == (5, 2)
        assert trajectory.actions.shape == (4, 2)
