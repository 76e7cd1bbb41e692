"""再現可能なブラウン運動の増分と一様乱数の生成

乱数はカウンタベースの Philox 生成器を (master_seed, 軌道番号, ストリーム種別, 副番号)
で鍵付けして作ります。実行順序やスレッド数に関係なく、同じ鍵からは常に同じ値が出ます。

主な機能:
- generate_lattice: 最も細かい格子でのブラウン増分（逆関数法でガウス化）
- coarsen: 連続する増分を足し合わせて粗い格子の増分を作る
- uniform_stream / uniform_block: 行動サンプリング用の一様乱数
- dump_lattice / load_lattice: デバッグ用のバイナリ出力
"""  # モジュールの説明

import struct  # バイナリヘッダ用
from dataclasses import dataclass  # イミュータブルなデータ型の定義用
from pathlib import Path  # パス操作用
from typing import Iterable, Tuple, Union  # 型ヒント用

import numpy as np  # 数値計算用
from loguru import logger  # ログ出力用（loguru）

from src.errors import ConfigurationError, OutputError  # 例外クラス
from src.model_core import normal_quantile  # 逆関数法用の分位点

# ストリーム種別（シード導出のタグ）
STREAM_BROWNIAN = 0  # 状態方程式のブラウン運動 W
STREAM_ACTION = 1  # 行動サンプリング用の一様乱数 U
STREAM_BROWNIAN_B = 2  # マルチンゲール形式の独立なブラウン運動 B

_UNIFORM_BITS = 52  # 一様乱数の分解能（k+0.5 が倍精度で厳密に表せる幅）
_LATTICE_MAGIC = b'BLAT'  # バイナリダンプの識別子
_LATTICE_HEADER = struct.Struct('<4sdqqqq')  # magic, T, N_fine, d, master_seed, trajectory_index


@dataclass(frozen=True, eq=False)
class BrownianLattice:
    """最も細かい格子でのブラウン増分 (N_fine, d)、各増分は N(0, (T/N_fine)I)"""  # クラスの説明

    horizon: float  # 終端時刻 T
    fine_steps: int  # 最も細かいステップ数 N_fine
    dim: int  # ブラウン運動の次元 d
    increments: np.ndarray  # 増分 (N_fine, d)
    master_seed: int  # マスターシード
    trajectory_index: int  # 軌道番号
    stream_kind: int = STREAM_BROWNIAN  # ストリーム種別

    @property
    def seed_record(self) -> Tuple[int, int]:
        """再生成に必要な (master_seed, trajectory_index)"""
        return self.master_seed, self.trajectory_index


def _check_seed(master_seed: int, *indices: int):
    if master_seed < 0 or any(i < 0 for i in indices):
        raise ConfigurationError(f"シードと番号は0以上が必要です: seed={master_seed}, indices={indices}", field='master_seed')


def stream_generator(master_seed: int, trajectory_index: int, stream_kind: int, sub_index: int = 0) -> np.random.Generator:
    """(master_seed, 軌道番号, 種別, 副番号) で鍵付けした Philox 生成器を返す"""
    _check_seed(master_seed, trajectory_index, stream_kind, sub_index)
    seed_sequence = np.random.SeedSequence(entropy=int(master_seed),
                                           spawn_key=(int(trajectory_index), int(stream_kind), int(sub_index)))
    return np.random.Generator(np.random.Philox(seed_sequence))


def _open_uniforms(generator: np.random.Generator, size) -> np.ndarray:
    """開区間 (0,1) の一様乱数 (k + 0.5)·2⁻⁵²（0と1は出ない）"""
    k = generator.integers(0, 2 ** _UNIFORM_BITS, size=size, dtype=np.int64)
    return (k + 0.5) * 2.0 ** -_UNIFORM_BITS


def _gaussian_increments(master_seed: int, trajectory_index: int, fine_steps: int, horizon: float,
                         dim: int, stream_kind: int) -> np.ndarray:
    uniforms = _open_uniforms(stream_generator(master_seed, trajectory_index, stream_kind), (fine_steps, dim))
    return normal_quantile(uniforms) * np.sqrt(horizon / fine_steps)


def generate_lattice(master_seed: int, trajectory_index: int, fine_steps: int, horizon: float, dim: int = 1,
                     stream_kind: int = STREAM_BROWNIAN) -> BrownianLattice:
    """1本の軌道のブラウン増分を作る

    Args:
        master_seed: マスターシード
        trajectory_index: 軌道番号（異なる番号は独立なストリーム）
        fine_steps: 最も細かいステップ数 N_fine
        horizon: 終端時刻 T
        dim: 次元 d
        stream_kind: STREAM_BROWNIAN または STREAM_BROWNIAN_B

    Returns:
        BrownianLattice
    """
    if fine_steps < 1 or dim < 1:
        raise ConfigurationError(f"N_fineとdは1以上が必要です: N_fine={fine_steps}, d={dim}", field='n_fine')
    increments = _gaussian_increments(master_seed, trajectory_index, fine_steps, horizon, dim, stream_kind)
    increments.setflags(write=False)
    return BrownianLattice(horizon=float(horizon), fine_steps=int(fine_steps), dim=int(dim), increments=increments,
                           master_seed=int(master_seed), trajectory_index=int(trajectory_index), stream_kind=stream_kind)


def lattice_block(master_seed: int, trajectory_indices: Iterable[int], fine_steps: int, horizon: float, dim: int = 1,
                  stream_kind: int = STREAM_BROWNIAN) -> np.ndarray:
    """複数軌道の増分をまとめて (M, N_fine, d) で返す（各行は generate_lattice と同じ値）"""
    indices = list(trajectory_indices)
    block = np.empty((len(indices), fine_steps, dim))
    for row, index in enumerate(indices):
        block[row] = _gaussian_increments(master_seed, index, fine_steps, horizon, dim, stream_kind)
    return block


def coarsen(lattice: Union[BrownianLattice, np.ndarray], coarse_steps: int) -> np.ndarray:
    """連続する増分を足し合わせて粗い格子の増分を作る

    k = N_fine / N_coarse として、粗い増分 n は細かい増分 nk, ..., (n+1)k-1 の和。
    足し算は番号の昇順で1つずつ行う。

    Args:
        lattice: BrownianLattice または (..., N_fine, d) の配列
        coarse_steps: 粗いステップ数 N_coarse（N_fineの約数）

    Returns:
        (..., N_coarse, d)
    """
    increments = lattice.increments if isinstance(lattice, BrownianLattice) else np.asarray(lattice, dtype=float)
    fine_steps = increments.shape[-2]
    if coarse_steps < 1 or fine_steps % coarse_steps != 0:
        raise ConfigurationError(f"N={coarse_steps}はN_fine={fine_steps}を割り切りません", field='n_list')
    ratio = fine_steps // coarse_steps
    grouped = increments.reshape(increments.shape[:-2] + (coarse_steps, ratio, increments.shape[-1]))
    total = grouped[..., 0, :].copy()
    for j in range(1, ratio):  # 昇順に足す
        total = total + grouped[..., j, :]
    return total


def uniform_block(master_seed: int, trajectory_indices: Iterable[int], steps: int, action_dim: int = 1) -> np.ndarray:
    """行動サンプリング用の一様乱数 (M, steps, action_dim)

    行動の各成分は副番号つきの別ストリームから取るので、action_dim を変えても
    既存成分の値は変わらない。
    """
    indices = list(trajectory_indices)
    block = np.empty((len(indices), steps, action_dim))
    for row, index in enumerate(indices):
        for component in range(action_dim):
            block[row, :, component] = _open_uniforms(stream_generator(master_seed, index, STREAM_ACTION, component), steps)
    return block


def uniform_stream(master_seed: int, trajectory_index: int, step_index: int, component: int = 0) -> float:
    """(master_seed, 軌道番号, ステップ番号) に対応する一様乱数 U ∈ (0,1)"""
    _check_seed(master_seed, trajectory_index, step_index, component)
    values = _open_uniforms(stream_generator(master_seed, trajectory_index, STREAM_ACTION, component), step_index + 1)
    return float(values[step_index])


def dump_lattice(lattice: BrownianLattice, path: Union[str, Path]) -> Path:
    """格子をバイナリで保存する（ヘッダの後に増分を行優先・リトルエンディアン64bitで書く）"""
    path = Path(path)
    header = _LATTICE_HEADER.pack(_LATTICE_MAGIC, lattice.horizon, lattice.fine_steps, lattice.dim,
                                  lattice.master_seed, lattice.trajectory_index)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(header + np.ascontiguousarray(lattice.increments, dtype='<f8').tobytes())
    except OSError as e:
        raise OutputError(f"格子ファイルの書き込みに失敗しました: {path}: {e}", path=str(path)) from e
    logger.debug(f"格子を保存しました: {path}")
    return path


def load_lattice(path: Union[str, Path]) -> BrownianLattice:
    """dump_lattice で保存した格子を読み込む"""
    data = Path(path).read_bytes()
    magic, horizon, fine_steps, dim, master_seed, trajectory_index = _LATTICE_HEADER.unpack_from(data)
    if magic != _LATTICE_MAGIC:
        raise ConfigurationError(f"格子ファイルではありません: {path}", field='path')
    increments = np.frombuffer(data, dtype='<f8', offset=_LATTICE_HEADER.size).reshape(fine_steps, dim)
    return BrownianLattice(horizon=horizon, fine_steps=fine_steps, dim=dim, increments=increments.astype(float),
                           master_seed=master_seed, trajectory_index=trajectory_index)
