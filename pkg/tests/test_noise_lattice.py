"""ブラウン増分・一様乱数の生成とダンプのユニットテスト"""  # テストモジュールの説明

import numpy as np  # 数値計算用
import pytest  # テストフレームワーク
from scipy.stats import chisquare  # 一様性の検定

from src.errors import ConfigurationError, OutputError  # 例外クラス
from src.noise_lattice import (  # テスト対象
    STREAM_BROWNIAN,
    STREAM_BROWNIAN_B,
    coarsen,
    dump_lattice,
    generate_lattice,
    lattice_block,
    load_lattice,
    uniform_block,
    uniform_stream,
)


class TestGenerateLattice:
    """generate_lattice のテスト"""  # テストクラスの説明

    def test_shape_and_metadata(self):
        """形 (N_fine, d) と再生成用のシード記録"""
        lattice = generate_lattice(3, 17, 1000, 5.0, dim=2)
        assert lattice.increments.shape == (1000, 2)
        assert lattice.seed_record == (3, 17)
        assert lattice.horizon == 5.0

    def test_reproducible(self):
        """同じ (seed, index) からは同じ増分"""
        a = generate_lattice(5, 2, 200, 5.0)
        b = generate_lattice(5, 2, 200, 5.0)
        assert np.array_equal(a.increments, b.increments)

    def test_independent_streams(self):
        """軌道番号・ストリーム種別・シードが違えば別の増分"""
        base = generate_lattice(5, 2, 200, 5.0).increments
        assert not np.array_equal(base, generate_lattice(5, 3, 200, 5.0).increments)
        assert not np.array_equal(base, generate_lattice(6, 2, 200, 5.0).increments)
        assert not np.array_equal(base, generate_lattice(5, 2, 200, 5.0, stream_kind=STREAM_BROWNIAN_B).increments)

    def test_variance(self):
        """増分の分散は T/N_fine（4標準誤差以内）"""
        n, horizon = 100_000, 5.0
        increments = generate_lattice(1, 0, n, horizon).increments[:, 0]
        variance = horizon / n
        assert abs(increments.mean()) < 4 * np.sqrt(variance / n)
        assert abs(increments.var() - variance) < 4 * variance * np.sqrt(2.0 / n)

    def test_increments_are_read_only(self):
        """格子の増分は書き換え不可"""
        lattice = generate_lattice(1, 0, 10, 1.0)
        with pytest.raises(ValueError):
            lattice.increments[0, 0] = 1.0

    def test_invalid_sizes(self):
        """N_fine < 1 や負のシードは設定エラー"""
        with pytest.raises(ConfigurationError):
            generate_lattice(1, 0, 0, 1.0)
        with pytest.raises(ConfigurationError):
            generate_lattice(-1, 0, 10, 1.0)

    def test_block_matches_single(self):
        """lattice_block の各行は generate_lattice と同じ"""
        block = lattice_block(9, [4, 0, 7], 50, 5.0, 1, STREAM_BROWNIAN)
        for row, index in enumerate([4, 0, 7]):
            assert np.array_equal(block[row], generate_lattice(9, index, 50, 5.0).increments)


class TestCoarsen:
    """coarsen のテスト"""  # テストクラスの説明

    def test_sums_consecutive_increments(self):
        """粗い増分は連続する細かい増分の和"""
        fine = np.arange(1.0, 7.0)[:, None]  # 1..6
        assert coarsen(fine, 3)[:, 0].tolist() == [3.0, 7.0, 11.0]
        assert coarsen(fine, 1)[:, 0].tolist() == [21.0]

    def test_identity(self):
        """N = N_fine ならそのまま"""
        lattice = generate_lattice(2, 0, 100, 5.0)
        assert np.array_equal(coarsen(lattice, 100), lattice.increments)

    def test_total_is_preserved(self):
        """W_T はどの粗さでもほぼ同じ（足し算の順序による丸めのみ）"""
        lattice = generate_lattice(2, 0, 1000, 5.0)
        total = lattice.increments.sum()
        for steps in (50, 100, 200, 500):
            assert coarsen(lattice, steps).sum() == pytest.approx(total, abs=1e-12)

    def test_partial_sums_agree_at_shared_nodes(self):
        """2つの N の粗い経路は共通の時刻で同じ W_t になる（細かい格子とも一致）"""
        lattice = generate_lattice(2, 0, 1000, 5.0)
        fine_path = np.cumsum(lattice.increments[:, 0])
        path_200 = np.cumsum(coarsen(lattice, 200)[:, 0])
        path_500 = np.cumsum(coarsen(lattice, 500)[:, 0])
        # 共通の時刻は T/100 刻み: N=200 では2つ、N=500 では5つ、N_fine では10ごと
        shared_200 = path_200[1::2]
        shared_500 = path_500[4::5]
        assert shared_200.shape == shared_500.shape == (100,)
        assert np.allclose(shared_200, shared_500, rtol=0.0, atol=1e-12)
        assert np.allclose(shared_200, fine_path[9::10], rtol=0.0, atol=1e-12)

    def test_ascending_order(self):
        """和は番号の昇順で1つずつとる"""
        fine = np.array([[1e16], [1.0], [-1e16], [1.0]])
        expected = ((1e16 + 1.0) + -1e16) + 1.0
        assert coarsen(fine, 1)[0, 0] == expected

    def test_batch(self):
        """(M, N_fine, d) のブロックもまとめて粗くできる"""
        block = lattice_block(1, range(3), 100, 5.0)
        assert coarsen(block, 20).shape == (3, 20, 1)

    def test_not_divisible(self):
        """N が N_fine を割り切らなければ設定エラー"""
        with pytest.raises(ConfigurationError) as excinfo:
            coarsen(generate_lattice(1, 0, 1000, 5.0), 300)
        assert excinfo.value.field == 'n_list'


class TestUniforms:
    """一様乱数ストリームのテスト"""  # テストクラスの説明

    def test_open_interval(self):
        """値は開区間 (0,1)"""
        block = uniform_block(0, range(10), 1000)
        assert np.all(block > 0.0) and np.all(block < 1.0)

    def test_stream_matches_block(self):
        """uniform_stream は uniform_block の同じ位置の値"""
        block = uniform_block(4, [8], 30, action_dim=2)
        assert uniform_stream(4, 8, 12) == block[0, 12, 0]
        assert uniform_stream(4, 8, 29, component=1) == block[0, 29, 1]

    def test_prefix_consistent(self):
        """短い格子の乱数は長い格子の先頭と同じ"""
        assert np.array_equal(uniform_block(4, [1, 2], 50), uniform_block(4, [1, 2], 200)[:, :50])

    def test_components_independent_of_action_dim(self):
        """action_dim を増やしても既存成分の値は変わらない"""
        assert np.array_equal(uniform_block(4, [3], 20, 1)[..., 0], uniform_block(4, [3], 20, 3)[..., 0])

    def test_chi_square_uniformity(self):
        """10⁶ 個の一様乱数は100区間のカイ二乗検定に有意水準0.1%で合格"""
        u = uniform_block(4, [0], 10 ** 6)[0, :, 0]
        counts, _ = np.histogram(u, bins=100, range=(0.0, 1.0))
        assert counts.sum() == 10 ** 6
        assert chisquare(counts).pvalue > 1e-3

    def test_independent_of_brownian_stream(self):
        """同じ軌道番号の行動用乱数とブラウン増分は無相関（10⁵ 組で相関 < 4/√n）"""
        pairs = 10 ** 5
        u = uniform_block(4, [0], pairs)[0, :, 0]
        w = generate_lattice(4, 0, pairs, 1.0).increments[:, 0]
        assert abs(np.corrcoef(u, w)[0, 1]) < 4 / np.sqrt(pairs)


class TestLatticeDump:
    """dump_lattice / load_lattice のテスト"""  # テストクラスの説明

    def test_dump_and_load(self, tmp_path):
        """保存した格子を読み戻すと同じ値とメタデータ"""
        lattice = generate_lattice(12, 3, 100, 5.0, dim=2)
        path = dump_lattice(lattice, tmp_path / 'sub' / 'lattice.bin')
        loaded = load_lattice(path)
        assert np.array_equal(loaded.increments, lattice.increments)
        assert (loaded.horizon, loaded.fine_steps, loaded.dim) == (5.0, 100, 2)
        assert loaded.seed_record == (12, 3)

    def test_file_layout(self, tmp_path):
        """ヘッダ（44バイト）の後に8バイト×N_fine×d"""
        path = dump_lattice(generate_lattice(1, 0, 10, 1.0), tmp_path / 'lattice.bin')
        data = path.read_bytes()
        assert data[:4] == b'BLAT'
        assert len(data) == 44 + 8 * 10

    def test_bad_magic(self, tmp_path):
        """格子ファイルでなければ設定エラー"""
        path = tmp_path / 'other.bin'
        path.write_bytes(b'XXXX' + bytes(60))
        with pytest.raises(ConfigurationError):
            load_lattice(path)

    def test_write_failure(self, tmp_path, mocker):
        """書き込みに失敗したら OutputError（終了コード4）"""
        mocker.patch('pathlib.Path.write_bytes', side_effect=PermissionError('denied'))
        with pytest.raises(OutputError) as excinfo:
            dump_lattice(generate_lattice(1, 0, 10, 1.0), tmp_path / 'lattice.bin')
        assert excinfo.value.exit_code == 4
