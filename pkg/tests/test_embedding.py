import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaycast import (
    DelayConfig,
    build_hankel,
    delay_vector,
    flatten_patch,
    partition_patches,
    takens_min_dimension,
)
from delaycast.embedding import patch_position, window_to_tokens, windows_to_tokens


def x19():
    # x1..x9 as values 1..9 so cells are recognizable
    return np.arange(1.0, 10.0)


class TestDelayVector:
    def test_worked_example_t9_m4(self):
        # T=9, m=4, tau=1: vector at 0-based t=3 is [x1, x2, x3, x4]
        cfg = DelayConfig(m=4, tau=1)
        np.testing.assert_array_equal(delay_vector(x19(), 3, cfg), [1, 2, 3, 4])

    def test_m1_degenerate(self):
        cfg = DelayConfig(m=1)
        for t in range(5):
            np.testing.assert_array_equal(delay_vector(np.arange(5.0), t, cfg), [t])

    def test_tau2_gather_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=20)
        cfg = DelayConfig(m=5, tau=2)
        got = delay_vector(x, 10, cfg)
        expected = np.array([x[2], x[4], x[6], x[8], x[10]])
        np.testing.assert_array_equal(got, expected)

    def test_out_of_range(self):
        cfg = DelayConfig(m=4, tau=1)
        with pytest.raises(ValueError, match="out of range"):
            delay_vector(x19(), 2, cfg)
        with pytest.raises(ValueError, match="out of range"):
            delay_vector(x19(), 9, cfg)


class TestBuildHankel:
    def test_worked_example_shape_and_rows(self):
        cfg = DelayConfig(m=4, tau=1)
        H = build_hankel(x19(), cfg)
        assert H.values.shape == (6, 4)
        np.testing.assert_array_equal(H.values[0], [1, 2, 3, 4])
        np.testing.assert_array_equal(H.values[5], [6, 7, 8, 9])

    def test_single_row_when_T_equals_m(self):
        cfg = DelayConfig(m=5, tau=1)
        H = build_hankel(np.arange(5.0), cfg)
        assert H.values.shape == (1, 5)
        np.testing.assert_array_equal(H.values[0], np.arange(5.0))

    def test_antidiagonal_cells_exhaustive(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=50)
        cfg = DelayConfig(m=7, tau=1)
        H = build_hankel(x, cfg).values
        for r in range(H.shape[0]):
            for c in range(H.shape[1]):
                assert H[r, c] == x[r + c]

    def test_too_short(self):
        with pytest.raises(ValueError, match="too short"):
            build_hankel(np.arange(3.0), DelayConfig(m=5, tau=1))

    def test_rows_are_delay_vectors(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=30)
        cfg = DelayConfig(m=4, tau=3)
        H = build_hankel(x, cfg)
        for r in range(H.values.shape[0]):
            np.testing.assert_array_equal(
                H.values[r], delay_vector(x, r + (cfg.m - 1) * cfg.tau, cfg)
            )


class TestPartitionPatches:
    def test_worked_example_patches(self):
        cfg = DelayConfig(m=4, tau=1, p=2, q=2)
        grid = partition_patches(build_hankel(x19(), cfg), cfg)
        assert (grid.U, grid.V, grid.patch_count) == (3, 2, 6)
        np.testing.assert_array_equal(grid.patch(1, 1), [[1, 2], [2, 3]])
        np.testing.assert_array_equal(grid.patch(1, 2), [[3, 4], [4, 5]])
        # patches list follows j = (u-1)V + v
        np.testing.assert_array_equal(grid.patches[0], grid.patch(1, 1))
        np.testing.assert_array_equal(grid.patches[1], grid.patch(1, 2))

    def test_whole_matrix_patch(self):
        cfg = DelayConfig(m=4, tau=1, p=6, q=4)
        H = build_hankel(x19(), cfg)
        grid = partition_patches(H, cfg)
        assert grid.patch_count == 1
        np.testing.assert_array_equal(grid.patches[0], H.values)

    def test_coverage_count_with_leftovers(self):
        # L=7, p=3, m=5, q=2 -> U=2, V=2, 24 covered cells
        cfg = DelayConfig(m=5, tau=1, p=3, q=2)
        x = np.random.default_rng(1).normal(size=11)  # L = 11-4 = 7
        H = build_hankel(x, cfg)
        grid = partition_patches(H, cfg)
        assert (grid.U, grid.V) == (2, 2)
        assert grid.leftover_rows == 1 and grid.leftover_cols == 1
        # brute-force membership scan: every covered cell in exactly one patch
        hits = np.zeros((7, 5), dtype=int)
        for j in range(grid.patch_count):
            u, v = patch_position(j + 1, grid.V)
            for a in range(cfg.p):
                for b in range(cfg.q):
                    r, c = (u - 1) * cfg.p + a, (v - 1) * cfg.q + b
                    assert grid.patches[j][a, b] == H.values[r, c]
                    hits[r, c] += 1
        assert hits.sum() == 24
        assert hits[: grid.U * cfg.p, : grid.V * cfg.q].min() == 1
        assert hits[: grid.U * cfg.p, : grid.V * cfg.q].max() == 1

    def test_patch_larger_than_matrix(self):
        cfg = DelayConfig(m=4, tau=1, p=2, q=2)
        H = build_hankel(x19(), cfg)
        with pytest.raises(ValueError, match="larger than"):
            partition_patches(H, DelayConfig(m=4, tau=1, p=7, q=2))


class TestFlattenPatch:
    def test_definitional(self):
        np.testing.assert_array_equal(flatten_patch([[1, 2], [3, 4]]), [1, 2, 3, 4])

    def test_one_by_one(self):
        np.testing.assert_array_equal(flatten_patch([[5.0]]), [5.0])

    def test_round_trip(self):
        P = np.random.default_rng(2).normal(size=(3, 5))
        np.testing.assert_array_equal(flatten_patch(P).reshape(3, 5), P)


class TestInvariants:
    @given(
        T=st.integers(min_value=8, max_value=40),
        m=st.integers(min_value=2, max_value=6),
        seed=st.integers(min_value=0, max_value=100),
    )
    @settings(max_examples=30, deadline=None)
    def test_antidiagonal_property(self, T, m, seed):
        if T < m:
            return
        cfg = DelayConfig(m=m, tau=1)
        x = np.random.default_rng(seed).normal(size=T)
        H = build_hankel(x, cfg).values
        L = H.shape[0]
        for r in range(L):
            for c in range(m):
                r2 = r + 1
                c2 = c - 1
                if r2 < L and c2 >= 0:
                    assert H[r, c] == H[r2, c2]

    @given(
        j=st.integers(min_value=1, max_value=60), V=st.integers(min_value=1, max_value=9)
    )
    @settings(max_examples=50, deadline=None)
    def test_patch_index_round_trip(self, j, V):
        u, v = patch_position(j, V)
        assert (u - 1) * V + v == j
        assert 1 <= v <= V

    def test_window_to_tokens_matches_scalar_path(self):
        cfg = DelayConfig(m=5, tau=1, p=2, q=2)
        rng = np.random.default_rng(9)
        X = rng.normal(size=(4, 17))
        batched = windows_to_tokens(X, cfg)
        for b in range(4):
            np.testing.assert_array_equal(batched[b], window_to_tokens(X[b], cfg))
        grid = partition_patches(build_hankel(X[0], cfg), cfg)
        np.testing.assert_array_equal(batched[0], grid.flattened())


def test_config_validation():
    with pytest.raises(ValueError):
        DelayConfig(m=0)
    with pytest.raises(ValueError):
        DelayConfig(m=3, q=4)
    with pytest.raises(ValueError):
        DelayConfig(m=3, tau=0)


def test_takens_min_dimension():
    assert takens_min_dimension(1) == 3
    assert takens_min_dimension(2.06) == 5  # fractal dimensions round down
