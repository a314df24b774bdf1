import numpy as np
import pytest

from delaycast import (
    DataError,
    Series,
    WindowSpec,
    gen_lorenz,
    gen_periodic,
    gen_random_walk,
    gen_sparse_pulse,
    load_csv,
    make_windows,
    save_csv,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from delaycast.data import window_starts


class TestGenerators:
    def test_periodic_bounded_and_self_similar(self):
        series = gen_periodic(2000, seed=1, freqs=(0.01,), amps=(1.0,))
        x = series.channel(0)
        assert np.all(np.abs(x) <= 1.0 + 1e-12)
        period = 100  # 1 / 0.01
        a, b = x[:-period], x[period:]
        corr = np.corrcoef(a, b)[0, 1]
        assert corr > 0.999

    def test_lorenz_bounded(self):
        series = gen_lorenz(10_000, seed=0)
        assert np.max(np.abs(series.values)) < 100.0
        assert series.names == ["x", "y", "z"]

    def test_lorenz_rk4_step_halving(self):
        # local order check: from each of the first 100 states, one dt step
        # agrees with two dt/2 steps to < 1e-5 relative to the state scale
        # (attractor states have magnitude ~30, so absolute 1e-5 is below the
        # true local truncation error of RK4 at dt=0.01)
        traj = gen_lorenz(101, seed=0, dt=0.01).values
        for state in traj[:100]:
            one = gen_lorenz(2, seed=0, dt=0.01, x0=state).values[1]
            two = gen_lorenz(3, seed=0, dt=0.005, x0=state).values[2]
            rel = np.max(np.abs(one - two)) / max(1.0, np.max(np.abs(state)))
            assert rel < 1e-5

    def test_random_walk_deterministic_bytes(self):
        a = gen_random_walk(500, seed=9).values.tobytes()
        b = gen_random_walk(500, seed=9).values.tobytes()
        assert a == b
        c = gen_random_walk(500, seed=10).values.tobytes()
        assert a != c

    def test_sparse_pulse_rate_and_levels(self):
        series = gen_sparse_pulse(5000, seed=2, rate=0.1, amplitude=4.0)
        x = series.channel(0)
        assert set(np.unique(x)) <= {0.0, 4.0}
        assert 0.05 < (x != 0).mean() < 0.15

    def test_param_validation(self):
        with pytest.raises(DataError):
            gen_periodic(1)
        with pytest.raises(DataError):
            gen_sparse_pulse(100, rate=1.5)
        with pytest.raises(DataError):
            gen_random_walk(100, step_std=0.0)

    def test_all_generators_pure(self):
        for gen in (gen_periodic, gen_random_walk, gen_sparse_pulse):
            a = gen(300, seed=5)
            b = gen(300, seed=5)
            np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(
            gen_lorenz(300, seed=5).values, gen_lorenz(300, seed=5).values
        )


class TestCsv:
    def test_small_round_trip(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\n1.5,2\n3,4.25\n-1,0\n")
        series = load_csv(path)
        assert series.names == ["a", "b"]
        np.testing.assert_array_equal(
            series.values, [[1.5, 2.0], [3.0, 4.25], [-1.0, 0.0]]
        )

    def test_nan_reject_names_location(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\n1,2\n3,nan\n5,6\n")
        with pytest.raises(DataError, match=r"row 3 column 'b'"):
            load_csv(path)

    def test_nan_forward_fill_and_drop(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a\n1\nnan\n3\n4\n")
        filled = load_csv(path, nan_policy="forward-fill")
        np.testing.assert_array_equal(filled.channel(0), [1, 1, 3, 4])
        dropped = load_csv(path, nan_policy="drop-row")
        np.testing.assert_array_equal(dropped.channel(0), [1, 3, 4])

    def test_malformed_rows_report_line(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\n1,2\n3\n")
        with pytest.raises(DataError, match=":3:"):
            load_csv(path)
        path.write_text("a,b\n1,2\n3,zebra\n")
        with pytest.raises(DataError, match="zebra"):
            load_csv(path)
        path.write_text("")
        with pytest.raises(DataError, match="empty"):
            load_csv(path)

    def test_bulk_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(10_000, 3)) * np.power(
            10.0, rng.integers(-8, 8, size=(10_000, 3))
        )
        series = Series(names=["a", "b", "c"], values=values, train_end=7000, val_end=8000)
        path = tmp_path / "big.csv"
        save_csv(series, path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.values, series.values)

    def test_skip_timestamp_column(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("ts,a\n2020-01-01,1\n2020-01-02,2\n")
        series = load_csv(path, skip_first_column=True)
        assert series.names == ["a"]
        np.testing.assert_array_equal(series.channel(0), [1, 2])

    def test_crlf_accepted(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_bytes(b"a,b\r\n1,2\r\n3,4\r\n")
        series = load_csv(path)
        np.testing.assert_array_equal(series.values, [[1, 2], [3, 4]])


class TestZscore:
    def test_standardized_data_noop(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=2000)
        x = (x - x[:1400].mean()) / x[:1400].std()
        series = Series(names=["x"], values=x[:, None], train_end=1400, val_end=1600)
        stats = zscore_fit(series)
        assert stats.mean[0] == pytest.approx(0.0, abs=1e-12)
        assert stats.std[0] == pytest.approx(1.0, abs=1e-12)
        out = zscore_apply(series, stats)
        np.testing.assert_allclose(out.values, series.values, atol=1e-10)

    def test_constant_channel_policies(self):
        values = np.column_stack([np.ones(100), np.arange(100.0)])
        series = Series(names=["flat", "ramp"], values=values, train_end=70, val_end=80)
        stats = zscore_fit(series)  # lenient: flat channel passes through
        out = zscore_apply(series, stats)
        np.testing.assert_array_equal(out.channel("flat"), np.zeros(100))
        with pytest.raises(DataError, match="zero-variance"):
            zscore_fit(series, strict=True)

    def test_apply_invert_round_trip(self):
        rng = np.random.default_rng(2)
        values = rng.normal(loc=5.0, scale=3.0, size=(500, 2))
        series = Series(names=["a", "b"], values=values, train_end=350, val_end=400)
        stats = zscore_fit(series)
        back = zscore_invert(zscore_apply(series, stats), stats)
        np.testing.assert_allclose(back.values, series.values, atol=1e-12)


class TestWindows:
    def series(self, length, train_frac=0.7):
        return Series(
            names=["x"],
            values=np.arange(float(length))[:, None],
            train_end=int(train_frac * length),
            val_end=int(0.8 * length),
        )

    def test_exactly_one_window(self):
        series = self.series(20)
        spec = WindowSpec(lookback=15, horizon=5, stride=1)
        X, Y = make_windows(series, spec)
        assert X.shape == (1, 15) and Y.shape == (1, 5)
        np.testing.assert_array_equal(Y[0], np.arange(15.0, 20.0))

    def test_stride_equal_length_single_window(self):
        series = self.series(100)
        spec = WindowSpec(lookback=50, horizon=10, stride=100)
        X, _ = make_windows(series, spec)
        assert X.shape[0] == 1

    def test_counting_oracle(self):
        series = self.series(1000)
        spec = WindowSpec(lookback=512, horizon=96, stride=1)
        X, Y = make_windows(series, spec)
        assert X.shape[0] == 1000 - 512 - 96 + 1 == 393
        # verified by enumeration
        count = sum(
            1 for i in range(1000) if i + 512 + 96 <= 1000
        )
        assert X.shape[0] == count

    def test_targets_never_overlap_inputs(self):
        series = self.series(300)
        spec = WindowSpec(lookback=40, horizon=8, stride=3)
        X, Y = make_windows(series, spec)
        for xs, ys in zip(X, Y):
            assert xs[-1] + 1 == ys[0]  # ramp series: target starts right after

    def test_no_test_split_leakage(self):
        series = self.series(1000)
        spec = WindowSpec(lookback=50, horizon=10, stride=7)
        starts = window_starts(series, spec, split="test")
        assert np.all(starts >= series.val_end)
        X, Y = make_windows(series, spec, split="test")
        assert X.min() >= series.val_end  # ramp values equal their indices

    def test_split_containment_train_val(self):
        series = self.series(1000)
        spec = WindowSpec(lookback=50, horizon=10)
        Xt, Yt = make_windows(series, spec, split="train")
        assert Yt.max() < series.train_end
        Xv, Yv = make_windows(series, spec, split="val")
        assert Xv.min() >= series.train_end and Yv.max() < series.val_end

    def test_too_short_errors(self):
        series = self.series(30)
        with pytest.raises(DataError, match="lookback"):
            make_windows(series, WindowSpec(lookback=40, horizon=5))


class TestSeries:
    def test_split_validation(self):
        with pytest.raises(DataError, match="splits"):
            Series(names=["x"], values=np.zeros((10, 1)), train_end=9, val_end=9)

    def test_channel_lookup(self):
        series = Series(
            names=["a", "b"], values=np.zeros((10, 2)), train_end=6, val_end=8
        )
        assert series.channel_index("b") == 1
        with pytest.raises(DataError, match="unknown channel"):
            series.channel("zzz")

    def test_rejects_nan(self):
        values = np.zeros((10, 1))
        values[3] = np.nan
        with pytest.raises(ValueError):
            Series(names=["x"], values=values, train_end=6, val_end=8)

    def test_duplicate_names(self):
        with pytest.raises(DataError, match="duplicate"):
            Series(names=["x", "x"], values=np.zeros((10, 2)), train_end=6, val_end=8)
