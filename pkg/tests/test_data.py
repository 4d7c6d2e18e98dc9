"""Loading, normalization, windowing, and the synthetic generator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalad.data import (
    Dataset,
    SyntheticConfig,
    TimeSeriesMatrix,
    generate_synthetic,
    load_csv_dataset,
    make_windows,
    normalize,
    write_csv_dataset,
)
from causalad.errors import (
    CsvParseError,
    InsufficientDataError,
    LabelError,
    SchemaError,
    StabilityError,
)


def write_csv(path, rows):
    path.write_text("\n".join(",".join(str(v) for v in row) for row in rows) + "\n")


class TestLoadCsv:
    def test_smd_style_38_columns(self, tmp_path):
        rng = np.random.default_rng(1)
        write_csv(tmp_path / "train.csv", rng.random((10, 38)).tolist())
        write_csv(tmp_path / "test.csv", rng.random((6, 38)).tolist())
        ds = load_csv_dataset(tmp_path / "train.csv", tmp_path / "test.csv")
        assert ds.train.n_sensors == 38
        assert ds.train.dim == 1
        assert ds.train.n_timestamps == 10
        assert ds.test.n_timestamps == 6

    def test_degenerate_single_zero_column(self, tmp_path):
        write_csv(tmp_path / "train.csv", [[0.0]] * 5)
        write_csv(tmp_path / "test.csv", [[0.0]] * 5)
        ds = load_csv_dataset(tmp_path / "train.csv", tmp_path / "test.csv")
        assert ds.train.n_sensors == 1
        assert ds.test.anomaly_labels is None

    def test_short_label_file_names_expected_length(self, tmp_path):
        write_csv(tmp_path / "train.csv", [[1.0], [2.0]])
        write_csv(tmp_path / "test.csv", [[1.0], [2.0], [3.0]])
        (tmp_path / "labels.csv").write_text("0\n1\n")
        with pytest.raises(LabelError, match="3"):
            load_csv_dataset(
                tmp_path / "train.csv", tmp_path / "test.csv", tmp_path / "labels.csv"
            )

    def test_column_count_mismatch(self, tmp_path):
        write_csv(tmp_path / "train.csv", [[1.0, 2.0]] * 3)
        write_csv(tmp_path / "test.csv", [[1.0]] * 3)
        with pytest.raises(SchemaError):
            load_csv_dataset(tmp_path / "train.csv", tmp_path / "test.csv")

    def test_parse_error_locates_cell(self, tmp_path):
        write_csv(tmp_path / "train.csv", [[1.0, 2.0], ["oops", 4.0]])
        write_csv(tmp_path / "test.csv", [[1.0, 2.0]])
        with pytest.raises(CsvParseError, match=r"2.*column 1"):
            load_csv_dataset(tmp_path / "train.csv", tmp_path / "test.csv")

    def test_root_cause_file_converts_to_zero_based(self, tmp_path):
        write_csv(tmp_path / "train.csv", [[1.0, 2.0, 3.0]] * 4)
        write_csv(tmp_path / "test.csv", [[1.0, 2.0, 3.0]] * 10)
        (tmp_path / "labels.csv").write_text("\n".join("1" if 2 <= i <= 4 else "0" for i in range(10)) + "\n")
        (tmp_path / "rc.txt").write_text("3-5:1,3\n")
        ds = load_csv_dataset(
            tmp_path / "train.csv",
            tmp_path / "test.csv",
            tmp_path / "labels.csv",
            tmp_path / "rc.txt",
        )
        assert ds.test.root_cause_labels == {(2, 4): {0, 2}}

    def test_round_trip_preserves_values(self, tmp_path):
        rng = np.random.default_rng(7)
        values = rng.standard_normal((3, 20, 1)) * 1e3
        names = [f"sensor_{i}" for i in range(3)]
        labels = (rng.random(20) < 0.2).astype(int)
        ds = Dataset(
            TimeSeriesMatrix(values.copy(), names),
            TimeSeriesMatrix(values.copy(), names, labels, {(4, 6): {1}}),
        )
        paths = write_csv_dataset(ds, tmp_path / "out")
        loaded = load_csv_dataset(
            paths["train"], paths["test"], paths["labels"], paths["root_causes"]
        )
        np.testing.assert_allclose(loaded.train.values, values, rtol=1e-11)
        np.testing.assert_array_equal(loaded.test.anomaly_labels, labels)
        assert loaded.test.root_cause_labels == {(4, 6): {1}}

    def test_train_labels_rejected(self):
        values = np.zeros((2, 5, 1))
        names = ["a", "b"]
        labeled = TimeSeriesMatrix(values, names, np.zeros(5, dtype=int))
        with pytest.raises(LabelError):
            Dataset(labeled, TimeSeriesMatrix(values, names))


class TestNormalize:
    def make_ds(self, train_vals, test_vals):
        names = [f"s{i}" for i in range(train_vals.shape[0])]
        return Dataset(
            TimeSeriesMatrix(train_vals, names), TimeSeriesMatrix(test_vals, names)
        )

    def test_minmax_maps_train_to_unit_range(self):
        train = np.array([[0.0, 10.0, 5.0]])[:, :, None]
        ds = self.make_ds(train, train.copy())
        out, _ = normalize(ds, "minmax")
        np.testing.assert_allclose(out.train.values[0, :, 0], [0.0, 1.0, 0.5])

    def test_test_values_may_exceed_unit_range(self):
        train = np.array([[0.0, 10.0]])[:, :, None]
        test = np.array([[20.0, 5.0]])[:, :, None]
        ds = self.make_ds(train, test)
        out, _ = normalize(ds, "minmax")
        assert out.test.values[0, 0, 0] == pytest.approx(2.0)

    def test_constant_channel_maps_to_zero(self):
        train = np.full((1, 4, 1), 5.0)
        ds = self.make_ds(train, train.copy())
        for method in ("minmax", "zscore"):
            out, _ = normalize(ds, method)
            assert (out.train.values == 0).all()
            assert (out.test.values == 0).all()

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_minmax_idempotent_on_unit_range(self, seed):
        rng = np.random.default_rng(seed)
        vals = rng.random((2, 10, 1))
        # Pin each channel's min to 0 and max to 1.
        vals[:, 0, 0] = 0.0
        vals[:, 1, 0] = 1.0
        ds = self.make_ds(vals, vals.copy())
        once, _ = normalize(ds, "minmax")
        np.testing.assert_allclose(once.train.values, vals)

    def test_zscore_statistics_fit_on_train_only(self):
        rng = np.random.default_rng(3)
        train = rng.normal(5.0, 2.0, (2, 200, 1))
        test = rng.normal(50.0, 2.0, (2, 50, 1))
        out, params = normalize(self.make_ds(train, test), "zscore")
        assert abs(out.train.values.mean()) < 1e-9
        assert out.test.values.mean() > 5  # test shifted, not re-centered


class TestMakeWindows:
    def test_counts_and_indices(self):
        x = TimeSeriesMatrix(np.arange(5, dtype=float)[None, :, None], ["s0"])
        windows = make_windows(x, 2)
        assert [w.t for w in windows] == [2, 3, 4]
        assert len(windows) == 3

    def test_too_short_series(self):
        x = TimeSeriesMatrix(np.zeros((1, 3, 1)), ["s0"])
        with pytest.raises(InsufficientDataError):
            make_windows(x, 3)

    def test_first_window_history_is_prefix(self):
        t_total, width = 9, 4
        x = TimeSeriesMatrix(np.arange(t_total, dtype=float)[None, :, None], ["s0"])
        first = make_windows(x, width)[0]
        np.testing.assert_array_equal(first.history[:, 0, 0], np.arange(width))
        assert first.target[0, 0] == width

    @given(st.integers(2, 12), st.integers(1, 20))
    @settings(max_examples=40, deadline=None)
    def test_window_count_and_target_reconstruction(self, width, extra):
        t_total = width + extra
        vals = np.random.default_rng(0).standard_normal((3, t_total, 1))
        x = TimeSeriesMatrix(vals, ["a", "b", "c"])
        windows = make_windows(x, width)
        assert len(windows) == t_total - width
        targets = np.stack([w.target for w in windows])
        np.testing.assert_array_equal(targets, vals.transpose(1, 0, 2)[width:])
        # History rows are the width steps immediately before each target.
        for w in windows[:3]:
            np.testing.assert_array_equal(
                w.history, vals.transpose(1, 0, 2)[w.t - width : w.t]
            )


class TestGenerateSynthetic:
    def cfg(self, **kw):
        base = dict(
            n_sensors=4,
            t_train=600,
            t_test=2000,
            planted_edges=[(0, 1, 2, 0.8), (1, 2, 1, 0.7)],
            noise_std=0.1,
            anomaly_rate=0.05,
            seed=11,
        )
        base.update(kw)
        return SyntheticConfig(**base)

    def test_seeded_determinism(self):
        a, edges_a = generate_synthetic(self.cfg())
        b, edges_b = generate_synthetic(self.cfg())
        np.testing.assert_array_equal(a.train.values, b.train.values)
        np.testing.assert_array_equal(a.test.values, b.test.values)
        np.testing.assert_array_equal(a.test.anomaly_labels, b.test.anomaly_labels)
        assert edges_a == edges_b

    def test_anomaly_fraction_near_rate(self):
        ds, _ = generate_synthetic(self.cfg())
        frac = ds.test.anomaly_labels.mean()
        assert 0.04 <= frac <= 0.06

    def test_zero_rate_gives_clean_test(self):
        ds, _ = generate_synthetic(self.cfg(anomaly_rate=0.0))
        assert ds.test.anomaly_labels.sum() == 0
        assert ds.train.anomaly_labels is None

    def test_unstable_process_rejected(self):
        cfg = self.cfg(planted_edges=[(0, 1, 1, 0.9), (1, 0, 1, 1.3)])
        with pytest.raises(StabilityError):
            generate_synthetic(cfg)

    def test_root_cause_segments_match_labels(self):
        ds, _ = generate_synthetic(self.cfg())
        labels = ds.test.anomaly_labels
        for (start, end), sensors in ds.test.root_cause_labels.items():
            assert labels[start : end + 1].all()
            assert sensors  # never empty
