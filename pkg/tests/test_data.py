import filecmp

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentanom.data import (
    BUNDLED_CORPORA,
    CORPUS_DIR,
    NormStats,
    RawSeries,
    WindowTensor,
    apply_normalizer,
    fit_normalizer,
    invert_normalizer,
    load_series,
    make_windows,
    read_binary,
    resolve_data_path,
    save_series,
    stack_windows,
    synth_inject,
    synth_normal,
    write_binary,
    write_bundled_corpora,
    zero_dims,
)
from latentanom.errors import DataFormatError, EmptyInputError, ParameterError, ShapeError, ValidationError


def write_csv(path, rows, header=("dim_0", "dim_1")):
    path.write_text(",".join(header) + "\n" + "\n".join(",".join(map(str, r)) for r in rows) + "\n")


class TestLoadSeries:
    def test_three_by_two_csv(self, tmp_path):
        p = tmp_path / "s.csv"
        write_csv(p, [[1.0, 2.0], [3.0, 4.0], [5.0, 6.5]])
        s = load_series(p)
        assert s.shape == (3, 2)
        assert s.labels is None
        np.testing.assert_array_equal(s.values[2], [5.0, 6.5])

    def test_non_numeric_cell_cites_row(self, tmp_path):
        p = tmp_path / "s.csv"
        write_csv(p, [[1.0, 2.0], [3.0, "abc"], [5.0, 6.0]])
        with pytest.raises(ValidationError, match="row 2"):
            load_series(p)

    def test_nan_cell_rejected(self, tmp_path):
        p = tmp_path / "s.csv"
        write_csv(p, [[1.0, 2.0], ["nan", 1.0]])
        with pytest.raises(ValidationError):
            load_series(p)

    def test_labels_file_attached(self, tmp_path):
        p = tmp_path / "s.csv"
        write_csv(p, [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        (tmp_path / "s.labels.csv").write_text("label\n0\n1\n0\n")
        s = load_series(p)
        np.testing.assert_array_equal(s.labels, [0, 1, 0])

    def test_labels_length_mismatch(self, tmp_path):
        p = tmp_path / "s.csv"
        write_csv(p, [[1.0, 2.0], [3.0, 4.0]])
        (tmp_path / "s.labels.csv").write_text("label\n0\n1\n0\n")
        with pytest.raises(ValidationError):
            load_series(p)

    def test_bad_header(self, tmp_path):
        p = tmp_path / "s.csv"
        write_csv(p, [[1.0, 2.0]], header=("a", "b"))
        with pytest.raises(DataFormatError):
            load_series(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_series(tmp_path / "nope.csv")

    def test_csv_round_trip_exact(self, tmp_path, rng):
        s = RawSeries(rng.standard_normal((20, 3)), rng.integers(0, 2, 20), "x")
        save_series(s, tmp_path / "x.csv")
        back = load_series(tmp_path / "x.csv")
        np.testing.assert_array_equal(back.values, s.values)
        np.testing.assert_array_equal(back.labels, s.labels)


class TestBinary:
    def test_round_trip(self, tmp_path, rng):
        a = rng.standard_normal((7, 3))
        write_binary(tmp_path / "a.gts", a)
        np.testing.assert_array_equal(read_binary(tmp_path / "a.gts"), a)
        s = load_series(tmp_path / "a.gts")
        assert s.shape == (7, 3)

    def test_header_layout(self, tmp_path):
        write_binary(tmp_path / "a.gts", np.arange(6.0).reshape(3, 2))
        raw = (tmp_path / "a.gts").read_bytes()
        assert raw[:4] == b"GTS1"
        assert int.from_bytes(raw[4:8], "little") == 3
        assert int.from_bytes(raw[8:12], "little") == 2
        assert np.frombuffer(raw[12:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]

    def test_bad_magic(self, tmp_path):
        (tmp_path / "a.gts").write_bytes(b"XXXX" + bytes(8))
        with pytest.raises(DataFormatError):
            read_binary(tmp_path / "a.gts")

    def test_truncated(self, tmp_path):
        write_binary(tmp_path / "a.gts", np.ones((4, 2)))
        raw = (tmp_path / "a.gts").read_bytes()
        (tmp_path / "a.gts").write_bytes(raw[:-5])
        with pytest.raises(DataFormatError):
            read_binary(tmp_path / "a.gts")

    def test_non_finite_rejected(self, tmp_path):
        write_binary(tmp_path / "a.gts", np.array([[1.0], [np.inf]]))
        with pytest.raises(ValidationError, match="row 2"):
            load_series(tmp_path / "a.gts")


class TestWindows:
    def test_single_window(self):
        w = make_windows(RawSeries(np.arange(10.0)), T=10, stride=1)
        assert len(w) == 1
        np.testing.assert_array_equal(w[0].data[:, 0], np.arange(10.0))

    def test_stride_two(self):
        w = make_windows(RawSeries(np.arange(10.0)), T=4, stride=2)
        assert [x.origin[1] for x in w] == [0, 2, 4, 6]

    def test_all_zero_labels(self):
        w = make_windows(RawSeries(np.arange(10.0), np.zeros(10)), T=3, stride=1)
        assert all(x.label == 0 for x in w)

    def test_label_any_anomalous(self):
        labels = np.zeros(10)
        labels[5] = 1
        w = make_windows(RawSeries(np.arange(10.0), labels), T=4, stride=2)
        assert [x.label for x in w] == [0, 1, 1, 0]

    def test_too_long(self):
        with pytest.raises(EmptyInputError):
            make_windows(RawSeries(np.arange(5.0)), T=6)

    @given(n=st.integers(1, 60), T=st.integers(1, 20), stride=st.integers(1, 7))
    def test_count_formula(self, n, T, stride):
        if T > n:
            return
        w = make_windows(RawSeries(np.arange(float(n))), T, stride)
        assert len(w) == (n - T) // stride + 1
        for i, x in enumerate(w):
            assert x.data[0, 0] == i * stride and x.shape == (T, 1)

    @given(n=st.integers(2, 50), T=st.integers(1, 10))
    def test_stride_one_starts_cover_all_but_last(self, n, T):
        if T > n:
            return
        starts = [x.origin[1] for x in make_windows(RawSeries(np.zeros(n)), T, 1)]
        assert starts == list(range(n - T + 1))


class TestNormalizer:
    def test_midpoint(self):
        stats = fit_normalizer(np.array([[[2.0], [6.0]]]))
        assert apply_normalizer(np.array([[[4.0]]]), stats)[0, 0, 0] == 0.5

    def test_constant_dimension(self):
        X = np.full((1, 5, 1), 3.0)
        out = apply_normalizer(X, fit_normalizer(X))
        assert np.all(out == 0.0)

    def test_fit_set_in_unit_interval(self, rng):
        X = rng.standard_normal((10, 8, 3)) * 5
        out = apply_normalizer(X, fit_normalizer(X))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_dimension_mismatch(self, rng):
        stats = fit_normalizer(rng.standard_normal((2, 4, 2)))
        with pytest.raises(ShapeError):
            apply_normalizer(rng.standard_normal((1, 4, 3)), stats)

    def test_windows_list(self, rng):
        w = [WindowTensor(rng.standard_normal((4, 2)), ("s", 0), 1)]
        out = apply_normalizer(w, fit_normalizer(w))
        assert out[0].label == 1 and out[0].origin == ("s", 0)

    def test_invalid_stats(self):
        with pytest.raises(ValidationError):
            NormStats(np.array([1.0]), np.array([0.0]))

    def test_stats_dict_round_trip(self, rng):
        s = fit_normalizer(rng.standard_normal((3, 4, 2)))
        back = NormStats.from_dict(s.to_dict())
        np.testing.assert_array_equal(back.min, s.min)
        np.testing.assert_array_equal(back.max, s.max)

    @settings(max_examples=50)
    @given(arrays(np.float64, (3, 6, 2), elements=st.floats(-1e3, 1e3)))
    def test_invert_round_trip(self, X):
        stats = fit_normalizer(X)
        span = stats.max - stats.min
        back = invert_normalizer(apply_normalizer(X, stats), stats)
        keep = span > 0
        np.testing.assert_allclose(back[..., keep], X[..., keep], rtol=1e-6, atol=1e-9 * (1 + np.abs(X).max()))

    @settings(max_examples=30)
    @given(arrays(np.float64, (2, 5, 2), elements=st.floats(-10, 10)))
    def test_idempotent_on_normalized_data(self, X):
        once = apply_normalizer(X, fit_normalizer(X))
        twice = apply_normalizer(once, fit_normalizer(once))
        span = np.ptp(X.reshape(-1, 2), axis=0)
        keep = span > 1e-6
        np.testing.assert_allclose(twice[..., keep], once[..., keep], atol=1e-9)

    def test_zero_dims_preserved_when_min_is_zero(self, rng):
        X = np.abs(rng.standard_normal((4, 6, 3)))
        X[:, :, 1] = 0.0
        X[0, 0, :] = 0.0  # min of every dim is 0
        stats = fit_normalizer(X)
        out = apply_normalizer(X, stats)
        for i in range(4):
            assert zero_dims(X[i]) == zero_dims(out[i])


class TestSynth:
    def test_same_seed_identical(self):
        a = stack_windows(synth_normal("sine_mix", 16, 2, 5, seed=4))
        b = stack_windows(synth_normal("sine_mix", 16, 2, 5, seed=4))
        assert a.tobytes() == b.tobytes()

    def test_different_seeds_differ(self):
        a = stack_windows(synth_normal("ar_process", 16, 1, 5, seed=4))
        b = stack_windows(synth_normal("ar_process", 16, 1, 5, seed=5))
        assert not np.array_equal(a, b)

    def test_shape(self):
        w = synth_normal("sine_mix", 32, 1, 100, seed=0)
        assert len(w) == 100 and all(x.shape == (32, 1) for x in w)

    def test_bad_kind(self):
        with pytest.raises(ParameterError):
            synth_normal("square", 8, 1, 2, seed=0)

    def test_inject_zero_magnitude(self):
        with pytest.raises(ParameterError):
            synth_inject(synth_normal("sine_mix", 8, 1, 4, 0), "spike", 0.0, seed=0)

    def test_spike_on_zero_window(self):
        zeros = [WindowTensor(np.zeros((20, 2)))]
        out, labels = synth_inject(zeros, "spike", 0.7, seed=3, fraction=1.0)
        assert labels.tolist() == [1]
        assert np.abs(out[0].data).max() == pytest.approx(0.7)

    @pytest.mark.parametrize("kind", ["spike", "level_shift", "noise_burst", "mixed"])
    def test_labels_count_corrupted(self, kind):
        w = synth_normal("sine_mix", 16, 2, 30, seed=1)
        out, labels = synth_inject(w, kind, 0.5, seed=2, fraction=0.4)
        changed = [not np.array_equal(a.data, b.data) for a, b in zip(w, out)]
        assert labels.sum() == 12 == sum(changed)
        assert labels.tolist() == [int(c) for c in changed]

    def test_inject_deterministic(self):
        w = synth_normal("sine_mix", 16, 1, 10, seed=1)
        a, la = synth_inject(w, "mixed", 0.5, seed=9)
        b, lb = synth_inject(w, "mixed", 0.5, seed=9)
        assert stack_windows(a).tobytes() == stack_windows(b).tobytes()
        assert la.tolist() == lb.tolist()


class TestZeroDims:
    def test_all_zero(self):
        assert zero_dims(np.zeros((4, 3))) == {0, 1, 2}

    def test_none(self):
        assert zero_dims(np.ones((4, 3))) == set()

    def test_mixed(self):
        X = np.zeros((4, 2))
        X[1, 0] = 2.0
        assert zero_dims(WindowTensor(X)) == {1}


class TestBundled:
    def test_files_match_generator(self, tmp_path):
        written = write_bundled_corpora(tmp_path)
        assert len(written) == 2 * len(BUNDLED_CORPORA)
        for path in written:
            assert filecmp.cmp(path, CORPUS_DIR / path.name, shallow=False), path.name
            lp = path.with_name(path.stem + ".labels.csv")
            if lp.exists():
                assert filecmp.cmp(lp, CORPUS_DIR / lp.name, shallow=False)

    def test_resolve(self):
        p = resolve_data_path("bundled:sine_uts_test")
        s = load_series(p)
        w = make_windows(s, 64, 64)
        labels = [x.label for x in w]
        assert len(w) == 200 and sum(labels) == 100

    def test_unknown(self):
        with pytest.raises(FileNotFoundError, match="available"):
            resolve_data_path("bundled:nothing")

    def test_plain_path_passthrough(self, tmp_path):
        assert resolve_data_path(tmp_path / "a.csv") == tmp_path / "a.csv"
