import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentanom.data import WindowTensor
from latentanom.errors import ParameterError, ShapeError
from latentanom.injector import (
    PatchConfig,
    batch_inject,
    deviation_patch,
    generate_anomaly,
    length_patch,
    load_injected,
    save_injected,
)
from latentanom.model import forward
from oracles import brute_patch

SCHEMAS = Path(__file__).resolve().parents[1] / "src" / "latentanom" / "schemas"

cells = st.floats(0, 1, allow_nan=False)


class TestDeviationPatch:
    def test_hand_example(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0]])
        Xt = np.array([[0.9, 0.05], [1.0, 0.05]])
        pw = deviation_patch(X, Xt, 0.4)
        np.testing.assert_array_equal(pw.mask, [[1, 1], [0, 1]])
        np.testing.assert_array_equal(pw.data, [[0.9, 0.05], [1.0, 0.05]])

    def test_unreachable_threshold(self, rng):
        X, Xt = rng.random((10, 3)), rng.random((10, 3))
        pw = deviation_patch(X, Xt, 1e9)
        assert pw.mask.sum() == 0 and np.array_equal(pw.data, X)

    def test_zero_threshold(self, rng):
        X = rng.random((10, 3))
        Xt = X + 0.01
        pw = deviation_patch(X, Xt, 0.0)
        assert pw.mask.all() and np.array_equal(pw.data, Xt)

    def test_constant_dimension_always_patched(self):
        X = np.zeros((5, 1)) + 0.3
        Xt = X.copy()
        Xt[2] += 1e-6
        for tau in (0.0, 0.2, 100.0):
            assert deviation_patch(X, Xt, tau).mask[:, 0].tolist() == [0, 0, 1, 0, 0]

    def test_errors(self):
        with pytest.raises(ShapeError):
            deviation_patch(np.zeros((3, 1)), np.zeros((4, 1)), 0.1)
        with pytest.raises(ParameterError):
            deviation_patch(np.zeros((3, 1)), np.zeros((3, 1)), -0.1)

    def test_window_origin_kept(self):
        pw = deviation_patch(WindowTensor(np.zeros((3, 1)), ("s", 7)), np.ones((3, 1)), 0.1)
        assert pw.source == ("s", 7)

    @settings(max_examples=100)
    @given(arrays(np.float64, (6, 3), elements=cells), arrays(np.float64, (6, 3), elements=cells),
           st.floats(0, 1))
    def test_matches_per_cell_oracle(self, X, Xt, tau):
        pw = deviation_patch(X, Xt, tau)
        data, mask = brute_patch(X.tolist(), Xt.tolist(), tau)
        np.testing.assert_array_equal(pw.mask, mask)
        np.testing.assert_array_equal(pw.data, data)

    @settings(max_examples=100)
    @given(arrays(np.float64, (6, 2), elements=cells), arrays(np.float64, (6, 2), elements=cells),
           st.floats(0, 1), st.floats(0, 1))
    def test_composition_and_monotonicity(self, X, Xt, t1, t2):
        lo, hi = sorted((t1, t2))
        a, b = deviation_patch(X, Xt, lo), deviation_patch(X, Xt, hi)
        assert np.all(a.mask >= b.mask)
        assert np.all((a.data == X) | (a.data == Xt))

    @settings(max_examples=50)
    @given(arrays(np.float64, (5, 3), elements=cells), arrays(np.float64, (5, 3), elements=cells),
           arrays(np.float64, (5, 2), elements=cells))
    def test_dimension_independence(self, X, Xt, other):
        base = deviation_patch(X, Xt, 0.2)
        X2, Xt2 = X.copy(), Xt.copy()
        X2[:, 1:] = other
        Xt2[:, 1:] = other[::-1]
        changed = deviation_patch(X2[:, [0, 2, 1]], Xt2[:, [0, 2, 1]], 0.2)
        np.testing.assert_array_equal(base.mask[:, 0], changed.mask[:, 0])

    def test_per_dimension_variant(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])
        Xt = np.array([[1.0, 0.0], [1.0, 1.1]])
        pw = deviation_patch(X, Xt, 0.4, per_dimension=True)
        # dim 0 mean deviation 0.5 > 0.4; dim 1 mean deviation 0.005 < 0.4
        np.testing.assert_array_equal(pw.mask, [[1, 0], [1, 0]])


class TestLengthPatch:
    def test_full(self, rng):
        X, Xt = rng.random((20, 2)), rng.random((20, 2))
        pw = length_patch(X, Xt, 1.0, rng=0)
        assert np.array_equal(pw.data, Xt) and pw.mask.all()

    def test_half_of_200(self, rng):
        X, Xt = rng.random((200, 3)), rng.random((200, 3)) + 2
        pw = length_patch(X, Xt, 0.5, rng=4)
        rows = np.flatnonzero(pw.mask[:, 0])
        assert len(rows) == 100 and rows[-1] - rows[0] == 99
        assert np.all(pw.mask[rows] == 1) and np.all(pw.mask.sum(axis=1)[pw.mask[:, 0] == 0] == 0)

    def test_seeded(self, rng):
        X, Xt = rng.random((50, 1)), rng.random((50, 1))
        assert np.array_equal(length_patch(X, Xt, 0.3, 9).mask, length_patch(X, Xt, 0.3, 9).mask)

    def test_invalid(self):
        with pytest.raises(ParameterError):
            length_patch(np.zeros((4, 1)), np.zeros((4, 1)), 0.0, 0)


class TestGenerate:
    def test_seeded_and_shape(self, tiny_trained):
        model, X, _ = tiny_trained
        a = generate_anomaly(model, X[0], 5)
        assert a.shape == X[0].shape
        assert np.array_equal(a, generate_anomaly(model, X[0], 5))

    def test_inflated_spread(self, tiny_trained):
        model, X, _ = tiny_trained
        x = torch.as_tensor(np.repeat(X[:1], 1000, axis=0), dtype=torch.float32)
        X_hat, X_tilde, _ = forward(model, x, rng=0)
        assert float(X_tilde.var(dim=0).mean()) >= float(X_hat.var(dim=0).mean())


class TestBatchInject:
    def test_count_and_order(self, tiny_trained):
        model, X, _ = tiny_trained
        out = batch_inject(model, X[:7], PatchConfig(tau=0.2, seed=1))
        assert len(out) == 7
        assert [p.source[1] for p in out] == list(range(7))

    def test_mode_none_is_raw(self, tiny_trained):
        model, X, _ = tiny_trained
        out = batch_inject(model, X[:4], PatchConfig(mode="none", seed=1))
        assert all(p.mask.all() for p in out)
        dev = batch_inject(model, X[:4], PatchConfig(mode="deviation", tau=0.0, seed=1))
        # same noise streams: deviation with tau 0 swaps every differing cell
        for p, q in zip(out, dev):
            np.testing.assert_array_equal(p.data[q.mask == 1], q.data[q.mask == 1])

    def test_tau_monotone(self, tiny_trained):
        model, X, _ = tiny_trained
        counts = [sum(int(p.mask.sum()) for p in batch_inject(model, X, PatchConfig(tau=t, seed=2)))
                  for t in (0.05, 0.2, 0.4)]
        assert counts[0] >= counts[1] >= counts[2]

    def test_per_window_streams(self, tiny_trained):
        model, X, _ = tiny_trained
        full = batch_inject(model, X[:6], PatchConfig(seed=3))
        prefix = batch_inject(model, X[:3], PatchConfig(seed=3))
        for a, b in zip(full, prefix):
            np.testing.assert_array_equal(a.data, b.data)

    def test_length_mode(self, tiny_trained):
        model, X, _ = tiny_trained
        out = batch_inject(model, X[:5], PatchConfig(mode="length", portion=0.5, seed=0))
        assert all(p.mask[:, 0].sum() == 8 for p in out)

    def test_bad_mode(self):
        with pytest.raises(ParameterError):
            PatchConfig(mode="bogus")


class TestPersistence:
    def test_round_trip(self, tiny_trained, tmp_path):
        model, X, _ = tiny_trained
        out = batch_inject(model, X[:5], PatchConfig(seed=0))
        manifest = save_injected(tmp_path / "inj.gts", out, {"checkpoint_sha256": "0" * 64, "mode": "deviation",
                                                             "tau": 0.2, "portion": 0.5, "per_dimension": False,
                                                             "seed": 0})
        data, mask, back = load_injected(tmp_path / "inj.gts")
        np.testing.assert_array_equal(data, np.stack([p.data for p in out]))
        np.testing.assert_array_equal(mask, np.stack([p.mask for p in out]))
        assert back == manifest and back["n_windows"] == 5
        assert (tmp_path / "inj.mask").read_bytes()[:4] == b"GTM1"
        jsonschema.validate(back, json.loads((SCHEMAS / "injected_manifest.schema.json").read_text()))
