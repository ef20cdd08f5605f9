"""Neural-engine tests: finite-difference gradient checks, a naive
convolution oracle, scaling properties and persistence."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from gridrestore.nn import (ConvLayer, DenseLayer, Flatten, NeuralNet,
                            Scaler, TrainingConfig, TrainingDiverged,
                            load_model, mlp, save_model)


def _numeric_grads(net, x, y, w, params, eps=1e-6):
    """Central finite differences of the weighted-MSE loss w.r.t. a flat
    view of every parameter array."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp = net.evaluate_loss(x, y, w)
            flat[i] = orig - eps
            lm = net.evaluate_loss(x, y, w)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * eps)
        grads.append(g)
    return grads


def _check_gradients(net, x, y, rtol=1e-4):
    n_out = y.shape[1]
    w = np.full(n_out, 1.0 / n_out)
    net.loss_and_grad(x, y, w)
    analytic = [g for layer in net.layers for _, _, g in layer.params()]
    params = [p for layer in net.layers for _, p, _ in layer.params()]
    numeric = _numeric_grads(net, x, y, w, params)
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.abs(n), 1e-6)
        assert np.max(np.abs(a - n) / denom) < rtol


class TestGradients:
    @pytest.mark.parametrize("seed", range(25))
    def test_dense_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        sizes = [int(rng.integers(2, 5)) for _ in range(3)]
        net = mlp([sizes[0], sizes[1], sizes[2]], rng)
        # shift inputs so ReLU kinks are unlikely to sit on the FD stencil
        x = rng.uniform(0.1, 1.0, (4, sizes[0]))
        y = rng.uniform(0.0, 1.0, (4, sizes[2]))
        _check_gradients(net, x, y)

    @pytest.mark.parametrize("seed", range(25))
    def test_conv_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(1000 + seed)
        cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h, w = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        net = NeuralNet([ConvLayer.init(3, 3, cin, cout, rng),
                         Flatten(),
                         DenseLayer.init(h * w * cout, 2, rng,
                                         activation="identity")],
                        input_shape=(h, w, cin))
        x = rng.uniform(0.1, 1.0, (3, h * w * cin))
        y = rng.uniform(0.0, 1.0, (3, 2))
        _check_gradients(net, x, y)


class TestConvOracle:
    def test_forward_matches_naive_convolution(self):
        rng = np.random.default_rng(0)
        layer = ConvLayer.init(3, 3, 2, 4, rng)
        x = rng.standard_normal((2, 5, 6, 2))
        out = layer.forward(x)

        kh, kw, cin, cout = layer.kernel.shape
        ref = np.zeros((2, 5, 6, cout))
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        for b in range(2):
            for i in range(5):
                for j in range(6):
                    patch = xp[b, i:i + kh, j:j + kw, :]
                    for co in range(cout):
                        ref[b, i, j, co] = np.sum(patch * layer.kernel[..., co]) \
                            + layer.b[co]
        np.testing.assert_allclose(out, np.maximum(ref, 0.0), atol=1e-12)


class TestScaler:
    @given(hnp.arrays(np.float64, (7, 4),
                      elements=st.floats(-1e6, 1e6, allow_nan=False)))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property(self, data):
        s = Scaler().fit(data)
        np.testing.assert_allclose(s.inverse(s.transform(data)), data,
                                   rtol=1e-9, atol=1e-6)

    def test_transform_lands_in_unit_box(self):
        rng = np.random.default_rng(1)
        data = rng.uniform(-50, 50, (20, 3))
        s = Scaler().fit(data)
        t = s.transform(data)
        assert t.min() >= -1e-12 and t.max() <= 1 + 1e-12

    def test_constant_columns_flagged_and_safe(self):
        data = np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 4.0]])
        s = Scaler().fit(data)
        np.testing.assert_array_equal(s.constant_mask, [True, False])
        t = s.transform(data)
        np.testing.assert_allclose(t[:, 0], 0.0)
        np.testing.assert_allclose(s.inverse(t), data)

    def test_empty_fit_rejected(self):
        with pytest.raises(ValueError):
            Scaler().fit(np.zeros((0, 3)))


class TestTraining:
    def test_loss_decreases_and_fits_linear_map(self):
        rng = np.random.default_rng(2)
        A = rng.uniform(-1, 1, (3, 4))
        x = rng.uniform(0, 1, (64, 4))
        y = x @ A.T
        net = mlp([4, 32, 3], rng)
        hist = net.train(x, y, TrainingConfig(learning_rate=0.05, epochs=300,
                                              seed=0))
        assert hist[-1] < 1e-3
        assert hist[-1] < hist[0] / 100

    def test_training_deterministic_for_seed(self):
        rng1, rng2 = np.random.default_rng(3), np.random.default_rng(3)
        x = np.random.default_rng(4).uniform(0, 1, (32, 3))
        y = np.random.default_rng(5).uniform(0, 1, (32, 2))
        cfg = TrainingConfig(learning_rate=0.02, epochs=40, seed=9,
                             batch_size=8)
        h1 = mlp([3, 16, 2], rng1).train(x, y, cfg)
        h2 = mlp([3, 16, 2], rng2).train(x, y, cfg)
        assert h1 == h2

    def test_weighted_loss_definition(self):
        rng = np.random.default_rng(6)
        net = mlp([2, 4, 3], rng)
        x = rng.uniform(0, 1, (5, 2))
        y = rng.uniform(0, 1, (5, 3))
        w = np.array([0.5, 0.25, 0.25])
        err = net.forward(x) - y
        expected = float(np.mean((err * err) @ w))
        assert net.evaluate_loss(x, y, w) == pytest.approx(expected)

    def test_divergence_detected(self):
        rng = np.random.default_rng(7)
        # linear net: oversized steps provably oscillate with growing norm
        net = NeuralNet([DenseLayer.init(2, 8, rng, activation="identity"),
                         DenseLayer.init(8, 1, rng, activation="identity")])
        x = rng.uniform(1.0, 2.0, (16, 2))
        y = rng.uniform(0, 1, (16, 1))
        with pytest.raises(TrainingDiverged):
            net.train(x, y, TrainingConfig(learning_rate=50.0, epochs=200,
                                           seed=0))

    def test_early_stop_on_loss_target(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(0, 1, (32, 2))
        y = x.sum(axis=1, keepdims=True)
        net = mlp([2, 16, 1], rng)
        hist = net.train(x, y, TrainingConfig(learning_rate=0.05, epochs=500,
                                              seed=0, loss_target=1e-3))
        assert hist[-1] <= 1e-3
        assert len(hist) < 500


class TestPersistence:
    def test_save_load_preserves_predictions(self, tmp_path):
        rng = np.random.default_rng(9)
        net = NeuralNet([ConvLayer.init(3, 3, 1, 2, rng), Flatten(),
                         DenseLayer.init(24, 3, rng, activation="identity")],
                        input_shape=(2, 6, 1))
        x = rng.uniform(0, 1, (4, 12))
        scalers = {"in": Scaler().fit(x)}
        path = tmp_path / "model.json"
        save_model(path, net, scalers)
        net2, scalers2 = load_model(path)
        np.testing.assert_allclose(net2.forward(x), net.forward(x), atol=0)
        np.testing.assert_allclose(scalers2["in"].transform(x),
                                   scalers["in"].transform(x), atol=0)
