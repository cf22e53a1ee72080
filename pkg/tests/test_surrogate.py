import math

import numpy as np
import pytest

from resilscreen.probcore import NBallSpec, sample_nball
from resilscreen.screening import convergence_ratio
from resilscreen.surrogate import SurrogateNet, TrainingDivergedError, train_surrogate


def _constant_net(dim, n_out, logit):
    net = SurrogateNet((dim, 4, n_out), seed=0)
    for key in list(net.params):
        if key.startswith("W"):
            net.params[key] = np.zeros_like(net.params[key])
        if key.startswith("b"):
            net.params[key] = np.zeros_like(net.params[key])
    net.params["b1"] = np.full(n_out, float(logit))
    return net


class TestTraining:
    def test_separable_1d_reaches_full_accuracy(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-2, 2, size=(60, 1))
        Y = (X[:, 0] > 0).astype(float)[:, None]  # safe on the positive side
        net, _ = train_surrogate(X, Y, epochs=300, batch_size=20, seed=1)
        acc = ((net.predict(X) > 0.5) == (Y > 0.5)).mean()
        assert acc == 1.0

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((30, 3))
        Y = (X > 0).astype(float)
        a, _ = train_surrogate(X, Y, epochs=50, seed=7)
        b, _ = train_surrogate(X, Y, epochs=50, seed=7)
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_loss_decreases_early(self, double_layer):
        # bundle-labelled ball points; the first ten epochs must improve monotonically
        rm = double_layer.random_model()
        U = sample_nball(NBallSpec(5, 3.719, 80), seed=3)
        resp = double_layer.response(rm.to_physical(U))
        labels = 1.0 - (resp.margins > 0).astype(float)
        _, history = train_surrogate(U, labels, epochs=10, batch_size=20, seed=4)
        assert all(a > b for a, b in zip(history, history[1:]))

    def test_final_loss_not_worse_than_initial(self, double_layer):
        rm = double_layer.random_model()
        U = sample_nball(NBallSpec(5, 3.719, 60), seed=5)
        resp = double_layer.response(rm.to_physical(U))
        labels = 1.0 - (resp.margins > 0).astype(float)
        _, history = train_surrogate(U, labels, epochs=300, batch_size=20, seed=6)
        assert history[-1] <= history[0]

    def test_divergence_raises(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        Y = np.array([[0.0], [0.0], [1.0], [1.0]])
        net = SurrogateNet((1, 2, 1), seed=8)
        net.params["W0"] = np.full_like(net.params["W0"], np.inf)
        with pytest.raises(TrainingDivergedError):
            train_surrogate(X, Y, net=net, epochs=5, seed=8)

    def test_label_validation(self):
        with pytest.raises(ValueError):
            train_surrogate(np.zeros((3, 1)), np.full((3, 1), 0.4))


class TestGradients:
    def test_backprop_matches_central_differences(self):
        net = SurrogateNet((1, 2, 1), seed=11)  # ~10 parameters
        rng = np.random.default_rng(12)
        X = rng.standard_normal((6, 1)) + 0.3
        Y = (X > 0).astype(float)
        _, grads = net.loss_and_grads(X, Y)
        h = 1e-6
        worst = 0.0
        for key, g in grads.items():
            flat = net.params[key].reshape(-1)
            gf = np.asarray(g).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = net.loss_and_grads(X, Y)
                flat[i] = orig - h
                lm, _ = net.loss_and_grads(X, Y)
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                rel = abs(fd - gf[i]) / max(abs(fd) + abs(gf[i]), 1e-8)
                worst = max(worst, rel)
        assert worst <= 1e-5


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((40, 2))
        Y = (X > 0).astype(float)
        net, _ = train_surrogate(X, Y, epochs=40, seed=14)
        path = tmp_path / "weights.json"
        net.save(path)
        loaded = SurrogateNet.load(path)
        assert np.allclose(net.predict(X), loaded.predict(X))
        assert loaded.widths == net.widths


class TestConvergenceRatio:
    def test_all_safe_net(self):
        net = _constant_net(3, 2, +30.0)  # outputs ~1 everywhere
        assert convergence_ratio(net, 3, 1000, 2.0, seed=0) == 0.0

    def test_all_failed_net(self):
        net = _constant_net(3, 2, -30.0)  # outputs ~0 everywhere
        assert convergence_ratio(net, 3, 1000, 2.0, seed=0) == 1.0

    def test_probe_count_guard(self):
        net = _constant_net(2, 1, 0.0)
        with pytest.raises(ValueError):
            convergence_ratio(net, 2, 50, 1.0, seed=0)
