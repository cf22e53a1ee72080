"""Small feedforward classifier used by the adaptive screening method.

Architecture: batch normalization applied to the raw inputs, rectifier hidden
layers, sigmoid outputs with one output per structural component, predicting
"remains safe" (1) versus "failed" (0). Training minimizes mean per-component
binary cross-entropy with the Adam update rule. Everything is plain numpy and
deterministic under a fixed seed.
"""

from __future__ import annotations

import json
import math

import numpy as np

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


class TrainingDivergedError(RuntimeError):
    pass


class SurrogateNet:
    """Dense network with learnable input normalization.

    widths = (n_inputs, hidden..., n_outputs). Parameters live in ``params``;
    ``running_mean``/``running_var`` hold the inference-time normalization
    statistics accumulated during training.
    """

    def __init__(self, widths, seed=0):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        self.widths = widths
        rng = np.random.default_rng(seed)
        d = widths[0]
        self.params = {"bn_gamma": np.ones(d), "bn_beta": np.zeros(d)}
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            scale = math.sqrt(2.0 / fan_in)
            self.params[f"W{i}"] = rng.normal(0.0, scale, size=(fan_in, fan_out))
            self.params[f"b{i}"] = np.zeros(fan_out)
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)

    @property
    def n_outputs(self):
        return self.widths[-1]

    def _normalize(self, X, training):
        if training and X.shape[0] > 1:
            mu = X.mean(axis=0)
            var = X.var(axis=0)
        else:
            mu, var = self.running_mean, self.running_var
        xhat = (X - mu) / np.sqrt(var + _BN_EPS)
        return xhat, mu, var

    def _forward(self, X, training):
        xhat, mu, var = self._normalize(X, training)
        h = self.params["bn_gamma"] * xhat + self.params["bn_beta"]
        cache = {"xhat": xhat, "var": var, "acts": [h]}
        n_layers = len(self.widths) - 1
        for i in range(n_layers):
            z = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            cache["acts"].append(h)
        cache["batch_mu"] = mu
        return h, cache  # final activation is the raw logit

    def predict(self, X):
        """Per-component safe probabilities in (0, 1), inference mode."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        logits, _ = self._forward(X, training=False)
        return 1.0 / (1.0 + np.exp(-logits))

    def loss_and_grads(self, X, Y):
        """Mean binary cross-entropy and parameter gradients (training mode)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        n, n_out = Y.shape
        logits, cache = self._forward(X, training=True)
        # stable BCE on logits: max(z,0) - z y + log(1 + exp(-|z|))
        loss = float(
            np.mean(np.maximum(logits, 0.0) - logits * Y + np.log1p(np.exp(-np.abs(logits))))
        )
        p = 1.0 / (1.0 + np.exp(-logits))
        grads = {}
        delta = (p - Y) / (n * n_out)
        n_layers = len(self.widths) - 1
        for i in reversed(range(n_layers)):
            a_prev = cache["acts"][i]
            grads[f"W{i}"] = a_prev.T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[f"W{i}"].T) * (cache["acts"][i] > 0.0)
            else:
                delta = delta @ self.params[f"W{i}"].T
        xhat = cache["xhat"]
        grads["bn_gamma"] = (delta * xhat).sum(axis=0)
        grads["bn_beta"] = delta.sum(axis=0)
        return loss, grads

    def _update_running(self, X):
        if X.shape[0] > 1:
            mu = X.mean(axis=0)
            var = X.var(axis=0)
            self.running_mean = (1 - _BN_MOMENTUM) * self.running_mean + _BN_MOMENTUM * mu
            self.running_var = (1 - _BN_MOMENTUM) * self.running_var + _BN_MOMENTUM * var

    def to_dict(self):
        """Weight file layout: layer sizes header, then row-major blocks."""
        return {
            "widths": list(self.widths),
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "blocks": {k: np.asarray(v).tolist() for k, v in self.params.items()},
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, data):
        net = cls(data["widths"], seed=0)
        net.running_mean = np.asarray(data["running_mean"], dtype=float)
        net.running_var = np.asarray(data["running_var"], dtype=float)
        for k, v in data["blocks"].items():
            net.params[k] = np.asarray(v, dtype=float)
        return net

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


class AdamState:
    def __init__(self, params, lr=3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)


def train_surrogate(points, safe_labels, net=None, widths=None, epochs=300, batch_size=20,
                    seed=0, lr=3e-3):
    """Train (or retrain) the classifier on (point, per-component safe bit) pairs.

    Labels follow the convention failed = 0, safe = 1. Returns the trained net
    and the per-epoch mean loss history. Raises TrainingDivergedError when the
    loss stops being finite.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    Y = np.atleast_2d(np.asarray(safe_labels, dtype=float))
    if X.shape[0] != Y.shape[0] or X.shape[0] == 0:
        raise ValueError("points and labels must be non-empty and aligned")
    if not np.all((Y == 0.0) | (Y == 1.0)):
        raise ValueError("labels must be binary")
    if net is None:
        if widths is None:
            widths = (X.shape[1], 64, 64, Y.shape[1])
        net = SurrogateNet(widths, seed=seed)
    rng = np.random.default_rng(seed + 1)
    adam = AdamState(net.params, lr=lr)
    n = X.shape[0]
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grads = net.loss_and_grads(X[idx], Y[idx])
            if not math.isfinite(loss):
                raise TrainingDivergedError("non-finite training loss")
            net._update_running(X[idx])
            adam.step(net.params, grads)
            epoch_loss += loss
            n_batches += 1
        history.append(epoch_loss / n_batches)
    return net, history
