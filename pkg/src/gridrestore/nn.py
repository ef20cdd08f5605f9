"""Minimal neural-network engine: min-max scaling, dense and 2-D
convolutional layers with ReLU, weighted-MSE loss, and gradient-descent
backpropagation.  Everything is plain numpy; training is deterministic for
a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class Scaler:
    """Per-feature min-max map onto [0,1].  Constant features map to 0 and
    are reported via ``constant_mask``."""

    def __init__(self, mins=None, maxs=None):
        self.mins = None if mins is None else np.asarray(mins, float)
        self.maxs = None if maxs is None else np.asarray(maxs, float)

    def fit(self, data):
        data = np.asarray(data, float)
        if data.size == 0:
            raise ValueError("cannot fit scaler on empty data")
        self.mins = data.min(axis=0)
        self.maxs = data.max(axis=0)
        return self

    @property
    def constant_mask(self):
        return self.maxs <= self.mins

    def transform(self, data):
        span = np.where(self.constant_mask, 1.0, self.maxs - self.mins)
        return (np.asarray(data, float) - self.mins) / span

    def inverse(self, scaled):
        span = np.where(self.constant_mask, 0.0, self.maxs - self.mins)
        return np.asarray(scaled, float) * span + self.mins

    def to_dict(self):
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(mins=d["mins"], maxs=d["maxs"])


def relu(x):
    return np.maximum(x, 0.0)


class DenseLayer:
    def __init__(self, w, b, activation="relu"):
        self.w = np.asarray(w, float)  # (out, in)
        self.b = np.asarray(b, float)
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation

    @classmethod
    def init(cls, n_in, n_out, rng, activation="relu"):
        lim = np.sqrt(6.0 / n_in) if activation == "relu" else np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-lim, lim, size=(n_out, n_in))
        return cls(w, np.zeros(n_out), activation)

    def forward(self, x):
        z = x @ self.w.T + self.b
        y = relu(z) if self.activation == "relu" else z
        self._cache = (x, z)
        return y

    def backward(self, grad_y):
        x, z = self._cache
        gz = grad_y * (z > 0) if self.activation == "relu" else grad_y
        self.grad_w = gz.T @ x
        self.grad_b = gz.sum(axis=0)
        return gz @ self.w

    def params(self):
        return [("w", self.w, self.grad_w), ("b", self.b, self.grad_b)]

    def to_dict(self):
        return {"kind": "dense", "activation": self.activation,
                "shape": list(self.w.shape),
                "w": self.w.ravel().tolist(), "b": self.b.tolist()}


class ConvLayer:
    """2-D convolution with same-size zero padding, kernel [kh, kw, cin, cout]."""

    def __init__(self, kernel, b, activation="relu"):
        self.kernel = np.asarray(kernel, float)
        self.b = np.asarray(b, float)
        self.activation = activation

    @classmethod
    def init(cls, kh, kw, cin, cout, rng):
        fan_in = kh * kw * cin
        lim = np.sqrt(6.0 / fan_in)
        k = rng.uniform(-lim, lim, size=(kh, kw, cin, cout))
        return cls(k, np.zeros(cout))

    def _im2col(self, x):
        b, h, w, cin = x.shape
        kh, kw = self.kernel.shape[:2]
        ph, pw = kh // 2, kw // 2
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        cols = np.empty((b, h, w, kh * kw * cin))
        n = 0
        for u in range(kh):
            for vv in range(kw):
                cols[..., n:n + cin] = xp[:, u:u + h, vv:vv + w, :]
                n += cin
        return cols

    def forward(self, x):
        b, h, w, cin = x.shape
        cout = self.kernel.shape[3]
        cols = self._im2col(x)
        wmat = self.kernel.reshape(-1, cout)
        z = cols.reshape(-1, cols.shape[-1]) @ wmat + self.b
        z = z.reshape(b, h, w, cout)
        y = relu(z) if self.activation == "relu" else z
        self._cache = (x.shape, cols, z)
        return y

    def backward(self, grad_y):
        (b, h, w, cin), cols, z = self._cache
        kh, kw, _, cout = self.kernel.shape
        gz = grad_y * (z > 0) if self.activation == "relu" else grad_y
        gzf = gz.reshape(-1, cout)
        self.grad_kernel = (cols.reshape(-1, cols.shape[-1]).T @ gzf).reshape(self.kernel.shape)
        self.grad_b = gzf.sum(axis=0)
        gcols = (gzf @ self.kernel.reshape(-1, cout).T).reshape(b, h, w, kh * kw * cin)
        ph, pw = kh // 2, kw // 2
        gxp = np.zeros((b, h + 2 * ph, w + 2 * pw, cin))
        n = 0
        for u in range(kh):
            for vv in range(kw):
                gxp[:, u:u + h, vv:vv + w, :] += gcols[..., n:n + cin]
                n += cin
        return gxp[:, ph:ph + h, pw:pw + w, :]

    def params(self):
        return [("kernel", self.kernel, self.grad_kernel), ("b", self.b, self.grad_b)]

    def to_dict(self):
        return {"kind": "conv", "activation": self.activation,
                "shape": list(self.kernel.shape),
                "w": self.kernel.ravel().tolist(), "b": self.b.tolist()}


class Flatten:
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_y):
        return grad_y.reshape(self._shape)

    def params(self):
        return []

    def to_dict(self):
        return {"kind": "flatten"}


@dataclass
class TrainingConfig:
    learning_rate: float = 0.001
    epochs: int = 500
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    momentum: float = 0.9
    l2: float = 0.0
    lr_decay: float = 1.0  # per-epoch multiplicative step-size decay
    loss_target: float | None = None  # stop early once training loss dips below

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")


class NeuralNet:
    """An ordered layer stack with weighted-MSE training.

    loss(pred, y) = mean_over_samples( sum_j w_j (pred_j - y_j)^2 ) where the
    per-output weights default to 1/n_out (plain MSE); group-averaged losses
    are expressed by passing per-column weights.
    """

    def __init__(self, layers, input_shape=None):
        self.layers = layers
        self.input_shape = input_shape  # e.g. (3, N, 1) for conv stacks

    def forward(self, x):
        x = np.asarray(x, float)
        if self.input_shape is not None and x.ndim == 2:
            x = x.reshape((x.shape[0],) + tuple(self.input_shape))
        for layer in self.layers:
            x = layer.forward(x)
        return x

    predict = forward

    def loss_and_grad(self, x, y, weights):
        pred = self.forward(x)
        err = pred - y
        loss = float(np.mean((err * err) @ weights))
        g = (2.0 / len(y)) * err * weights
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return loss, pred

    def train(self, x, y, cfg: TrainingConfig, loss_weights=None):
        """Gradient-descent training; returns the per-epoch loss curve."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        n_out = y.shape[1]
        w = (np.full(n_out, 1.0 / n_out) if loss_weights is None
             else np.asarray(loss_weights, float))
        rng = np.random.default_rng(cfg.seed)
        vel = {}
        history = []
        n = len(x)
        bs = cfg.batch_size or n
        for epoch in range(cfg.epochs):
            lr = cfg.learning_rate * cfg.lr_decay ** epoch
            order = rng.permutation(n) if bs < n else np.arange(n)
            epoch_loss = 0.0
            for s in range(0, n, bs):
                idx = order[s:s + bs]
                loss, _ = self.loss_and_grad(x[idx], y[idx], w)
                epoch_loss += loss * len(idx)
                for li, layer in enumerate(self.layers):
                    for name, p, g in layer.params():
                        if cfg.l2:
                            g = g + cfg.l2 * p
                        key = (li, name)
                        v = vel.get(key)
                        v = -lr * g if v is None else \
                            cfg.momentum * v - lr * g
                        vel[key] = v
                        p += v
            epoch_loss /= n
            if not np.isfinite(epoch_loss):
                raise TrainingDiverged(epoch)
            history.append(epoch_loss)
            if cfg.loss_target is not None and epoch_loss <= cfg.loss_target:
                break
        return history

    def evaluate_loss(self, x, y, loss_weights=None):
        y = np.asarray(y, float)
        n_out = y.shape[1]
        w = (np.full(n_out, 1.0 / n_out) if loss_weights is None
             else np.asarray(loss_weights, float))
        err = self.forward(x) - y
        return float(np.mean((err * err) @ w))

    # -- persistence ---------------------------------------------------

    def to_dict(self):
        return {"format_version": FORMAT_VERSION,
                "input_shape": list(self.input_shape) if self.input_shape else None,
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported weights format version")
        layers = []
        for ld in d["layers"]:
            if ld["kind"] == "dense":
                out_n, in_n = ld["shape"]
                layers.append(DenseLayer(np.array(ld["w"]).reshape(out_n, in_n),
                                         ld["b"], ld["activation"]))
            elif ld["kind"] == "conv":
                layers.append(ConvLayer(np.array(ld["w"]).reshape(ld["shape"]),
                                        ld["b"], ld["activation"]))
            elif ld["kind"] == "flatten":
                layers.append(Flatten())
            else:
                raise ValueError(f"unknown layer kind {ld['kind']!r}")
        shape = d.get("input_shape")
        return cls(layers, input_shape=tuple(shape) if shape else None)


def save_model(path, net: NeuralNet, scalers: dict[str, Scaler]) -> None:
    doc = net.to_dict()
    doc["scalers"] = {k: s.to_dict() for k, s in scalers.items()}
    Path(path).write_text(json.dumps(doc))


def load_model(path):
    doc = json.loads(Path(path).read_text())
    scalers = {k: Scaler.from_dict(v) for k, v in doc.get("scalers", {}).items()}
    return NeuralNet.from_dict(doc), scalers


def mlp(sizes, rng, hidden_activation="relu"):
    """Dense stack with identity head, e.g. mlp([35,1000,1000,1000,55], rng)."""
    layers = []
    for i in range(len(sizes) - 1):
        act = hidden_activation if i < len(sizes) - 2 else "identity"
        layers.append(DenseLayer.init(sizes[i], sizes[i + 1], rng, act))
    return NeuralNet(layers)
