"""Small dense-network engine: forward, backprop, Adam, and the rating autoencoder."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._npz import save_npz

log = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "tanh", "softmax")


class TrainingError(RuntimeError):
    pass


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("inconsistent layer shapes")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, activation: str, rng: np.random.Generator):
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
        bound = 1.0 / math.sqrt(in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        b = rng.uniform(-bound, bound, size=out_dim)
        return cls(w, b, activation)

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, activation: str = "identity"):
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim), activation)

    def pre_activation(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"input width {x.shape[-1]} != layer input {self.in_dim}")
        return x @ self.weights.T + self.bias

    def forward(self, x):
        z = self.pre_activation(x)
        if self.activation == "tanh":
            return np.tanh(z)
        if self.activation == "softmax":
            return _softmax(z)
        return z

    def backward(self, x, out, grad_out):
        """Gradients for a batch ``x`` -> ``out``; returns ``(dW, db, dx)``."""
        if self.activation == "tanh":
            dz = grad_out * (1.0 - out**2)
        elif self.activation == "softmax":
            dz = out * (grad_out - np.sum(grad_out * out, axis=-1, keepdims=True))
        else:
            dz = grad_out
        dW = dz.T @ x
        db = dz.sum(axis=0)
        dx = dz @ self.weights
        return dW, db, dx


def dense_forward(layer: DenseLayer, x):
    return layer.forward(x)


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


class Network:
    """A stack of dense layers trained on mean squared error."""

    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError("layer dimensions do not chain")

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def forward_cached(self, x):
        acts = [np.atleast_2d(np.asarray(x, dtype=float))]
        for layer in self.layers:
            acts.append(layer.forward(acts[-1]))
        return acts

    def backward(self, acts, grad_out):
        """Parameter gradients (flat list, W then b per layer) and input gradient."""
        grads = []
        for layer, x, out in zip(reversed(self.layers), reversed(acts[:-1]), reversed(acts[1:])):
            dW, db, grad_out = layer.backward(x, out, grad_out)
            grads = [dW, db] + grads
        return grads, grad_out

    def parameters(self):
        params = []
        for layer in self.layers:
            params += [layer.weights, layer.bias]
        return params

    def loss_and_grads(self, batch, targets, mask=None):
        acts = self.forward_cached(batch)
        pred = acts[-1]
        diff = pred - targets
        if mask is not None:
            diff = diff * mask
            denom = max(float(mask.sum()), 1.0)
        else:
            denom = diff.size
        loss = float(np.sum(diff**2) / denom)
        grads, _ = self.backward(acts, 2.0 * diff / denom)
        return loss, grads


NETWORK_FORMAT_VERSION = 1


def save_network(path, net: Network):
    """Versioned checkpoint: activations, shapes and the flat parameter arrays."""
    arrays = {
        "format_version": np.int64(NETWORK_FORMAT_VERSION),
        "activations": np.array([layer.activation for layer in net.layers]),
        "shapes": np.array([layer.weights.shape for layer in net.layers], dtype=np.int64),
    }
    for i, layer in enumerate(net.layers):
        arrays[f"w{i}"] = layer.weights
        arrays[f"b{i}"] = layer.bias
    return save_npz(path, **arrays)


def load_network(path, cls=None):
    with np.load(path) as f:
        if int(f["format_version"]) != NETWORK_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported network checkpoint version")
        layers = []
        for i, (act, shape) in enumerate(zip(f["activations"], f["shapes"])):
            w, b = f[f"w{i}"], f[f"b{i}"]
            if w.shape != tuple(shape):
                raise ValueError(f"{path}: layer {i} shape does not match header")
            layers.append(DenseLayer(w, b, str(act)))
    return (cls or Network)(layers)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_finite(grads):
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise FloatingPointError(f"non-finite gradient in parameter {i} ({bad} entries of shape {g.shape})")


def backward_and_step(model: Network, batch, targets, optimizer: Adam, mask=None) -> float:
    """One optimizer step on the batch MSE; returns the loss before the step."""
    loss, grads = model.loss_and_grads(batch, targets, mask)
    _check_finite(grads)
    optimizer.step(grads)
    return loss


# -- autoencoder -------------------------------------------------------------


@dataclass
class EncoderParams:
    layer1: DenseLayer
    layer2: DenseLayer

    @property
    def n(self) -> int:
        return self.layer2.out_dim

    def encode(self, x):
        return encode(self, x)


def encode(params: EncoderParams, user_vector):
    """Compress ratings of length M into a latent vector in (-1, 1)^n."""
    return params.layer2.forward(params.layer1.forward(user_vector))


def hidden_width(num_movies: int) -> int:
    return math.ceil(num_movies / 100)


class Autoencoder(Network):
    """M -> ceil(M/100) (linear) -> n (tanh) -> ceil(M/100) (tanh) -> M (linear)."""

    @classmethod
    def init(cls, num_movies: int, latent_dim: int, rng: np.random.Generator):
        h = hidden_width(num_movies)
        return cls([
            DenseLayer.init(num_movies, h, "identity", rng),
            DenseLayer.init(h, latent_dim, "tanh", rng),
            DenseLayer.init(latent_dim, h, "tanh", rng),
            DenseLayer.init(h, num_movies, "identity", rng),
        ])

    @property
    def encoder(self) -> EncoderParams:
        return EncoderParams(self.layers[0], self.layers[1])

    def reconstruction_mse(self, X, masked=False, chunk=1024):
        total, count = 0.0, 0
        for start in range(0, len(X), chunk):
            xb = X[start:start + chunk]
            diff = self.forward(xb) - xb
            if masked:
                m = xb > 0
                total += float(np.sum((diff * m) ** 2))
                count += int(m.sum())
            else:
                total += float(np.sum(diff**2))
                count += diff.size
        return total / max(count, 1)


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    test_loss: float | None = None

    def record(self, epoch, train_loss, val_loss, **extra):
        if self.epoch and epoch <= self.epoch[-1]:
            raise ValueError("epoch indices must increase")
        self.epoch.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        for key, value in extra.items():
            self.extra.setdefault(key, []).append(value)

    def to_csv(self, path):
        keys = list(self.extra)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"] + keys)
            for i, e in enumerate(self.epoch):
                row = [e, repr(self.train_loss[i]), repr(self.val_loss[i])]
                row += [repr(self.extra[k][i]) for k in keys]
                w.writerow(row)


@dataclass
class AutoencoderConfig:
    latent_dim: int = 8
    epochs: int = 35
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    batch_size: int = 64
    seed: int = 0
    masked: bool = False


def train_autoencoder(splits, epochs: int | None = None, config: AutoencoderConfig | None = None):
    """Fit the autoencoder on ``splits.train``; returns ``(model, history)``.

    Epoch 0 in the history is the untrained model.  The test-split
    reconstruction MSE ends up in ``history.test_loss``.
    """
    config = config or AutoencoderConfig()
    epochs = config.epochs if epochs is None else epochs
    rng = np.random.default_rng(config.seed)
    X_train = splits.train.values
    X_val = splits.validation.values
    model = Autoencoder.init(X_train.shape[1], config.latent_dim, rng)
    opt = Adam(model.parameters(), lr=config.lr, betas=config.betas)
    history = TrainHistory()
    history.record(0, model.reconstruction_mse(X_train, config.masked),
                   model.reconstruction_mse(X_val, config.masked))
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(X_train))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            xb = X_train[order[start:start + config.batch_size]]
            mask = (xb > 0).astype(float) if config.masked else None
            loss = backward_and_step(model, xb, xb, opt, mask)
            if not math.isfinite(loss):
                raise TrainingError(f"autoencoder loss diverged at epoch {epoch}")
            total += loss * len(xb)
            seen += len(xb)
        val = model.reconstruction_mse(X_val, config.masked)
        history.record(epoch, total / seen, val)
        log.info("autoencoder epoch %d train %.5f val %.5f", epoch, total / seen, val)
    history.test_loss = model.reconstruction_mse(splits.test.values, config.masked)
    return model, history
