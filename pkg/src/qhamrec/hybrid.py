"""Encoder -> QHAM -> softmax head, trained with MSE against one-hot archetype labels."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._npz import save_npz
from .archetypes import PatternSet
from .metrics import MetricsReport, metrics_report, one_hot
from .nn import Adam, DenseLayer, EncoderParams, Network, TrainHistory, TrainingError
from .noise import NoiseSpec, sample_noise_spec
from .qham import (
    ConfigurationError,
    HebbianConfig,
    NeuronParams,
    circuit_length,
    hebbian_config,
    hebbian_weights,
    parameter_gradients,
    pick_target,
    qham_forward_batch,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class HybridModel:
    encoder: EncoderParams
    hebbian: HebbianConfig
    patterns: PatternSet
    neuron: NeuronParams
    head: DenseLayer
    fine_tune_encoder: bool = False

    def __post_init__(self):
        n = self.encoder.n
        if self.neuron.n != n or self.hebbian.n != n or self.patterns.n != n:
            raise ConfigurationError("encoder latent size must equal the number of neurons")
        if self.head.in_dim != n or self.head.activation != "softmax":
            raise ConfigurationError("head must be a softmax layer reading the n neurons")

    @property
    def n(self) -> int:
        return self.encoder.n

    @property
    def k(self) -> int:
        return self.head.out_dim

    @classmethod
    def build(cls, encoder: EncoderParams, patterns: PatternSet, k: int | None = None, seed: int = 0):
        """Hebbian-initialised memory for ``patterns`` and a fresh head."""
        k = patterns.m if k is None else k
        cfg = hebbian_config(hebbian_weights(patterns))
        head = DenseLayer.init(encoder.n, k, "softmax", np.random.default_rng(seed))
        return cls(encoder, cfg, patterns, NeuronParams.from_hebbian(cfg), head)

    def encoder_network(self) -> Network:
        return Network([self.encoder.layer1, self.encoder.layer2])

    def latents(self, X):
        return self.encoder_network().forward(X)

    def copy(self) -> "HybridModel":
        def dup(layer):
            return DenseLayer(layer.weights.copy(), layer.bias.copy(), layer.activation)

        return HybridModel(
            EncoderParams(dup(self.encoder.layer1), dup(self.encoder.layer2)),
            self.hebbian,
            self.patterns,
            self.neuron.copy(),
            dup(self.head),
            self.fine_tune_encoder,
        )

    # -- checkpoint ---------------------------------------------------------

    def save(self, path, seeds: dict | None = None, noise: NoiseSpec | None = None):
        save_npz(
            path,
            format_version=np.int64(CHECKPOINT_VERSION),
            n=np.int64(self.n),
            k=np.int64(self.k),
            enc_w1=self.encoder.layer1.weights, enc_b1=self.encoder.layer1.bias,
            enc_w2=self.encoder.layer2.weights, enc_b2=self.encoder.layer2.bias,
            patterns=self.patterns.array,
            W=self.hebbian.W, gamma=np.float64(self.hebbian.gamma), beta=self.hebbian.beta,
            alpha=self.neuron.alpha, b=self.neuron.b,
            head_w=self.head.weights, head_b=self.head.bias,
            fine_tune_encoder=np.bool_(self.fine_tune_encoder),
            meta=np.array(json.dumps({
                "seeds": seeds or {},
                "noise": noise.to_dict() if noise else None,
            }, sort_keys=True)),
        )

    @classmethod
    def load(cls, path) -> tuple:
        """Returns ``(model, meta)`` where meta holds the recorded seeds and noise spec."""
        with np.load(path) as f:
            if int(f["format_version"]) != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: unsupported checkpoint version")
            enc = EncoderParams(
                DenseLayer(f["enc_w1"], f["enc_b1"], "identity"),
                DenseLayer(f["enc_w2"], f["enc_b2"], "tanh"),
            )
            model = cls(
                enc,
                HebbianConfig(f["W"], float(f["gamma"]), f["beta"]),
                PatternSet.from_array(f["patterns"]),
                NeuronParams(f["alpha"], f["b"]),
                DenseLayer(f["head_w"], f["head_b"], "softmax"),
                bool(f["fine_tune_encoder"]),
            )
            meta = json.loads(str(f["meta"]))
        return model, meta


def forward(model: HybridModel, user_vector, target, noise: NoiseSpec | None = None):
    """Class probabilities for one user (or a batch with per-row targets)."""
    x = np.asarray(user_vector, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.encoder.layer1.in_dim:
        raise ConfigurationError(f"user vector has {X.shape[1]} movies, encoder expects {model.encoder.layer1.in_dim}")
    targets = np.broadcast_to(np.asarray(target), (len(X),))
    probs = forward_latents(model, model.latents(X), targets, noise)
    return probs[0] if single else probs


def forward_latents(model: HybridModel, latents, targets, noise: NoiseSpec | None = None):
    z = qham_forward_batch(latents, targets, model.neuron, noise)
    return model.head.forward(z)


def default_noise_spec(n: int, seed: int) -> NoiseSpec:
    return sample_noise_spec(circuit_length(n), n, seed)


@dataclass
class HybridConfig:
    epochs: int = 35
    lr: float = 0.01
    betas: tuple = (0.9, 0.999)
    batch_size: int = 64
    seed: int = 0
    target_seed: int = 1
    eval_seed: int = 2
    fine_tune_encoder: bool = False
    encoder_lr: float = 1e-4
    validate: bool = True


@dataclass
class HybridHistory(TrainHistory):
    reports: list = field(default_factory=list)


def eval_targets(num: int, n: int, seed: int) -> np.ndarray:
    """Fixed per-sample target qubits for evaluation."""
    return pick_target(np.random.default_rng(seed), n, size=num)


def evaluate(model: HybridModel, X, labels, noise: NoiseSpec | None = None, seed: int = 2,
             environment: str | None = None, chunk: int = 256) -> MetricsReport:
    X = np.asarray(getattr(X, "values", X), dtype=float)
    labels = np.asarray(labels)
    targets = eval_targets(len(X), model.n, seed)
    latents = model.latents(X)
    probs = np.concatenate([
        forward_latents(model, latents[s:s + chunk], targets[s:s + chunk], noise)
        for s in range(0, len(X), chunk)
    ]) if len(X) else np.zeros((0, model.k))
    env = environment or ("ideal" if noise is None else "noisy")
    return metrics_report(probs, labels, model.k, env)


def _batch_step(model, latents, y, targets, noise, opt, enc_opt, enc_acts):
    z = qham_forward_batch(latents, targets, model.neuron, noise)
    probs = model.head.forward(z)
    diff = probs - y
    loss = float(np.mean(diff**2))
    d_probs = 2.0 * diff / diff.size
    d_head_w, d_head_b, d_z = model.head.backward(z, probs, d_probs)
    d_alpha = np.zeros_like(model.neuron.alpha)
    d_b = np.zeros_like(model.neuron.b)
    d_latent = np.zeros_like(latents) if model.fine_tune_encoder else None
    for t in np.unique(targets):
        sel = targets == t
        out = parameter_gradients(model.neuron, latents[sel], int(t), d_z[sel], input_grad=model.fine_tune_encoder)
        d_alpha[t] += out[0]
        d_b[t] += out[1]
        if model.fine_tune_encoder:
            d_latent[sel] = out[2]
    grads = [d_alpha, d_b, d_head_w, d_head_b]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in hybrid training")
    opt.step(grads)
    if model.fine_tune_encoder:
        enc_grads, _ = model.encoder_network().backward(enc_acts, d_latent)
        enc_opt.step(enc_grads)
    return loss


def train_hybrid(model: HybridModel, splits, labels, epochs: int | None = None,
                 noise: NoiseSpec | None = None, config: HybridConfig | None = None):
    """Train QHAM angles and head (plus the encoder when fine-tuning).

    ``labels`` maps user id -> archetype index.  Forward passes go through
    ``noise`` when given; circuit gradients always come from the ideal
    simulator.  Returns ``(model, history)``; the model is updated in place.
    """
    config = config or HybridConfig()
    epochs = config.epochs if epochs is None else epochs
    model.fine_tune_encoder = config.fine_tune_encoder
    k, n = model.k, model.n
    X_train = splits.train.values
    y_train = one_hot(labels_for(splits.train, labels), k)
    y_val_idx = labels_for(splits.validation, labels)
    shuffle_rng = np.random.default_rng(config.seed)
    target_rng = np.random.default_rng(config.target_seed)
    trainables = [model.neuron.alpha, model.neuron.b, model.head.weights, model.head.bias]
    opt = Adam(trainables, lr=config.lr, betas=config.betas)
    enc_opt = Adam(model.encoder_network().parameters(), lr=config.encoder_lr, betas=config.betas) \
        if config.fine_tune_encoder else None
    env = "ideal" if noise is None else "noisy"
    history = HybridHistory()

    def validation_report():
        if not config.validate or splits.validation.num_users == 0:
            return None
        return evaluate(model, splits.validation.values, y_val_idx, noise, config.eval_seed, env)

    def record(epoch, train_loss):
        rep = validation_report()
        if rep is None:
            history.record(epoch, train_loss, float("nan"), accuracy=float("nan"), f1=float("nan"),
                           roc_auc=float("nan"))
        else:
            history.record(epoch, train_loss, rep.mse, accuracy=rep.accuracy, f1=rep.f1, roc_auc=rep.roc_auc)
        history.reports.append(rep)

    frozen_latents = None if config.fine_tune_encoder else model.latents(X_train)
    init_targets = eval_targets(len(X_train), n, config.eval_seed)
    lat0 = frozen_latents if frozen_latents is not None else model.latents(X_train)
    record(0, float(np.mean((forward_latents(model, lat0, init_targets, noise) - y_train) ** 2)))

    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(X_train))
        targets_all = pick_target(target_rng, n, size=len(X_train))
        total, seen = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            last_good = model.copy()
            enc_acts = None
            if frozen_latents is not None:
                latents = frozen_latents[idx]
            else:
                enc_acts = model.encoder_network().forward_cached(X_train[idx])
                latents = enc_acts[-1]
            try:
                loss = _batch_step(model, latents, y_train[idx], targets_all[start:start + len(idx)],
                                   noise, opt, enc_opt, enc_acts)
            except FloatingPointError as exc:
                raise HybridTrainingError(str(exc), last_good) from exc
            if not math.isfinite(loss):
                raise HybridTrainingError(f"loss diverged at epoch {epoch}", last_good)
            total += loss * len(idx)
            seen += len(idx)
        record(epoch, total / seen)
        log.info("hybrid epoch %d loss %.5f val acc %s", epoch, total / seen, history.extra["accuracy"][-1])
    return model, history


class HybridTrainingError(TrainingError):
    def __init__(self, message, last_good: HybridModel):
        super().__init__(message)
        self.last_good = last_good


def labels_for(matrix, labels) -> np.ndarray:
    """Archetype labels for the rows of ``matrix`` from a user id -> label mapping."""
    if isinstance(labels, dict):
        return np.array([labels[int(u)] for u in matrix.user_ids], dtype=int)
    return np.asarray(labels, dtype=int)
