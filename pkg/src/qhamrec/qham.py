"""Variational quantum Hopfield associative memory with a single-qubit update.

Data qubits ``0..n-1`` carry the encoded latent vector and qubit ``n`` is a
fresh ancilla.  One update rotates the ancilla under control of every
non-target data qubit, adds a bias rotation and swaps the ancilla into the
target slot.  The ancilla is never reset or reused.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import NoiseSpec, apply_noisy_circuit, apply_readout_sites, noisy_expectations
from .qsim import (
    CRY,
    RY,
    SWAP,
    StateVector,
    apply_circuit,
    apply_gate,
    encoding_ops,
    expectation_z_all,
)


class ConfigurationError(ValueError):
    pass


@dataclass
class HebbianConfig:
    W: np.ndarray
    gamma: float
    beta: np.ndarray

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def w_max(self) -> float:
        return float(np.max(np.abs(self.W)))


@dataclass
class NeuronParams:
    """Trainable rotation angles.

    ``alpha[i, j]`` is the controlled rotation from data qubit ``j`` onto the
    ancilla when ``i`` is the target; the diagonal is never used.  ``b[i]``
    is the bias rotation for target ``i``.
    """

    alpha: np.ndarray
    b: np.ndarray
    trainable: bool = True

    @property
    def n(self) -> int:
        return self.b.shape[0]

    @classmethod
    def from_hebbian(cls, cfg: HebbianConfig) -> "NeuronParams":
        # x_j = 2 s_j - 1, so a rotation of 4*gamma*w_ij on control |1> plus
        # the bias 2*beta_i leaves the ancilla at RY(2*phi), phi = gamma*theta + pi/4
        alpha = 4.0 * cfg.gamma * cfg.W
        np.fill_diagonal(alpha, 0.0)
        return cls(alpha=alpha, b=2.0 * cfg.beta.copy())

    def copy(self) -> "NeuronParams":
        return NeuronParams(self.alpha.copy(), self.b.copy(), self.trainable)


@dataclass
class LocalFieldReport:
    theta: float
    phi: float


def _as_pattern_array(patterns) -> np.ndarray:
    arr = getattr(patterns, "array", patterns)
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    if arr.size == 0:
        raise ValueError("need at least one pattern")
    if not np.all(np.abs(arr) == 1.0):
        raise ValueError("patterns must be polar (+1/-1)")
    return arr


def hebbian_weights(patterns) -> np.ndarray:
    """w_ij = (1/m) sum_mu eps_i^mu eps_j^mu over ``m`` stored polar patterns."""
    eps = _as_pattern_array(patterns)
    return eps.T @ eps / eps.shape[0]


def hebbian_config(W) -> HebbianConfig:
    """Normalise the local field so |gamma * theta| stays below pi/4.

    gamma = (pi/4) / (n * w_max) and beta_i = pi/4 - gamma * sum_{j != i} w_ij.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ConfigurationError("W must be square")
    if not np.allclose(W, W.T):
        raise ConfigurationError("W must be symmetric")
    n = W.shape[0]
    w_max = np.max(np.abs(W))
    if w_max == 0.0:
        raise ConfigurationError("all-zero weight matrix leaves gamma undefined")
    gamma = (np.pi / 4) / (n * w_max)
    off_diag_sums = W.sum(axis=1) - np.diag(W)
    beta = np.pi / 4 - gamma * off_diag_sums
    return HebbianConfig(W=W, gamma=float(gamma), beta=beta)


def local_field(cfg: HebbianConfig, x, target: int) -> LocalFieldReport:
    x = np.asarray(x, dtype=float)
    row = cfg.W[target].copy()
    row[target] = 0.0
    theta = float(row @ x)
    return LocalFieldReport(theta=theta, phi=cfg.gamma * theta + np.pi / 4)


def pick_target(rng: np.random.Generator, n: int, size=None):
    """Uniformly random neuron to update."""
    return rng.integers(0, n, size=size)


def _check_target(target, n):
    if not 0 <= target < n:
        raise ValueError(f"target {target} out of range for {n} neurons")


def build_neuron_circuit(target: int, params: NeuronParams) -> list:
    """CRY from every other data qubit onto the ancilla, RY bias, SWAP into target.

    The SWAP lists the target first so that a bit-flip attached to it lands
    on the updated neuron.
    """
    n = params.n
    _check_target(target, n)
    ancilla = n
    ops = [CRY(j, ancilla, params.alpha[target, j]) for j in range(n) if j != target]
    ops.append(RY(ancilla, params.b[target]))
    ops.append(SWAP(target, ancilla))
    return ops


def qham_circuit(latent, target: int, params: NeuronParams) -> list:
    """Input encoding followed by the neuron update, as one gate list."""
    return encoding_ops(latent) + build_neuron_circuit(target, params)


def circuit_length(n: int) -> int:
    return 2 * n + 1


NOISE_METHODS = ("branches", "density")


def _run(ops, n, batch, noise: NoiseSpec | None, noise_method: str = "branches"):
    state = StateVector.zeros(n + 1, batch, dtype=np.float64)
    data = list(range(n))
    if noise is None:
        return expectation_z_all(apply_circuit(state, ops), data)
    if noise_method == "branches":
        z = noisy_expectations(state, ops, noise, data)
    elif noise_method == "density":
        z = expectation_z_all(apply_noisy_circuit(state, ops, noise), data)
    else:
        raise ConfigurationError(f"unknown noise method {noise_method!r}")
    return apply_readout_sites(z, noise)


def qham_forward(latent, target: int, params: NeuronParams, noise: NoiseSpec | None = None,
                 noise_method: str = "branches"):
    """<Z> of the ``n`` data qubits after one update of ``target``.

    ``noise=None`` is the ideal statevector backend.  With a NoiseSpec the
    bit-flip and readout sites are applied exactly; ``noise_method`` picks
    between full density-matrix evolution and the equivalent (cheaper)
    weighted-branch evolution.  ``latent`` may be a single vector or a
    ``(batch, n)`` array sharing one target.
    """
    latent = np.asarray(latent, dtype=float)
    n = params.n
    if latent.shape[-1] != n:
        raise ConfigurationError(f"latent has {latent.shape[-1]} entries, memory has {n} neurons")
    batch = latent.shape[0] if latent.ndim == 2 else None
    return _run(qham_circuit(latent, target, params), n, batch, noise, noise_method)


def qham_state(latent, target: int, params: NeuronParams) -> StateVector:
    """Final ideal statevector on ``n + 1`` qubits (ancilla is qubit ``n``)."""
    latent = np.asarray(latent, dtype=float)
    batch = latent.shape[0] if latent.ndim == 2 else None
    state = StateVector.zeros(params.n + 1, batch)
    return apply_circuit(state, qham_circuit(latent, target, params))


def qham_forward_batch(latents, targets, params: NeuronParams, noise: NoiseSpec | None = None,
                       noise_method: str = "branches"):
    """Forward many samples, each with its own target, grouped by target."""
    latents = np.asarray(latents, dtype=float)
    targets = np.asarray(targets)
    out = np.empty_like(latents)
    for t in np.unique(targets):
        sel = targets == t
        out[sel] = qham_forward(latents[sel], int(t), params, noise, noise_method)
    return out


# -- gradients --------------------------------------------------------------

_CRY_C_PLUS = (np.sqrt(2) + 1) / (4 * np.sqrt(2))
_CRY_C_MINUS = (np.sqrt(2) - 1) / (4 * np.sqrt(2))

# (shift, coefficient) pairs: two-term rule for RY, four-term rule for CRY
_SHIFT_RULES = {
    "RY": ((np.pi / 2, 0.5), (-np.pi / 2, -0.5)),
    "CRY": (
        (np.pi / 2, _CRY_C_PLUS),
        (-np.pi / 2, -_CRY_C_PLUS),
        (3 * np.pi / 2, -_CRY_C_MINUS),
        (-3 * np.pi / 2, _CRY_C_MINUS),
    ),
}


def shift_derivatives(ops, gate_indices, n, batch):
    """d<Z_data>/d(angle) for each listed gate, by the parameter-shift rule.

    All shifted copies of the circuit run as one stacked batch.  Returns an
    array of shape ``(len(gate_indices), batch, n)`` (``batch`` may be None).
    """
    b = 1 if batch is None else batch
    shifts = [(g, d, c) for g in gate_indices for d, c in _SHIFT_RULES[ops[g].kind]]
    s = len(shifts)
    # gates before the first shifted one are shared by every copy
    first = min(gate_indices)
    prefix = apply_circuit(StateVector.zeros(n + 1, b, dtype=np.float64), ops[:first])
    state = StateVector(np.tile(prefix.amplitudes, (s, 1)), n + 1)
    for gi in range(first, len(ops)):
        op = ops[gi]
        if op.angle is not None:
            angles = np.broadcast_to(np.asarray(op.angle, dtype=float), (s, b)).copy()
            for row, (g, d, _) in enumerate(shifts):
                if g == gi:
                    angles[row] += d
            op = op.with_angle(angles.reshape(-1))
        state = apply_gate(state, op)
    z = expectation_z_all(state, range(n)).reshape(s, b, n)
    out = np.zeros((len(gate_indices), b, n))
    pos = {g: i for i, g in enumerate(gate_indices)}
    for row, (g, _, c) in enumerate(shifts):
        out[pos[g]] += c * z[row]
    return out if batch is not None else out[:, 0]


def parameter_gradients(params: NeuronParams, latent, target: int, upstream, input_grad: bool = False):
    """Gradient of a loss through the ideal circuit.

    ``upstream`` is d(loss)/d<Z> for the data qubits, shaped like the output
    of :func:`qham_forward`.  Returns ``(d_alpha_row, d_b)``: the gradient for
    ``alpha[target, :]`` (zero at the diagonal) and for ``b[target]``.  With a
    batched ``latent`` these are summed over the batch.  When ``input_grad``
    is set, d(loss)/d(latent) per sample is returned as a third element.
    """
    latent = np.asarray(latent, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if not np.all(np.isfinite(upstream)):
        raise FloatingPointError("non-finite upstream gradient")
    n = params.n
    batch = latent.shape[0] if latent.ndim == 2 else None
    ops = qham_circuit(latent, target, params)
    # gate layout: n encoding RYs, n-1 CRYs, bias RY, SWAP
    gates = list(range(n, 2 * n))
    if input_grad:
        gates += list(range(n))
    dz = shift_derivatives(ops, gates, n, batch)
    dloss = np.sum(dz * upstream, axis=-1)  # (gates, batch) or (gates,)
    per_gate = dloss.sum(axis=-1) if batch is not None else dloss
    d_alpha = np.zeros(n)
    controls = [j for j in range(n) if j != target]
    d_alpha[controls] = per_gate[: n - 1]
    d_b = float(per_gate[n - 1])
    if not input_grad:
        return d_alpha, d_b
    # encoding angle is x*pi/2 + pi/2
    d_x = np.moveaxis(dloss[n:], 0, -1) * (np.pi / 2)
    return d_alpha, d_b, d_x


def attractor_side(latent, target: int, params: NeuronParams) -> float:
    """P(1) of the updated neuron; above 0.5 means it leans towards +1."""
    z = qham_forward(latent, target, params)
    return (1.0 - z[..., target]) / 2.0
