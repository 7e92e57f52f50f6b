"""Exact small-register simulator: statevector (ideal) and density-matrix (noisy).

Qubit 0 is the least-significant bit of the amplitude index.  Every state
carries an optional leading batch axis so that many independent circuits
(one per user) can be pushed through the same gate sequence at once; gate
angles may then be scalars or per-sample arrays of shape ``(batch,)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

GATE_KINDS = ("RY", "CRY", "SWAP", "X")
ORACLE_MAX_QUBITS = 5


@dataclass(frozen=True, eq=False)
class GateOp:
    """One gate of a circuit.

    ``qubits`` is ``(target,)`` for RY and X, ``(control, target)`` for CRY
    and ``(a, b)`` for SWAP.  ``angle`` is a float or a per-sample array.
    """

    kind: str
    qubits: tuple
    angle: object = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        arity = 2 if self.kind in ("CRY", "SWAP") else 1
        if len(self.qubits) != arity:
            raise ValueError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != arity or min(self.qubits) < 0:
            raise ValueError(f"invalid qubit indices {self.qubits}")
        if self.kind in ("RY", "CRY"):
            if self.angle is None or not np.all(np.isfinite(self.angle)):
                raise ValueError(f"{self.kind} needs a finite angle")

    @property
    def noise_qubit(self) -> int:
        """Qubit hit by a bit-flip placed after this gate."""
        if self.kind == "CRY":
            return self.qubits[1]
        return self.qubits[0]

    def with_angle(self, angle) -> "GateOp":
        return GateOp(self.kind, self.qubits, angle)

    def __repr__(self):
        return f"GateOp({self.kind}, {self.qubits}, {self.angle})"


def RY(qubit, angle):
    return GateOp("RY", (qubit,), angle)


def CRY(control, target, angle):
    return GateOp("CRY", (control, target), angle)


def SWAP(a, b):
    return GateOp("SWAP", (a, b))


def X(qubit):
    return GateOp("X", (qubit,))


def circuit_to_text(ops: Sequence[GateOp]) -> str:
    """Dump a circuit as one ``kind targets angle`` line per gate."""
    lines = []
    for op in ops:
        targets = ",".join(str(q) for q in op.qubits)
        if op.angle is None:
            lines.append(f"{op.kind} {targets}")
        elif np.ndim(op.angle) == 0:
            lines.append(f"{op.kind} {targets} {float(op.angle):.12g}")
        else:
            lines.append(f"{op.kind} {targets} <batch of {np.size(op.angle)} angles>")
    return "\n".join(lines)


def _as_state_array(a) -> np.ndarray:
    # real storage is kept as is: every gate in the set is real
    a = np.asarray(a)
    if a.dtype not in (np.float64, np.complex128):
        a = a.astype(np.complex128)
    return a


class StateVector:
    """Pure state on ``num_qubits`` qubits, optionally batched.

    Amplitudes are complex128 by default; float64 storage is accepted and
    preserved, which halves the work for circuits built from real gates.
    """

    def __init__(self, amplitudes, num_qubits: int):
        amplitudes = _as_state_array(amplitudes)
        if amplitudes.shape[-1] != 2**num_qubits or amplitudes.ndim > 2:
            raise ValueError(f"amplitude shape {amplitudes.shape} does not fit {num_qubits} qubits")
        self.amplitudes = amplitudes
        self.num_qubits = num_qubits

    @classmethod
    def zeros(cls, num_qubits: int, batch: int | None = None, dtype=np.complex128) -> "StateVector":
        shape = (2**num_qubits,) if batch is None else (batch, 2**num_qubits)
        amps = np.zeros(shape, dtype=dtype)
        amps[..., 0] = 1.0
        return cls(amps, num_qubits)

    @property
    def batched(self) -> bool:
        return self.amplitudes.ndim == 2

    def norm(self):
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-1)

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(a[..., :, None] * a[..., None, :].conj(), self.num_qubits)


class DensityMatrix:
    """Mixed state ``rho`` of shape ``(2**q, 2**q)`` or ``(batch, 2**q, 2**q)``."""

    def __init__(self, rho, num_qubits: int):
        rho = _as_state_array(rho)
        dim = 2**num_qubits
        if rho.shape[-2:] != (dim, dim) or rho.ndim > 3:
            raise ValueError(f"rho shape {rho.shape} does not fit {num_qubits} qubits")
        self.rho = rho
        self.num_qubits = num_qubits

    @classmethod
    def zeros(cls, num_qubits: int, batch: int | None = None, dtype=np.complex128) -> "DensityMatrix":
        return StateVector.zeros(num_qubits, batch, dtype).to_density()

    @property
    def batched(self) -> bool:
        return self.rho.ndim == 3

    def trace(self):
        return np.real(np.trace(self.rho, axis1=-2, axis2=-1))


# -- kernels ----------------------------------------------------------------
# A state is viewed as an array (batch, P, 2**q, S): a statevector has P = S = 1,
# the row side of a density matrix has S = 2**q and the column side P = 2**q.
# The qubit index is split around the touched bits so every gate acts on
# strided views without moving axes.


def _ry_matrices(angle) -> np.ndarray:
    half = np.asarray(angle, dtype=float) / 2.0
    c, s = np.cos(half), np.sin(half)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


_X_MATRIX = np.array([[0.0, 1.0], [1.0, 0.0]])


def _bit_view(a, q, bits):
    """Reshape (B, P, 2**q, S) so each qubit in ``bits`` gets its own length-2 axis.

    Returns the view and the axis of each requested qubit.
    """
    b, p, _, s = a.shape
    shape = [b, p]
    axes = {}
    prev = q
    for bit in sorted(bits, reverse=True):
        shape += [2 ** (prev - 1 - bit), 2]
        axes[bit] = len(shape) - 1
        prev = bit
    shape += [2**prev, s]
    return a.reshape(shape), axes


def _kernel(a, q, op: GateOp, conj: bool):
    for qb in op.qubits:
        if qb >= q:
            raise ValueError(f"qubit {qb} out of range for {q}-qubit state")
    if op.kind == "SWAP":
        v, axes = _bit_view(a, q, op.qubits)
        return np.swapaxes(v, axes[op.qubits[0]], axes[op.qubits[1]]).reshape(a.shape)
    if op.kind == "X":
        mats = _X_MATRIX[None]
    else:
        mats = _ry_matrices(op.angle)
        if mats.ndim == 2:
            mats = mats[None]
        elif mats.shape[0] != a.shape[0]:
            raise ValueError("per-sample angles do not match the batch size")
    if conj:
        mats = mats.conj()
    target = op.qubits[-1]
    v, axes = _bit_view(a, q, op.qubits)
    out = v.astype(np.result_type(v, mats), copy=True)

    def sel(tval):
        idx = [slice(None)] * v.ndim
        idx[axes[target]] = tval
        if op.kind == "CRY":
            idx[axes[op.qubits[0]]] = 1
        return tuple(idx)

    x0, x1 = v[sel(0)], v[sel(1)]
    m = mats.reshape(mats.shape[:1] + (1,) * (x0.ndim - 1) + (2, 2))
    out[sel(0)] = m[..., 0, 0] * x0 + m[..., 0, 1] * x1
    out[sel(1)] = m[..., 1, 0] * x0 + m[..., 1, 1] * x1
    return out.reshape(a.shape)


def apply_gate(state, op: GateOp):
    """Apply ``op`` to a StateVector or DensityMatrix and return a new state."""
    q = state.num_qubits
    dim = 2**q
    if isinstance(state, StateVector):
        amps = state.amplitudes if state.batched else state.amplitudes[None]
        out = _kernel(amps.reshape(len(amps), 1, dim, 1), q, op, conj=False).reshape(amps.shape)
        return StateVector(out if state.batched else out[0], q)
    if isinstance(state, DensityMatrix):
        rho = state.rho if state.batched else state.rho[None]
        b = len(rho)
        rho = _kernel(rho.reshape(b, 1, dim, dim), q, op, conj=False)
        rho = _kernel(rho.reshape(b, dim, dim, 1), q, op, conj=True).reshape(b, dim, dim)
        return DensityMatrix(rho if state.batched else rho[0], q)
    raise TypeError(f"cannot apply a gate to {type(state).__name__}")


def apply_circuit(state, ops: Sequence[GateOp]):
    for op in ops:
        state = apply_gate(state, op)
    return state


# -- measurement ------------------------------------------------------------


def _diagonal_probs(state) -> np.ndarray:
    if isinstance(state, StateVector):
        return np.abs(state.amplitudes) ** 2
    return np.real(np.diagonal(state.rho, axis1=-2, axis2=-1))


def prob_one(state, qubit: int):
    """Probability of reading 1 on ``qubit`` (per batch entry if batched)."""
    if not 0 <= qubit < state.num_qubits:
        raise ValueError(f"qubit {qubit} out of range")
    probs = _diagonal_probs(state)
    bit = (np.arange(2**state.num_qubits) >> qubit) & 1
    return probs[..., bit == 1].sum(axis=-1)


def expectation_z(state, qubit: int):
    """Exact <Z> on ``qubit``: +1 for |0>, -1 for |1>."""
    return 1.0 - 2.0 * prob_one(state, qubit)


def expectation_z_all(state, qubits: Sequence[int]) -> np.ndarray:
    """<Z> for several qubits, stacked on the last axis."""
    probs = _diagonal_probs(state)
    idx = np.arange(2**state.num_qubits)
    signs = np.stack([1 - 2 * ((idx >> q) & 1) for q in qubits], axis=-1).astype(float)
    return probs @ signs


def sample_expectation_z(state, qubit: int, shots: int, rng: np.random.Generator):
    """Finite-shot estimate of <Z>; only used when shot sampling is switched on."""
    p1 = np.clip(prob_one(state, qubit), 0.0, 1.0)
    ones = rng.binomial(shots, p1)
    return 1.0 - 2.0 * ones / shots


# -- input encoding ---------------------------------------------------------


def encoding_angles(x) -> np.ndarray:
    """RY angle that writes a value in [-1, 1] onto a qubit from |0>."""
    x = np.asarray(x, dtype=float)
    return 2.0 * (x * np.pi / 4 + np.pi / 4)


def encoding_ops(x) -> list:
    """Per-qubit RY gates preparing the product encoding of ``x``.

    ``x`` has shape ``(n,)`` or ``(batch, n)``; data qubit ``i`` holds ``x[..., i]``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0) or not np.all(np.isfinite(x)):
        raise ValueError("encoded values must lie in [-1, 1]")
    angles = encoding_angles(x)
    return [RY(i, angles[..., i]) for i in range(x.shape[-1])]


def prepare_input(x, ancilla_count: int = 1) -> StateVector:
    """Encode ``x`` so that qubit i is cos(a)|0> + sin(a)|1>, a = x_i*pi/4 + pi/4.

    Ancillas sit above the data qubits and start in |0>.
    """
    x = np.asarray(x, dtype=float)
    ops = encoding_ops(x)
    n = x.shape[-1]
    batch = x.shape[0] if x.ndim == 2 else None
    return apply_circuit(StateVector.zeros(n + ancilla_count, batch), ops)


# -- general state preparation (test oracle) --------------------------------


def mottonen_angles(amplitudes) -> list:
    """Uniformly-controlled RY angles preparing a real amplitude vector.

    Returns one array per qubit, most significant first; level ``k`` holds
    ``2**k`` angles indexed by the values of the ``k`` more significant qubits.
    """
    a = np.asarray(amplitudes, dtype=float)
    q = int(np.log2(a.size))
    if 2**q != a.size:
        raise ValueError("amplitude count must be a power of two")
    if not np.isclose(np.sum(a**2), 1.0, atol=1e-10):
        raise ValueError("amplitudes must be normalised")
    # subtree norms above the leaves; the leaf level keeps signs via arctan2
    levels = []
    for k in range(q):
        blocks = a.reshape(2**k, 2, -1)
        if k == q - 1:
            zero, one = blocks[:, 0, 0], blocks[:, 1, 0]
        else:
            zero = np.linalg.norm(blocks[:, 0, :], axis=-1)
            one = np.linalg.norm(blocks[:, 1, :], axis=-1)
        levels.append(2.0 * np.arctan2(one, zero))
    return levels


def mottonen_prepare(amplitudes) -> StateVector:
    """Rebuild a real state from its uniformly-controlled rotation tree."""
    levels = mottonen_angles(amplitudes)
    q = len(levels)
    state = np.ones(1)
    for k, angles in enumerate(levels):
        c, s = np.cos(angles / 2), np.sin(angles / 2)
        state = np.stack([state * c, state * s], axis=-1).reshape(-1)
    return StateVector(state, q)


# -- dense unitary oracle ---------------------------------------------------

_I2 = np.eye(2, dtype=np.complex128)
_P0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
_P1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)


def _embed(factors: dict, num_qubits: int) -> np.ndarray:
    out = np.ones((1, 1), dtype=np.complex128)
    for q in reversed(range(num_qubits)):
        out = np.kron(out, factors.get(q, _I2))
    return out


def circuit_unitary_oracle(ops: Sequence[GateOp], num_qubits: int) -> np.ndarray:
    """Full 2**q x 2**q unitary of ``ops`` built from explicit Kronecker products."""
    if num_qubits > ORACLE_MAX_QUBITS:
        raise ValueError(f"oracle refuses more than {ORACLE_MAX_QUBITS} qubits")
    dim = 2**num_qubits
    u = np.eye(dim, dtype=np.complex128)
    for op in ops:
        if np.ndim(op.angle) > 0:
            raise ValueError("oracle needs scalar angles")
        if max(op.qubits) >= num_qubits:
            raise ValueError(f"qubit out of range in {op}")
        if op.kind == "RY":
            g = _embed({op.qubits[0]: _ry_matrices(op.angle)}, num_qubits)
        elif op.kind == "X":
            g = _embed({op.qubits[0]: _X_MATRIX}, num_qubits)
        elif op.kind == "CRY":
            c, t = op.qubits
            g = _embed({c: _P0}, num_qubits) + _embed({c: _P1, t: _ry_matrices(op.angle)}, num_qubits)
        else:
            a, b = op.qubits
            g = np.zeros((dim, dim), dtype=np.complex128)
            for i in range(2):
                for j in range(2):
                    ket_bra_a = np.zeros((2, 2), dtype=np.complex128)
                    ket_bra_a[i, j] = 1
                    g += _embed({a: ket_bra_a, b: ket_bra_a.T}, num_qubits)
        u = g @ u
    return u


# -- channels ---------------------------------------------------------------


def apply_bitflip(state: DensityMatrix, qubit: int, p: float) -> DensityMatrix:
    """rho -> (1 - p) rho + p X rho X on ``qubit``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"bit-flip probability {p} outside [0, 1]")
    if p == 0.0:
        return state
    flipped = apply_gate(state, X(qubit))
    return DensityMatrix((1.0 - p) * state.rho + p * flipped.rho, state.num_qubits)


def apply_readout_error(probs, p01: float, p10: float) -> np.ndarray:
    """Confuse a single-qubit outcome distribution ``(P0, P1)``.

    ``p01`` is the chance a 0 is read as 1, ``p10`` the chance a 1 is read as 0.
    """
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] != 2 or np.any(probs < -1e-12) or not np.allclose(probs.sum(-1), 1.0, atol=1e-9):
        raise ValueError("probs must be a distribution over {0, 1}")
    for p in (p01, p10):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"readout probability {p} outside [0, 1]")
    p0 = (1.0 - p01) * probs[..., 0] + p10 * probs[..., 1]
    p1 = (1.0 - p10) * probs[..., 1] + p01 * probs[..., 0]
    return np.stack([p0, p1], axis=-1)
