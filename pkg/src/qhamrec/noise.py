"""Bit-flip and readout noise attached to randomly chosen circuit sites."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .qsim import (
    DensityMatrix,
    GateOp,
    StateVector,
    apply_bitflip,
    apply_gate,
)

GATE_SITES = 6
READOUT_SITES = 6
GATE_FLIP_RANGE = (0.001, 0.01)
READOUT_RANGE = (0.01, 0.07)


class NoiseBindingError(ValueError):
    """A NoiseSpec refers to a gate the circuit does not have."""


@dataclass(frozen=True)
class NoiseSpec:
    """Fixed error profile: bit-flips after some gates, confusion on some readouts.

    ``gate_sites`` holds ``(gate index, flip probability)`` pairs and
    ``readout_sites`` holds ``(measured qubit, error probability)`` pairs.
    """

    gate_sites: tuple = ()
    readout_sites: tuple = ()
    seed: int | None = None
    circuit_len: int | None = field(default=None, compare=False)

    def __post_init__(self):
        for idx, p in self.gate_sites:
            if idx < 0 or not 0.0 <= p <= 1.0:
                raise ValueError(f"invalid gate site ({idx}, {p})")
        for q, p in self.readout_sites:
            if q < 0 or not 0.0 <= p <= 1.0:
                raise ValueError(f"invalid readout site ({q}, {p})")

    @classmethod
    def empty(cls) -> "NoiseSpec":
        return cls()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "circuit_len": self.circuit_len,
            "gate_sites": [[int(i), float(p)] for i, p in self.gate_sites],
            "readout_sites": [[int(q), float(p)] for q, p in self.readout_sites],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(
            gate_sites=tuple((int(i), float(p)) for i, p in d.get("gate_sites", [])),
            readout_sites=tuple((int(q), float(p)) for q, p in d.get("readout_sites", [])),
            seed=d.get("seed"),
            circuit_len=d.get("circuit_len"),
        )


def sample_noise_spec(
    circuit_len: int,
    n_measurements: int,
    seed: int,
    gate_sites: int = GATE_SITES,
    readout_sites: int = READOUT_SITES,
    gate_range: tuple = GATE_FLIP_RANGE,
    readout_range: tuple = READOUT_RANGE,
) -> NoiseSpec:
    """Draw distinct gate and readout sites with uniform probabilities in range."""
    if circuit_len < 1:
        raise ValueError("circuit_len must be at least 1")
    rng = np.random.default_rng(seed)
    n_gates = min(gate_sites, circuit_len)
    gates = np.sort(rng.choice(circuit_len, size=n_gates, replace=False))
    gate_p = rng.uniform(*gate_range, size=n_gates)
    n_read = min(readout_sites, n_measurements)
    reads = np.sort(rng.choice(n_measurements, size=n_read, replace=False)) if n_read else []
    read_p = rng.uniform(*readout_range, size=n_read)
    return NoiseSpec(
        gate_sites=tuple((int(i), float(p)) for i, p in zip(gates, gate_p)),
        readout_sites=tuple((int(q), float(p)) for q, p in zip(reads, read_p)),
        seed=seed,
        circuit_len=circuit_len,
    )


def apply_noisy_circuit(state, ops: Sequence[GateOp], spec: NoiseSpec) -> DensityMatrix:
    """Evolve through ``ops`` with a bit-flip after every noisy gate site.

    A pure StateVector input is evolved as a statevector until the first
    noisy gate and only then lifted to a density matrix; the result is the
    same as starting from |psi><psi| but far cheaper.
    """
    flips = dict(spec.gate_sites)
    if flips and max(flips) >= len(ops):
        raise NoiseBindingError(
            f"noise site {max(flips)} is beyond a circuit of {len(ops)} gates"
        )
    for i, op in enumerate(ops):
        state = apply_gate(state, op)
        if i in flips:
            if isinstance(state, StateVector):
                state = state.to_density()
            state = apply_bitflip(state, op.noise_qubit, flips[i])
    if isinstance(state, StateVector):
        state = state.to_density()
    return state


def noisy_expectations(state: StateVector, ops: Sequence[GateOp], spec: NoiseSpec, qubits) -> np.ndarray:
    """Exact <Z> after the noisy circuit, without forming the density matrix.

    The state is carried as a weighted mixture of pure branches; each
    bit-flip site doubles the branches (weight 1-p unflipped, p flipped).
    The mixture is the same density matrix :func:`apply_noisy_circuit`
    produces, so the diagonal and hence every <Z> agree exactly.
    """
    flips = dict(spec.gate_sites)
    if flips and max(flips) >= len(ops):
        raise NoiseBindingError(
            f"noise site {max(flips)} is beyond a circuit of {len(ops)} gates"
        )
    q = state.num_qubits
    single = not state.batched
    amps = state.amplitudes[None] if single else state.amplitudes
    batch = len(amps)
    weights = np.ones(1)
    branches = StateVector(amps, q)  # (branches * batch, 2**q), branch-major
    for i, op in enumerate(ops):
        if np.ndim(op.angle) > 0:
            op = op.with_angle(np.tile(op.angle, len(weights)))
        branches = apply_gate(branches, op)
        if i in flips:
            p = flips[i]
            flipped = apply_gate(branches, GateOp("X", (op.noise_qubit,)))
            branches = StateVector(np.concatenate([branches.amplitudes, flipped.amplitudes]), q)
            weights = np.concatenate([weights * (1.0 - p), weights * p])
    probs = (np.abs(branches.amplitudes) ** 2).reshape(len(weights), batch, -1)
    diag = np.tensordot(weights, probs, axes=1)
    idx = np.arange(2**q)
    signs = np.stack([1 - 2 * ((idx >> k) & 1) for k in qubits], axis=-1).astype(float)
    z = diag @ signs
    return z[0] if single else z


def apply_readout_sites(z_values, spec: NoiseSpec) -> np.ndarray:
    """Symmetric readout confusion on the listed qubits of a ``<Z>`` vector.

    With p01 = p10 = p the readout maps <Z> to (1 - 2p) <Z>.
    """
    z = np.array(z_values, dtype=float, copy=True)
    for q, p in spec.readout_sites:
        if q >= z.shape[-1]:
            raise NoiseBindingError(f"readout site {q} beyond {z.shape[-1]} measured qubits")
        # P(0) - P(1) after confusion, written so p = 0 is exact
        z[..., q] = (1.0 - 2.0 * p) * z[..., q]
    return z
