"""
One quantum neuron update
=========================

Store a single polar pattern, corrupt one bit and watch one update push
the corrupted qubit back towards the stored value.
"""

import numpy as np

from qhamrec.qham import NeuronParams, attractor_side, hebbian_config, hebbian_weights, qham_circuit
from qhamrec.qsim import circuit_to_text, prepare_input, prob_one

# Each data qubit starts in RY(x*pi/2 + pi/2)|0>, so x = -1, 0, +1 read as
# a certain 0, a coin flip and a certain 1.
for x in (-1.0, -0.5, 0.0, 0.5, 1.0):
    print(f"x = {x:+.1f}  ->  P(1) = {prob_one(prepare_input([x], 0), 0):.4f}")

# Hebbian weights for one stored pattern, scaled so every rotation stays in range.
pattern = np.array([1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
cfg = hebbian_config(hebbian_weights(pattern[None]))
params = NeuronParams.from_hebbian(cfg)
print("\ngamma =", round(cfg.gamma, 4), " beta =", np.round(cfg.beta, 4))

# The circuit for updating neuron 2: controlled rotations onto the ancilla,
# a bias rotation, then a SWAP of the ancilla into slot 2.
corrupted = pattern.copy()
corrupted[2] = -1.0
print()
print(circuit_to_text(qham_circuit(corrupted, 2, params)))

# P(1) of the updated qubit lands above 0.5: the stored +1 is being restored.
print("\nP(1) of neuron 2 after one update:", round(float(attractor_side(corrupted, 2, params)), 4))
for i in range(len(pattern)):
    side = attractor_side(pattern, i, params)
    print(f"stored bit {pattern[i]:+.0f} at neuron {i}: P(1) = {side:.3f}")
