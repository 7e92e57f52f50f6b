"""
Bit-flip and readout noise
==========================

Sample a fixed error profile for the neuron circuit and compare ideal and
noisy expectation values.  Both exact noisy routes give the same numbers.
"""

import time

import numpy as np

from qhamrec.hybrid import default_noise_spec
from qhamrec.qham import NeuronParams, hebbian_config, hebbian_weights, qham_forward

n = 8
rng = np.random.default_rng(0)
patterns = rng.choice([-1.0, 1.0], size=(4, n))
params = NeuronParams.from_hebbian(hebbian_config(hebbian_weights(patterns)))

# Six gate sites with flip probabilities in [0.001, 0.01] and six readout
# sites with confusion probabilities in [0.01, 0.07], drawn once per run.
spec = default_noise_spec(n, seed=0)
print("gate sites   :", [(i, round(p, 4)) for i, p in spec.gate_sites])
print("readout sites:", [(q, round(p, 4)) for q, p in spec.readout_sites])

latents = rng.uniform(-1, 1, (32, n))
ideal = qham_forward(latents, 3, params)

# The density route evolves rho; the branch route keeps the weighted pure
# states that make up the same mixture, which is much cheaper.
for method in ("density", "branches"):
    start = time.perf_counter()
    noisy = qham_forward(latents, 3, params, spec, method)
    secs = time.perf_counter() - start
    print(f"{method:9s}: mean |<Z> shift| = {np.abs(noisy - ideal).mean():.5f}  ({secs * 1e3:.1f} ms)")

# Readout confusion scales <Z> towards 0 by exactly (1 - 2p).
q, p = spec.readout_sites[0]
print(f"\nqubit {q}: (1 - 2p) = {1 - 2 * p:.4f}")
