"""
Gradients by parameter shift
============================

The controlled rotations need a four-term shift rule, the plain rotations
a two-term one.  Both agree with finite differences.
"""

import numpy as np

from qhamrec.qham import NeuronParams, parameter_gradients, qham_forward

rng = np.random.default_rng(1)
n, target = 4, 1
params = NeuronParams(rng.uniform(-np.pi, np.pi, (n, n)), rng.uniform(-np.pi, np.pi, n))
x = rng.uniform(-1, 1, n)
upstream = rng.normal(size=n)  # d(loss)/d<Z>


def loss():
    return float(qham_forward(x, target, params) @ upstream)


d_alpha, d_b = parameter_gradients(params, x, target, upstream)

h = 1e-5
for j in range(n):
    if j == target:
        continue
    params.alpha[target, j] += h
    up = loss()
    params.alpha[target, j] -= 2 * h
    down = loss()
    params.alpha[target, j] += h
    print(f"alpha[{target},{j}]  shift {d_alpha[j]:+.8f}   finite diff {(up - down) / (2 * h):+.8f}")

params.b[target] += h
up = loss()
params.b[target] -= 2 * h
down = loss()
params.b[target] += h
print(f"b[{target}]        shift {d_b:+.8f}   finite diff {(up - down) / (2 * h):+.8f}")
