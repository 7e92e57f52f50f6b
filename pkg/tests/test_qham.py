import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from qhamrec.noise import NoiseSpec, sample_noise_spec
from qhamrec.qham import (
    ConfigurationError,
    NeuronParams,
    attractor_side,
    build_neuron_circuit,
    circuit_length,
    hebbian_config,
    hebbian_weights,
    local_field,
    parameter_gradients,
    pick_target,
    qham_circuit,
    qham_forward,
    qham_forward_batch,
    qham_state,
)
from qhamrec.qsim import StateVector, circuit_unitary_oracle


def hebbian_params(patterns):
    cfg = hebbian_config(hebbian_weights(patterns))
    return cfg, NeuronParams.from_hebbian(cfg)


def random_params(rng, n):
    return NeuronParams(rng.uniform(-np.pi, np.pi, (n, n)), rng.uniform(-np.pi, np.pi, n))


def z_from_amplitudes(amps, n):
    probs = np.abs(amps) ** 2
    idx = np.arange(len(probs))
    return np.array([probs[((idx >> q) & 1) == 0].sum() - probs[((idx >> q) & 1) == 1].sum() for q in range(n)])


class TestHebbian:
    def test_single_pattern(self):
        W = hebbian_weights([[1, -1]])
        assert W[0, 1] == -1 and W[0, 0] == 1 and W[1, 1] == 1

    def test_two_patterns_cancel(self):
        assert hebbian_weights([[1, 1], [1, -1]])[0, 1] == 0

    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        eps = rng.choice([-1.0, 1.0], size=(4, 8))
        W = hebbian_weights(eps)
        for i in range(8):
            for j in range(8):
                assert W[i, j] == sum(eps[mu, i] * eps[mu, j] for mu in range(4)) / 4

    def test_rejects_empty_and_non_polar(self):
        with pytest.raises(ValueError):
            hebbian_weights(np.zeros((0, 3)))
        with pytest.raises(ValueError):
            hebbian_weights([[1, 0.5]])

    @given(st.integers(1, 6), st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_symmetric_bounded(self, m, n, seed):
        eps = np.random.default_rng(seed).choice([-1.0, 1.0], size=(m, n))
        W = hebbian_weights(eps)
        assert np.array_equal(W, W.T)
        assert np.all(np.abs(W) <= 1)


class TestConfig:
    def test_zero_row_sums(self):
        # every off-diagonal row sums to zero
        W = np.array([[1.0, 1, -1, 0], [1, 1.0, 0, -1], [-1, 0, 1.0, 1], [0, -1, 1, 1.0]])
        np.testing.assert_allclose(hebbian_config(W).beta, np.pi / 4)

    def test_gamma_two_neurons(self):
        cfg = hebbian_config(hebbian_weights([[1, -1]]))
        assert cfg.w_max == 1
        assert cfg.gamma == pytest.approx(np.pi / 8)

    def test_all_zero_rejected(self):
        with pytest.raises(ConfigurationError):
            hebbian_config(np.zeros((3, 3)))

    def test_asymmetric_rejected(self):
        with pytest.raises(ConfigurationError):
            hebbian_config(np.array([[1.0, 0.2], [0.1, 1.0]]))

    @pytest.mark.parametrize("n", range(2, 9))
    def test_phi_bound_exhaustive(self, n):
        rng = np.random.default_rng(n)
        cfg, params = hebbian_params(rng.choice([-1.0, 1.0], size=(3, n)))
        np.testing.assert_allclose(cfg.beta + cfg.gamma * (cfg.W.sum(1) - np.diag(cfg.W)), np.pi / 4, atol=1e-15)
        for x in itertools.product([-1.0, 1.0], repeat=n):
            x = np.array(x)
            for i in range(n):
                rep = local_field(cfg, x, i)
                assert abs(cfg.gamma * rep.theta) <= np.pi / 4 + 1e-12
                assert -1e-12 <= rep.phi <= np.pi / 2 + 1e-12
                # total ancilla rotation for this basis input equals 2 * phi
                on = x > 0
                on[i] = False
                total = params.alpha[i, on].sum() + params.b[i]
                assert total == pytest.approx(2 * rep.phi, abs=1e-12)
                assert -1e-12 <= total <= np.pi + 1e-12


class TestCircuit:
    def test_two_neuron_structure(self):
        params = NeuronParams(np.array([[0, 0.3], [0.4, 0]]), np.array([0.1, 0.2]))
        ops = build_neuron_circuit(0, params)
        assert [op.kind for op in ops] == ["CRY", "RY", "SWAP"]
        assert ops[0].qubits == (1, 2) and ops[0].angle == 0.3
        assert ops[1].qubits == (2,) and ops[1].angle == 0.1
        assert set(ops[2].qubits) == {0, 2}

    @pytest.mark.parametrize("n", [2, 4, 8])
    def test_gate_count(self, n):
        params = random_params(np.random.default_rng(n), n)
        for t in range(n):
            assert len(build_neuron_circuit(t, params)) == n + 1
        assert len(qham_circuit(np.zeros(n), 0, params)) == circuit_length(n)

    def test_bad_target(self):
        with pytest.raises(ValueError):
            build_neuron_circuit(3, random_params(np.random.default_rng(0), 3))

    def test_basis_input_analytic(self):
        # |110> on data qubits (x = [-1, +1, +1]), target 0: controls 1 and 2 are on
        rng = np.random.default_rng(11)
        params = random_params(rng, 3)
        z = qham_forward([-1.0, 1.0, 1.0], 0, params)
        p1 = np.sin(params.alpha[0, 1] / 2 + params.alpha[0, 2] / 2 + params.b[0] / 2) ** 2
        assert (1 - z[0]) / 2 == pytest.approx(p1, abs=1e-12)
        u = circuit_unitary_oracle(qham_circuit([-1.0, 1.0, 1.0], 0, params), 4)
        psi = u[:, 0]
        assert (1 - z_from_amplitudes(psi, 3)[0]) / 2 == pytest.approx(p1, abs=1e-12)

    def test_superposed_controls_average(self):
        # a control in superposition mixes the two rotation totals by its probabilities
        rng = np.random.default_rng(5)
        params = random_params(rng, 2)
        x = np.array([0.0, 0.3])
        p_on = np.sin(0.3 * np.pi / 4 + np.pi / 4) ** 2
        expect = (1 - p_on) * np.sin(params.b[0] / 2) ** 2 + p_on * np.sin((params.alpha[0, 1] + params.b[0]) / 2) ** 2
        z = qham_forward(x, 0, params)
        assert (1 - z[0]) / 2 == pytest.approx(expect, abs=1e-12)


class TestForward:
    def test_unbiased_half_rotation(self):
        n = 3
        params = NeuronParams(np.zeros((n, n)), np.full(n, np.pi / 2))
        for x in [[-1, 0.2, 1], [0.9, -0.9, 0.1]]:
            assert abs(qham_forward(x, 1, params)[1]) < 1e-12

    def test_zero_angles_reset_target(self):
        n = 3
        params = NeuronParams(np.zeros((n, n)), np.zeros(n))
        z = qham_forward([0.4, -0.7, 0.9], 2, params)
        assert z[2] == pytest.approx(1.0, abs=1e-14)

    def test_untouched_qubits_keep_encoding(self):
        params = random_params(np.random.default_rng(1), 4)
        x = np.array([0.3, -0.2, 0.8, -1.0])
        z = qham_forward(x, 1, params)
        others = [0, 2, 3]
        np.testing.assert_allclose(z[others], -np.sin(x[others] * np.pi / 2), atol=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_matches_dense_oracle(self, n):
        rng = np.random.default_rng(100 + n)
        zero = np.zeros(2 ** (n + 1))
        zero[0] = 1
        for _ in range(50):
            params = random_params(rng, n)
            x = rng.uniform(-1, 1, n)
            t = int(rng.integers(n))
            psi = qham_state(x, t, params).amplitudes
            ref = circuit_unitary_oracle(qham_circuit(x, t, params), n + 1) @ zero
            assert np.max(np.abs(psi - ref)) <= 1e-10
            np.testing.assert_allclose(qham_forward(x, t, params), z_from_amplitudes(ref, n), atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            qham_forward(np.zeros(3), 0, random_params(np.random.default_rng(0), 4))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(7)
        params = random_params(rng, 5)
        xs = rng.uniform(-1, 1, (12, 5))
        ts = rng.integers(0, 5, 12)
        batch = qham_forward_batch(xs, ts, params)
        for x, t, z in zip(xs, ts, batch):
            np.testing.assert_allclose(qham_forward(x, int(t), params), z, atol=1e-13)


class TestAttractor:
    @pytest.mark.parametrize("n", range(2, 7))
    def test_single_pattern_exhaustive(self, n):
        for eps in itertools.product([-1.0, 1.0], repeat=n):
            eps = np.array(eps)
            _, params = hebbian_params(eps[None])
            for i in range(n):
                p1 = attractor_side(eps, i, params)
                assert (p1 > 0.5) == (eps[i] > 0)

    def test_corrupted_bit_restored(self):
        eps = np.array([1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
        _, params = hebbian_params(eps[None])
        noisy = eps.copy()
        noisy[2] = -1.0
        assert attractor_side(noisy, 2, params) > 0.5


class TestTargets:
    def test_single_neuron(self):
        rng = np.random.default_rng(0)
        assert set(pick_target(rng, 1, size=100)) == {0}

    def test_reproducible(self):
        a = pick_target(np.random.default_rng(3), 8, size=50)
        b = pick_target(np.random.default_rng(3), 8, size=50)
        np.testing.assert_array_equal(a, b)

    def test_uniform(self):
        draws = pick_target(np.random.default_rng(0), 8, size=10_000)
        counts = np.bincount(draws, minlength=8)
        # each count within 3 sigma of 1250
        sigma = np.sqrt(10_000 * (1 / 8) * (7 / 8))
        assert np.all(np.abs(counts - 1250) <= 3 * sigma)
        assert stats.chisquare(counts).pvalue > 0.001


def finite_difference(params, x, t, upstream, h):
    n = params.n
    d_alpha = np.zeros(n)
    for j in range(n):
        if j == t:
            continue
        plus, minus = params.copy(), params.copy()
        plus.alpha[t, j] += h
        minus.alpha[t, j] -= h
        d_alpha[j] = np.sum((qham_forward(x, t, plus) - qham_forward(x, t, minus)) * upstream) / (2 * h)
    plus, minus = params.copy(), params.copy()
    plus.b[t] += h
    minus.b[t] -= h
    d_b = np.sum((qham_forward(x, t, plus) - qham_forward(x, t, minus)) * upstream) / (2 * h)
    return d_alpha, d_b


class TestGradients:
    def test_zero_upstream(self):
        params = random_params(np.random.default_rng(0), 4)
        d_alpha, d_b = parameter_gradients(params, np.zeros(4), 1, np.zeros(4))
        assert not d_alpha.any() and d_b == 0

    def test_bias_rotation_only(self):
        params = NeuronParams(np.zeros((2, 2)), np.array([0.7, 0.0]))
        upstream = np.array([1.0, 0.0])
        _, d_b = parameter_gradients(params, [0.1, 0.5], 0, upstream)
        _, fd = finite_difference(params, np.array([0.1, 0.5]), 0, upstream, 1e-6)
        assert d_b == pytest.approx(fd, abs=1e-6)
        assert d_b == pytest.approx(-np.sin(0.7), abs=1e-12)  # <Z> = cos(b)

    def test_against_finite_differences(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(20):
            params = random_params(rng, 4)
            x = rng.uniform(-1, 1, 4)
            t = int(rng.integers(4))
            up = rng.normal(size=4)
            d_alpha, d_b = parameter_gradients(params, x, t, up)
            fd_alpha, fd_b = finite_difference(params, x, t, up, 1e-5)
            got = np.append(d_alpha, d_b)
            want = np.append(fd_alpha, fd_b)
            worst = max(worst, np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-3))
        assert worst <= 1e-5

    def test_batched_sums_samples(self):
        rng = np.random.default_rng(8)
        params = random_params(rng, 3)
        xs = rng.uniform(-1, 1, (5, 3))
        ups = rng.normal(size=(5, 3))
        da, db = parameter_gradients(params, xs, 2, ups)
        singles = [parameter_gradients(params, x, 2, u) for x, u in zip(xs, ups)]
        np.testing.assert_allclose(da, sum(s[0] for s in singles), atol=1e-12)
        assert db == pytest.approx(sum(s[1] for s in singles), abs=1e-12)

    def test_input_gradient(self):
        rng = np.random.default_rng(9)
        params = random_params(rng, 3)
        x = rng.uniform(-0.9, 0.9, 3)
        up = rng.normal(size=3)
        *_, dx = parameter_gradients(params, x, 1, up, input_grad=True)
        h = 1e-6
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = np.sum((qham_forward(x + e, 1, params) - qham_forward(x - e, 1, params)) * up) / (2 * h)
            assert dx[i] == pytest.approx(fd, abs=1e-7)

    def test_non_finite_upstream(self):
        with pytest.raises(FloatingPointError):
            parameter_gradients(random_params(np.random.default_rng(0), 2), np.zeros(2), 0, [np.nan, 0])


class TestNoisyForward:
    def test_zero_noise_matches_ideal(self):
        rng = np.random.default_rng(3)
        params = random_params(rng, 4)
        x = rng.uniform(-1, 1, (6, 4))
        spec = NoiseSpec(gate_sites=tuple((i, 0.0) for i in range(6)), readout_sites=tuple((q, 0.0) for q in range(4)))
        for method in ("branches", "density"):
            np.testing.assert_allclose(qham_forward(x, 2, params, spec, method), qham_forward(x, 2, params), atol=1e-10)

    def test_branches_equal_density(self):
        rng = np.random.default_rng(4)
        params = random_params(rng, 5)
        x = rng.uniform(-1, 1, (4, 5))
        spec = sample_noise_spec(circuit_length(5), 5, seed=9)
        a = qham_forward(x, 3, params, spec, "branches")
        b = qham_forward(x, 3, params, spec, "density")
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_unknown_method(self):
        spec = sample_noise_spec(circuit_length(2), 2, seed=0)
        with pytest.raises(ConfigurationError):
            qham_forward(np.zeros(2), 0, random_params(np.random.default_rng(0), 2), spec, "trajectories")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_noise_shrinks_towards_zero_on_readout(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng, 3)
        x = rng.uniform(-1, 1, 3)
        spec = NoiseSpec(readout_sites=((0, 0.05),))
        ideal = qham_forward(x, 1, params)
        noisy = qham_forward(x, 1, params, spec)
        assert noisy[0] == pytest.approx(0.9 * ideal[0], abs=1e-12)
        np.testing.assert_allclose(noisy[1:], ideal[1:], atol=1e-12)


def test_state_is_normalised():
    rng = np.random.default_rng(0)
    state = qham_state(rng.uniform(-1, 1, 6), 4, random_params(rng, 6))
    assert isinstance(state, StateVector)
    assert abs(state.norm() - 1) < 1e-12
