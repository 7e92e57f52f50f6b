import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qhamrec.dataset import build_matrix, parse_ratings, split, synthetic_ratings
from qhamrec.nn import (
    Adam,
    Autoencoder,
    AutoencoderConfig,
    DenseLayer,
    EncoderParams,
    Network,
    TrainHistory,
    backward_and_step,
    dense_forward,
    encode,
    hidden_width,
    mse_loss,
    train_autoencoder,
)


@pytest.fixture(scope="module")
def small_splits():
    return split(build_matrix(parse_ratings(synthetic_ratings(120, 150, seed=3))), seed=1)


def central_difference(f, param, h=1e-5):
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        old = param[idx]
        param[idx] = old + h
        up = f()
        param[idx] = old - h
        down = f()
        param[idx] = old
        grad[idx] = (up - down) / (2 * h)
    return grad


class TestDense:
    def test_identity(self):
        v = np.array([0.3, -1.2, 4.0])
        layer = DenseLayer(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(dense_forward(layer, v), v)

    def test_zero_tanh(self):
        np.testing.assert_array_equal(dense_forward(DenseLayer.zeros(4, 3, "tanh"), np.ones(4)), np.zeros(3))

    @pytest.mark.parametrize("x, want", [(10.0, 0.9999999958776927), (5.0, 0.9999092042625951)])
    def test_scalar_tanh(self, x, want):
        out = dense_forward(DenseLayer(np.array([[1.0]]), np.zeros(1), "tanh"), [x])
        assert out[0] == pytest.approx(want, abs=1e-15)

    def test_softmax_of_zeros_is_uniform(self):
        np.testing.assert_allclose(dense_forward(DenseLayer.zeros(3, 4, "softmax"), np.ones(3)), 0.25)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dense_forward(DenseLayer.zeros(3, 2), np.ones(4))

    def test_bad_activation(self):
        with pytest.raises(ValueError):
            DenseLayer.zeros(2, 2, "relu")

    def test_init_bounds(self):
        layer = DenseLayer.init(16, 5, "tanh", np.random.default_rng(0))
        assert np.all(np.abs(layer.weights) <= 0.25) and np.all(np.abs(layer.bias) <= 0.25)


class TestLoss:
    @pytest.mark.parametrize("pred, target, want", [
        ([0.2, 0.7], [0.2, 0.7], 0.0),
        ([0.0, 0.0], [1.0, 1.0], 1.0),
        ([0.5], [0.0], 0.25),
    ])
    def test_examples(self, pred, target, want):
        assert mse_loss(pred, target) == want

    def test_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss([1, 2], [1, 2, 3])

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
    def test_nonnegative(self, xs):
        assert mse_loss(xs, np.zeros(len(xs))) >= 0


class TestBackprop:
    def toy(self, rng):
        return Network([
            DenseLayer.init(5, 4, "identity", rng),
            DenseLayer.init(4, 3, "tanh", rng),
            DenseLayer.init(3, 3, "softmax", rng),
        ])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(100):
            net = self.toy(rng)
            x = rng.normal(size=(6, 5))
            y = rng.uniform(size=(6, 3))
            _, grads = net.loss_and_grads(x, y)
            for p, g in zip(net.parameters(), grads):
                fd = central_difference(lambda: mse_loss(net.forward(x), y), p)
                worst = max(worst, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-8))
        assert worst <= 1e-5

    def test_masked_gradient(self):
        rng = np.random.default_rng(1)
        net = self.toy(rng)
        x = rng.normal(size=(4, 5))
        y = rng.uniform(size=(4, 3))
        mask = (rng.random((4, 3)) < 0.5).astype(float)
        _, grads = net.loss_and_grads(x, y, mask)

        def loss():
            d = (net.forward(x) - y) * mask
            return np.sum(d**2) / max(mask.sum(), 1)

        for p, g in zip(net.parameters(), grads):
            np.testing.assert_allclose(g, central_difference(loss, p), atol=1e-8)

    def test_zero_lr_leaves_parameters(self):
        rng = np.random.default_rng(2)
        net = self.toy(rng)
        before = [p.copy() for p in net.parameters()]
        backward_and_step(net, rng.normal(size=(3, 5)), rng.uniform(size=(3, 3)), Adam(net.parameters(), lr=0.0))
        for a, b in zip(before, net.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_single_parameter_step(self):
        # loss = (w*1 - 0)^2 so grad = 2w; first Adam step moves by lr*sign(grad)
        net = Network([DenseLayer(np.array([[0.5]]), np.zeros(1))])
        opt = Adam([net.layers[0].weights], lr=0.01)
        loss, grads = net.loss_and_grads(np.ones((1, 1)), np.zeros((1, 1)))
        assert grads[0][0, 0] == pytest.approx(1.0)
        opt.step([grads[0]])
        assert net.layers[0].weights[0, 0] == pytest.approx(0.49, abs=1e-9)
        assert loss == 0.25

    def test_non_finite_gradient(self):
        net = Network([DenseLayer(np.array([[np.inf]]), np.zeros(1))])
        with pytest.raises(FloatingPointError):
            backward_and_step(net, np.ones((1, 1)), np.zeros((1, 1)), Adam(net.parameters()))


class TestEncoder:
    def test_zero_weights(self):
        enc = EncoderParams(DenseLayer.zeros(10, 2), DenseLayer.zeros(2, 3, "tanh"))
        np.testing.assert_array_equal(encode(enc, np.ones(10)), np.zeros(3))

    @given(st.integers(0, 2**32 - 1))
    def test_strictly_inside_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        ae = Autoencoder.init(250, 6, rng)
        z = ae.encoder.encode(rng.uniform(0, 1, (4, 250)))
        assert np.all(np.abs(z) < 1)

    def test_shapes(self):
        ae = Autoencoder.init(3706, 8, np.random.default_rng(0))
        assert hidden_width(3706) == 38
        assert [l.weights.shape for l in ae.layers] == [(38, 3706), (8, 38), (38, 8), (3706, 38)]
        assert [l.activation for l in ae.layers] == ["identity", "tanh", "tanh", "identity"]

    def test_shape_mismatch(self):
        ae = Autoencoder.init(20, 2, np.random.default_rng(0))
        with pytest.raises(ValueError):
            encode(ae.encoder, np.ones(21))


class TestTraining:
    def test_zero_epochs(self, small_splits):
        _, hist = train_autoencoder(small_splits, epochs=0)
        assert hist.epoch == [0]
        assert hist.test_loss is not None

    def test_loss_decreases(self, small_splits):
        _, hist = train_autoencoder(small_splits, epochs=5, config=AutoencoderConfig(latent_dim=4))
        assert hist.epoch == list(range(6))
        assert hist.train_loss[-1] < hist.train_loss[1] < hist.train_loss[0]

    def test_bit_reproducible(self, small_splits, tmp_path):
        cfg = AutoencoderConfig(latent_dim=4, seed=7)
        a, ha = train_autoencoder(small_splits, epochs=2, config=cfg)
        b, hb = train_autoencoder(small_splits, epochs=2, config=cfg)
        ha.to_csv(tmp_path / "a.csv")
        hb.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        for p, q in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(p, q)

    def test_masked_option(self, small_splits):
        _, hist = train_autoencoder(small_splits, epochs=1, config=AutoencoderConfig(latent_dim=4, masked=True))
        assert np.isfinite(hist.test_loss)


def test_history_rejects_non_increasing_epochs():
    h = TrainHistory()
    h.record(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        h.record(0, 0.5, 0.5)
