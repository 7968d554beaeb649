import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcremix.nn import Sequential, build_network, mse_loss
from qcremix.nn.layers import BatchNorm, Conv1D, Dense, Dropout, Flatten, Hardtanh, MaxPool1D, ReLU

from .gradcheck import TOY_CONFIG, analytic_gradients, relative_errors, toy_problem


def _conv_oracle(x, w, b, stride):
    """Direct loop over output positions with TF-style "same" padding."""
    batch, length, _ = x.shape
    size, _, filters = w.shape
    out = -(-length // stride)
    total = max((out - 1) * stride + size - length, 0)
    left = total // 2
    xp = np.pad(x, ((0, 0), (left, total - left), (0, 0)))
    y = np.empty((batch, out, filters))
    for n in range(batch):
        for t in range(out):
            window = xp[n, t * stride : t * stride + size]
            y[n, t] = np.einsum("kc,kcf->f", window, w) + b
    return y


def _layer_gradcheck(layer, x, h=1e-6):
    """Gradient of sum(out * probe) wrt input and parameters versus central differences."""
    rng = np.random.default_rng(0)
    out = layer.forward(x, train=True)
    probe = rng.standard_normal(out.shape)
    layer.zero_grad()
    dx = layer.backward(probe)

    def f():
        return float(np.sum(layer.forward(x, train=True) * probe))

    num = np.empty_like(x)
    for i in range(x.size):
        old = x.flat[i]
        x.flat[i] = old + h
        up = f()
        x.flat[i] = old - h
        down = f()
        x.flat[i] = old
        num.flat[i] = (up - down) / (2 * h)
    np.testing.assert_allclose(dx, num, rtol=1e-5, atol=1e-7)
    for key in layer.trainable:
        p = layer.params[key]
        numg = np.empty_like(p)
        for i in range(p.size):
            old = p.flat[i]
            p.flat[i] = old + h
            up = f()
            p.flat[i] = old - h
            down = f()
            p.flat[i] = old
            numg.flat[i] = (up - down) / (2 * h)
        np.testing.assert_allclose(layer.grads[key], numg, rtol=1e-5, atol=1e-7)


class TestToyOracle:
    def test_hand_computed_value(self):
        conv = Conv1D(1, 1, 3, 1)
        conv.params["weight"] = np.array([2.0, -1.0, 0.5]).reshape(3, 1, 1)
        conv.params["bias"] = np.array([0.5])
        dense = Dense(4, 1)
        dense.params["weight"] = np.array([[1.0], [-1.0], [0.5], [0.25]])
        dense.params["bias"] = np.array([3.0])
        net = Sequential([("conv", conv), ("pool", MaxPool1D(2)), ("flat", Flatten()), ("dense", dense)])
        x = np.arange(1.0, 9.0).reshape(1, 8, 1)
        # padded input 0,1..8,0; conv = 0.5 2 3.5 5 6.5 8 9.5 6.5; pool = 2 5 8 9.5
        trace = []
        y = net.forward(x, trace=trace)
        np.testing.assert_array_equal(conv.forward(x)[0, :, 0], [0.5, 2.0, 3.5, 5.0, 6.5, 8.0, 9.5, 6.5])
        assert y[0, 0] == 2.0 - 5.0 + 4.0 + 2.375 + 3.0
        assert trace[1] == ("pool", (1, 4))


class TestConv1D:
    @pytest.mark.parametrize("length,size,stride", [(30, 8, 4), (31, 8, 4), (17, 3, 1), (20, 5, 2), (9, 2, 3)])
    def test_matches_loop_oracle(self, length, size, stride):
        rng = np.random.default_rng(length + size)
        conv = Conv1D(3, 4, size, stride)
        conv.params["weight"] = rng.standard_normal((size, 3, 4))
        conv.params["bias"] = rng.standard_normal(4)
        x = rng.standard_normal((2, length, 3))
        expected = _conv_oracle(x, conv.params["weight"], conv.params["bias"], stride)
        np.testing.assert_allclose(conv.forward(x), expected, rtol=1e-12, atol=1e-12)

    def test_front_geometry(self):
        conv = Conv1D(2, 1, 1024, 512)
        assert conv.output_shape((192000, 2)) == (375, 1)
        assert conv.forward(np.zeros((1, 192000, 2), np.float32)).shape == (1, 375, 1)

    @pytest.mark.parametrize("size,stride", [(3, 1), (8, 4), (5, 2)])
    def test_gradients(self, size, stride):
        rng = np.random.default_rng(size)
        conv = Conv1D(2, 3, size, stride)
        conv.params["weight"] = rng.standard_normal((size, 2, 3))
        conv.params["bias"] = rng.standard_normal(3)
        _layer_gradcheck(conv, rng.standard_normal((2, 13, 2)))

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            Conv1D(2, 3, 3).forward(np.zeros((1, 10, 1)))


class TestOtherLayers:
    def test_dense_gradients(self):
        rng = np.random.default_rng(1)
        d = Dense(5, 3)
        d.params["weight"] = rng.standard_normal((5, 3))
        d.params["bias"] = rng.standard_normal(3)
        _layer_gradcheck(d, rng.standard_normal((4, 5)))

    @pytest.mark.parametrize("shape", [(6, 4), (3, 7, 4)])
    def test_batchnorm_gradients(self, shape):
        rng = np.random.default_rng(2)
        bn = BatchNorm(4)
        bn.astype(np.float64)
        bn.params["gamma"] = rng.uniform(0.5, 1.5, 4)
        bn.params["beta"] = rng.standard_normal(4)
        _layer_gradcheck(bn, rng.standard_normal(shape) * 2 + 1)

    def test_batchnorm_statistics(self):
        rng = np.random.default_rng(3)
        bn = BatchNorm(3, momentum=0.1)
        bn.astype(np.float64)
        x = rng.standard_normal((50, 3)) * [1.0, 2.0, 3.0] + [0.0, 1.0, -1.0]
        y = bn.forward(x, train=True)
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=0), x.var(axis=0) / (x.var(axis=0) + 1e-5), rtol=1e-12)
        np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1), rtol=1e-12)
        # inference uses the running estimates
        np.testing.assert_allclose(bn.forward(x), (x - bn.running_mean) / np.sqrt(bn.running_var + 1e-5))

    def test_maxpool_ceil_mode(self):
        x = np.array([1.0, 5.0, 2.0, 3.0, 7.0]).reshape(1, 5, 1)
        pool = MaxPool1D(2)
        np.testing.assert_array_equal(pool.forward(x, train=True)[0, :, 0], [5.0, 3.0, 7.0])
        dx = pool.backward(np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1))
        np.testing.assert_array_equal(dx[0, :, 0], [0.0, 1.0, 0.0, 2.0, 3.0])
        assert pool.output_shape((375, 257)) == (188, 257)
        assert pool.output_shape((47, 96)) == (24, 96)

    def test_maxpool_gradients(self):
        x = np.random.default_rng(4).standard_normal((2, 9, 3))
        _layer_gradcheck(MaxPool1D(2), x)

    def test_flatten_channel_major(self):
        x = np.arange(12.0).reshape(1, 4, 3)
        f = Flatten()
        out = f.forward(x, train=True)
        np.testing.assert_array_equal(out[0], x[0].T.ravel())
        np.testing.assert_array_equal(f.backward(out), x)

    def test_relu_and_hardtanh(self):
        x = np.array([[-1.0, 0.0, 50.0, 100.0, 120.0]])
        ht = Hardtanh(0.0, 100.0)
        np.testing.assert_array_equal(ht.forward(x, train=True), [[0.0, 0.0, 50.0, 100.0, 100.0]])
        np.testing.assert_array_equal(ht.backward(np.ones_like(x)), [[0.0, 0.0, 1.0, 0.0, 0.0]])
        r = ReLU()
        np.testing.assert_array_equal(r.forward(x, train=True), [[0.0, 0.0, 50.0, 100.0, 120.0]])
        np.testing.assert_array_equal(r.backward(np.ones_like(x)), [[0.0, 0.0, 1.0, 1.0, 1.0]])


class TestDropout:
    def test_inference_identity(self):
        x = np.random.default_rng(0).standard_normal((8, 16))
        assert Dropout(0.4).forward(x) is x

    def test_training_scale_and_rate(self):
        d = Dropout(0.4)
        out = d.forward(np.ones((200, 500)), train=True)
        kept = out != 0
        np.testing.assert_allclose(out[kept], 1 / 0.6)
        assert kept.mean() == pytest.approx(0.6, abs=0.01)

    def test_fixed_mask(self):
        d = Dropout(0.5)
        d.fixed_mask = np.array([1.0, 0.0, 1.0])
        out = d.forward(np.ones((2, 3)), train=True)
        np.testing.assert_array_equal(out, [[2.0, 0.0, 2.0]] * 2)
        np.testing.assert_array_equal(d.backward(np.ones((2, 3))), out)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestNetworkGradients:
    def test_toy_gradcheck_frozen_norm(self):
        net, X, y = toy_problem(frozen=True)
        errors, grads = relative_errors(net, X, y)
        flat = np.concatenate(list(errors.values()))
        assert np.mean(flat <= 1e-4) >= 0.99
        assert flat.max() <= 1e-3
        # the masks leave every parameter tensor with a live gradient
        assert all(np.any(g != 0) for g in grads.values())

    def test_toy_gradcheck_batch_statistics(self):
        # larger step: the batch-statistics path cancels most of some gradients
        net, X, y = toy_problem(frozen=False)
        errors, _ = relative_errors(net, X, y, h=1e-4)
        flat = np.concatenate(list(errors.values()))
        assert np.mean(flat <= 1e-4) >= 0.99
        assert flat.max() <= 1e-3

    def test_zero_output_zero_target(self):
        net, X, _ = toy_problem()
        out = net.layer("output.linear")
        out.params["weight"][:] = 0.0
        out.params["bias"][:] = 0.0
        pred = net.forward(X, train=True)
        loss, grad = mse_loss(pred, np.zeros(len(X)))
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_batch_duplication_invariance(self):
        net, X, y = toy_problem(frozen=True)
        g1 = analytic_gradients(net, X, y)
        g2 = analytic_gradients(net, np.concatenate([X, X]), np.concatenate([y, y]))
        for k in g1:
            np.testing.assert_allclose(g2[k], g1[k], rtol=1e-10, atol=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=10, deadline=None)
    def test_output_always_clamped(self, seed):
        net = build_network(TOY_CONFIG, seed)
        x = np.random.default_rng(seed).standard_normal((3, 96, 2)).astype(np.float32) * 1e3
        out = net.forward(x)
        assert np.all((out >= 0.0) & (out <= 100.0))
