"""Fused operations checked against loop oracles and finite differences."""
import numpy as np
import pytest

from caan import functional as fn
from caan.errors import DegenerateInputError, DimensionError
from caan.gradcheck import as_f64_leaf, check_gradients
from caan.tensor import Tensor, backward, square

TOL = 1e-6


def naive_conv(x, k, stride, padding):
    width, c_in, c_out = k.shape
    xp = np.pad(x, ((padding, padding), (0, 0)))
    n_out = (xp.shape[0] - width) // stride + 1
    out = np.zeros((n_out, c_out))
    for t in range(n_out):
        for j in range(width):
            out[t] += xp[t * stride + j] @ k[j]
    return out


def naive_lstm(x, w_ih, w_hh, b, h, c):
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))  # noqa: E731
    n_h = h.size
    hs = []
    for row in x:
        z = row @ w_ih + h @ w_hh + b
        i, f, g, o = sig(z[:n_h]), sig(z[n_h : 2 * n_h]), np.tanh(z[2 * n_h : 3 * n_h]), sig(z[3 * n_h :])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
    return np.array(hs)


def grads_ok(f, leaves, **kw):
    results = check_gradients(f, leaves, eps=1e-6, **kw)
    return max(r.rel_error for r in results)


class TestActivations:
    def test_sigmoid_is_stable_for_large_inputs(self):
        y = fn.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]), dtype=np.float64)).numpy()
        np.testing.assert_allclose(y, [0.0, 0.5, 1.0])
        assert np.isfinite(y).all()

    def test_relu_subgradient_at_zero_is_zero(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True, dtype=np.float64)
        backward(fn.relu(x).sum())
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_activation_dispatch_rejects_unknown(self):
        with pytest.raises(ValueError):
            fn.activation(Tensor(np.ones(2)), "swish")

    def test_gradients(self, rng):
        x = as_f64_leaf(rng.standard_normal((5, 4)))
        assert grads_ok(lambda: (fn.sigmoid(x) + fn.tanh(x) * x).sum(), [x]) < TOL


class TestSoftmax:
    def test_rows_sum_to_one_and_shift_invariant(self, rng):
        x = rng.standard_normal((4, 6))
        y = fn.softmax_rows(Tensor(x, dtype=np.float64)).numpy()
        np.testing.assert_allclose(y.sum(axis=1), 1.0)
        y2 = fn.softmax_rows(Tensor(x + 1000.0, dtype=np.float64)).numpy()
        np.testing.assert_allclose(y, y2, atol=1e-12)

    def test_gradient(self, rng):
        x = as_f64_leaf(rng.standard_normal((3, 5)))
        w = rng.standard_normal((3, 5))
        assert grads_ok(lambda: (fn.softmax_rows(x) * w).sum(), [x]) < TOL


class TestNorm:
    @pytest.mark.parametrize("axis,ax", [("temporal", 0), ("feature", 1)])
    def test_standardises_along_axis(self, rng, axis, ax):
        x = rng.standard_normal((7, 5)) * 3 + 2
        y = fn.norm_layer(Tensor(x, dtype=np.float64), Tensor(np.ones(5)), Tensor(np.zeros(5)), axis=axis).numpy()
        np.testing.assert_allclose(y.mean(axis=ax), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.var(axis=ax), 1.0, atol=1e-4)

    @pytest.mark.parametrize("axis", ["temporal", "feature"])
    def test_gradient(self, rng, axis):
        x = as_f64_leaf(rng.standard_normal((6, 4)))
        g = as_f64_leaf(rng.uniform(0.5, 2, 4))
        b = as_f64_leaf(rng.standard_normal(4))
        w = rng.standard_normal((6, 4))
        assert grads_ok(lambda: (fn.norm_layer(x, g, b, axis=axis) * w).sum(), [x, g, b]) < 1e-5

    def test_temporal_needs_two_frames(self):
        with pytest.raises(DegenerateInputError):
            fn.norm_layer(Tensor(np.ones((1, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)), axis="temporal")


class TestConvolution:
    @pytest.mark.parametrize("stride,padding,width", [(1, 1, 3), (2, 1, 4), (1, 0, 2), (3, 2, 3)])
    def test_matches_loop_oracle(self, rng, stride, padding, width):
        x = rng.standard_normal((11, 3))
        k = rng.standard_normal((width, 3, 5))
        y = fn.conv1d_temporal(Tensor(x, dtype=np.float64), Tensor(k, dtype=np.float64), stride, padding).numpy()
        np.testing.assert_allclose(y, naive_conv(x, k, stride, padding), atol=1e-12)

    def test_transposed_is_adjoint(self, rng):
        # <conv(u), v> == <u, conv_T(v)> for the same kernel
        k = rng.standard_normal((4, 3, 2))
        u = rng.standard_normal((12, 3))
        v = rng.standard_normal((6, 2))
        conv_u = naive_conv(u, k, 2, 1)
        up_v = fn.transposed_conv1d_temporal(Tensor(v, dtype=np.float64), Tensor(k, dtype=np.float64)).numpy()
        assert up_v.shape == (12, 3)
        assert float((conv_u * v).sum()) == pytest.approx(float((u * up_v).sum()), rel=1e-12)

    def test_gradients(self, rng):
        x, k = as_f64_leaf(rng.standard_normal((9, 3))), as_f64_leaf(rng.standard_normal((3, 3, 4)))
        assert grads_ok(lambda: square(fn.conv1d_temporal(x, k, 2, 1)).sum(), [x, k]) < TOL
        v, kt = as_f64_leaf(rng.standard_normal((5, 4))), as_f64_leaf(rng.standard_normal((4, 2, 4)))
        assert grads_ok(lambda: square(fn.transposed_conv1d_temporal(v, kt)).sum(), [v, kt]) < TOL

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            fn.conv1d_temporal(Tensor(np.ones((5, 3))), Tensor(np.ones((3, 4, 2))), 1, 1)


class TestMaxPool:
    def test_values_and_tie_break(self):
        x = Tensor(np.array([[1.0], [1.0], [0.0], [5.0], [2.0]]), requires_grad=True, dtype=np.float64)
        y = fn.max_pool1d(x)
        np.testing.assert_array_equal(y.numpy().ravel(), [1.0, 5.0])
        backward(y.sum())
        # the tie in the first window routes the gradient to the earlier frame
        np.testing.assert_array_equal(x.grad.ravel(), [1.0, 0.0, 0.0, 1.0, 0.0])

    def test_gradient(self, rng):
        x = as_f64_leaf(rng.permutation(30).reshape(10, 3) * 0.1)
        assert grads_ok(lambda: square(fn.max_pool1d(x)).sum(), [x]) < TOL


class TestLSTM:
    def test_matches_loop_oracle(self, rng):
        x, wi, wh = rng.standard_normal((6, 3)), rng.standard_normal((3, 8)), rng.standard_normal((2, 8))
        b, h0, c0 = rng.standard_normal(8), rng.standard_normal(2), rng.standard_normal(2)
        hs, last = fn.lstm_forward(*(Tensor(a, dtype=np.float64) for a in (x, wi, wh, b, h0, c0)))
        ref = naive_lstm(x, wi, wh, b, h0, c0)
        np.testing.assert_allclose(hs.numpy(), ref, atol=1e-12)
        np.testing.assert_allclose(last.numpy(), ref[-1], atol=1e-12)

    def test_gradient_through_time(self, rng):
        leaves = [as_f64_leaf(rng.standard_normal(s)) for s in [(7, 3), (3, 12), (3, 12), (12,), (3,), (3,)]]
        w = rng.standard_normal((7, 3))
        assert grads_ok(lambda: (fn.lstm_forward(*leaves)[0] * w).sum(), leaves) < TOL

    def test_shape_validation(self):
        with pytest.raises(DimensionError):
            z = Tensor(np.zeros(2))
            fn.lstm_forward(Tensor(np.ones((4, 3))), Tensor(np.ones((3, 7))), Tensor(np.ones((2, 8))),
                            Tensor(np.ones(8)), z, z)


class TestL2Norm:
    def test_value_and_zero_subgradient(self):
        v = Tensor(np.array([3.0, 4.0]), requires_grad=True, dtype=np.float64)
        assert fn.l2_norm(v).item() == 5.0
        z = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
        backward(fn.l2_norm(z))
        np.testing.assert_array_equal(z.grad, 0.0)
