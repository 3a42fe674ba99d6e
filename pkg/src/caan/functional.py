"""Fused neural-network operations with hand-written backward passes.

Sequences are laid out time-major: an ``F x C`` matrix holds F frames of C
channels. Convolution kernels have shape ``(width, C_in, C_out)``.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, DimensionError
from .tensor import Tensor, _f64, make_result

NORM_EPS = 1e-5


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------
def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x: Tensor) -> Tensor:
    v = _f64(x)
    mask = v > 0
    return make_result(v * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(_f64(x))
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(_f64(x))
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return fn(x)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
    v = _f64(x)
    e = np.exp(v - v.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return make_result(y, (x,), vjp, "softmax_rows")


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------
def norm_layer(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS, axis: str = "feature") -> Tensor:
    """Standardise an ``F x C`` matrix along one axis, then apply a per-channel affine.

    ``axis="temporal"`` normalises each channel over frames (batch norm for a
    single video); ``axis="feature"`` normalises each frame over channels
    (layer norm). ``gamma`` and ``beta`` have length C in both cases.
    """
    if x.ndim != 2:
        raise DimensionError(f"norm_layer expects a matrix, got shape {x.shape}")
    n_frames, n_ch = x.shape
    if gamma.shape != (n_ch,) or beta.shape != (n_ch,):
        raise DimensionError(f"norm_layer: affine shapes {gamma.shape}, {beta.shape} vs {n_ch} channels")
    if axis == "temporal":
        ax = 0
        if n_frames < 2:
            raise DegenerateInputError(f"temporal normalisation needs at least 2 frames, got {n_frames}")
    elif axis == "feature":
        ax = 1
    else:
        raise ValueError(f"axis must be 'temporal' or 'feature', got {axis!r}")

    v = _f64(x)
    gm, bt = _f64(gamma), _f64(beta)
    mu = v.mean(axis=ax, keepdims=True)
    centred = v - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=ax, keepdims=True) + eps)
    xhat = centred * inv_std
    n = v.shape[ax]

    def vjp(g):
        gxhat = g * gm
        gx = inv_std / n * (
            n * gxhat - gxhat.sum(axis=ax, keepdims=True) - xhat * (gxhat * xhat).sum(axis=ax, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_result(xhat * gm + bt, (x, gamma, beta), vjp, f"norm_{axis}")


# ---------------------------------------------------------------------------
# temporal convolution family
# ---------------------------------------------------------------------------
def _conv_out_len(n, width, stride, padding):
    return (n + 2 * padding - width) // stride + 1


def _windows(n_out, width, stride):
    return np.arange(n_out)[:, None] * stride + np.arange(width)[None, :]


def _conv_fwd(x, k, stride, padding):
    n, c_in = x.shape
    width = k.shape[0]
    n_out = _conv_out_len(n, width, stride, padding)
    xp = np.pad(x, ((padding, padding), (0, 0))) if padding else x
    cols = xp[_windows(n_out, width, stride)].reshape(n_out, width * c_in)
    return cols @ k.reshape(width * c_in, -1), cols


def _conv_bwd_input(gy, k, stride, padding, n_in):
    width, c_in, _ = k.shape
    n_out = gy.shape[0]
    gcols = (gy @ k.reshape(width * c_in, -1).T).reshape(n_out, width, c_in)
    gxp = np.zeros((n_in + 2 * padding, c_in))
    stop = stride * (n_out - 1) + 1
    for j in range(width):
        gxp[j : j + stop : stride] += gcols[:, j]
    return gxp[padding : padding + n_in]


def _conv_bwd_kernel(cols, gy, k_shape):
    return (cols.T @ gy).reshape(k_shape)


def conv1d_temporal(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate an ``F x C_in`` sequence with a ``(w, C_in, C_out)`` kernel.

    Zero padding is added at both temporal ends; output length is
    ``(F + 2*padding - w) // stride + 1``.
    """
    if x.ndim != 2 or kernel.ndim != 3:
        raise DimensionError(f"conv1d_temporal: sequence {x.shape}, kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    n, c_in = x.shape
    width = kernel.shape[0]
    if kernel.shape[1] != c_in:
        raise DimensionError(f"conv1d_temporal: input has {c_in} channels, kernel {kernel.shape} expects {kernel.shape[1]}")
    if width > n + 2 * padding:
        raise DimensionError(f"conv1d_temporal: kernel width {width} exceeds padded length {n + 2 * padding}")
    xv, kv = _f64(x), _f64(kernel)
    y, cols = _conv_fwd(xv, kv, stride, padding)

    def vjp(g):
        gx = _conv_bwd_input(g, kv, stride, padding, n) if x.requires_grad else None
        gk = _conv_bwd_kernel(cols, g, kv.shape) if kernel.requires_grad else None
        return gx, gk

    return make_result(y, (x, kernel), vjp, "conv1d")


def transposed_conv1d_temporal(x: Tensor, kernel: Tensor, stride: int = 2, padding: int = 1) -> Tensor:
    """Upsample an ``F x C_in`` sequence to ``stride*F`` frames.

    This is the exact adjoint of :func:`conv1d_temporal` with the same kernel,
    stride and padding, so ``kernel`` has shape ``(w, C_out, C_in)``: it is the
    kernel of the strided convolution that maps the output back to the input.
    """
    if x.ndim != 2 or kernel.ndim != 3:
        raise DimensionError(f"transposed_conv1d_temporal: sequence {x.shape}, kernel {kernel.shape}")
    n, c_in = x.shape
    width, c_out, kc = kernel.shape
    if kc != c_in:
        raise DimensionError(
            f"transposed_conv1d_temporal: input has {c_in} channels, kernel {kernel.shape} expects {kc}"
        )
    n_out = stride * n
    if width > n_out + 2 * padding or _conv_out_len(n_out, width, stride, padding) != n:
        raise DimensionError(
            f"transposed_conv1d_temporal: width {width}, stride {stride}, padding {padding} "
            f"do not map {n} frames onto {n_out}"
        )
    xv, kv = _f64(x), _f64(kernel)
    y = _conv_bwd_input(xv, kv, stride, padding, n_out)

    def vjp(g):
        gy, cols = _conv_fwd(g, kv, stride, padding)
        gk = _conv_bwd_kernel(cols, xv, kv.shape) if kernel.requires_grad else None
        return gy, gk

    return make_result(y, (x, kernel), vjp, "conv_transpose1d")


def max_pool1d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """Per-channel max over temporal windows; ties go to the earliest frame."""
    if x.ndim != 2:
        raise DimensionError(f"max_pool1d expects a matrix, got shape {x.shape}")
    n, n_ch = x.shape
    if n < window:
        raise DimensionError(f"max_pool1d: {n} frames is shorter than window {window}")
    n_out = (n - window) // stride + 1
    v = _f64(x)
    idx = _windows(n_out, window, stride)
    vals = v[idx]  # (n_out, window, C)
    arg = vals.argmax(axis=1)  # numpy returns the first maximum
    src = idx[np.arange(n_out)[:, None], arg]  # (n_out, C) source frame per output
    y = np.take_along_axis(vals, arg[:, None, :], axis=1)[:, 0, :]
    cols = np.broadcast_to(np.arange(n_ch), src.shape)

    def vjp(g):
        gx = np.zeros_like(v)
        np.add.at(gx, (src, cols), g)
        return (gx,)

    return make_result(y, (x,), vjp, "max_pool1d")


# ---------------------------------------------------------------------------
# recurrent
# ---------------------------------------------------------------------------
def lstm_forward(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, h0: Tensor, c0: Tensor):
    """Single-layer LSTM over an ``F x d_in`` sequence.

    Gate blocks in the ``4*d_h`` columns are ordered input, forget, candidate,
    output. Returns ``(hidden_states, last_hidden)`` with shapes ``F x d_h``
    and ``d_h``.
    """
    if x.ndim != 2:
        raise DimensionError(f"lstm_forward expects an F x d_in sequence, got {x.shape}")
    n, d_in = x.shape
    d_h = h0.shape[0] if h0.ndim == 1 else -1
    if (
        w_ih.shape != (d_in, 4 * d_h)
        or w_hh.shape != (d_h, 4 * d_h)
        or bias.shape != (4 * d_h,)
        or c0.shape != (d_h,)
    ):
        raise DimensionError(
            f"lstm_forward: x {x.shape}, w_ih {w_ih.shape}, w_hh {w_hh.shape}, "
            f"bias {bias.shape}, h0 {h0.shape}, c0 {c0.shape}"
        )
    xv, wi, wh, b = _f64(x), _f64(w_ih), _f64(w_hh), _f64(bias)
    zx = xv @ wi + b
    hs = np.empty((n + 1, d_h))
    cs = np.empty((n + 1, d_h))
    gates = np.empty((n, 4 * d_h))
    tanh_c = np.empty((n, d_h))
    hs[0], cs[0] = _f64(h0), _f64(c0)
    for t in range(n):
        z = zx[t] + hs[t] @ wh
        i = _sigmoid(z[:d_h])
        f = _sigmoid(z[d_h : 2 * d_h])
        gc = np.tanh(z[2 * d_h : 3 * d_h])
        o = _sigmoid(z[3 * d_h :])
        cs[t + 1] = f * cs[t] + i * gc
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = o * tanh_c[t]
        gates[t, :d_h], gates[t, d_h : 2 * d_h], gates[t, 2 * d_h : 3 * d_h], gates[t, 3 * d_h :] = i, f, gc, o

    def vjp(g):
        dz = np.empty((n, 4 * d_h))
        dh_next = np.zeros(d_h)
        dc_next = np.zeros(d_h)
        for t in range(n - 1, -1, -1):
            i, f, gc, o = (gates[t, k * d_h : (k + 1) * d_h] for k in range(4))
            dh = g[t] + dh_next
            tc = tanh_c[t]
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz[t, :d_h] = dc * gc * i * (1.0 - i)
            dz[t, d_h : 2 * d_h] = dc * cs[t] * f * (1.0 - f)
            dz[t, 2 * d_h : 3 * d_h] = dc * i * (1.0 - gc * gc)
            dz[t, 3 * d_h :] = dh * tc * o * (1.0 - o)
            dh_next = dz[t] @ wh.T
            dc_next = dc * f
        return dz @ wi.T, xv.T @ dz, hs[:-1].T @ dz, dz.sum(axis=0), dh_next, dc_next

    hidden = make_result(hs[1:], (x, w_ih, w_hh, bias, h0, c0), vjp, "lstm")
    return hidden, hidden[n - 1]


# ---------------------------------------------------------------------------
# misc
# ---------------------------------------------------------------------------
def l2_norm(v: Tensor) -> Tensor:
    """Euclidean norm of all elements; the subgradient at zero is taken as 0."""
    a = _f64(v)
    r = float(np.sqrt((a * a).sum()))

    def vjp(g):
        if r == 0.0:
            return (np.zeros_like(a),)
        return (g * a / r,)

    return make_result(np.array(r), (v,), vjp, "l2_norm")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = x @ weight
    return y if bias is None else y + bias
