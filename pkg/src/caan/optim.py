"""Adam optimiser, gradient clipping and parameter initialisation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        zeros = [np.zeros(p.shape) for p in params]
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, m=zeros, v=[z.copy() for z in zeros])


def adam_step(params, grads, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    A ``None`` gradient is treated as zero for that parameter.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment buffers"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or m.shape != p.shape:
            raise DimensionError(f"adam_step: param {p.shape}, grad {g.shape}, moments {m.shape}")
        g = g.astype(np.float64)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)
    return state


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed parameter list."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState.for_params(self.params, lr, betas[0], betas[1], eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)


def grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            g = p.grad.astype(np.float64)
            total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients so their global L2 norm is at most ``max_norm``."""
    norm = grad_norm(params)
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad.astype(np.float64) * scale).astype(p.grad.dtype)
    return norm


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


def zeros_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def ones_param(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, dtype=dtype)


def materialize(layout, seed, dtype=np.float32) -> dict:
    """Create parameter tensors from a ``(name, shape, kind, fan_in)`` layout.

    Weights are uniform in +-sqrt(1/fan_in); biases zero; norm gains one.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape, kind, fan_in in layout:
        if kind == "uniform":
            out[name] = uniform_init(rng, shape, fan_in, dtype)
        elif kind == "zeros":
            out[name] = zeros_param(shape, dtype)
        elif kind == "ones":
            out[name] = ones_param(shape, dtype)
        else:
            raise ValueError(f"unknown init kind {kind!r}")
    return out
