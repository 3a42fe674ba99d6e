"""Central finite-difference oracle for the autodiff engine."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    n_checked: int
    analytic: np.ndarray | None = None
    numeric: np.ndarray | None = None


def pooled_error(results) -> float:
    """Relative error of all probed entries taken together as one vector."""
    a = np.concatenate([r.analytic for r in results])
    n = np.concatenate([r.numeric for r in results])
    return relative_error(a, n)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(fn, tensors, names=None, eps=1e-3, max_entries=None, seed=0, method="central",
                    global_floor=None):
    """Compare backprop gradients of the scalar ``fn()`` with central differences.

    ``tensors`` should be float64 leaves with ``requires_grad=True``. Tensors
    with at most ``max_entries`` elements (or all, when it is None) are probed
    coordinate by coordinate. Larger tensors are probed along ``max_entries``
    seeded random Gaussian directions, comparing ``<grad, v>`` with the
    central difference of ``fn`` along ``v``. Returns one
    :class:`GradCheckResult` per tensor.

    ``method="ridders"`` replaces the single central difference by Ridders'
    extrapolation starting at step ``eps``. It picks the step from the
    self-consistency of the difference table alone, which keeps it reliable
    on graphs with sharp curvature where no single fixed step suits every
    probe.

    ``global_floor`` bounds each tensor's error denominator below by that
    fraction of the norm of all probed gradients. Deep graphs can hold
    tensors whose gradient is a billionth of the rest (a norm layer over two
    time steps nearly cancels its input); finite differences cannot resolve
    those to a relative precision, so they are judged against the global
    scale instead.
    """
    if method not in ("central", "ridders"):
        raise ValueError(f"unknown method {method!r}")
    tensors = list(tensors)
    names = list(names) if names is not None else [f"t{i}" for i in range(len(tensors))]
    for t in tensors:
        t.grad = None
    loss = fn()
    backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in tensors]

    rng = np.random.default_rng(seed)
    results = []
    with no_grad():
        for name, t, ga in zip(names, tensors, analytic):
            flat = t.data.reshape(-1)
            if max_entries is None or flat.size <= max_entries:
                directions = None
                n_probe = flat.size
            else:
                directions = rng.standard_normal((max_entries, flat.size))
                directions /= np.linalg.norm(directions, axis=1, keepdims=True)
                n_probe = max_entries
            numeric = np.empty(n_probe)
            expected = np.empty(n_probe)
            for j in range(n_probe):
                orig = flat.copy()
                if directions is None:
                    step = np.zeros(flat.size)
                    step[j] = eps
                    expected[j] = ga.reshape(-1)[j]
                else:
                    step = eps * directions[j]
                    expected[j] = float(ga.reshape(-1) @ directions[j])
                if method == "central":
                    numeric[j] = _central(fn, flat, orig, step, eps)
                else:
                    numeric[j] = _ridders(fn, flat, orig, step / eps, eps)
            results.append(GradCheckResult(name, relative_error(expected, numeric), n_probe, expected, numeric))
    if global_floor is not None:
        scale = float(np.linalg.norm(np.concatenate([r.analytic for r in results])))
        for r in results:
            r.rel_error = relative_error(r.analytic, r.numeric, floor=max(global_floor * scale, 1e-8))
    return results


def _central(fn, flat, orig, step, eps):
    flat[:] = orig + step
    up = fn().item()
    flat[:] = orig - step
    down = fn().item()
    flat[:] = orig
    return (up - down) / (2 * eps)


def _ridders(fn, flat, orig, unit, h, shrink=2.0, n_rows=10, safe=2.0):
    """Ridders' polynomial extrapolation of the derivative along ``unit``."""
    table = np.zeros((n_rows, n_rows))
    table[0, 0] = _central(fn, flat, orig, h * unit, h)
    best, err = table[0, 0], np.inf
    for i in range(1, n_rows):
        h /= shrink
        table[0, i] = _central(fn, flat, orig, h * unit, h)
        fac = shrink * shrink
        for j in range(1, i + 1):
            table[j, i] = (table[j - 1, i] * fac - table[j - 1, i - 1]) / (fac - 1.0)
            fac *= shrink * shrink
            e = max(abs(table[j, i] - table[j - 1, i]), abs(table[j, i] - table[j - 1, i - 1]))
            if e <= err:
                err, best = e, table[j, i]
        if abs(table[i, i] - table[i - 1, i - 1]) >= safe * err:
            break
    return best


def as_f64_leaf(array) -> Tensor:
    return Tensor(np.asarray(array, dtype=np.float64), requires_grad=True, dtype=np.float64)
