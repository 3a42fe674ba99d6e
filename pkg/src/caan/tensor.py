"""Dense tensors with tape-based reverse-mode automatic differentiation.

Storage is float32 by default. Every operation computes in float64 and casts
the result back to the storage dtype of its inputs, so reductions accumulate
in 64 bit. Tensors built from float64 arrays with ``dtype=np.float64`` stay in
float64, which is what the finite-difference checks use.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError

DEFAULT_DTYPE = np.float32

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    """One recorded operation: its output, inputs and vector-Jacobian product."""

    __slots__ = ("op", "parents", "vjp")

    def __init__(self, op: str, parents: tuple, vjp: Callable):
        self.op = op
        self.parents = parents
        self.vjp = vjp


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.node = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self):
        backward(self)


def tensor(data, requires_grad=False, dtype=None, name=None) -> Tensor:
    """Build a tensor; float64 input keeps float64 only when ``dtype`` says so."""
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _f64(t: Tensor) -> np.ndarray:
    return t.data.astype(np.float64, copy=False)


def _result_dtype(*ts: Tensor):
    return np.result_type(*[t.data.dtype for t in ts])


def make_result(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it when gradients are needed.

    ``vjp(g)`` receives the float64 output gradient and returns one float64
    array (or None) per parent.
    """
    out_dtype = _result_dtype(*parents) if parents else DEFAULT_DTYPE
    out = Tensor(data, dtype=out_dtype)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op, tuple(parents), vjp)
    return out


# ---------------------------------------------------------------------------
# Tape and backward
# ---------------------------------------------------------------------------
class Tape:
    """Topologically ordered record of the operations that produced a tensor.

    Every operation appears after the operations producing its inputs, and
    :meth:`run` visits each one exactly once in reverse order.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.entries: list[Tensor] = []
        seen = set()
        # iterative post-order DFS; recursion would overflow on long LSTM chains
        stack = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if t.node is None:
                continue
            if expanded:
                self.entries.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in reversed(t.node.parents):
                if p.node is not None and id(p) not in seen:
                    stack.append((p, False))

    def __len__(self):
        return len(self.entries)

    def run(self, seed: np.ndarray):
        grads = {id(self.root): seed}
        for out in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            parent_grads = out.node.vjp(g)
            for p, pg in zip(out.node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    pg = unbroadcast(pg, p.shape)
                if p.node is None:
                    pg = pg.astype(p.data.dtype)
                    p.grad = pg if p.grad is None else p.grad + pg
                else:
                    key = id(p)
                    grads[key] = pg if key not in grads else grads[key] + pg


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    The graph is left intact, so a second call adds the same gradients again.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    if loss.node is None:
        seed = np.ones(loss.shape, dtype=loss.data.dtype)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    tape = Tape(loss)
    if not len(tape):
        raise ContractError("empty tape")
    tape.run(np.ones(loss.shape, dtype=np.float64))


def unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------
def _lift(a, b):
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    ref = a if isinstance(a, Tensor) else b
    if not isinstance(a, Tensor):
        a = Tensor(a, dtype=ref.dtype)
    if not isinstance(b, Tensor):
        b = Tensor(b, dtype=ref.dtype)
    return a, b


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast(a, b, "add")
    return make_result(_f64(a) + _f64(b), (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast(a, b, "sub")
    return make_result(_f64(a) - _f64(b), (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast(a, b, "mul")
    x, y = _f64(a), _f64(b)
    return make_result(x * y, (a, b), lambda g: (g * y, g * x), "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a, b)
    _check_broadcast(a, b, "div")
    x, y = _f64(a), _f64(b)
    return make_result(x / y, (a, b), lambda g: (g / y, -g * x / (y * y)), "div")


def neg(a: Tensor) -> Tensor:
    return make_result(-_f64(a), (a,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    y = np.exp(_f64(a))
    return make_result(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = _f64(a)
    return make_result(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(_f64(a))
    return make_result(y, (a,), lambda g: (g * 0.5 / y,), "sqrt")


def square(a: Tensor) -> Tensor:
    x = _f64(a)
    return make_result(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def abs_(a: Tensor) -> Tensor:
    x = _f64(a)
    return make_result(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    """Clip values; gradient passes where the input lies inside [lo, hi]."""
    x = _f64(a)
    y = np.clip(x, lo, hi)
    mask = np.ones_like(x)
    if lo is not None:
        mask = mask * (x >= lo)
    if hi is not None:
        mask = mask * (x <= hi)
    return make_result(y, (a,), lambda g: (g * mask,), "clamp")


# ---------------------------------------------------------------------------
# linear algebra, reductions and shape manipulation
# ---------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m×k and a k×n matrix (vectors are promoted)."""
    a, b = _lift(a, b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    x, y = _f64(a), _f64(b)

    def vjp(g):
        gx = g @ y.T if y.ndim == 2 else np.multiply.outer(g, y)
        if x.ndim == 2:
            gy = x.T @ g
        else:
            gy = np.multiply.outer(x, g)
        return gx, gy

    return make_result(x @ y, (a, b), vjp, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")
    return make_result(_f64(a).T, (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        y = _f64(a).reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} into {shape}") from None
    return make_result(y, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    x = _f64(a)
    y = x.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return make_result(y, (a,), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return sum_(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def getitem(a: Tensor, index) -> Tensor:
    x = _f64(a)
    y = x[index]

    def vjp(g):
        out = np.zeros_like(x)
        np.add.at(out, index, g)
        return (out,)

    return make_result(np.array(y), (a,), vjp, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    arrays = [_f64(t) for t in tensors]
    try:
        y = np.concatenate(arrays, axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat along axis {axis}: shapes {[t.shape for t in tensors]}"
        ) from None
    cuts = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_result(y, tensors, vjp, "concat")


def pad_rows(a: Tensor, after: int) -> Tensor:
    """Append ``after`` zero rows to a matrix."""
    if after == 0:
        return a
    x = _f64(a)
    n = x.shape[0]
    y = np.concatenate([x, np.zeros((after,) + x.shape[1:])], axis=0)
    return make_result(y, (a,), lambda g: (g[:n],), "pad_rows")


def ones_like(a: Tensor) -> Tensor:
    return Tensor(np.ones(a.shape), dtype=a.dtype)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
