"""Float64 tensors with a small reverse-mode tape.

Only the operations the forecaster needs are provided. Every op takes and
returns :class:`Tensor`; plain arrays and Python scalars are promoted as
constants. Gradients are accumulated into ``Tensor.grad`` of leaf tensors
created with ``requires_grad=True`` when :func:`backward` is called on a
scalar.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "NonFiniteError", "ShapeError", "ContractError",
    "as_tensor", "apply", "backward", "no_grad", "checked", "is_grad_enabled",
    "add", "sub", "mul", "div", "neg", "matmul", "sum", "mean", "reshape",
    "permute", "take", "layer_norm", "silu", "sigmoid", "sqrt", "log", "abs", "square",
    "maximum", "xlogx", "dropout",
]


class NonFiniteError(FloatingPointError):
    """A NaN or Inf reached an op boundary while checked mode was on."""


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class _State(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.checked = False


_state = _State()


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Reject NaN/Inf at every op boundary inside the block."""
    prev = _state.checked
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjps: tuple[Callable[[np.ndarray], np.ndarray], ...] = ()
        self.name = name

    # -- array-like surface -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return permute(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply(out: np.ndarray, parents: Sequence, vjps: Sequence[Callable]) -> Tensor:
    """Register a primitive result with its vector-Jacobian products.

    ``vjps[i]`` maps the upstream gradient (shape of ``out``) to the gradient
    of ``parents[i]``. Parents that do not require grad are skipped.
    """
    out = np.asarray(out, dtype=np.float64)
    if _state.checked and not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite values in op output of shape {out.shape}")
    t = Tensor(out)
    if _state.grad_enabled:
        live = [(p, f) for p, f in zip(parents, vjps)
                if isinstance(p, Tensor) and p.requires_grad]
        if live:
            t.requires_grad = True
            t._parents = tuple(p for p, _ in live)
            t._vjps = tuple(f for _, f in live)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _topo(root: Tensor) -> list[Tensor]:
    # iterative post-order DFS; a node is marked only when expanded so that
    # every parent finishes before its child
    order, expanded = [], set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in expanded:
            continue
        expanded.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in expanded:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` and clear the tape."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            leaves[node] = node.grad
            continue
        for p, vjp in zip(node._parents, node._vjps):
            pg = vjp(g)
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
        node._parents, node._vjps = (), ()
    return leaves


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _pair(a, b):
    return as_tensor(a), as_tensor(b)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return apply(a.data + b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return apply(a.data - b.data, (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return apply(a.data * b.data, (a, b),
                 (lambda g: _unbroadcast(g * b.data, a.shape),
                  lambda g: _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return apply(out, (a, b),
                 (lambda g: _unbroadcast(g / b.data, a.shape),
                  lambda g: _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return apply(-a.data, (a,), (lambda g: -g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return apply(a.data * a.data, (a,), (lambda g: 2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return apply(out, (a,), (lambda g: 0.5 * g / out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return apply(np.log(a.data), (a,), (lambda g: g / a.data,))


def abs(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return apply(np.abs(a.data), (a,), (lambda g: g * np.sign(a.data),))


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; gradient passes only where ``a > floor``."""
    a = as_tensor(a)
    keep = a.data > floor
    return apply(np.where(keep, a.data, floor), (a,), (lambda g: g * keep,))


def xlogx(a) -> Tensor:
    """``a * log(a)`` with the continuous extension 0 at a = 0 (zero gradient there)."""
    a = as_tensor(a)
    pos = a.data > 0
    safe = np.where(pos, a.data, 1.0)
    out = np.where(pos, a.data * np.log(safe), 0.0)
    return apply(out, (a,), (lambda g: g * np.where(pos, np.log(safe) + 1.0, 0.0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _logistic(a.data)
    return apply(s, (a,), (lambda g: g * s * (1.0 - s),))


def _logistic(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _logistic(a.data)
    return apply(a.data * s, (a,), (lambda g: g * (s + a.data * s * (1.0 - s)),))


def dropout(a, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: keep with prob 1-rate, scale kept entries by 1/(1-rate)."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ContractError("dropout rate must be < 1")
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return apply(a.data * mask, (a,), (lambda g: g * mask,))


# ---------------------------------------------------------------------------
# contractions and reductions


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def ga(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def gb(g):
        if b.ndim == 2:
            # fold all batch dims into one contraction
            k, n = b.shape
            return a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return apply(out, (a, b), (ga, gb))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return apply(out, (a,), (vjp,))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    scale = out.size / a.size

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g * scale, a.shape).copy()

    return apply(out, (a,), (vjp,))


def layer_norm(a, eps: float) -> Tensor:
    """``(a - mean) / sqrt(var + eps)`` over the last axis (population variance)."""
    a = as_tensor(a)
    centered = a.data - a.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    y = centered * inv

    def vjp(g):
        return inv * (g - g.mean(axis=-1, keepdims=True)
                      - y * (g * y).mean(axis=-1, keepdims=True))

    return apply(y, (a,), (vjp,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return apply(a.data.reshape(shape), (a,), (lambda g: g.reshape(a.shape),))


def permute(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply(np.transpose(a.data, axes), (a,), (lambda g: np.transpose(g, inv),))


def take(a, index: np.ndarray) -> Tensor:
    """Gather along the last axis: ``out[..., *idx] = a[..., index]``.

    Used for slicing, padding by replication and patch extraction.
    """
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    out = a.data[..., index]
    n = a.shape[-1]

    def vjp(g):
        scatter = np.zeros((index.size, n))
        scatter[np.arange(index.size), index.ravel()] = 1.0
        flat = g.reshape(-1, index.size) @ scatter
        return flat.reshape(a.shape[:-1] + (n,))

    return apply(out, (a,), (vjp,))


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.all(np.isfinite(p.data)) for p in params)
