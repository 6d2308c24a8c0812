"""A small reverse-mode autodiff engine on numpy float64 arrays.

Each :class:`Tensor` produced by an op records its parents and a closure that
maps the upstream gradient to parent gradients.  :func:`backward` walks the
recorded graph once in reverse topological order; a consumed graph cannot be
walked again.

Only what the models in this package need is provided.  Subgradients at kinks
(rectifier, positive part, abs, norm at 0) are 0.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr, ndtr

from . import special

__all__ = [
    "Tensor",
    "ShapeError",
    "TapeError",
    "tensor",
    "parameter",
    "backward",
    "no_finite_check",
]

_CHECK_FINITE = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(map(str, shapes))}")


class TapeError(RuntimeError):
    pass


@contextlib.contextmanager
def no_finite_check():
    global _CHECK_FINITE
    old = _CHECK_FINITE
    _CHECK_FINITE = False
    try:
        yield
    finally:
        _CHECK_FINITE = old


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "op", "_parents", "_backward", "_consumed")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self._parents = _parents
        self._backward = _backward
        self._consumed = False

    # -- convenience -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __len__(self):
        return len(self.data)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    need = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=need,
        _parents=tuple(parents) if need else (),
        _backward=backward_fn if need else None,
        op=op,
    )


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    return add(a, neg(as_tensor(b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _make(out, (a, b), bw, "div")


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("maximum", a, b)
    pick_a = a.data >= b.data

    def bw(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _make(np.maximum(a.data, b.data), (a, b), bw, "maximum")


# ---------------------------------------------------------------------------
# elementwise unary


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = -np.logaddexp(0.0, -x)
    sig_neg = 0.5 * (1.0 - np.tanh(0.5 * x))  # sigmoid(-x)
    return _make(out, (a,), lambda g: (g * sig_neg,), "log_sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def positive_part(a) -> Tensor:
    """``x+ = max(0, x)`` with subgradient 0 at 0."""
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "positive_part")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = a.data**p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g / (2.0 * out), 0.0),)

    return _make(out, (a,), bw, "sqrt")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clamp(a, lo=None, hi=None) -> Tensor:
    """Clip values; gradient passes only where the input lies inside ``[lo, hi]``."""
    a = as_tensor(a)
    x = a.data
    out = np.clip(x, lo, hi)
    inside = np.ones(x.shape, dtype=bool)
    if lo is not None:
        inside &= x >= lo
    if hi is not None:
        inside &= x <= hi
    return _make(out, (a,), lambda g: (g * inside,), "clamp")


def arccos(a, eps: float = 1e-12) -> Tensor:
    """arccos on inputs clamped to [-1, 1]; derivative denominator floored at ``eps``."""
    a = as_tensor(a)
    x = np.clip(a.data, -1.0, 1.0)
    out = np.arccos(x)

    def bw(g):
        return (-g / np.sqrt(np.maximum(1.0 - x * x, eps)),)

    return _make(out, (a,), bw, "arccos")


def normal_cdf(a) -> Tensor:
    a = as_tensor(a)
    out = ndtr(a.data)
    pdf = np.exp(-0.5 * a.data * a.data) / np.sqrt(2.0 * np.pi)
    return _make(out, (a,), lambda g: (g * pdf,), "normal_cdf")


def log_normal_cdf(a) -> Tensor:
    a = as_tensor(a)
    out = log_ndtr(a.data)
    pdf = np.exp(-0.5 * a.data * a.data) / np.sqrt(2.0 * np.pi)
    ratio = pdf / np.exp(out)
    return _make(out, (a,), lambda g: (g * ratio,), "log_normal_cdf")


# ---------------------------------------------------------------------------
# linear algebra / reductions / shape


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def bw(g):
        if a.ndim == 2 and b.ndim == 2:
            return g @ b.data.T, a.data.T @ g
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if b.ndim > 1 else np.tensordot(a.data, g, axes=(tuple(range(a.ndim - 1)), tuple(range(g.ndim))))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def prod(a, axis: int = -1) -> Tensor:
    """Product along one axis; gradient by exclusive prefix/suffix products."""
    a = as_tensor(a)
    x = np.moveaxis(a.data, axis, -1)
    out = np.prod(x, axis=-1)

    def bw(g):
        ones = np.ones(x.shape[:-1] + (1,))
        pre = np.concatenate([ones, np.cumprod(x, axis=-1)[..., :-1]], axis=-1)
        suf = np.concatenate([np.cumprod(x[..., ::-1], axis=-1)[..., :-1][..., ::-1], ones], axis=-1)
        return (np.moveaxis(g[..., None] * pre * suf, -1, axis),)

    return _make(out, (a,), bw, "prod")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in ts]) from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(ts), bw, "concat")


def take(a, idx) -> Tensor:
    """Indexing / row gather; scatter-add on the way back."""
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        ga = np.zeros(a.shape)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(out, (a,), bw, "take")


def norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; subgradient 0 at the origin."""
    a = as_tensor(a)
    out = np.sqrt(np.sum(a.data * a.data, axis=axis))

    def bw(g):
        o = np.expand_dims(out, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(o > 0, a.data / o, 0.0)
        return (np.expand_dims(g, axis) * unit,)

    return _make(out, (a,), bw, "norm")


# ---------------------------------------------------------------------------
# Poisson race


def poisson_race(mu1, mu2, tol: float = 1e-9) -> Tensor:
    """Elementwise P[Pois(mu1) <= Pois(mu2)] with the exact Bessel-form gradient.

    Entries in ``[-tol, 0)`` are treated as float noise and clamped to zero;
    their gradient passes through unchanged.
    """
    mu1, mu2 = as_tensor(mu1), as_tensor(mu2)
    if mu1.shape != mu2.shape:
        raise ShapeError("poisson_race", mu1.shape, mu2.shape)
    if (mu1.data < -tol).any() or (mu2.data < -tol).any():
        raise ValueError("poisson_race: negative rate below tolerance")
    a = np.maximum(mu1.data, 0.0)
    b = np.maximum(mu2.data, 0.0)
    out = special.poisson_race_prob(a, b)

    def bw(g):
        d1, d2 = special.poisson_race_grad(a, b)
        return g * d1, g * d2

    return _make(np.asarray(out), (mu1, mu2), bw, "poisson_race")


# ---------------------------------------------------------------------------
# backward


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: dict[str, Tensor] | Iterable[Tensor] | None = None) -> dict[str, np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. every named leaf that requires grad.

    If ``params`` is given, the result has an entry (zeros if unused) for each
    of them.  The recorded graph is consumed; a second call raises
    :class:`TapeError`.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo(loss)
    for node in order:
        if node._consumed:
            raise TapeError("graph already consumed by a previous backward()")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    result: dict[str, np.ndarray] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad and node.name is not None:
                result[node.name] = result.get(node.name, 0) + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    for node in order:
        if node._backward is not None:
            node._consumed = True
            node._backward = None
    if params is not None:
        items = params.values() if isinstance(params, dict) else params
        for p in items:
            if p.name not in result:
                result[p.name] = np.zeros_like(p.data)
    return result
