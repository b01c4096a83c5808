"""Dense float64 tensors with reverse-mode automatic differentiation.

A small define-by-run engine: every operation records its parents and a
closure that maps the output gradient to parent gradients, and
``Tensor.backward`` replays the recorded graph in reverse topological
order.  The kernel set is exactly what a small transformer encoder, the
two contrastive pre-training losses, and the fusion classifier need --
no more.  Everything is float64 so finite-difference checks can be held
to tight tolerances.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "matmul",
    "softmax",
    "layer_norm",
    "dropout",
    "gelu",
    "relu",
    "clip_min",
    "concat",
    "reshape",
    "transpose",
    "take",
    "embedding",
    "squared_distance",
    "dot",
    "l2_norm",
    "grad_check",
    "set_finite_checks",
    "finite_checks",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """A forward op produced NaN/Inf while finite checks were enabled."""


# NaN/Inf detection at op boundaries. On by default (tests rely on it);
# training loops switch it off for the hot path.
_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf detection at op boundaries; returns previous value."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


@contextmanager
def finite_checks(enabled: bool):
    previous = set_finite_checks(enabled)
    try:
        yield
    finally:
        set_finite_checks(previous)


def _guard(values: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.isfinite(values).all():
        raise NumericError(f"non-finite values produced by op '{op}'")


class _Node:
    """Tape record: the producing op, its parents, and the gradient map."""

    __slots__ = ("op", "parents", "grad_fn")

    def __init__(self, op, parents, grad_fn):
        self.op = op
        self.parents = parents
        self.grad_fn = grad_fn


class Tensor:
    """Row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("values", "requires_grad", "grad", "node")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.array(values, dtype=np.float64)
        _guard(arr, "tensor")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.node = None

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() requires a scalar, got shape {self.values.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def backward(self) -> None:
        """Reverse accumulation from a scalar; grads add into ``.grad``."""
        if self.values.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.values.shape}")
        if not self.requires_grad:
            return
        order = _toposort(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.values)}
        for t in reversed(order):
            g = pending.pop(id(t), None)
            if g is None:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.values)
            t.grad += g
            if t.node is None:
                continue
            parent_grads = t.node.grad_fn(g)
            for parent, pg in zip(t.node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                buf = pending.get(id(parent))
                if buf is None:
                    pending[id(parent)] = np.array(pg)
                else:
                    buf += pg

    # Operator sugar; scalars are wrapped as constants.
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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def _from_op(values: np.ndarray, op: str, parents: tuple, grad_fn) -> Tensor:
    _guard(values, op)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = np.zeros_like(values) if out.requires_grad else None
    out.node = _Node(op, parents, grad_fn) if out.requires_grad else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_values(a: Tensor, b: Tensor, op: str, fn) -> np.ndarray:
    try:
        return fn(a.values, b.values)
    except ValueError as exc:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast_values(a, b, "add", np.add)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op(out, "add", (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast_values(a, b, "sub", np.subtract)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op(out, "sub", (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast_values(a, b, "mul", np.multiply)

    def grad_fn(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)

    return _from_op(out, "mul", (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast_values(a, b, "div", np.divide)

    def grad_fn(g):
        ga = _unbroadcast(g / b.values, a.shape)
        gb = _unbroadcast(-g * a.values / (b.values * b.values), b.shape)
        return ga, gb

    return _from_op(out, "div", (a, b), grad_fn)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)

    def grad_fn(g):
        return (g * c,)

    return _from_op(x.values * c, "scale", (x,), grad_fn)


def pow_const(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    exponent = float(exponent)
    out = x.values ** exponent

    def grad_fn(g):
        return (g * exponent * x.values ** (exponent - 1.0),)

    return _from_op(out, "pow", (x,), grad_fn)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.values)

    def grad_fn(g):
        return (g * out,)

    return _from_op(out, "exp", (x,), grad_fn)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.values)

    def grad_fn(g):
        return (g / x.values,)

    return _from_op(out, "log", (x,), grad_fn)


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.values)

    def grad_fn(g):
        return (g * 0.5 / out,)

    return _from_op(out, "sqrt", (x,), grad_fn)


def matmul(a, b) -> Tensor:
    """Matrix product; leading axes broadcast numpy-style."""
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for shapes {a.shape} and {b.shape}")
    try:
        out = a.values @ b.values
    except ValueError as exc:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from exc

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.values, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.values, -1, -2) @ g, b.shape)
        return ga, gb

    return _from_op(out, "matmul", (a, b), grad_fn)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    if not -x.values.ndim <= axis < x.values.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _from_op(out, "softmax", (x,), grad_fn)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Zero-mean / unit-variance over the last axis, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    n = x.shape[-1] if x.values.ndim else 0
    if n < 1:
        raise ShapeError(f"layer_norm: last axis must have length >= 1, got shape {x.shape}")
    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.values + bias.values

    def grad_fn(g):
        g_xhat = g * gain.values
        gx = inv * (
            g_xhat
            - g_xhat.mean(axis=-1, keepdims=True)
            - xhat * (g_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        g_gain = _unbroadcast(g * xhat, gain.shape)
        g_bias = _unbroadcast(g, bias.shape)
        return gx, g_gain, g_bias

    return _from_op(out, "layer_norm", (x, gain, bias), grad_fn)


def dropout(x, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; exact identity when not training or p == 0."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    out = x.values * keep

    def grad_fn(g):
        return (g * keep,)

    return _from_op(out, "dropout", (x,), grad_fn)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.values * _INV_SQRT2))
    out = x.values * cdf

    def grad_fn(g):
        pdf = np.exp(-0.5 * x.values * x.values) * _INV_SQRT2PI
        return (g * (cdf + x.values * pdf),)

    return _from_op(out, "gelu", (x,), grad_fn)


def clip_min(x, floor: float) -> Tensor:
    """Elementwise max(x, floor); gradient passes only where x > floor."""
    x = as_tensor(x)
    out = np.maximum(x.values, floor)
    mask = x.values > floor

    def grad_fn(g):
        return (g * mask,)

    return _from_op(out, "clip_min", (x,), grad_fn)


def relu(x) -> Tensor:
    return clip_min(x, 0.0)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    ax = axis % out.ndim
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, offsets, axis=ax))

    return _from_op(out, "concat", tuple(tensors), grad_fn)


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.values.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis=axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    return _from_op(np.asarray(out), "sum", (x,), grad_fn)


def tensor_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.values.mean(axis=axis, keepdims=keepdims)
    count = x.values.size if axis is None else x.shape[axis]

    def grad_fn(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy() / count,)
        gg = g if keepdims else np.expand_dims(g, axis=axis)
        return (np.broadcast_to(gg, x.shape).copy() / count,)

    return _from_op(np.asarray(out), "mean", (x,), grad_fn)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.values.reshape(shape)

    def grad_fn(g):
        return (g.reshape(x.shape),)

    return _from_op(out, "reshape", (x,), grad_fn)


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    out = np.transpose(x.values, axes)
    inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.transpose(g, inverse),)

    return _from_op(out, "transpose", (x,), grad_fn)


def take(x, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (the axis is dropped)."""
    x = as_tensor(x)
    out = np.take(x.values, index, axis=axis)
    slicer = [slice(None)] * x.values.ndim
    slicer[axis] = index
    slicer = tuple(slicer)

    def grad_fn(g):
        buf = np.zeros_like(x.values)
        buf[slicer] = g
        return (buf,)

    return _from_op(out, "take", (x,), grad_fn)


def embedding(table, ids) -> Tensor:
    """Row lookup into ``table`` [V, E]; gradient scatter-adds."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: id out of range [0, {table.shape[0]}), got min={ids.min()} max={ids.max()}"
        )
    out = table.values[ids]

    def grad_fn(g):
        buf = np.zeros_like(table.values)
        np.add.at(buf, ids, g)
        return (buf,)

    return _from_op(out, "embedding", (table,), grad_fn)


def squared_distance(a, b) -> Tensor:
    """Squared Euclidean distance along the last axis."""
    d = sub(a, b)
    return tensor_sum(mul(d, d), axis=-1)


def dot(a, b) -> Tensor:
    return tensor_sum(mul(a, b))


def l2_norm(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    return sqrt(tensor_sum(mul(x, x), axis=axis, keepdims=keepdims))


def grad_check(f, x, h: float = 1e-5, coords=None) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    ``x`` is a Tensor or a sequence of Tensors fed to ``f`` positionally;
    ``f`` must return a scalar Tensor.  ``coords`` optionally restricts
    probing to the given flat indices per tensor (None probes all).
    The error at each coordinate is |analytic - numeric| normalized by
    max(1, |analytic|, |numeric|).
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = np.zeros_like(t.values)
    y = f(*xs)
    if y.values.size != 1:
        raise ValueError(f"grad_check target must be scalar, got shape {y.shape}")
    y.backward()
    analytic = [t.grad.copy() for t in xs]
    if not np.all([np.isfinite(a).all() for a in analytic]):
        raise NumericError("non-finite analytic gradient in grad_check")

    if coords is None:
        probe = [range(t.values.size) for t in xs]
    else:
        probe = [coords[i] if i < len(coords) and coords[i] is not None else range(xs[i].values.size)
                 for i in range(len(xs))]

    worst = 0.0
    for t, grads, idxs in zip(xs, analytic, probe):
        flat = t.values.reshape(-1)
        gflat = grads.reshape(-1)
        for i in idxs:
            original = flat[i]
            flat[i] = original + h
            hi = f(*xs).item()
            flat[i] = original - h
            lo = f(*xs).item()
            flat[i] = original
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NumericError("non-finite intermediate in grad_check probe")
            numeric = (hi - lo) / (2.0 * h)
            a = gflat[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
    return worst
