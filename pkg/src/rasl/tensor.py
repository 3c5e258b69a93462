"""Shaped arrays with a recorded computation graph and reverse-mode gradients.

A :class:`Value` wraps a contiguous NumPy array. Every differentiable
operation whose inputs require gradients appends one node to the current
thread's :class:`Graph`; :func:`backward` walks that record in exact reverse
insertion order and then clears it, so each training step builds a fresh
graph.

Arithmetic defaults to 32-bit floats. ``with precision(np.float64):`` switches
newly created values to 64-bit, which the finite-difference checks use.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import AxisError, DomainError, InvalidCallError, LengthError, NumericError, ShapeError

__all__ = [
    "Value",
    "Graph",
    "precision",
    "default_dtype",
    "no_grad",
    "is_grad_enabled",
    "create",
    "constant",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scalar_mul",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "abs",
    "sqrt",
    "square",
    "log_sigmoid",
    "reduce",
    "sum",
    "mean",
    "matmul",
    "transpose",
    "reshape",
    "take_along_axis",
    "concat",
    "pad",
    "softmax",
    "log_softmax",
    "conv1d",
    "transposed_conv1d",
    "same_padding",
    "layer_norm",
    "cosine_similarity",
    "l2_normalize",
    "backward",
    "grad_check",
]


class _State(threading.local):
    def __init__(self) -> None:
        self.dtype = np.dtype(np.float32)
        self.grad_enabled = True
        self.graph = Graph()


def default_dtype() -> np.dtype:
    return _state.dtype


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for newly created values."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dtype}")
    previous = _state.dtype
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording (inference, finite differences)."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def is_grad_enabled() -> bool:
    return _state.grad_enabled


class _Node:
    __slots__ = ("op", "out", "inputs", "backward", "graph")

    def __init__(self, op, out, inputs, backward, graph):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward = backward
        self.graph = graph


class Graph:
    """Append-only record of differentiable operations.

    Inputs are always recorded before the outputs that consume them, so the
    insertion order is a topological order.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, out: "Value", inputs: tuple, backward: Callable) -> None:
        node = _Node(op, out, inputs, backward, self)
        self.nodes.append(node)
        out._node = node

    def clear(self) -> None:
        for node in self.nodes:
            node.out._node = None
        self.nodes = []


_state = _State()


def current_graph() -> Graph:
    return _state.graph


def reset_graph() -> None:
    """Drop any recorded but unconsumed operations."""
    _state.graph.clear()


class Value:
    """A shaped float array that may take part in gradient computation."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_node", "__weakref__")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=_state.dtype, copy=True, order="C")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._node: _Node | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Value":
        v = cls.__new__(cls)
        arr = np.asarray(arr)
        v.data = arr if arr.flags.c_contiguous else arr.copy(order="C")
        v.grad = None
        v.requires_grad = requires_grad
        v.name = None
        v._node = None
        return v

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar()

    def detach(self) -> "Value":
        return Value._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Value(shape={list(self.shape)}{label}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)

    def __getitem__(self, index) -> "Value":
        return _getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Value":
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Value":
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Value":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Value":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> "Value":
        return transpose(self, None)


def _not_scalar():
    raise InvalidCallError("item() requires a single-element value")


# --------------------------------------------------------------------------
# recording helpers
# --------------------------------------------------------------------------


def _lift(x, like: np.ndarray | None = None) -> Value:
    if isinstance(x, Value):
        return x
    dtype = like.dtype if like is not None else _state.dtype
    return Value._wrap(np.asarray(x, dtype=dtype))


def _make(op: str, out: np.ndarray, inputs: tuple[Value, ...], backward: Callable) -> Value:
    needs = _state.grad_enabled and any(v.requires_grad for v in inputs)
    result = Value._wrap(out, requires_grad=needs)
    if needs:
        _state.graph.record(op, result, inputs, backward)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Value, b: Value) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"cannot combine shapes {list(a.shape)} and {list(b.shape)}") from exc


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what}: non-finite input")


# --------------------------------------------------------------------------
# creation
# --------------------------------------------------------------------------


def create(
    shape: Sequence[int],
    init: str = "zeros",
    *,
    value: float = 0.0,
    low: float = 0.0,
    high: float = 1.0,
    mean: float = 0.0,
    std: float = 1.0,
    seed: int | None = None,
    requires_grad: bool = False,
    name: str | None = None,
) -> Value:
    """Create a value of ``shape`` filled by ``init``.

    ``init`` is one of ``"zeros"``, ``"constant"`` (uses ``value``),
    ``"uniform"`` (``low``, ``high``, ``seed``) or ``"gaussian"``
    (``mean``, ``std``, ``seed``). Random draws are made in float64 and then
    cast, so content depends only on the seed and the shape.
    """
    shape = tuple(int(n) for n in shape)
    if any(n < 1 for n in shape):
        raise ShapeError(f"extents must be positive, got {list(shape)}")
    if init == "zeros":
        data = np.zeros(shape)
    elif init == "constant":
        data = np.full(shape, value, dtype=np.float64)
    elif init in ("uniform", "gaussian"):
        if seed is None:
            raise ValueError(f"{init} initialisation needs a seed")
        rng = np.random.default_rng(seed)
        if init == "uniform":
            data = rng.uniform(low, high, size=shape)
        else:
            data = rng.normal(mean, std, size=shape)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Value(data, requires_grad=requires_grad, name=name)


def constant(data) -> Value:
    return Value(data)


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Value:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Value:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Value:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make("mul", ad * bd, (a, b), bw)


def div(a, b) -> Value:
    a, b = _coerce(a, b)
    _broadcast_shape(a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        gb = -g * out / bd
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("div", out, (a, b), bw)


def neg(x: Value) -> Value:
    return _make("neg", -x.data, (x,), lambda g: (-g,))


def scalar_mul(x: Value, c: float) -> Value:
    c = x.data.dtype.type(c)
    return _make("scalar_mul", x.data * c, (x,), lambda g: (g * c,))


def _coerce(a, b) -> tuple[Value, Value]:
    if isinstance(a, Value):
        return a, _lift(b, a.data)
    b = _lift(b)
    return _lift(a, b.data), b


def relu(x: Value) -> Value:
    mask = x.data > 0
    return _make("relu", np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def _sigmoid(a: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1 / (1 + e), e / (1 + e)).astype(a.dtype)


def sigmoid(x: Value) -> Value:
    out = _sigmoid(x.data)
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def log(x: Value) -> Value:
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive entry")
    xd = x.data
    return _make("log", np.log(xd), (x,), lambda g: (g / xd,))


def exp(x: Value) -> Value:
    out = np.exp(x.data)
    return _make("exp", out, (x,), lambda g: (g * out,))


def abs(x: Value) -> Value:  # noqa: A001 - mirrors the op name
    sign = np.sign(x.data)
    return _make("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def sqrt(x: Value) -> Value:
    if np.any(x.data < 0):
        raise DomainError("sqrt of a negative entry")
    out = np.sqrt(x.data)
    return _make("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def square(x: Value) -> Value:
    xd = x.data
    return _make("square", xd * xd, (x,), lambda g: (2 * g * xd,))


def log_sigmoid(x: Value) -> Value:
    """``log(sigmoid(x))`` evaluated without underflow."""
    xd = x.data
    out = np.minimum(xd, 0) - np.log1p(np.exp(-np.abs(xd)))
    return _make("log_sigmoid", out.astype(xd.dtype), (x,), lambda g: (g * _sigmoid(-xd),))


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scalar-mul": scalar_mul,
    "relu": relu,
    "sigmoid": sigmoid,
    "log": log,
    "exp": exp,
    "abs": abs,
    "sqrt": sqrt,
    "square": square,
    "neg": neg,
    "log-sigmoid": log_sigmoid,
}


def elementwise(op: str, *args) -> Value:
    """Dispatch an elementwise operation by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# --------------------------------------------------------------------------
# reductions and shape manipulation
# --------------------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise AxisError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(x: Value, axis=None, keepdims: bool = False) -> Value:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(out, dtype=x.dtype), (x,), bw)


def mean(x: Value, axis=None, keepdims: bool = False) -> Value:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    shape = x.shape
    out = x.data.mean(axis=axes, keepdims=keepdims)
    scale = x.dtype.type(1.0 / count)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g * scale, shape).copy(),)

    return _make("mean", np.asarray(out, dtype=x.dtype), (x,), bw)


def reduce(op: str, x: Value, axis=None, keepdims: bool = False) -> Value:
    if op == "sum":
        return sum(x, axis, keepdims)
    if op == "mean":
        return mean(x, axis, keepdims)
    raise ValueError(f"unknown reduction {op!r}")


def matmul(a: Value, b: Value) -> Value:
    """Matrix product with NumPy batching rules (leading axes broadcast)."""
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul needs operands of rank >= 1")
    ad = a.data[None, :] if a.ndim == 1 else a.data
    bd = b.data[:, None] if b.ndim == 1 else b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"inner extents differ: {list(a.shape)} @ {list(b.shape)}")
    # a stack of rows times one matrix is a single GEMM on the flattened rows
    flat = ad.ndim > 2 and bd.ndim == 2
    try:
        if flat:
            out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + bd.shape[-1:])
        else:
            out = np.matmul(ad, bd)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    full_shape = out.shape
    if a.ndim == 1:
        out = out[..., 0, :]
    if b.ndim == 1:
        out = out[..., 0]

    def bw(g):
        g = g.reshape(full_shape)
        if flat:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape).reshape(a.shape)
            gb = (ad.reshape(-1, ad.shape[-1]).T @ g2).reshape(b.shape)
            return ga, gb
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        ga = _unbroadcast(ga, ad.shape).reshape(a.shape)
        gb = _unbroadcast(gb, bd.shape).reshape(b.shape)
        return ga, gb

    return _make("matmul", out, (a, b), bw)


def transpose(x: Value, axes=None) -> Value:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(a % x.ndim for a in axes)
    inverse = tuple(np.argsort(axes))
    return _make("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def reshape(x: Value, shape) -> Value:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _make("reshape", out, (x,), lambda g: (g.reshape(old),))


def _getitem(x: Value, index) -> Value:
    out = x.data[index]
    shape, dtype = x.shape, x.dtype

    basic = _is_basic_index(index)

    def bw(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make("getitem", np.array(out, dtype=dtype), (x,), bw)


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is None or p is Ellipsis for p in parts)


def _along_axis_index(indices: np.ndarray, axis: int, ndim: int) -> tuple:
    idx = []
    for d in range(ndim):
        if d == axis:
            idx.append(indices)
        else:
            shape = [1] * ndim
            shape[d] = indices.shape[d]
            idx.append(np.arange(indices.shape[d]).reshape(shape))
    return tuple(idx)


def take_along_axis(x: Value, indices, axis: int) -> Value:
    """Gather entries of ``x`` along ``axis``; ``indices`` is treated as constant.

    ``indices`` may have fewer trailing axes than ``x``; it is then broadcast
    over them, which is how whole rows are gathered.
    """
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % x.ndim
    while indices.ndim < x.ndim:
        indices = indices[..., None]
    shape = list(x.shape)
    shape[axis] = indices.shape[axis]
    indices = np.broadcast_to(indices, shape)
    out = np.take_along_axis(x.data, indices, axis=axis)
    xshape, dtype = x.shape, x.dtype

    def bw(g):
        full = np.zeros(xshape, dtype=dtype)
        np.add.at(full, _along_axis_index(indices, axis, len(xshape)), g)
        return (full,)

    return _make("take_along_axis", out, (x,), bw)


def concat(values: Sequence[Value], axis: int = 0) -> Value:
    values = tuple(values)
    axis = axis % values[0].ndim
    try:
        out = np.concatenate([v.data for v in values], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, values, bw)


def pad(x: Value, before: int, after: int, axis: int = -1) -> Value:
    """Zero-pad ``x`` along ``axis``."""
    axis = axis % x.ndim
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    n = x.shape[axis]
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(before, before + n)
    sl = tuple(sl)
    return _make("pad", np.pad(x.data, widths), (x,), lambda g: (g[sl],))


# --------------------------------------------------------------------------
# normalisations
# --------------------------------------------------------------------------


def softmax(x: Value, axis: int = -1) -> Value:
    _check_finite(x.data, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (x,), bw)


def log_softmax(x: Value, axis: int = -1) -> Value:
    _check_finite(x.data, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make("log_softmax", out, (x,), bw)


def layer_norm(x: Value, gain: Value | None = None, bias: Value | None = None, eps: float = 1e-5) -> Value:
    """Normalise the last axis to zero mean and unit variance, then apply ``gain``/``bias``."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = centered * inv
    out = xhat
    inputs: list[Value] = [x]
    if gain is not None:
        out = out * gain.data
        inputs.append(gain)
    if bias is not None:
        out = out + bias.data
        inputs.append(bias)
    lead = tuple(range(xd.ndim - 1))

    def bw(g):
        dxhat = g * gain.data if gain is not None else g
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [dx]
        if gain is not None:
            grads.append((g * xhat).sum(axis=lead))
        if bias is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _make("layer_norm", out.astype(xd.dtype, copy=False), tuple(inputs), bw)


def cosine_similarity(a: Value, b: Value, axis: int = -1) -> Value:
    """Cosine similarity along ``axis``; a zero-norm operand gives 0 with zero gradient."""
    a, b = _coerce(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine similarity needs equal shapes, got {list(a.shape)} and {list(b.shape)}")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    nb = np.sqrt((bd * bd).sum(axis=axis, keepdims=True))
    valid = (na > 0) & (nb > 0)
    safe_a = np.where(na > 0, na, 1)
    safe_b = np.where(nb > 0, nb, 1)
    dot = (ad * bd).sum(axis=axis, keepdims=True)
    sim = np.where(valid, dot / (safe_a * safe_b), 0)

    def bw(g):
        g = np.expand_dims(g, axis) * valid
        ga = g * (bd / (safe_a * safe_b) - sim * ad / (safe_a * safe_a))
        gb = g * (ad / (safe_a * safe_b) - sim * bd / (safe_b * safe_b))
        return ga, gb

    return _make("cosine_similarity", np.squeeze(sim, axis=axis).astype(ad.dtype), (a, b), bw)


def l2_normalize(x: Value, axis: int = -1) -> Value:
    """Scale slices along ``axis`` to unit length; zero slices stay zero."""
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1)
    out = xd / safe

    def bw(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / safe,)

    return _make("l2_normalize", out, (x,), bw)


# --------------------------------------------------------------------------
# convolutions
# --------------------------------------------------------------------------


def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int]:
    """Zero padding that yields ``ceil(length / stride)`` outputs."""
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


def _windows(xp: np.ndarray, kernel: int, stride: int, l_out: int) -> np.ndarray:
    # (B, C, L_out, K) strided view
    return sliding_window_view(xp, kernel, axis=-1)[:, :, : (l_out - 1) * stride + 1 : stride]


def _conv_out(xp: np.ndarray, w: np.ndarray, stride: int, l_out: int) -> np.ndarray:
    win = _windows(xp, w.shape[-1], stride, l_out)
    return np.einsum("bclk,ock->bol", win, w, optimize=True)


def _conv_scatter(g: np.ndarray, w: np.ndarray, stride: int, length: int) -> np.ndarray:
    # adjoint of _conv_out with respect to xp
    cols = np.einsum("bol,ock->bclk", g, w, optimize=True)
    out = np.zeros((g.shape[0], w.shape[1], length), dtype=g.dtype)
    l_out = g.shape[-1]
    for k in range(w.shape[-1]):
        out[:, :, k : k + (l_out - 1) * stride + 1 : stride] += cols[..., k]
    return out


def _conv_weight_grad(g: np.ndarray, xp: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    win = _windows(xp, kernel, stride, g.shape[-1])
    return np.einsum("bol,bclk->ock", g, win, optimize=True)


def conv1d(x: Value, kernels: Value, bias: Value | None = None, stride: int = 1, padding=0) -> Value:
    """1-D cross-correlation.

    ``x`` is ``(C_in, L)`` or ``(B, C_in, L)``; ``kernels`` is
    ``(C_out, C_in, K)``. ``padding`` is an int, a ``(left, right)`` pair or
    ``"same"``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or kernels.ndim != 3:
        raise ShapeError("conv1d expects x of rank 2/3 and kernels of rank 3")
    c_out, c_in, kernel = kernels.shape
    if xd.shape[1] != c_in:
        raise ShapeError(f"input has {xd.shape[1]} channels, kernels expect {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape [{c_out}]")
    length = xd.shape[-1]
    if padding == "same":
        left, right = same_padding(length, kernel, stride)
    elif isinstance(padding, (int, np.integer)):
        left = right = int(padding)
    else:
        left, right = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (left, right))) if (left or right) else xd
    lp = xp.shape[-1]
    if lp < kernel:
        raise LengthError(f"padded length {lp} shorter than kernel {kernel}")
    l_out = (lp - kernel) // stride + 1
    wd = kernels.data
    out = _conv_out(xp, wd, stride, l_out)
    if bias is not None:
        out = out + bias.data[:, None]
    if not batched:
        out = out[0]
    inputs = (x, kernels) if bias is None else (x, kernels, bias)

    def bw(g):
        g3 = g if batched else g[None]
        gxp = _conv_scatter(g3, wd, stride, lp)
        gx = gxp[:, :, left : left + length]
        gx = gx if batched else gx[0]
        gw = _conv_weight_grad(g3, xp, kernel, stride)
        if bias is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    return _make("conv1d", out.astype(xd.dtype, copy=False), inputs, bw)


def transposed_conv1d(x: Value, kernels: Value, bias: Value | None = None, stride: int = 1) -> Value:
    """Adjoint of :func:`conv1d` (no padding) sharing its kernel layout.

    ``kernels`` is ``(C_in, C_out, K)``: the same array a ``conv1d`` mapping
    ``C_out -> C_in`` would use. Output length is ``stride * (L - 1) + K``.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    if xd.ndim != 3 or kernels.ndim != 3:
        raise ShapeError("transposed_conv1d expects x of rank 2/3 and kernels of rank 3")
    c_in, c_out, kernel = kernels.shape
    if xd.shape[1] != c_in:
        raise ShapeError(f"input has {xd.shape[1]} channels, kernels expect {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape [{c_out}]")
    length = xd.shape[-1]
    l_out = stride * (length - 1) + kernel
    wd = kernels.data
    out = _conv_scatter(xd, wd, stride, l_out)
    if bias is not None:
        out = out + bias.data[:, None]
    if not batched:
        out = out[0]
    inputs = (x, kernels) if bias is None else (x, kernels, bias)

    def bw(g):
        g3 = g if batched else g[None]
        gx = _conv_out(g3, wd, stride, length)
        gx = gx if batched else gx[0]
        gw = _conv_weight_grad(xd, g3, kernel, stride)
        if bias is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    return _make("transposed_conv1d", out.astype(xd.dtype, copy=False), inputs, bw)


# --------------------------------------------------------------------------
# differentiation
# --------------------------------------------------------------------------


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    The current graph is consumed: it is cleared once the sweep finishes.
    """
    if loss.size != 1:
        raise InvalidCallError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    graph = _state.graph
    seed = np.ones_like(loss.data)
    node = loss._node
    if node is None:
        if loss.requires_grad:
            _accumulate(loss, seed)
        return
    if node.graph is not graph:
        raise InvalidCallError("loss was recorded on a graph that has been reset")
    end = graph.nodes.index(node) if graph.nodes[-1] is not node else len(graph.nodes) - 1
    pending: dict[int, np.ndarray] = {id(loss): seed}
    try:
        for n in reversed(graph.nodes[: end + 1]):
            g = pending.pop(id(n.out), None)
            if g is None:
                continue
            for inp, gi in zip(n.inputs, n.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    _accumulate(inp, gi)
                else:
                    key = id(inp)
                    prev = pending.get(key)
                    pending[key] = gi if prev is None else prev + gi
    finally:
        graph.clear()


def _accumulate(leaf: Value, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


def grad_check(f: Callable[[Value], Value], x: Value, eps: float = 1e-6, reference_dtype=np.float64) -> float:
    """Largest relative gap between the analytic and central-difference gradient.

    Per coordinate: ``|analytic - fd| / (|analytic| + eps)``. The analytic
    gradient is taken at ``x``'s own precision; the finite differences are
    evaluated with ``x`` promoted to ``reference_dtype`` (pass ``None`` to use
    ``x``'s dtype).
    """
    reset_graph()
    probe = Value._wrap(x.data.copy(), requires_grad=True)
    loss = f(probe)
    if loss.size != 1:
        raise InvalidCallError("grad_check needs a scalar-valued function")
    backward(loss)
    analytic = probe.grad if probe.grad is not None else np.zeros_like(probe.data)
    analytic = analytic.astype(np.float64)

    ref = np.dtype(reference_dtype) if reference_dtype is not None else x.dtype
    base = x.data.astype(ref)
    numeric = np.empty(base.shape, dtype=np.float64)
    flat = base.reshape(-1)
    with no_grad(), precision(ref):
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f(Value._wrap(base.copy())).item())
            flat[i] = orig - eps
            lo = float(f(Value._wrap(base.copy())).item())
            flat[i] = orig
            numeric.reshape(-1)[i] = (hi - lo) / (2 * eps)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + eps)
    return float(err.max()) if err.size else 0.0
