"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive below computes its value eagerly with numpy and, when any
operand requires a gradient, records a closure mapping the output gradient to
operand gradients. ``backward`` replays those closures in reverse topological
order. All shape-dependent code uses negative axes so that ops broadcast over
arbitrary leading dimensions (batch, or the probe axis used by the batched
gradient checker).
"""

from __future__ import annotations

import contextlib
import math
import os
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import AxisOutOfRange, NonFiniteValue, NonScalarOutput, ShapeMismatch

DTYPE = np.float64

_grad_enabled = True
_debug = os.environ.get("INTERFORMER_DEBUG", "") not in ("", "0")


def set_debug(flag: bool) -> None:
    """Check every op result for NaN/Inf when ``flag`` is true."""
    global _debug
    _debug = bool(flag)


def is_debug() -> bool:
    return _debug


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording backward closures."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"non-finite value produced by {where}")


class Tensor:
    """A float64 array plus an optional gradient slot.

    Leaves created by the user are validated for finiteness. Results of ops
    hold references to their parents and a backward closure.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=DTYPE)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents, backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if _debug:
            _check_finite(data, op)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- introspection --------------------------------------------------

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
        if self.data.size != 1:
            raise NonScalarOutput(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._result(self.data, (), None, "detach")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar -------------------------------------------------

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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def tensor_create(shape: Sequence[int], data: Iterable[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from an extent list and flat row-major values."""
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ShapeMismatch(f"extents must be positive, got {shape}")
    flat = np.asarray(list(data) if not isinstance(data, np.ndarray) else data, dtype=DTYPE).reshape(-1)
    if math.prod(shape) != flat.size:
        raise ShapeMismatch(f"shape {shape} holds {math.prod(shape)} values, got {flat.size}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from exc


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise AxisOutOfRange(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# -- elementwise binary ----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "div")
    out = a.data / b.data

    def bw(g):
        gb = -g * out / b.data
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(out, (a, b), bw, "div")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shapes(a, b, "maximum")
    pick_a = a.data >= b.data

    def bw(g):
        return _unbroadcast(np.where(pick_a, g, 0.0), a.shape), _unbroadcast(np.where(pick_a, 0.0, g), b.shape)

    return Tensor._result(np.maximum(a.data, b.data), (a, b), bw, "maximum")


# -- elementwise unary -----------------------------------------------------


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    out = a.data**p
    return Tensor._result(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "power")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_np(a.data)
    return Tensor._result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._result(np.where(mask, a.data, 0.0), (a,), lambda g: (np.where(mask, g, 0.0),), "relu")


def masked_fill(a, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by a constant."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, value, a.data)

    def bw(g):
        return (_unbroadcast(np.where(mask, 0.0, g), a.shape),)

    return Tensor._result(out, (a,), bw, "masked_fill")


# -- linear algebra / layout -----------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + (b.shape[-1],))
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (b.shape[0], 1))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dims {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(f"matmul: batch dims {a.shape} @ {b.shape}") from exc

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(out, (a, b), bw, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise AxisOutOfRange("transpose needs rank >= 2")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(_norm_axis(ax, a.ndim) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise AxisOutOfRange(f"invalid permutation {axes}")
    inv = tuple(np.argsort(axes))
    return Tensor._result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    ax1, ax2 = _norm_axis(ax1, a.ndim), _norm_axis(ax2, a.ndim)
    return Tensor._result(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, tuple(shape))
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {a.shape} to {tuple(shape)}") from exc
    return Tensor._result(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    # axis counts from the right so operands of different rank line up
    rel = _norm_axis(axis, tensors[0].ndim) - tensors[0].ndim
    nd = max(t.ndim for t in tensors)
    tensors = [t if t.ndim == nd else reshape(t, (1,) * (nd - t.ndim) + t.shape) for t in tensors]
    ax = nd + rel
    # non-concat axes may broadcast (e.g. a probe axis on one operand only)
    try:
        common = np.broadcast_shapes(*[t.shape[:ax] + (1,) + t.shape[ax + 1:] for t in tensors])
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from exc
    parts = []
    for t in tensors:
        target = common[:ax] + (t.shape[ax],) + common[ax + 1:]
        parts.append(t if t.shape == target else broadcast_to(t, target))
    try:
        out = np.concatenate([p.data for p in parts], axis=ax)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._result(out, tuple(parts), bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    rel = _norm_axis(axis, tensors[0].ndim + 1) - (tensors[0].ndim + 1)
    expanded = []
    for t in tensors:
        ax = t.ndim + 1 + rel
        expanded.append(reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=rel)


def split(a, sizes: int | Sequence[int], axis: int = -1) -> list[Tensor]:
    """Split into equal ``sizes`` pieces (int) or pieces of the listed sizes."""
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    n = a.shape[ax]
    if isinstance(sizes, int):
        if n % sizes:
            raise ShapeMismatch(f"split: axis of length {n} not divisible into {sizes}")
        sizes = [n // sizes] * sizes
    if sum(sizes) != n:
        raise ShapeMismatch(f"split: sizes {list(sizes)} do not sum to {n}")
    out, start = [], 0
    for s in sizes:
        idx = (slice(None),) * ax + (slice(start, start + s),)
        out.append(getitem(a, idx))
        start += s
    return out


def _has_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    fancy = _has_fancy(index)

    def bw(g):
        full = np.zeros(a.shape, dtype=DTYPE)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor._result(np.array(out), (a,), bw, "getitem")


def pad(a, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero-pad the trailing ``len(widths)`` axes."""
    a = as_tensor(a)
    widths = [(0, 0)] * (a.ndim - len(widths)) + [tuple(w) for w in widths]
    out = np.pad(a.data, widths)
    index = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return Tensor._result(out, (a,), lambda g: (g[index],), "pad")


# -- reductions ------------------------------------------------------------


def _norm_axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(_norm_axis(ax, ndim) for ax in axis)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return Tensor._result(np.asarray(out), (a,), bw, "reduce_sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = math.prod(a.shape[ax] for ax in axes)
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, a.shape),)

    return Tensor._result(np.asarray(out), (a,), bw, "reduce_mean")


# -- composites ------------------------------------------------------------


def swish(a) -> Tensor:
    return a * sigmoid(a)


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax with the row max subtracted for stability."""
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    shift = a.data.max(axis=ax, keepdims=True)
    e = exp(a - shift)
    return e / reduce_sum(e, axis=ax, keepdims=True)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    shifted = a - a.data.max(axis=ax, keepdims=True)
    return shifted - log(reduce_sum(exp(shifted), axis=ax, keepdims=True))


# -- backward --------------------------------------------------------------


def topological_order(output: Tensor) -> list[Tensor]:
    """Nodes reachable from ``output`` with every parent before its consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(output, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(output: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf that requires it.

    Returns the gradient map keyed by ``id(node)`` for all visited nodes.
    """
    if output.size != 1:
        raise NonScalarOutput(f"backward needs a scalar output, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(topological_order(output)):
        g = grads.get(id(node))
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    return grads
