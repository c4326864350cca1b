"""Dense tensors with reverse-mode differentiation.

Every differentiable op records its parents and a closure mapping the output
gradient to one gradient per parent. :meth:`Tensor.backward` walks the
recorded graph in reverse topological order, so each node is visited once.
Only leaves with ``requires_grad`` keep their gradient, and it accumulates
across calls until :meth:`Tensor.zero_grad`.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

MAX_RANK = 5

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference, cached inputs)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        if arr.ndim > MAX_RANK:
            raise ValueError(f"tensors have at most {MAX_RANK} axes, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data, parents, backward) -> "Tensor":
        """Result of an op; only wired into the graph when it needs to be."""
        parents = tuple(parents)
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = track
        out.name = None
        if track:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- backward ---------------------------------------------------------------

    def _topological_order(self) -> list["Tensor"]:
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self) -> None:
        if self.data.size != 1 or self.data.ndim != 0:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ---------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} differ (use broadcast_to)")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return Tensor._make(a.data + b, (a,), lambda g: (g,))
    a = as_tensor(a)
    _same_shape(a, b, "add")
    return Tensor._make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return Tensor._make(a.data - b, (a,), lambda g: (g,))
    a = as_tensor(a)
    _same_shape(a, b, "sub")
    return Tensor._make(a.data - b.data, (a, b), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return Tensor._make(a.data * b, (a,), lambda g: (g * b,))
    a = as_tensor(a)
    _same_shape(a, b, "mul")
    return Tensor._make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return Tensor._make(a.data / b, (a,), lambda g: (g / b,))
    a = as_tensor(a)
    _same_shape(a, b, "div")
    out = a.data / b.data
    return Tensor._make(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    return Tensor._make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._make(out, (a,), lambda g: (g * 0.5 / out,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """``max(a, floor)``; the gradient is zero where the floor is active."""
    keep = a.data > floor
    return Tensor._make(np.where(keep, a.data, floor).astype(a.dtype), (a,), lambda g: (g * keep,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    pos = a.data > 0
    scale = np.where(pos, 1.0, slope).astype(a.dtype)
    return Tensor._make(a.data * scale, (a,), lambda g: (g * scale,))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return Tensor._make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[k] for k in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def broadcast_to(a: Tensor, shape) -> Tensor:
    """Explicit broadcast; the backward pass sums over the expanded axes."""
    shape = tuple(shape)
    out = np.broadcast_to(a.data, shape)
    lead = len(shape) - a.ndim
    expanded = tuple(range(lead)) + tuple(
        lead + k for k, n in enumerate(a.shape) if n == 1 and shape[lead + k] != 1)

    def backward(g):
        r = g.sum(axis=expanded, keepdims=True) if expanded else g
        return (r.reshape(a.shape),)

    return Tensor._make(np.ascontiguousarray(out), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return Tensor._make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                        lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor._make(out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor._make(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return Tensor._make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along ``axis`` (max subtracted before exponentiating)."""
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return Tensor._make(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,))
