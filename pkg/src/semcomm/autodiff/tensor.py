"""Dense tensor with tape-free reverse-mode differentiation.

Every differentiable result keeps references to its parents and a closure
mapping the output gradient to per-parent gradients.  ``backward`` orders
the reachable nodes topologically and runs each closure exactly once.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError, ShapeError

_GRAD_ENABLED = True

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def _to_array(data, dtype) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype == np.float64 and not isinstance(data, np.ndarray):
        # python floats / lists default to single precision
        return arr.astype(np.float32)
    if arr.dtype.kind in "biu":
        return arr.astype(np.float32)
    if arr.dtype.kind != "f":
        raise ContractError(f"unsupported dtype {arr.dtype}")
    return arr


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """N-dimensional float array plus the bookkeeping for reverse-mode AD.

    ``data`` is a numpy array (float32 unless constructed from a float64
    array, which is kept so gradient checks can run in double precision).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _to_array(data, dtype)
        if any(d < 1 for d in self.data.shape):
            raise ShapeError(f"tensor extents must be >= 1, got {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Iterable["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        parents = tuple(parents)
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = parents if needs else ()
        out._backward = backward if needs else None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- backward -------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self.shape, other.shape
        return Tensor._from_op(self.data + other.data, (self, other),
                               lambda g: (unbroadcast(g, a), unbroadcast(g, b)))

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        a, b = self.shape, other.shape
        return Tensor._from_op(self.data - other.data, (self, other),
                               lambda g: (unbroadcast(g, a), unbroadcast(-g, b)))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        x, y = self.data, other.data
        return Tensor._from_op(x * y, (self, other),
                               lambda g: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        x, y = self.data, other.data
        return Tensor._from_op(x / y, (self, other),
                               lambda g: (unbroadcast(g / y, x.shape),
                                          unbroadcast(-g * x / (y * y), y.shape)))

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other, self.dtype) / self

    def __pow__(self, p: float) -> "Tensor":
        x = self.data
        if p == 0:
            return Tensor._from_op(np.ones_like(x), (self,), lambda g: (np.zeros_like(x),))
        return Tensor._from_op(x ** p, (self,), lambda g: (g * p * x ** (p - 1),))

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other, self.dtype)
        x, y = self.data, other.data
        if x.ndim != 2 or y.ndim != 2:
            raise ShapeError("matmul supports 2-D operands only")
        return Tensor._from_op(x @ y, (self, other), lambda g: (g @ y.T, x.T @ g))

    # -- unary ----------------------------------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        x = self.data
        return Tensor._from_op(np.log(x), (self,), lambda g: (g / x,))

    def abs(self) -> "Tensor":
        x = self.data
        return Tensor._from_op(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * (1 - out * out),))

    def sigmoid(self) -> "Tensor":
        x = self.data
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return Tensor._from_op(out, (self,), lambda g: (g * out * (1 - out),))

    def relu(self) -> "Tensor":
        x = self.data
        mask = x > 0
        return Tensor._from_op(np.where(mask, x, 0).astype(x.dtype), (self,), lambda g: (g * mask,))

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        x = self.data
        factor = np.where(x > 0, 1.0, slope).astype(x.dtype)
        return Tensor._from_op(x * factor, (self,), lambda g: (g * factor,))

    def clip(self, lo: float, hi: float) -> "Tensor":
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return Tensor._from_op(np.clip(x, lo, hi), (self,), lambda g: (g * inside,))

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        out = np.asarray(self.data.sum(axis=axis, keepdims=keepdims))

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

        return Tensor._from_op(out, (self,), back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        """Maximum along one axis; ties route the gradient to the first maximum."""
        x = self.data
        idx = np.expand_dims(x.argmax(axis=axis), axis)
        out = np.take_along_axis(x, idx, axis=axis)

        def back(g):
            gx = np.zeros_like(x)
            if not keepdims:
                g = np.expand_dims(g, axis)
            np.put_along_axis(gx, idx, g, axis=axis)
            return (gx,)

        return Tensor._from_op(out if keepdims else np.squeeze(out, axis), (self,), back)

    # -- shape ------------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._from_op(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return Tensor._from_op(np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inv),))

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape
        out = self.data[index]

        basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None)))
                    for i in (index if isinstance(index, tuple) else (index,)))

        def back(g):
            gx = np.zeros(shape, dtype=g.dtype)
            if basic:
                gx[index] = g
            else:
                np.add.at(gx, index, g)
            return (gx,)

        return Tensor._from_op(np.array(out), (self,), back)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float32))

