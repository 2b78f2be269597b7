"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Define-by-run: every op on tensors that require gradients records its parents
and a backward closure; Tensor.backward() walks the recorded graph once in
reverse topological order. Computation defaults to float32; building the same
graph from float64 arrays runs a 64-bit shadow of it, which is what the
finite-difference tests do.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, UsageError

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def grad_enabled() -> bool:
    return _GRAD_ENABLED[-1]


# stable scalar kernels, shared with loss code

def sigmoid_np(x: np.ndarray) -> np.ndarray:
    flat = np.atleast_1d(x)
    out = np.empty_like(flat)
    pos = flat >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-flat[pos]))
    ex = np.exp(flat[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out.reshape(np.shape(x))


def softplus_np(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            raise UsageError("wrap raw arrays, not Tensors")
        arr = np.asarray(data)
        if dtype is None:
            keep64 = isinstance(data, np.ndarray) and arr.dtype == np.float64
            dtype = np.float64 if keep64 else np.float32
        arr = np.asarray(arr, dtype=dtype)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._consumed = False

    # construction of op results
    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        out._consumed = False
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accumulate(self, g: np.ndarray) -> None:
        if self.requires_grad:
            self.grad = g if self.grad is None else self.grad + g

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # --- arithmetic -------------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            a._accumulate(_unbroadcast(g, a.data.shape))
            b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._from_op(a.data + b.data, (a, b), bwd)

    __radd__ = __add__

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._from_op(a.data * b.data, (a, b), bwd)

    __rmul__ = __mul__

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            a._accumulate(_unbroadcast(g, a.data.shape))
            b._accumulate(_unbroadcast(-g, b.data.shape))

        return Tensor._from_op(a.data - b.data, (a, b), bwd)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __neg__(self):
        a = self

        def bwd(g):
            a._accumulate(-g)

        return Tensor._from_op(-a.data, (a,), bwd)

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._from_op(a.data / b.data, (a, b), bwd)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise UsageError("only scalar exponents are supported")
        p = float(exponent)
        a = self

        def bwd(g):
            a._accumulate(g * p * a.data ** (p - 1.0))

        return Tensor._from_op(a.data ** p, (a,), bwd)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

        def bwd(g):
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

        return Tensor._from_op(a.data @ b.data, (a, b), bwd)

    # --- shape ops ---------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape

        def bwd(g):
            a._accumulate(g.reshape(old))

        return Tensor._from_op(a.data.reshape(shape), (a,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        a = self
        inv = tuple(np.argsort(axes))

        def bwd(g):
            a._accumulate(g.transpose(inv))

        return Tensor._from_op(a.data.transpose(axes), (a,), bwd)

    # --- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        shape = a.data.shape

        def bwd(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, shape).astype(g.dtype, copy=True))
                return
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, shape).astype(g.dtype, copy=True))

        return Tensor._from_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        shape = a.data.shape
        if axis is None:
            count = a.data.size
        else:
            count = shape[axis] if isinstance(axis, int) else int(np.prod([shape[i] for i in axis]))

        def bwd(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g / count, shape).astype(g.dtype, copy=True))
                return
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg / count, shape).astype(g.dtype, copy=True))

        return Tensor._from_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)

    # --- elementwise nonlinearities -----------------------------------------

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def bwd(g):
            a._accumulate(g * out_data)

        return Tensor._from_op(out_data, (a,), bwd)

    def log(self):
        a = self

        def bwd(g):
            a._accumulate(g / a.data)

        return Tensor._from_op(np.log(a.data), (a,), bwd)

    def sqrt(self):
        a = self
        out_data = np.sqrt(a.data)

        def bwd(g):
            a._accumulate(g * 0.5 / out_data)

        return Tensor._from_op(out_data, (a,), bwd)

    def tanh(self):
        a = self
        out_data = np.tanh(a.data)

        def bwd(g):
            a._accumulate(g * (1.0 - out_data * out_data))

        return Tensor._from_op(out_data, (a,), bwd)

    def sigmoid(self):
        a = self
        out_data = sigmoid_np(a.data)

        def bwd(g):
            a._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._from_op(out_data, (a,), bwd)

    def softplus(self):
        a = self

        def bwd(g):
            a._accumulate(g * sigmoid_np(a.data))

        return Tensor._from_op(softplus_np(a.data), (a,), bwd)

    # --- backward ------------------------------------------------------------

    def backward(self) -> None:
        """Reverse pass from a scalar loss; leaves keep .grad, interior buffers are freed."""
        if self.data.size != 1:
            raise UsageError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward on a tensor with no gradient-tracked ancestors")
        if self._consumed:
            raise UsageError("backward already ran for this graph; rebuild the forward pass")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                node.grad = None
                node._backward = None
                node._parents = ()
                node._consumed = True


# --- module-level ops --------------------------------------------------------


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (max-subtraction).

    The shift is a constant in the backward pass, which is exact: softmax is
    invariant to adding a constant along the normalized axis.
    """
    out_data = softmax_np(t.data, axis=axis)
    a = t

    def bwd(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - inner))

    return Tensor._from_op(out_data, (a,), bwd)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise UsageError("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(ts, np.split(g, offsets, axis=axis)):
            t._accumulate(piece)

    return Tensor._from_op(np.concatenate([t.data for t in ts], axis=axis), ts, bwd)


def gather_rows(t: Tensor, indices) -> Tensor:
    """Select rows (axis 0) by integer index; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    a = t

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return Tensor._from_op(a.data[idx], (a,), bwd)


def mode_n_product(t: Tensor, vec: Tensor, mode: int) -> Tensor:
    """Contract a tensor with a vector along `mode` (1-based).

    Modes refer to the original rank-3 tensor; successive contractions must be
    applied in ascending mode order (the usual 1, 2, 3 chain), with the axis
    shift from already-contracted lower modes handled here.
    """
    if mode not in (1, 2, 3):
        raise ShapeError(f"mode must be 1, 2 or 3, got {mode}")
    if vec.data.ndim != 1:
        raise ShapeError(f"mode-{mode} product needs a vector, got shape {vec.shape}")
    contracted = 3 - t.data.ndim
    axis = mode - 1 - contracted
    if axis < 0 or axis >= t.data.ndim:
        raise ShapeError(
            f"mode {mode} not available on a tensor of rank {t.data.ndim}; "
            "apply contractions in ascending mode order")
    n = t.data.shape[axis]
    if vec.data.shape[0] != n:
        raise ShapeError(f"mode {mode} size mismatch: tensor has {n}, vector has {vec.data.shape[0]}")
    a, v = t, vec
    out_data = np.tensordot(a.data, v.data, axes=([axis], [0]))

    def bwd(g):
        if a.requires_grad:
            vshape = [1] * a.data.ndim
            vshape[axis] = n
            a._accumulate(np.expand_dims(g, axis) * v.data.reshape(vshape))
        if v.requires_grad:
            moved = np.moveaxis(a.data, axis, -1)
            rest = list(range(g.ndim))
            v._accumulate(np.tensordot(moved, g, axes=(rest, rest)))

    return Tensor._from_op(out_data, (a, v), bwd)
