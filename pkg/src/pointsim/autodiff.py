"""Minimal dense-tensor reverse-mode autodiff on numpy arrays.

Graph recording is micrograd-style: each op closes over its inputs and
appends local gradients into input .grad buffers during backward(). Every
op output is checked for NaN/Inf (see FiniteError); disable with
set_finite_checks(False) only in tight benchmark loops.
"""
from __future__ import annotations

import numpy as np

_FINITE_CHECKS = True


class FiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


def set_finite_checks(enabled: bool) -> bool:
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return prev


def _check(data: np.ndarray, op: str) -> np.ndarray:
    if _FINITE_CHECKS and not np.isfinite(data).all():
        raise FiniteError(f"non-finite values produced by {op}")
    return data


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum grad down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else None)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- wiring ------------------------------------------------------------

    @staticmethod
    def _result(data, parents, backward, op: str) -> "Tensor":
        out = Tensor(_check(data, op))
        parents = tuple(p for p in parents if p.requires_grad or p._parents)
        if parents:
            out._parents = parents
            out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.grad is not None})"

    # -- arithmetic ---------------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other):
        other = Tensor._lift(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad or a._parents:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad or b._parents:
                b._accumulate(_unbroadcast(g, b.data.shape))
        return Tensor._result(a.data + b.data, (a, b), backward, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self

        def backward(g):
            a._accumulate(-g)
        return Tensor._result(-a.data, (a,), backward, "neg")

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad or a._parents:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad or b._parents:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        return Tensor._result(a.data * b.data, (a, b), backward, "mul")

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad or a._parents:
                a._accumulate(g @ b.data.T)
            if b.requires_grad or b._parents:
                b._accumulate(a.data.T @ g)
        return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")

    def relu(self):
        a = self
        mask = a.data > 0

        def backward(g):
            a._accumulate(g * mask)
        return Tensor._result(np.where(mask, a.data, 0.0), (a,), backward, "relu")

    def sum(self):
        a = self

        def backward(g):
            a._accumulate(np.full_like(a.data, g))
        return Tensor._result(np.asarray(a.data.sum()), (a,), backward, "sum")

    def mean(self):
        a = self
        n = a.data.size

        def backward(g):
            a._accumulate(np.full_like(a.data, g / n))
        return Tensor._result(np.asarray(a.data.mean()), (a,), backward, "mean")

    # -- backward -----------------------------------------------------------

    def backward(self):
        """Reverse-mode pass from a scalar; frees the graph afterwards."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ValueError("backward requires a scalar tensor")
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            if node is not self and not node.requires_grad:
                node.grad = None  # interior buffers are not kept
        for node in topo:
            node._parents = ()
            node._backward = None


class Parameter(Tensor):
    """Named leaf tensor that the optimizer updates."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(np.array(data, dtype=dtype, copy=True), requires_grad=True)
        self.name = name

    def zero_grad(self):
        self.grad = None


# -- structured ops ---------------------------------------------------------


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad or t._parents:
                t._accumulate(piece)
    return Tensor._result(np.concatenate([t.data for t in tensors], axis=axis),
                          tuple(tensors), backward, "concat")


def gather_rows(src: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather src[indices]; the gradient scatter-adds back."""
    src = Tensor._lift(src)
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) and (indices.min() < 0 or indices.max() >= len(src.data)):
        raise IndexError("gather index out of range")

    def backward(g):
        if src.requires_grad or src._parents:
            acc = np.zeros_like(src.data)
            np.add.at(acc, indices, g)
            src._accumulate(acc)
    return Tensor._result(src.data[indices], (src,), backward, "gather_rows")


def gather_segments(src: Tensor, nbhd) -> Tensor:
    """Materialize neighbor feature rows in flat-neighborhood order."""
    return gather_rows(src, nbhd.neighbor_indices)


def segment_outer_sum(h_vals: Tensor, x_vals: Tensor, nbhd, mean: bool = False) -> Tensor:
    """Per-query flattened outer products: out[q] = vec(sum_i h_i x_i^T).

    h_vals and x_vals are aligned with the flat neighborhood entries. With
    mean=True the sum is divided by the per-query neighbor count; empty
    queries produce zero rows either way.
    """
    h_vals, x_vals = Tensor._lift(h_vals), Tensor._lift(x_vals)
    m, cm = h_vals.data.shape
    m2, ci = x_vals.data.shape
    if m != m2 or m != nbhd.total:
        raise ValueError("row counts must match the neighborhood")
    seg = nbhd.segment_ids
    counts = nbhd.counts
    q = nbhd.query_count

    outer = np.einsum("ma,mb->mab", h_vals.data, x_vals.data).reshape(m, cm * ci)
    out = np.zeros((q, cm * ci), dtype=outer.dtype)
    np.add.at(out, seg, outer)
    if mean:
        out /= np.maximum(counts, 1)[:, None]

    def backward(g):
        g_rows = g[seg]
        if mean:
            g_rows = g_rows / np.maximum(counts, 1)[seg, None]
        g_rows = g_rows.reshape(m, cm, ci)
        if h_vals.requires_grad or h_vals._parents:
            h_vals._accumulate(np.einsum("mab,mb->ma", g_rows, x_vals.data))
        if x_vals.requires_grad or x_vals._parents:
            x_vals._accumulate(np.einsum("mab,ma->mb", g_rows, h_vals.data))
    return Tensor._result(out, (h_vals, x_vals), backward, "segment_outer_sum")


def huber_loss(pred: Tensor, target: Tensor, delta: float = 1.0) -> Tensor:
    """Mean elementwise Huber loss with threshold delta."""
    pred, target = Tensor._lift(pred), Tensor._lift(target)
    if pred.data.shape != target.data.shape:
        raise ValueError("shape mismatch")
    if delta <= 0:
        raise ValueError("delta must be positive")
    e = pred.data - target.data
    abs_e = np.abs(e)
    quad = abs_e <= delta
    vals = np.where(quad, 0.5 * e * e, delta * (abs_e - 0.5 * delta))
    n = max(e.size, 1)
    d_pred = np.clip(e, -delta, delta) / n

    def backward(g):
        if pred.requires_grad or pred._parents:
            pred._accumulate(g * d_pred)
        if target.requires_grad or target._parents:
            target._accumulate(-g * d_pred)
    return Tensor._result(np.asarray(vals.sum() / n), (pred, target), backward, "huber")


def relu(x: Tensor) -> Tensor:
    return Tensor._lift(x).relu()
