"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus the closure that routes its output gradient
back to its parents; backward() topo-sorts the graph and runs the closures.
Arrays stay float32 or float64 end to end (float64 is what the
finite-difference checks run in), and every op output is checked for
NaN/Inf unless checks are turned off.

Integer data (token ids, gather indices) never becomes a Tensor; it is
passed to ops as plain numpy arrays.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from ..errors import NonFiniteValue, ShapeMismatch

_grad_enabled = True
_finite_checks = True


@contextmanager
def no_grad():
    """Disable graph construction (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_finite_checks(on: bool) -> None:
    global _finite_checks
    _finite_checks = on


def _check_finite(data: np.ndarray) -> None:
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NonFiniteValue("op produced NaN or Inf")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float64)
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- graph plumbing -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents, backward_fn) -> "Tensor":
        _check_finite(data)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of self w.r.t. every reachable parameter."""
        if seed is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        # Iterative topo sort; training graphs can be a few hundred nodes deep.
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
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- conveniences ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.data.dtype))
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))
        return Tensor._from_op(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accum(-g)
        return Tensor._from_op(-self.data, (self,), backward)

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.data.dtype))
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=self.data.dtype))
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))
        return Tensor._from_op(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self * (1.0 / other)
        return self * other ** -1.0

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise ShapeMismatch("only scalar exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            self._accum(g * exponent * self.data ** (exponent - 1))
        return Tensor._from_op(out_data, (self,), backward)

    # -- transcendental ----------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accum(g * out_data)
        return Tensor._from_op(out_data, (self,), backward)

    def log(self):
        out_data = np.log(self.data)

        def backward(g):
            self._accum(g / self.data)
        return Tensor._from_op(out_data, (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            self._accum(g * (1.0 - out_data * out_data))
        return Tensor._from_op(out_data, (self,), backward)

    def sqrt(self):
        return self ** 0.5

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.data.shape).copy()
                            if np.ndim(g) == 0 or g.shape != self.data.shape
                            else g)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.data.shape).astype(self.data.dtype))
        return Tensor._from_op(np.asarray(out_data), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accum(g.reshape(old))
        return Tensor._from_op(out_data, (self,), backward)

    def swapaxes(self, a: int, b: int):
        out_data = np.swapaxes(self.data, a, b)

        def backward(g):
            self._accum(np.swapaxes(g, a, b))
        return Tensor._from_op(out_data, (self,), backward)

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)
        return Tensor._from_op(np.ascontiguousarray(out_data), (self,), backward)

    # -- matmul ------------------------------------------------------------

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(np.asarray(other, dtype=self.data.dtype))
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accum(_unbroadcast(ga, self.data.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accum(_unbroadcast(gb, other.data.shape))
        return Tensor._from_op(out_data, (self, other), backward)


# -- free functions -----------------------------------------------------------


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU (smooth, so finite differences agree)."""
    c = math.sqrt(2.0 / math.pi)
    xd = x.data
    x2 = xd * xd
    inner = c * (xd + 0.044715 * x2 * xd)
    t = np.tanh(inner)
    out_data = 0.5 * xd * (1.0 + t)

    def backward(g):
        d_inner = c * (1.0 + 3 * 0.044715 * x2)
        dydx = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * d_inner
        x._accum(g * dydx)
    return Tensor._from_op(out_data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        x._accum(s * (g - dot))
    return Tensor._from_op(s, (x,), backward)


def acos_clamped(x: Tensor) -> Tensor:
    """arccos with the argument clamped to [-1, 1]; zero gradient at the clamp."""
    clipped = np.clip(x.data, -1.0, 1.0)
    out_data = np.arccos(clipped)

    def backward(g):
        interior = np.abs(x.data) < 1.0
        denom = np.sqrt(np.where(interior, 1.0 - clipped * clipped, 1.0))
        x._accum(np.where(interior, -g / denom, 0.0).astype(x.data.dtype))
    return Tensor._from_op(out_data, (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
    return Tensor._from_op(out_data, tensors, backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))
    return Tensor._from_op(out_data, tensors, backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather from an embedding table, scatter-add on the way back."""
    ids = np.asarray(ids)
    out_data = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table._accum(full)
    return Tensor._from_op(out_data, (table,), backward)


def conv1d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Temporal convolution, channels last.

    x: (B, L, Cin), w: (K, Cin, Cout), b: (Cout,).
    Output length is (L + 2*pad - K) // stride + 1.
    """
    B, L, Cin = x.data.shape
    K, Cin_w, Cout = w.data.shape
    if Cin != Cin_w:
        raise ShapeMismatch(f"conv1d channels mismatch: {Cin} vs {Cin_w}")
    if L + 2 * pad < K:
        raise ShapeMismatch("input shorter than kernel")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0))) if pad else x.data
    # (B, Lfull, Cin, K) -> strided -> (B, Lout, K, Cin)
    win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=1)[:, ::stride]
    win = np.ascontiguousarray(win.transpose(0, 1, 3, 2))
    Lout = win.shape[1]
    w_flat = w.data.reshape(K * Cin, Cout)
    out_data = win.reshape(B * Lout, K * Cin) @ w_flat + b.data
    out_data = out_data.reshape(B, Lout, Cout)

    def backward(g):
        g2 = g.reshape(B * Lout, Cout)
        if w.requires_grad:
            gw = win.reshape(B * Lout, K * Cin).T @ g2
            w._accum(gw.reshape(K, Cin, Cout))
        if b.requires_grad:
            b._accum(g2.sum(axis=0))
        if x.requires_grad:
            gwin = (g2 @ w_flat.T).reshape(B, Lout, K, Cin)
            gxp = np.zeros((B, L + 2 * pad, Cin), dtype=x.data.dtype)
            idx = np.arange(Lout) * stride
            for k in range(K):  # offsets within a window are unique, plain += is safe
                gxp[:, idx + k, :] += gwin[:, :, k, :]
            x._accum(gxp[:, pad:pad + L, :] if pad else gxp)
    return Tensor._from_op(out_data, (x, w, b), backward)


def conv1d_transpose(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed temporal convolution, channels last.

    x: (B, L, Cin), w: (K, Cin, Cout), b: (Cout,).
    Output length is (L - 1) * stride + K - 2*pad.
    """
    B, L, Cin = x.data.shape
    K, Cin_w, Cout = w.data.shape
    if Cin != Cin_w:
        raise ShapeMismatch(f"conv1d_transpose channels mismatch: {Cin} vs {Cin_w}")
    Lfull = (L - 1) * stride + K
    Lout = Lfull - 2 * pad
    if Lout <= 0:
        raise ShapeMismatch("transposed conv output length <= 0")
    full = np.zeros((B, Lfull, Cout), dtype=x.data.dtype)
    idx = np.arange(L) * stride
    for k in range(K):
        full[:, idx + k, :] += x.data @ w.data[k]
    out_data = full[:, pad:pad + Lout, :] + b.data

    def backward(g):
        gfull = np.zeros((B, Lfull, Cout), dtype=g.dtype)
        gfull[:, pad:pad + Lout, :] = g
        if b.requires_grad:
            b._accum(g.reshape(-1, Cout).sum(axis=0))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            x_flat = x.data.reshape(B * L, Cin)
            for k in range(K):
                gw[k] = x_flat.T @ gfull[:, idx + k, :].reshape(B * L, Cout)
            w._accum(gw)
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for k in range(K):
                gx += gfull[:, idx + k, :] @ w.data[k].T
            x._accum(gx)
    return Tensor._from_op(out_data, (x, w, b), backward)
