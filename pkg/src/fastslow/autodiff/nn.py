"""Network building blocks: linear maps, layer norm, single-head attention."""

from __future__ import annotations

import math

import numpy as np

from .optim import ParamStore
from .tensor import Tensor, concat, gelu, softmax


def _init_linear(rng: np.random.Generator, d_in: int, d_out: int, dtype) -> np.ndarray:
    return (rng.standard_normal((d_in, d_out)) / math.sqrt(d_in)).astype(dtype)


class Linear:
    """Affine map; parameters are registered in the store at construction."""

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.w = store.add(f"{name}.w", _init_linear(rng, d_in, d_out, dtype))
        self.b = store.add(f"{name}.b", np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, dtype=np.float32,
                 eps: float = 1e-5):
        self.g = store.add(f"{name}.g", np.ones(dim, dtype=dtype))
        self.b = store.add(f"{name}.b", np.zeros(dim, dtype=dtype))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv = (var + self.eps) ** -0.5
        return centered * inv * self.g + self.b


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Single-head attention. mask is an additive numpy array (0 or -inf-ish)."""
    d = q.shape[-1]
    att = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    if mask is not None:
        att = att + Tensor(mask.astype(q.dtype))
    return softmax(att, axis=-1) @ v


class TransformerBlock:
    """Pre-LN block: single-head self-attention then a GELU MLP."""

    def __init__(self, store: ParamStore, name: str, dim: int,
                 rng: np.random.Generator, dtype=np.float32, mlp_ratio: int = 2):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim, dtype)
        self.wq = Linear(store, f"{name}.wq", dim, dim, rng, dtype)
        self.wk = Linear(store, f"{name}.wk", dim, dim, rng, dtype)
        self.wv = Linear(store, f"{name}.wv", dim, dim, rng, dtype)
        self.wo = Linear(store, f"{name}.wo", dim, dim, rng, dtype)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim, dtype)
        self.fc1 = Linear(store, f"{name}.fc1", dim, mlp_ratio * dim, rng, dtype)
        self.fc2 = Linear(store, f"{name}.fc2", mlp_ratio * dim, dim, rng, dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = x + scaled_dot_attention(self.wq(h), self.wk(h), self.wv(h), mask)
        h = self.ln2(x)
        return x + self.fc2(gelu(self.fc1(h)))


def time_features(tau: float | np.ndarray, n_freqs: int = 8) -> np.ndarray:
    """Sinusoidal embedding of a scalar in [0, 1]; shape (..., 2*n_freqs)."""
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    freqs = 2.0 ** np.arange(n_freqs) * math.pi
    ang = tau[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)
