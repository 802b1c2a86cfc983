"""Parameter registry, Adam, and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor


class ParamStore:
    """Named parameter tensors; optimizer state lives alongside by name."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeMismatch(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        return sorted(self._params.items())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in arrays:
                raise ShapeMismatch(f"checkpoint is missing parameter {name!r}")
            a = arrays[name]
            if a.shape != p.data.shape:
                raise ShapeMismatch(f"shape mismatch for {name!r}: {a.shape} vs {p.data.shape}")
            p.data = a.astype(p.data.dtype, copy=True)


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for _, p in store.items():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / (norm + 1e-12)
        for _, p in store.items():
            if p.grad is not None:
                p.grad *= scale
    return norm


class Adam:
    """Standard Adam with bias correction; moments match parameter shapes."""

    def __init__(self, store: ParamStore, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.store = store
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"gradient shape mismatch for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def cosine_lr(step: int, total: int, peak: float, floor: float) -> float:
    """Cosine decay from peak (step 0) to floor (step total), inclusive."""
    if total <= 0:
        return floor
    step = min(max(step, 0), total)
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * step / total))
