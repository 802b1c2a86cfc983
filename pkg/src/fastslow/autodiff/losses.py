"""Loss heads: cross-entropy, MSE, and the SO(3) geodesic reconstruction loss.

The geodesic loss is built from primitive ops (Gram-Schmidt in-graph), so
its gradient comes out of the same reverse-mode machinery as everything
else and is covered by the finite-difference checks.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, acos_clamped, concat

# Keeps in-graph normalization finite when a predicted 6D block passes
# near zero early in training; negligible against trained block norms.
_GS_EPS = 1e-12


def mse(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return (diff * diff).mean()


def softmax_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under the logits.

    logits: (N, V); targets: int array (N,).
    """
    targets = np.asarray(targets)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatch(f"cross entropy shapes: {logits.shape} vs {targets.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    expz = np.exp(z)
    sumexp = expz.sum(axis=-1, keepdims=True)
    logp = z - np.log(sumexp)
    n = targets.shape[0]
    out_data = np.asarray(-logp[np.arange(n), targets].mean())

    def backward(g):
        grad = expz / sumexp
        grad[np.arange(n), targets] -= 1.0
        logits._accum((float(g) / n) * grad)
    return Tensor._from_op(out_data, (logits,), backward)


def sixd_to_matrix_graph(v: Tensor) -> Tensor:
    """Differentiable Gram-Schmidt: (..., 6) -> (..., 3, 3)."""
    a1 = v[..., 0:3]
    a2 = v[..., 3:6]
    n1 = ((a1 * a1).sum(axis=-1, keepdims=True) + _GS_EPS) ** 0.5
    b1 = a1 * n1 ** -1.0
    dot = (b1 * a2).sum(axis=-1, keepdims=True)
    r2 = a2 - dot * b1
    n2 = ((r2 * r2).sum(axis=-1, keepdims=True) + _GS_EPS) ** 0.5
    b2 = r2 * n2 ** -1.0
    b3 = _cross(b1, b2)
    cols = [b1.reshape(*b1.shape, 1), b2.reshape(*b2.shape, 1), b3.reshape(*b3.shape, 1)]
    return concat(cols, axis=-1)


def _cross(u: Tensor, v: Tensor) -> Tensor:
    i = np.array([1, 2, 0])
    j = np.array([2, 0, 1])
    return u[..., i] * v[..., j] - u[..., j] * v[..., i]


def geodesic_angles(R1: Tensor, R2: Tensor) -> Tensor:
    """Rotation angles between matrix batches; clamped-arccos of the trace."""
    trace = (R1 * R2).sum(axis=(-2, -1))
    return acos_clamped((trace - 1.0) * 0.5)


def geodesic_loss(pred_sixd: Tensor, target_sixd) -> Tensor:
    """Mean geodesic angle between predicted and target 6D orientation blocks.

    Both inputs have trailing dimension 6; the target may be a plain array
    (constants do not need gradients).
    """
    target_sixd = (target_sixd if isinstance(target_sixd, Tensor)
                   else Tensor(np.asarray(target_sixd, dtype=pred_sixd.dtype)))
    if pred_sixd.shape != target_sixd.shape or pred_sixd.shape[-1] != 6:
        raise ShapeMismatch(f"geodesic loss shapes: {pred_sixd.shape} vs {target_sixd.shape}")
    Rp = sixd_to_matrix_graph(pred_sixd)
    Rt = sixd_to_matrix_graph(target_sixd)
    return geodesic_angles(Rp, Rt).mean()
