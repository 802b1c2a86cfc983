from .tensor import (Tensor, acos_clamped, concat, conv1d, conv1d_transpose,
                     embedding, gelu, no_grad, set_finite_checks, softmax, stack)
from .losses import (geodesic_angles, geodesic_loss, mse, sixd_to_matrix_graph,
                     softmax_cross_entropy)
from .nn import LayerNorm, Linear, TransformerBlock, scaled_dot_attention, time_features
from .optim import Adam, ParamStore, clip_grad_norm, cosine_lr
from .checkpoint import load_arrays, save_arrays

__all__ = [
    "Tensor", "acos_clamped", "concat", "conv1d", "conv1d_transpose", "embedding",
    "gelu", "no_grad", "set_finite_checks", "softmax", "stack",
    "geodesic_angles", "geodesic_loss", "mse", "sixd_to_matrix_graph",
    "softmax_cross_entropy",
    "LayerNorm", "Linear", "TransformerBlock", "scaled_dot_attention", "time_features",
    "Adam", "ParamStore", "clip_grad_norm", "cosine_lr",
    "load_arrays", "save_arrays",
]
