"""Minimal numpy autodiff: Tensor, ops, layers and Adam."""
from .core import (NonFiniteError, Tensor, add, as_tensor, clamp, concat, div, exp, getitem,
                   grad_enabled, log, matmul, mean, mul, no_grad, pad, relu, reshape, sigmoid,
                   sqrt, square, sub, tabs, tanh, topological_order, transpose, tsum)
from .ops import (batch_norm, bce, conv1d, conv2d, conv_transpose1d, cosine_similarity,
                  global_avg_pool, l1_distance, l2_distance, softmax, stft_power, upsample2x)
from .optim import Adam

__all__ = [
    "Adam", "NonFiniteError", "Tensor", "add", "as_tensor", "batch_norm", "bce", "clamp",
    "concat", "conv1d", "conv2d", "conv_transpose1d", "cosine_similarity", "div", "exp",
    "getitem", "global_avg_pool", "grad_enabled", "l1_distance", "l2_distance", "log", "matmul",
    "mean", "mul", "no_grad", "pad", "relu", "reshape", "sigmoid", "softmax", "sqrt", "square",
    "stft_power", "sub", "tabs", "tanh", "topological_order", "transpose", "tsum", "upsample2x",
]
