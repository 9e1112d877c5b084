"""Differentiable-tensor substrate: float64 tensors, reverse-mode gradients,
the primitive operations the network layers need, and a finite-difference
gradient checker."""

from .gradcheck import GradCheckReport, grad_check
from .ops import conv1d, embedding, layer_norm, masked_mean_over_time
from .tensor import (
    NonFiniteError,
    Tensor,
    absolute,
    check_finite,
    concat,
    debug_checks_enabled,
    dropout,
    exp,
    gather_rows,
    global_grad_norm,
    log,
    masked_fill,
    matmul,
    no_grad,
    pad_axis,
    relu,
    set_debug_checks,
    softmax,
    stack,
)

__all__ = [
    "GradCheckReport",
    "NonFiniteError",
    "Tensor",
    "absolute",
    "check_finite",
    "concat",
    "conv1d",
    "debug_checks_enabled",
    "dropout",
    "embedding",
    "exp",
    "gather_rows",
    "global_grad_norm",
    "grad_check",
    "layer_norm",
    "log",
    "masked_fill",
    "masked_mean_over_time",
    "matmul",
    "no_grad",
    "pad_axis",
    "relu",
    "set_debug_checks",
    "softmax",
    "stack",
]
