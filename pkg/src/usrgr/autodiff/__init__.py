"""Minimal reverse-mode autodiff over numpy arrays."""
from .tensor import Tensor, ShapeError, as_tensor, backward, grad, grad_enabled, no_grad
from . import ops
from .ops import (
    absolute,
    add,
    avg_pool2,
    concat,
    conv1d_axis,
    conv2d,
    div,
    index,
    leaky_relu,
    maximum,
    mean,
    mul,
    pixel_shuffle,
    pixel_unshuffle,
    power,
    reshape,
    sep_linear,
    stack_scalars,
    sub,
    total,
)
from .optim import Adam, AdamState, adam_step
from .gradcheck import check_gradients, numeric_grad, relative_error

__all__ = [
    "Tensor", "ShapeError", "as_tensor", "backward", "grad", "grad_enabled", "no_grad", "ops",
    "absolute", "add", "avg_pool2", "concat", "conv1d_axis", "conv2d", "div", "index",
    "leaky_relu", "maximum", "mean", "mul", "pixel_shuffle", "pixel_unshuffle", "power",
    "reshape", "sep_linear", "stack_scalars", "sub", "total",
    "Adam", "AdamState", "adam_step", "check_gradients", "numeric_grad", "relative_error",
]
