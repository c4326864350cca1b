"""Minimal reverse-mode automatic differentiation on numpy arrays."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .functional import blurpool3d, conv3d, grid_sample, jacobian, linear, trilinear_resize
from .gradcheck import gradcheck, numerical_grad
from .optim import AdamState, adam_step, as_parameter, zero_grads
from .tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    clamp_min,
    concat,
    div,
    exp,
    is_grad_enabled,
    leaky_relu,
    log,
    logsumexp,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    reshape,
    sqrt,
    sub,
    take,
    transpose,
    tsum,
)

__all__ = [
    "AdamState", "CheckpointError", "Tensor", "adam_step", "add", "as_parameter", "as_tensor",
    "blurpool3d", "broadcast_to", "clamp_min", "concat", "conv3d", "div", "exp", "gradcheck",
    "grid_sample", "is_grad_enabled", "jacobian", "leaky_relu", "linear", "load_checkpoint", "log",
    "logsumexp", "matmul", "mean", "mul", "neg", "no_grad", "numerical_grad", "power", "reshape",
    "save_checkpoint", "sqrt", "sub", "take", "transpose", "trilinear_resize", "tsum", "zero_grads",
]
