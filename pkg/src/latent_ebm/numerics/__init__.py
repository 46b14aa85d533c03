"""Reverse-mode autodiff, optimizers and finite-difference checks."""

from .autodiff import (
    GraphError,
    NonFiniteError,
    Tensor,
    add,
    as_tensor,
    backward,
    exp,
    expm1,
    grad,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    scale,
    square,
    sub,
    take,
    tanh,
    tsum,
)
from .gradcheck import finite_diff_check, numerical_grad, relative_error
from .optim import OptimizerState, adam, optimizer_apply, sgd

__all__ = [
    "GraphError", "NonFiniteError", "Tensor", "add", "as_tensor", "backward", "exp", "expm1", "grad",
    "log", "matmul", "mean", "mul", "neg", "relu", "scale", "square", "sub", "take", "tanh",
    "tsum", "finite_diff_check", "numerical_grad", "relative_error", "OptimizerState", "adam",
    "optimizer_apply", "sgd",
]
