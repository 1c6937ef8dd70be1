"""Differentiable tensor substrate: primitives, autodiff, layers and Adam."""

from . import nn
from .functional import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    ConfigError,
    attention,
    cross_entropy,
    kl_standard_normal,
    l1_loss,
    mse_loss,
    onehot,
    reparameterized_sample,
    sinusoidal_pe,
)
from .gradcheck import grad_check
from .optim import Adam, OptimizerState, adam_step
from .rng import make_rng
from .tensor import (
    Parameter,
    ShapeError,
    Tape,
    Tensor,
    backward,
    no_grad,
    zero_grad,
)

__all__ = [
    "Adam", "ConfigError", "LOGVAR_MAX", "LOGVAR_MIN", "OptimizerState", "Parameter",
    "ShapeError", "Tape", "Tensor", "adam_step", "attention", "backward", "cross_entropy",
    "grad_check", "kl_standard_normal", "l1_loss", "make_rng", "mse_loss", "nn", "no_grad",
    "onehot", "reparameterized_sample", "sinusoidal_pe", "zero_grad",
]
