"""Differentiable-computation kernel: tape autodiff, layers, Adam, grad check.

The heavy per-step arithmetic is provided by a swappable kernel backend
(compiled Cython core or numpy reference); see `phrasecap.numerics.kernels`.
"""

from . import tape
from .gradcheck import grad_check
from .kernels import backend_name
from .nn import MLPSpec, lstm_register, lstm_step, mlp, mlp_apply, mlp_register
from .optim import Adam, clip_global_norm
from .params import ParamStore, load_checkpoint, save_checkpoint
from .tape import Var, backward, no_grad, softmax

__all__ = [
    "Adam",
    "MLPSpec",
    "ParamStore",
    "Var",
    "backend_name",
    "backward",
    "clip_global_norm",
    "grad_check",
    "load_checkpoint",
    "lstm_register",
    "lstm_step",
    "mlp",
    "mlp_apply",
    "mlp_register",
    "no_grad",
    "save_checkpoint",
    "softmax",
    "tape",
]
