"""Small NumPy reverse-mode autodiff engine used by the model and trainer."""
from . import ops
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .gradcheck import check_gradients, numeric_grad, rel_error
from .nn import Conv2d, DepthwiseConv2d, LayerNorm, Linear, Module, Parameter
from .optim import AdamWState, adamw_step, clip_grad_norm, grad_norm
from .tensor import DTYPE, Tensor, as_tensor, current_dtype, grad_enabled, no_grad, precision, set_debug

__all__ = [
    "AdamWState",
    "CheckpointError",
    "Conv2d",
    "DTYPE",
    "DepthwiseConv2d",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "check_gradients",
    "current_dtype",
    "clip_grad_norm",
    "grad_enabled",
    "grad_norm",
    "load_arrays",
    "no_grad",
    "numeric_grad",
    "precision",
    "ops",
    "rel_error",
    "save_arrays",
    "set_debug",
]
