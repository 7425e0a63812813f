from .functional import (
    Conv3dParams,
    add,
    avg_pool3d,
    concat,
    conv3d,
    leaky_relu,
    mse_loss,
    nn_upsample,
    scale,
    sum_all,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, grad_enabled, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "Conv3dParams",
    "Tensor",
    "adam_step",
    "add",
    "avg_pool3d",
    "concat",
    "conv3d",
    "grad_enabled",
    "leaky_relu",
    "mse_loss",
    "nn_upsample",
    "no_grad",
    "scale",
    "sum_all",
]
