from .ops import (
    RunningStats,
    batch_norm,
    concat,
    conv2d,
    conv3d,
    cross_entropy_loss,
    fully_connected,
    l1_loss,
    maxpool2d,
    maxpool3d_global_temporal,
    maxpool3d_spatial,
    relu,
    softmax,
    squeeze_time,
    take_rows,
    upsample_nearest_2x,
)
from .optim import AdamState, adam_step
from .tensor import DiffTensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "AdamState",
    "DiffTensor",
    "RunningStats",
    "adam_step",
    "as_tensor",
    "batch_norm",
    "concat",
    "conv2d",
    "conv3d",
    "cross_entropy_loss",
    "fully_connected",
    "grad_enabled",
    "l1_loss",
    "maxpool2d",
    "maxpool3d_global_temporal",
    "maxpool3d_spatial",
    "no_grad",
    "relu",
    "softmax",
    "squeeze_time",
    "take_rows",
    "upsample_nearest_2x",
]
