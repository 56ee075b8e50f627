"""Dense tensors with reverse-mode automatic differentiation."""

from .tensor import Tensor, as_tensor, no_grad, is_grad_enabled
from .ops import (
    activate,
    adaptive_avg_pool2d,
    bilinear_upsample,
    concat_channels,
    conv2d,
    conv_transpose2d,
    normalize,
    pool2d,
    softmax_channel,
    log_softmax_channel,
)
from .nn import Module, Parameter, Conv2d, ConvTranspose2d, Norm2d, ConvNormAct
from .optim import Adam, OptimizerState, step_lr
from .gradcheck import check_gradients, numeric_grad, relative_error


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    loss.backward()


__all__ = [
    "Tensor", "as_tensor", "no_grad", "is_grad_enabled", "backward",
    "activate", "adaptive_avg_pool2d", "bilinear_upsample", "concat_channels", "conv2d",
    "conv_transpose2d", "normalize", "pool2d", "softmax_channel", "log_softmax_channel",
    "Module", "Parameter", "Conv2d", "ConvTranspose2d", "Norm2d", "ConvNormAct",
    "Adam", "OptimizerState", "step_lr",
    "check_gradients", "numeric_grad", "relative_error",
]
