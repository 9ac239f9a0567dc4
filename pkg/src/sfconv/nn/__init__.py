from .ops import (
    DICE_SMOOTH,
    ConvConfig,
    Gradient,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dice_coefficient,
    dice_loss,
    maxpool2d_backward,
    maxpool2d_forward,
    out_extent,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
    softmax,
    softmax_cross_entropy,
    upsample2x_backward,
    upsample2x_forward,
)
from .reference import conv2d_reference, matmul_reference

__all__ = [
    "DICE_SMOOTH",
    "ConvConfig",
    "Gradient",
    "conv2d_backward",
    "conv2d_forward",
    "conv2d_reference",
    "dense_backward",
    "dense_forward",
    "dice_coefficient",
    "dice_loss",
    "matmul_reference",
    "maxpool2d_backward",
    "maxpool2d_forward",
    "out_extent",
    "relu_backward",
    "relu_forward",
    "sigmoid_backward",
    "sigmoid_forward",
    "softmax",
    "softmax_cross_entropy",
    "upsample2x_backward",
    "upsample2x_forward",
]
