"""Minimal reverse-mode autodiff and the ops a U-Net needs."""
from .functional import (concat_channels, conv2d, maxpool2d, relu, softmax_cross_entropy,
                         transposed_conv2d)
from .gradcheck import GradCheckReport, check_ops, grad_check
from .init import he_init
from .optim import AdamState, adam_step
from .receptive import LayerSpec, receptive_field
from .tensor import Graph, Tensor

__all__ = [
    "Tensor", "Graph", "conv2d", "transposed_conv2d", "maxpool2d", "relu", "concat_channels",
    "softmax_cross_entropy", "he_init", "AdamState", "adam_step", "grad_check", "check_ops",
    "GradCheckReport", "LayerSpec", "receptive_field",
]
