"""Layers, the micro backbone, gradient checking and model accounting."""

from .accounting import count_params, estimate_flops
from .backbone import BackboneSpec, BlockSpec, build_micronet
from .gradcheck import GradCheckReport, check_layer, grad_check, jitter_batchnorm
from .layers import (BatchNorm, Conv2D, Dense, DepthwiseConv2D, GlobalAvgPool, Layer, ReLU, Sequential,
                     batchnorm_forward, conv2d_forward, conv_output_size, dense_forward,
                     depthwise_conv2d_forward, global_average_pool)
from .params import Param, ParamStore

__all__ = [
    "BackboneSpec", "BatchNorm", "BlockSpec", "Conv2D", "Dense", "DepthwiseConv2D", "GlobalAvgPool",
    "GradCheckReport", "Layer", "Param", "ParamStore", "ReLU", "Sequential", "batchnorm_forward",
    "build_micronet", "check_layer", "conv2d_forward", "conv_output_size", "count_params", "dense_forward",
    "depthwise_conv2d_forward", "estimate_flops", "global_average_pool", "grad_check", "jitter_batchnorm",
]
