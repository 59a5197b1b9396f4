"""LiteFBCN: channel-reduced bilinear pooling heads on a small numpy deep-learning stack."""

from .heads import (HeadConfig, bilinear_pool_dual, bilinear_pool_self, channel_reduce, head_forward,
                    head_param_count, normalize_bilinear, resolve_reduction)
from .model import Network, build_model, load_checkpoint, save_checkpoint
from .nn import BackboneSpec, build_micronet, count_params, estimate_flops, grad_check

__version__ = "0.1.0"
