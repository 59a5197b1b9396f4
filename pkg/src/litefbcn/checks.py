"""Finite-difference verification suite over every layer kind and head variant."""

import numpy as np

from .heads import (VARIANTS, ChannelReducer, DualBilinearPool, HeadConfig, L2Normalize, SelfBilinearPool,
                    SignedSqrt, softmax)
from .model import build_model
from .nn.gradcheck import check_layer, grad_check, jitter_batchnorm, relative_error
from .nn.layers import BatchNorm, Conv2D, Dense, DepthwiseConv2D, GlobalAvgPool, ReLU
from .pipeline.losses import cross_entropy_loss, one_hot

TOLERANCE = 1e-4


def _softmax_ce_error(rng, h=1e-5):
    logits = rng.standard_normal((4, 5))
    y = one_hot(rng.integers(0, 5, size=4), 5)
    _, grad = cross_entropy_loss(softmax(logits), y)
    worst = 0.0
    for i in np.ndindex(logits.shape):
        lp, lm = logits.copy(), logits.copy()
        lp[i] += h
        lm[i] -= h
        numeric = (cross_entropy_loss(softmax(lp), y)[0] - cross_entropy_loss(softmax(lm), y)[0]) / (2 * h)
        worst = max(worst, relative_error(grad[i], numeric))
    return worst


def layer_checks(seed=0, h=1e-5):
    """Max relative error per layer kind, each layer checked in isolation."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 5, 5, 3))
    bn = BatchNorm(3)
    bn.gamma.value = rng.uniform(0.5, 1.5, 3).astype(np.float32)
    bn.beta.value = rng.uniform(-0.5, 0.5, 3).astype(np.float32)
    flat = rng.standard_normal((4, 6))
    # keep signed-sqrt probes away from its singularity at 0
    ssqrt_in = rng.uniform(0.5, 2.0, (3, 6)) * rng.choice([-1.0, 1.0], (3, 6))
    return {
        "Conv2D": max(check_layer(Conv2D(3, 4, (3, 3), 2, "same", rng=rng), x, h),
                      check_layer(Conv2D(3, 2, (3, 3), 1, "valid", rng=rng), x, h)),
        "DepthwiseConv2D": check_layer(DepthwiseConv2D(3, (3, 3), 1, "same", rng=rng), x, h),
        "PointwiseConv2D": check_layer(Conv2D(3, 4, (1, 1), 1, "same", rng=rng), x, h),
        "Dense": check_layer(Dense(6, 3, rng=rng), flat, h),
        "BatchNorm": check_layer(bn, x, h, train=True),
        "ReLU": check_layer(ReLU(), x, h),
        "GlobalAvgPool": check_layer(GlobalAvgPool(), x, h),
        "ChannelReducer": check_layer(ChannelReducer(3, 2, rng=rng), x, h),
        "SelfBilinearPool": check_layer(SelfBilinearPool(), x, h),
        "DualBilinearPool": check_layer(DualBilinearPool(), (x, rng.standard_normal((2, 5, 5, 2))), h),
        "SignedSqrt": check_layer(SignedSqrt(), ssqrt_in, h),
        "L2Normalize": check_layer(L2Normalize(), flat, h),
        "SoftmaxCrossEntropy": _softmax_ce_error(rng, h),
    }


def head_checks(backbone_spec, num_classes=3, samples=3, gamma=2, seed=0, h=1e-5, n_params=200,
                corrupt=False, variants=VARIANTS):
    """End-to-end :func:`grad_check` report per head variant on ``backbone_spec``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((samples,) + tuple(backbone_spec.input_shape))
    labels = np.arange(samples) % num_classes
    reports = {}
    for v in variants:
        model = build_model(backbone_spec, HeadConfig(v, gamma=gamma, num_classes=num_classes), seed=seed)
        jitter_batchnorm(model, seed)
        reports[v] = grad_check(model, x, labels, h=h, n_samples=n_params, seed=seed, corrupt=corrupt)
    return reports
