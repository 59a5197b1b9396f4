"""Layers with hand-written forward and backward passes.

All feature maps are channels-last ``(N, H, W, C)``.  Every layer caches what
its backward pass needs during ``forward`` and accumulates parameter
gradients into ``Param.grad`` during ``backward``.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch, UnrecordedForward, ZeroBatch
from .params import Param

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def conv_output_size(size, kernel, stride, padding):
    if padding == "same":
        return -(-size // stride)
    if padding == "valid":
        return (size - kernel) // stride + 1
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _pad_amount(size, kernel, stride, padding):
    out = conv_output_size(size, kernel, stride, padding)
    if padding == "valid":
        return out, 0, 0
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def _patches(x, kh, kw, stride, padding):
    """Return padded input, a (N,Ho,Wo,kh,kw,C) patch view and the padding offsets."""
    _, h, w, _ = x.shape
    ho, top, bottom = _pad_amount(h, kh, stride, padding)
    wo, left, right = _pad_amount(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"kernel {kh}x{kw} does not fit input {h}x{w} with {padding} padding")
    xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0))) if top + bottom + left + right else x
    view = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    view = view[:, ::stride, ::stride][:, :ho, :wo].transpose(0, 1, 2, 4, 5, 3)
    return xp.shape, view, (top, left)


def _fold_patches(dpatches, padded_shape, offsets, stride, in_shape):
    """Adjoint of :func:`_patches`: scatter-add patch gradients back to the input."""
    n, ho, wo, kh, kw, c = dpatches.shape
    dxp = np.zeros(padded_shape, dtype=dpatches.dtype)
    for a in range(kh):
        for b in range(kw):
            dxp[:, a:a + stride * (ho - 1) + 1:stride, b:b + stride * (wo - 1) + 1:stride, :] += dpatches[:, :, :, a, b, :]
    top, left = offsets
    return dxp[:, top:top + in_shape[1], left:left + in_shape[2], :]


def conv2d_forward(x, weights, bias=None, stride=1, padding="same"):
    """Cross-correlation of ``x`` (N,H,W,C) with ``weights`` (kh,kw,C,K)."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim != 4 or weights.ndim != 4 or weights.shape[2] != x.shape[3]:
        raise ShapeMismatch(f"conv2d: input {x.shape} incompatible with weights {weights.shape}")
    kh, kw = weights.shape[:2]
    _, patches, _ = _patches(x, kh, kw, stride, padding)
    out = np.tensordot(patches, weights, axes=([3, 4, 5], [0, 1, 2]))
    if bias is not None:
        if np.shape(bias) != (weights.shape[3],):
            raise ShapeMismatch(f"conv2d: bias {np.shape(bias)} vs {weights.shape[3]} filters")
        out = out + bias
    return out


def depthwise_conv2d_forward(x, weights, bias=None, stride=1, padding="same"):
    """Per-channel cross-correlation; ``weights`` is (kh,kw,C,1)."""
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim != 4 or weights.ndim != 4 or weights.shape[2] != x.shape[3] or weights.shape[3] != 1:
        raise ShapeMismatch(f"depthwise conv: input {x.shape} incompatible with weights {weights.shape}")
    kh, kw = weights.shape[:2]
    _, patches, _ = _patches(x, kh, kw, stride, padding)
    out = np.einsum("nijabc,abc->nijc", patches, weights[..., 0])
    if bias is not None:
        out = out + bias
    return out


def dense_forward(x, weights, bias=None):
    x = np.asarray(x)
    weights = np.asarray(weights)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ShapeMismatch(f"dense: input {x.shape} incompatible with weights {weights.shape}")
    out = x @ weights
    if bias is not None:
        if np.shape(bias) != (weights.shape[1],):
            raise ShapeMismatch(f"dense: bias {np.shape(bias)} vs {weights.shape[1]} outputs")
        out = out + bias
    return out


def global_average_pool(x):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeMismatch(f"global_average_pool expects (N,H,W,C), got {x.shape}")
    return x.mean(axis=(1, 2))


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode="train",
                      momentum=BN_MOMENTUM, eps=BN_EPS):
    """Batch normalization over every axis but the last.

    Returns ``(out, new_running_mean, new_running_var)``; in ``infer`` mode the
    running statistics come back unchanged.
    """
    x = np.asarray(x)
    if x.shape[-1] != np.shape(gamma)[0]:
        raise ShapeMismatch(f"batchnorm: {x.shape[-1]} features vs {np.shape(gamma)[0]} parameters")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] == 0:
            raise ZeroBatch("batch norm in train mode needs a non-empty batch")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = momentum * running_mean + (1 - momentum) * mean
        new_var = momentum * running_var + (1 - momentum) * var
    elif mode == "infer":
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    xhat = (x - mean) / np.sqrt(var + eps)
    return gamma * xhat + beta, new_mean, new_var


def kaiming_uniform(rng, shape, fan_in, dtype=np.float32):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base class; subclasses set ``kind`` and implement the passes."""

    kind = "Layer"

    def __init__(self):
        self._cache = None

    def params(self):
        """``(local_name, Param)`` pairs in a fixed order."""
        return []

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def flops(self, in_shape):
        return 0

    def spec(self):
        return {"kind": self.kind}

    def kink_signature(self):
        """Bytes identifying which side of a non-differentiable point each
        element of the last forward pass sat on; ``None`` for smooth layers."""
        return None

    @staticmethod
    def kink_crossed(before, after):
        """Whether two signatures differ enough to void a finite difference."""
        return before != after

    def _take_cache(self):
        if self._cache is None:
            raise UnrecordedForward(f"{self.kind}.backward called without a recorded forward pass")
        return self._cache


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, in_channels, out_channels, kernel=(3, 3), stride=1, padding="same",
                 has_bias=True, rng=None, dtype=np.float32):
        super().__init__()
        if out_channels <= 0:
            raise ValueError("Conv2D needs at least one output channel")
        self.kernel = tuple(kernel)
        self.stride = stride
        self.padding = padding
        self.in_channels = in_channels
        self.out_channels = out_channels
        kh, kw = self.kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Param(kaiming_uniform(rng, (kh, kw, in_channels, out_channels), kh * kw * in_channels, dtype))
        self.bias = Param(np.zeros(out_channels, dtype=dtype)) if has_bias else None

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def forward(self, x, train=False):
        w = self.weight.value
        if x.ndim != 4 or x.shape[3] != w.shape[2]:
            raise ShapeMismatch(f"{self.kind}: input {x.shape} incompatible with weights {w.shape}")
        padded_shape, patches, offsets = _patches(x, *self.kernel, self.stride, self.padding)
        out = np.tensordot(patches, w, axes=([3, 4, 5], [0, 1, 2]))
        if self.bias is not None:
            out = out + self.bias.value
        self._cache = (patches, padded_shape, offsets, x.shape)
        return out

    def backward(self, grad):
        patches, padded_shape, offsets, in_shape = self._take_cache()
        self.weight.grad += np.tensordot(patches, grad, axes=([0, 1, 2], [0, 1, 2]))
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=(0, 1, 2))
        dpatches = np.tensordot(grad, self.weight.value, axes=([3], [3]))
        return _fold_patches(dpatches, padded_shape, offsets, self.stride, in_shape)

    def output_shape(self, in_shape):
        h, w, _ = in_shape
        kh, kw = self.kernel
        return (conv_output_size(h, kh, self.stride, self.padding),
                conv_output_size(w, kw, self.stride, self.padding), self.out_channels)

    def flops(self, in_shape):
        ho, wo, k = self.output_shape(in_shape)
        kh, kw = self.kernel
        total = 2 * ho * wo * k * kh * kw * self.in_channels
        if self.bias is not None:
            total += ho * wo * k
        return total

    def spec(self):
        return {"kind": self.kind, "kernel": list(self.kernel), "stride": self.stride,
                "padding": self.padding, "channels": [self.in_channels, self.out_channels],
                "has_bias": self.bias is not None}


class DepthwiseConv2D(Conv2D):
    kind = "DepthwiseConv2D"

    def __init__(self, channels, kernel=(3, 3), stride=1, padding="same", has_bias=True,
                 rng=None, dtype=np.float32):
        Layer.__init__(self)
        self.kernel = tuple(kernel)
        self.stride = stride
        self.padding = padding
        self.in_channels = self.out_channels = channels
        kh, kw = self.kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Param(kaiming_uniform(rng, (kh, kw, channels, 1), kh * kw, dtype))
        self.bias = Param(np.zeros(channels, dtype=dtype)) if has_bias else None

    def forward(self, x, train=False):
        w = self.weight.value
        if x.ndim != 4 or x.shape[3] != w.shape[2]:
            raise ShapeMismatch(f"{self.kind}: input {x.shape} incompatible with weights {w.shape}")
        padded_shape, patches, offsets = _patches(x, *self.kernel, self.stride, self.padding)
        out = np.einsum("nijabc,abc->nijc", patches, w[..., 0])
        if self.bias is not None:
            out = out + self.bias.value
        self._cache = (patches, padded_shape, offsets, x.shape)
        return out

    def backward(self, grad):
        patches, padded_shape, offsets, in_shape = self._take_cache()
        self.weight.grad[..., 0] += np.einsum("nijabc,nijc->abc", patches, grad)
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=(0, 1, 2))
        dpatches = np.einsum("nijc,abc->nijabc", grad, self.weight.value[..., 0])
        return _fold_patches(dpatches, padded_shape, offsets, self.stride, in_shape)

    def flops(self, in_shape):
        ho, wo, c = self.output_shape(in_shape)
        kh, kw = self.kernel
        total = 2 * ho * wo * c * kh * kw
        if self.bias is not None:
            total += ho * wo * c
        return total


class Dense(Layer):
    kind = "Dense"

    def __init__(self, in_features, out_features, has_bias=True, rng=None, dtype=np.float32):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Param(kaiming_uniform(rng, (in_features, out_features), in_features, dtype))
        self.bias = Param(np.zeros(out_features, dtype=dtype)) if has_bias else None

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def forward(self, x, train=False):
        out = dense_forward(x, self.weight.value, None if self.bias is None else self.bias.value)
        self._cache = x
        return out

    def backward(self, grad):
        x = self._take_cache()
        self.weight.grad += x.T @ grad
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=0)
        return grad @ self.weight.value.T

    def output_shape(self, in_shape):
        return (self.out_features,)

    def flops(self, in_shape):
        return 2 * self.in_features * self.out_features + (self.out_features if self.bias is not None else 0)

    def spec(self):
        return {"kind": self.kind, "channels": [self.in_features, self.out_features],
                "has_bias": self.bias is not None}


class BatchNorm(Layer):
    kind = "BatchNorm"

    def __init__(self, features, momentum=BN_MOMENTUM, eps=BN_EPS, dtype=np.float32):
        super().__init__()
        self.features = features
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(features, dtype=dtype))
        self.beta = Param(np.zeros(features, dtype=dtype))
        self.running_mean = Param(np.zeros(features, dtype=dtype), trainable=False, running=True)
        self.running_var = Param(np.ones(features, dtype=dtype), trainable=False, running=True)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta),
                ("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, train=False):
        if x.shape[-1] != self.features:
            raise ShapeMismatch(f"BatchNorm over {self.features} features got input {x.shape}")
        axes = tuple(range(x.ndim - 1))
        if train:
            if x.shape[0] == 0:
                raise ZeroBatch("batch norm in train mode needs a non-empty batch")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            dt = self.running_mean.value.dtype
            self.running_mean.value = (m * self.running_mean.value + (1 - m) * mean).astype(dt)
            self.running_var.value = (m * self.running_var.value + (1 - m) * var).astype(dt)
        else:
            mean = self.running_mean.value
            var = self.running_var.value
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, train)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, grad):
        xhat, inv_std, train = self._take_cache()
        axes = tuple(range(grad.ndim - 1))
        self.gamma.grad += (grad * xhat).sum(axis=axes)
        self.beta.grad += grad.sum(axis=axes)
        dxhat = grad * self.gamma.value
        if not train:
            return dxhat * inv_std
        m = grad.size // grad.shape[-1]
        return inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))

    def flops(self, in_shape):
        return 2 * int(np.prod(in_shape))

    def spec(self):
        return {"kind": self.kind, "channels": [self.features, self.features], "has_bias": False}


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, train=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return grad * self._take_cache()

    def kink_signature(self):
        return None if self._cache is None else np.packbits(self._cache).tobytes()

    def flops(self, in_shape):
        return int(np.prod(in_shape))


class GlobalAvgPool(Layer):
    kind = "GlobalAvgPool"

    def forward(self, x, train=False):
        out = global_average_pool(x)
        self._cache = x.shape
        return out

    def backward(self, grad):
        n, h, w, c = self._take_cache()
        return np.broadcast_to(grad[:, None, None, :] / (h * w), (n, h, w, c)).copy()

    def output_shape(self, in_shape):
        return (in_shape[-1],)

    def flops(self, in_shape):
        h, w, c = in_shape
        return h * w * c + c


class Sequential(Layer):
    """Layers applied in order; named children give parameter prefixes."""

    kind = "Sequential"

    def __init__(self, layers=()):
        super().__init__()
        self.layers = list(layers)

    def named_layers(self):
        return [(f"{i}_{layer.kind.lower()}", layer) for i, layer in enumerate(self.layers)]

    def params(self):
        out = []
        for lname, layer in self.named_layers():
            out.extend((f"{lname}.{pname}", p) for pname, p in layer.params())
        return out

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return tuple(in_shape)

    def flops(self, in_shape):
        return sum(f for _, _, f in self.layer_flops(in_shape))

    def layer_flops(self, in_shape):
        out = []
        for lname, layer in self.named_layers():
            out.append((lname, layer.kind, layer.flops(in_shape)))
            in_shape = layer.output_shape(in_shape)
        return out

    def spec(self):
        return {"kind": self.kind, "layers": [layer.spec() for layer in self.layers]}
