"""Classification heads: global-average-pool baseline and the bilinear family.

The bilinear heads share one chain after pooling::

    flatten -> signed sqrt -> l2 normalize -> batch norm -> dense -> softmax

and differ only in what is pooled:

* ``FastBCNN``  pools the backbone map with itself,
* ``LiteFBCN``  first projects it to ``K = C / gamma`` channels with a 1x1 conv,
* ``BCNNDual``  pools the maps of two different backbones against each other.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, NonDivisible, ShapeMismatch, SpatialMismatch, VariantShapeMismatch
from .nn.layers import BatchNorm, Conv2D, Dense, GlobalAvgPool, Layer
from .nn.params import ParamStore

VARIANTS = ("BaselineGAP", "BCNNDual", "FastBCNN", "LiteFBCN")
BILINEAR_VARIANTS = ("BCNNDual", "FastBCNN", "LiteFBCN")
ALIASES = {"baseline": "BaselineGAP", "bcnn": "BCNNDual", "fbcnn": "FastBCNN", "litefbcn": "LiteFBCN"}

SSQRT_GRAD_EPS = 1e-8
SSQRT_KINK_RTOL = 3e-3
L2_EPS = 1e-12


def resolve_reduction(channels, gamma):
    """Number of reducer filters ``K = C / gamma``."""
    channels, gamma = int(channels), int(gamma)
    if gamma < 1 or channels % gamma:
        raise NonDivisible(f"channel count {channels} is not divisible by reduction factor {gamma}")
    return channels // gamma


@dataclass
class HeadConfig:
    variant: str = "LiteFBCN"
    gamma: int = None
    num_classes: int = 5
    reducer_bias: bool = True

    def __post_init__(self):
        self.variant = ALIASES.get(self.variant, self.variant)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown head variant {self.variant!r}; expected one of {VARIANTS}")
        if self.num_classes is not None and int(self.num_classes) < 1:
            raise ConfigError("num_classes must be positive")
        if self.variant == "LiteFBCN":
            if self.gamma is None:
                self.gamma = 4
            if int(self.gamma) < 1:
                raise ConfigError("gamma must be a positive integer")
        else:
            self.gamma = None

    def reduced_channels(self, channels):
        return resolve_reduction(channels, self.gamma) if self.variant == "LiteFBCN" else channels

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"variant", "gamma", "num_classes", "reducer_bias"}
        if unknown:
            raise ConfigError(f"unknown head keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# functional forms


def channel_reduce(features, weights, bias=None):
    """1x1 projection of ``features`` (N,H,W,C) by ``weights`` (1,1,C,K); linear, no activation."""
    features = np.asarray(features)
    weights = np.asarray(weights)
    if weights.ndim != 4 or weights.shape[:2] != (1, 1) or features.ndim != 4 or weights.shape[2] != features.shape[3]:
        raise ShapeMismatch(f"channel_reduce: features {features.shape} vs weights {weights.shape}")
    out = features @ weights[0, 0]
    if bias is not None:
        out = out + bias
    return out


def bilinear_pool_self(features):
    """Sum over locations of ``f f^T``: (N,H,W,K) -> (N,K,K)."""
    features = np.asarray(features)
    if features.ndim != 4 or features.shape[1] * features.shape[2] < 1:
        raise ShapeMismatch(f"bilinear_pool_self expects a non-empty (N,H,W,K) map, got {features.shape}")
    n, h, w, k = features.shape
    flat = features.reshape(n, h * w, k)
    return flat.transpose(0, 2, 1) @ flat


def bilinear_pool_dual(features_a, features_b):
    """Sum over locations of ``f_a f_b^T``: -> (N,K_A,K_B)."""
    a = np.asarray(features_a)
    b = np.asarray(features_b)
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeMismatch(f"bilinear_pool_dual expects two (N,H,W,K) maps, got {a.shape}, {b.shape}")
    if a.shape[:3] != b.shape[:3]:
        raise SpatialMismatch(f"dual pooling needs matching (N,H,W); got {a.shape[:3]} and {b.shape[:3]}")
    n, h, w, _ = a.shape
    return a.reshape(n, h * w, -1).transpose(0, 2, 1) @ b.reshape(n, h * w, -1)


def signed_sqrt(x):
    return np.sign(x) * np.sqrt(np.abs(x))


def normalize_bilinear(pooled):
    """Flatten row-major, signed square root, then scale to unit l2 norm.

    A 3-d input is treated as a batch of matrices and gives one row per
    sample; anything else is flattened to a single vector.  All-zero input
    maps to all-zero output.
    """
    pooled = np.asarray(pooled)
    flat = pooled.reshape(pooled.shape[0], -1) if pooled.ndim == 3 else pooled.reshape(1, -1)
    y = signed_sqrt(flat)
    norm = np.sqrt((y * y).sum(axis=1, keepdims=True))
    out = y / np.maximum(norm, L2_EPS)
    return out if pooled.ndim == 3 else out[0]


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# layers


class ChannelReducer(Conv2D):
    kind = "ChannelReducer"

    def __init__(self, in_channels, out_channels, has_bias=True, rng=None, dtype=np.float32):
        super().__init__(in_channels, out_channels, (1, 1), 1, "valid", has_bias, rng, dtype)

    def forward(self, x, train=False):
        w = self.weight.value
        if x.ndim != 4 or x.shape[3] != w.shape[2]:
            raise ShapeMismatch(f"ChannelReducer: input {x.shape} incompatible with weights {w.shape}")
        self._cache = x
        return channel_reduce(x, w, None if self.bias is None else self.bias.value)

    def backward(self, grad):
        x = self._take_cache()
        c, k = x.shape[3], grad.shape[3]
        self.weight.grad[0, 0] += x.reshape(-1, c).T @ grad.reshape(-1, k)
        if self.bias is not None:
            self.bias.grad += grad.sum(axis=(0, 1, 2))
        return grad @ self.weight.value[0, 0].T


class SelfBilinearPool(Layer):
    kind = "SelfBilinearPool"

    def forward(self, x, train=False):
        self._cache = x
        return bilinear_pool_self(x)

    def backward(self, grad):
        x = self._take_cache()
        n, h, w, k = x.shape
        sym = grad + grad.transpose(0, 2, 1)
        return (x.reshape(n, h * w, k) @ sym).reshape(x.shape)

    def output_shape(self, in_shape):
        return (in_shape[-1], in_shape[-1])

    def flops(self, in_shape):
        h, w, k = in_shape
        return 2 * h * w * k * k


class DualBilinearPool(Layer):
    """Takes and returns pairs: ``forward((a, b))``, ``backward(g) -> (da, db)``."""

    kind = "DualBilinearPool"

    def forward(self, pair, train=False):
        a, b = pair
        self._cache = (a, b)
        return bilinear_pool_dual(a, b)

    def backward(self, grad):
        a, b = self._take_cache()
        n, h, w, _ = a.shape
        fa = a.reshape(n, h * w, -1)
        fb = b.reshape(n, h * w, -1)
        da = fb @ grad.transpose(0, 2, 1)
        db = fa @ grad
        return da.reshape(a.shape), db.reshape(b.shape)

    def output_shape(self, in_shapes):
        (_, _, ka), (_, _, kb) = in_shapes
        return (ka, kb)

    def flops(self, in_shapes):
        (h, w, ka), (_, _, kb) = in_shapes
        return 2 * h * w * ka * kb


class Flatten(Layer):
    kind = "Flatten"

    def forward(self, x, train=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_cache())

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class SignedSqrt(Layer):
    """``sign(x) sqrt|x|``; the derivative is guarded as ``1 / (2 sqrt|x| + 1e-8)``."""

    kind = "SignedSqrt"

    def forward(self, x, train=False):
        root = np.sqrt(np.abs(x))
        sign = np.sign(x)
        self._cache = (root, sign)
        return sign * root

    def backward(self, grad):
        root, _ = self._take_cache()
        return grad / (2 * root + SSQRT_GRAD_EPS)

    def kink_signature(self):
        if self._cache is None:
            return None
        root, sign = self._cache
        return sign * root * root

    @staticmethod
    def kink_crossed(before, after):
        # Near 0 the curvature of sqrt|x| grows without bound, so a probe that
        # moves any input by more than a small fraction of its own magnitude
        # is treated like one that crosses the singularity outright.
        moved = np.abs(after - before)
        return bool(np.any(moved > SSQRT_KINK_RTOL * np.abs(before)))

    def flops(self, in_shape):
        return int(np.prod(in_shape))


class L2Normalize(Layer):
    kind = "L2Normalize"

    def forward(self, x, train=False):
        norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
        denom = np.maximum(norm, L2_EPS)
        out = x / denom
        self._cache = (out, denom, norm > L2_EPS)
        return out

    def backward(self, grad):
        out, denom, active = self._take_cache()
        proj = (out * grad).sum(axis=1, keepdims=True)
        return np.where(active, grad - out * proj, grad) / denom

    def flops(self, in_shape):
        return 3 * int(np.prod(in_shape))


class Head(Layer):
    """A complete classification head producing logits.

    ``in_channels`` is the backbone channel count ``C``; ``in_channels_b``
    the second backbone's count for ``BCNNDual``.
    """

    kind = "Head"

    def __init__(self, config, in_channels, in_channels_b=None, seed=0, dtype=np.float32):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(seed)
        v = config.variant
        ncls = config.num_classes
        self.reducer = None
        if v == "BaselineGAP":
            self.pool = GlobalAvgPool()
            self.chain = []
            self.bn = None
            width = in_channels
        else:
            if v == "LiteFBCN":
                k = resolve_reduction(in_channels, config.gamma)
                self.reducer = ChannelReducer(in_channels, k, config.reducer_bias, rng, dtype)
                width = k * k
                self.pool = SelfBilinearPool()
            elif v == "FastBCNN":
                width = in_channels * in_channels
                self.pool = SelfBilinearPool()
            else:
                if in_channels_b is None:
                    raise ConfigError("BCNNDual needs the second backbone's channel count")
                width = in_channels * in_channels_b
                self.pool = DualBilinearPool()
            self.bn = BatchNorm(width, dtype=dtype)
            self.chain = [Flatten(), SignedSqrt(), L2Normalize()]
        self.feature_width = width
        self.classifier = Dense(width, ncls, rng=rng, dtype=dtype)
        self.params_store = ParamStore()
        self.params_store.extend("", self.params())

    @property
    def n_inputs(self):
        return 2 if self.config.variant == "BCNNDual" else 1

    def named_layers(self):
        out = []
        if self.reducer is not None:
            out.append(("reducer", self.reducer))
        out.append(("pool", self.pool))
        out += [(layer.kind.lower(), layer) for layer in self.chain]
        if self.bn is not None:
            out.append(("bn", self.bn))
        out.append(("classifier", self.classifier))
        return out

    def params(self):
        out = []
        for lname, layer in self.named_layers():
            out.extend((f"{lname}.{pname}", p) for pname, p in layer.params())
        return out

    def _check_inputs(self, features):
        if len(features) != self.n_inputs:
            raise VariantShapeMismatch(
                f"{self.config.variant} takes {self.n_inputs} feature map(s), got {len(features)}")
        for f in features:
            if np.ndim(f) != 4:
                raise VariantShapeMismatch(f"feature maps must be (N,H,W,C), got shape {np.shape(f)}")
        expect_c = self.reducer.in_channels if self.reducer is not None else None
        if expect_c is not None and features[0].shape[3] != expect_c:
            raise VariantShapeMismatch(f"reducer expects {expect_c} channels, got {features[0].shape[3]}")
        if self.config.variant == "BCNNDual" and features[0].shape[:3] != features[1].shape[:3]:
            raise SpatialMismatch(f"dual maps differ spatially: {features[0].shape} vs {features[1].shape}")

    def embed(self, features, train=False):
        """Features right before the classifier chain's batch norm (the exported vector)."""
        self._check_inputs(features)
        if self.config.variant == "BCNNDual":
            x = self.pool.forward((features[0], features[1]), train)
        else:
            x = features[0]
            if self.reducer is not None:
                x = self.reducer.forward(x, train)
            x = self.pool.forward(x, train)
        for layer in self.chain:
            x = layer.forward(x, train)
        if x.shape[1] != self.feature_width:
            raise VariantShapeMismatch(f"pooled width {x.shape[1]} does not match head width {self.feature_width}")
        return x

    def forward(self, features, train=False):
        x = self.embed(features, train)
        if self.bn is not None:
            x = self.bn.forward(x, train)
        return self.classifier.forward(x, train)

    def backward(self, grad):
        """Returns the list of gradients w.r.t. the input feature maps."""
        grad = self.classifier.backward(grad)
        if self.bn is not None:
            grad = self.bn.backward(grad)
        for layer in reversed(self.chain):
            grad = layer.backward(grad)
        if self.config.variant == "BCNNDual":
            return list(self.pool.backward(grad))
        grad = self.pool.backward(grad)
        if self.reducer is not None:
            grad = self.reducer.backward(grad)
        return [grad]

    def layer_flops(self, in_shapes):
        """``(name, kind, flops)`` per layer for feature shapes ``[(H, W, C), ...]``."""
        out = []
        if self.config.variant == "BCNNDual":
            shape = in_shapes
        else:
            shape = tuple(in_shapes[0])
            if self.reducer is not None:
                out.append(("reducer", self.reducer.kind, self.reducer.flops(shape)))
                shape = self.reducer.output_shape(shape)
        out.append(("pool", self.pool.kind, self.pool.flops(shape)))
        shape = self.pool.output_shape(shape)
        for layer in self.chain:
            out.append((layer.kind.lower(), layer.kind, layer.flops(shape)))
            shape = layer.output_shape(shape)
        if self.bn is not None:
            out.append(("bn", self.bn.kind, self.bn.flops(shape)))
        out.append(("classifier", self.classifier.kind, self.classifier.flops(shape)))
        ncls = self.config.num_classes
        out.append(("softmax", "Softmax", 3 * ncls))
        return out

    def flops(self, in_shapes):
        return sum(f for _, _, f in self.layer_flops(in_shapes))

    def spec(self):
        return {"kind": self.kind, "config": self.config.to_dict(),
                "layers": [layer.spec() for _, layer in self.named_layers()]}


def head_forward(head, features, mode="infer"):
    """Class probabilities (N, num_classes) from backbone feature maps."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if isinstance(features, np.ndarray):
        features = [features]
    return softmax(head.forward(list(features), train=(mode == "train")))


@dataclass(frozen=True)
class HeadParamCount:
    total: int
    trainable: int
    running: int


def head_param_count(variant, channels, gamma=None, num_classes=5, channels_b=None, reducer_bias=True):
    """Closed-form parameter count of a head.

    Batch norm contributes 2 trainable (scale, shift) plus 2 running
    (mean, variance) parameters per feature; both are in ``total``.
    """
    variant = ALIASES.get(variant, variant)
    c, ncls = int(channels), int(num_classes)
    if variant == "BaselineGAP":
        return HeadParamCount(c * ncls + ncls, c * ncls + ncls, 0)
    if variant == "LiteFBCN":
        k = resolve_reduction(c, gamma)
        reducer = c * k + (k if reducer_bias else 0)
        width = k * k
    elif variant == "FastBCNN":
        reducer, width = 0, c * c
    elif variant == "BCNNDual":
        reducer, width = 0, c * int(channels_b if channels_b is not None else c)
    else:
        raise ConfigError(f"unknown head variant {variant!r}")
    classifier = width * ncls + ncls
    trainable = reducer + 2 * width + classifier
    return HeadParamCount(trainable + 2 * width, trainable, 2 * width)
