"""Micro depthwise-separable backbone.

A stand-in for MobileNet-style feature extractors: standard 3x3 conv blocks
alternate with depthwise-separable blocks (depthwise 3x3 then pointwise 1x1).
Every conv is followed by batch norm and ReLU, so convs carry no bias.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .layers import BatchNorm, Conv2D, DepthwiseConv2D, ReLU, Sequential
from .params import ParamStore

BLOCK_KINDS = ("conv", "dsconv")


@dataclass
class BlockSpec:
    kind: str
    width: int
    stride: int = 1

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"block kind must be one of {BLOCK_KINDS}, got {self.kind!r}")
        if self.width <= 0 or self.stride not in (1, 2):
            raise ConfigError(f"invalid block {self}")


@dataclass
class BackboneSpec:
    input_shape: tuple = (32, 32, 1)
    blocks: list = field(default_factory=list)

    @classmethod
    def from_widths(cls, input_shape, widths, strides, kinds=None):
        """Blocks alternate ``conv, dsconv, conv, ...`` unless ``kinds`` is given."""
        if len(widths) != len(strides):
            raise ConfigError("widths and strides must have equal length")
        if kinds is None:
            kinds = [BLOCK_KINDS[i % 2] for i in range(len(widths))]
        blocks = [BlockSpec(k, w, s) for k, w, s in zip(kinds, widths, strides)]
        return cls(tuple(input_shape), blocks)

    @classmethod
    def desk_default(cls):
        return cls.from_widths((32, 32, 1), [8, 16, 32, 64], [1, 2, 2, 2])

    @classmethod
    def identity(cls, input_shape):
        return cls(tuple(input_shape), [])

    @property
    def out_channels(self):
        return self.blocks[-1].width if self.blocks else self.input_shape[2]

    def output_shape(self):
        h, w, _ = self.input_shape
        for b in self.blocks:
            h, w = -(-h // b.stride), -(-w // b.stride)
        return (h, w, self.out_channels)

    def to_dict(self):
        return {"input_shape": list(self.input_shape),
                "blocks": [{"kind": b.kind, "width": b.width, "stride": b.stride} for b in self.blocks]}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - {"input_shape", "blocks", "widths", "strides", "kinds"}
        if unknown:
            raise ConfigError(f"unknown backbone keys: {sorted(unknown)}")
        shape = tuple(d.get("input_shape", (32, 32, 1)))
        if len(shape) != 3 or min(shape) < 1:
            raise ConfigError(f"input_shape must be (H, W, C) with positive sizes, got {list(shape)}")
        if "widths" in d:
            if "blocks" in d:
                raise ConfigError("give either blocks or widths/strides, not both")
            return cls.from_widths(shape, d["widths"], d.get("strides", [1] * len(d["widths"])), d.get("kinds"))
        blocks = []
        for b in d.get("blocks", []):
            extra = set(b) - {"kind", "width", "stride"}
            if extra:
                raise ConfigError(f"unknown block keys: {sorted(extra)}")
            blocks.append(BlockSpec(b["kind"], int(b["width"]), int(b.get("stride", 1))))
        return cls(shape, blocks)


def build_micronet(spec, seed=0, dtype=np.float32):
    """Build the backbone and register its parameters.

    Returns ``(Sequential, ParamStore)``.  Zero blocks give an identity network.
    """
    rng = np.random.default_rng(seed)
    layers = []
    channels = spec.input_shape[2]
    for b in spec.blocks:
        if b.kind == "conv":
            layers += [Conv2D(channels, b.width, (3, 3), b.stride, "same", has_bias=False, rng=rng, dtype=dtype),
                       BatchNorm(b.width, dtype=dtype), ReLU()]
        else:
            layers += [DepthwiseConv2D(channels, (3, 3), b.stride, "same", has_bias=False, rng=rng, dtype=dtype),
                       BatchNorm(channels, dtype=dtype), ReLU(),
                       Conv2D(channels, b.width, (1, 1), 1, "same", has_bias=False, rng=rng, dtype=dtype),
                       BatchNorm(b.width, dtype=dtype), ReLU()]
        channels = b.width
    net = Sequential(layers)
    store = ParamStore()
    store.extend("", net.params())
    return net, store
