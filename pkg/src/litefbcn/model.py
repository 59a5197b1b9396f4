"""Full models (backbone + head) with their training loss; checkpoint save and load.

A checkpoint is a directory holding ``manifest.json`` plus one
``.rtf-tensor`` file per parameter.
"""

import json
import os

import numpy as np

from .errors import ConfigError, ShapeMismatch
from .heads import Head, HeadConfig, softmax
from .nn.backbone import BackboneSpec, build_micronet
from .nn.params import ParamStore
from .tensor import EXTENSION, read_rtf, write_rtf

PROB_CLAMP = 1e-12


class Network:
    """One backbone (two for ``BCNNDual``) feeding a :class:`Head`."""

    def __init__(self, backbone_spec, head_config, seed=0, dtype=np.float32, backbone_spec_b=None):
        self.backbone_spec = backbone_spec
        self.head_config = head_config
        self.seed = seed
        dual = head_config.variant == "BCNNDual"
        if dual and backbone_spec_b is None:
            backbone_spec_b = backbone_spec
        self.backbone_spec_b = backbone_spec_b if dual else None
        self.backbones = [build_micronet(backbone_spec, seed, dtype)[0]]
        if dual:
            if tuple(backbone_spec_b.input_shape) != tuple(backbone_spec.input_shape):
                raise ConfigError("both BCNN backbones must take the same input shape")
            if backbone_spec_b.output_shape()[:2] != backbone_spec.output_shape()[:2]:
                raise ConfigError("BCNN backbones must produce maps with equal spatial dims")
            self.backbones.append(build_micronet(backbone_spec_b, seed + 1, dtype)[0])
        if head_config.num_classes is None:
            raise ConfigError("head num_classes must be resolved before building a model")
        channels_b = backbone_spec_b.out_channels if dual else None
        self.head = Head(head_config, backbone_spec.out_channels, channels_b, seed=seed + 2, dtype=dtype)
        self.params = ParamStore()
        for name, net in self.named_backbones():
            self.params.extend(name, net.params())
        self.params.extend("head", self.head.params())

    @property
    def dtype(self):
        return self.head.classifier.weight.value.dtype

    def astype(self, dtype):
        self.params.astype(dtype)
        return self

    def named_backbones(self):
        if len(self.backbones) == 1:
            return [("backbone", self.backbones[0])]
        return [("backbone_a", self.backbones[0]), ("backbone_b", self.backbones[1])]

    def _check_input(self, x):
        expect = tuple(self.backbone_spec.input_shape)
        if x.ndim != 4 or tuple(x.shape[1:]) != expect:
            raise ShapeMismatch(f"model expects input (N, {', '.join(map(str, expect))}), got {x.shape}")

    def features(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        self._check_input(x)
        return [net.forward(x, train) for net in self.backbones]

    def forward(self, x, train=False):
        """Logits (N, num_classes)."""
        return self.head.forward(self.features(x, train), train)

    def predict_proba(self, x):
        return softmax(self.forward(x, train=False))

    def embed(self, x):
        """Inference-mode head input vector (normalized bilinear or pooled GAP)."""
        return self.head.embed(self.features(x, train=False), train=False)

    def backward(self, dlogits):
        grads = self.head.backward(dlogits)
        dx = None
        for net, g in zip(self.backbones, grads):
            gi = net.backward(g)
            dx = gi if dx is None else dx + gi
        return dx

    def penalty(self, l2):
        w = self.head.classifier.weight.value
        return l2 * float((w.astype(np.float64) ** 2).sum())

    def loss(self, x, labels, l2=0.0, train=True, backward=True):
        """Mean cross-entropy plus ``l2 * ||W_classifier||^2``.

        With ``backward`` the parameter gradients are reset and filled.
        Returns ``(loss, probabilities)``.
        """
        labels = np.asarray(labels)
        logits = self.forward(x, train)
        probs = softmax(logits)
        n = len(labels)
        ce = -np.log(np.maximum(probs[np.arange(n), labels], PROB_CLAMP)).astype(np.float64).mean()
        total = float(ce) + self.penalty(l2)
        if backward:
            self.params.zero_grad()
            dlogits = probs.copy()
            dlogits[np.arange(n), labels] -= 1
            self.backward((dlogits / n).astype(self.dtype))
            if l2:
                w = self.head.classifier.weight
                w.grad += (2 * l2) * w.value
        return total, probs

    def layer_flops(self, input_shape=None):
        input_shape = tuple(input_shape or self.backbone_spec.input_shape)
        out = []
        shapes = []
        for name, net in self.named_backbones():
            out += [(f"{name}.{ln}", kind, f) for ln, kind, f in net.layer_flops(input_shape)]
            shapes.append(net.output_shape(input_shape))
        out += [(f"head.{ln}", kind, f) for ln, kind, f in self.head.layer_flops(shapes)]
        return out

    def spec(self):
        d = {"backbone": self.backbone_spec.to_dict(), "head": self.head_config.to_dict(), "seed": self.seed,
             "layers": {name: net.spec()["layers"] for name, net in self.named_backbones()}}
        d["layers"]["head"] = self.head.spec()["layers"]
        if self.backbone_spec_b is not None:
            d["backbone_b"] = self.backbone_spec_b.to_dict()
        return d


def build_model(backbone_spec, head_config, seed=0, dtype=np.float32, backbone_spec_b=None):
    return Network(backbone_spec, head_config, seed, dtype, backbone_spec_b)


def _param_filename(name):
    return name.replace("/", "_") + EXTENSION


def save_checkpoint(model, directory, extra=None):
    os.makedirs(directory, exist_ok=True)
    entries = []
    for name, p in model.params:
        fname = _param_filename(name)
        write_rtf(os.path.join(directory, fname), p.value)
        entries.append({"name": name, "file": fname, "shape": list(p.shape), "dtype": str(p.value.dtype),
                        "trainable": p.trainable, "running": p.running})
    manifest = model.spec()
    manifest["params"] = entries
    if extra:
        manifest["extra"] = extra
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    spec_b = BackboneSpec.from_dict(manifest["backbone_b"]) if "backbone_b" in manifest else None
    model = build_model(BackboneSpec.from_dict(manifest["backbone"]), HeadConfig.from_dict(manifest["head"]),
                        seed=manifest.get("seed", 0), backbone_spec_b=spec_b)
    state = {e["name"]: read_rtf(os.path.join(directory, e["file"])) for e in manifest["params"]}
    dtypes = {e["dtype"] for e in manifest["params"]}
    if dtypes == {"float64"}:
        model.astype(np.float64)
    model.params.load_state(state)
    return model
