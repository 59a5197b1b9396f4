"""Run configuration: one JSON document with sections backbone, head, train,
data and eval.  Every field is optional; unknown keys are rejected."""

import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .heads import HeadConfig
from .nn.backbone import BackboneSpec
from .pipeline.train import TrainConfig

SECTIONS = ("backbone", "head", "train", "data", "eval")
DEFAULT_BACKBONE = {"widths": [8, 16, 32, 64], "strides": [1, 2, 2, 2]}


@dataclass
class DataSection:
    manifest: str = None
    spec: dict = None
    seed: int = 0


@dataclass
class EvalSection:
    folds: int = 5
    group_aware: bool = False
    seed: int = 0


def _section(cls, raw, name):
    known = set(cls.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    return cls(**raw)


@dataclass
class RunConfig:
    backbone: dict = field(default_factory=lambda: dict(DEFAULT_BACKBONE))
    head: HeadConfig = field(default_factory=lambda: HeadConfig(num_classes=None))
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(raw) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for name in SECTIONS:
            if name in raw and not isinstance(raw[name], dict):
                raise ConfigError(f"config section {name!r} must be an object")
        backbone = dict(raw.get("backbone", DEFAULT_BACKBONE))
        BackboneSpec.from_dict(backbone)  # validate early
        head_raw = {"num_classes": None, **raw.get("head", {})}
        try:
            return cls(backbone=backbone,
                       head=HeadConfig.from_dict(head_raw),
                       train=TrainConfig.from_dict(raw.get("train", {})),
                       data=_section(DataSection, raw.get("data", {}), "data"),
                       eval=_section(EvalSection, raw.get("eval", {}), "eval"))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        if path is None:
            return cls.from_dict({})
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def backbone_spec(self, input_shape=None):
        d = dict(self.backbone)
        if input_shape is not None and "input_shape" not in d:
            d["input_shape"] = list(input_shape)
        return BackboneSpec.from_dict(d)

    def to_dict(self):
        return {"backbone": self.backbone, "head": self.head.to_dict(), "train": self.train.to_dict(),
                "data": asdict(self.data), "eval": asdict(self.eval)}

    def write_resolved(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
