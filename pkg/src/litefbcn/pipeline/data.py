"""Synthetic zero-mean covariance-texture datasets and CSV manifests.

Every pixel of a class-``c`` sample is an independent draw from
``N(0, Sigma_c)``.  The classes share a zero mean, so the class signal is
second order only: spatial averaging sees nothing but noise.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, LabelOutOfRange, NotPositiveDefinite, ShapeMismatch
from ..tensor import EXTENSION, read_rtf, write_rtf

MANIFEST_HEADER = ["path", "label", "group"]
CLASSES_FILE = "classes.json"


@dataclass
class CovarianceClass:
    name: str
    covariance: np.ndarray
    samples: int = None


@dataclass
class CovarianceClassSpec:
    classes: list
    sample_shape: tuple = (8, 8, 4)
    samples_per_class: int = 200
    group_size: int = None

    def __post_init__(self):
        self.sample_shape = tuple(int(s) for s in self.sample_shape)
        if len(self.sample_shape) != 3:
            raise ConfigError(f"sample_shape must be (H, W, K), got {self.sample_shape}")
        k = self.sample_shape[2]
        for c in self.classes:
            c.covariance = np.asarray(c.covariance, dtype=np.float64)
            if c.covariance.shape != (k, k):
                raise ConfigError(f"class {c.name!r}: covariance shape {c.covariance.shape}, expected {(k, k)}")

    def counts(self):
        return [c.samples if c.samples is not None else self.samples_per_class for c in self.classes]

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"classes", "sample_shape", "samples_per_class", "group_size"}
        if unknown:
            raise ConfigError(f"unknown dataset spec keys: {sorted(unknown)}")
        classes = []
        for i, c in enumerate(d.get("classes", [])):
            extra = set(c) - {"name", "covariance", "samples"}
            if extra:
                raise ConfigError(f"unknown class keys: {sorted(extra)}")
            classes.append(CovarianceClass(c.get("name", f"class{i}"), c["covariance"], c.get("samples")))
        if not classes:
            raise ConfigError("dataset spec needs at least one class")
        return cls(classes, tuple(d.get("sample_shape", (8, 8, 4))), int(d.get("samples_per_class", 200)),
                   d.get("group_size"))

    def to_dict(self):
        return {"sample_shape": list(self.sample_shape), "samples_per_class": self.samples_per_class,
                "group_size": self.group_size,
                "classes": [{"name": c.name, "covariance": c.covariance.tolist(), "samples": c.samples}
                            for c in self.classes]}


def three_class_demo_spec(samples_per_class=200):
    """Identity; a strong 0-1 correlation; unequal channel-pair variances."""
    corr = np.eye(4)
    corr[0, 1] = corr[1, 0] = 0.9
    return CovarianceClassSpec(
        [CovarianceClass("identity", np.eye(4)),
         CovarianceClass("correlated", corr),
         CovarianceClass("anisotropic", np.diag([2.0, 2.0, 0.5, 0.5]))],
        sample_shape=(8, 8, 4), samples_per_class=samples_per_class)


def cholesky_factors(spec):
    factors = []
    for c in spec.classes:
        cov = c.covariance
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise NotPositiveDefinite(f"class {c.name!r}: covariance is not symmetric")
        try:
            factors.append(np.linalg.cholesky(cov))
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(f"class {c.name!r}: covariance is not positive definite") from None
    return factors


def _sample_rng(seed, class_index, sample_index):
    # counter-based stream keyed by (seed, class, sample): independent of generation order
    key = np.array([seed, (class_index << 32) | sample_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_covariance_dataset(spec, seed):
    """In-memory draw: ``(X, labels, groups)`` with X of shape (N, H, W, K), float32."""
    factors = cholesky_factors(spec)
    h, w, k = spec.sample_shape
    xs, ys, gs = [], [], []
    for ci, (chol, count) in enumerate(zip(factors, spec.counts())):
        for i in range(count):
            z = _sample_rng(seed, ci, i).standard_normal((h * w, k))
            xs.append((z @ chol.T).reshape(h, w, k).astype(np.float32))
            ys.append(ci)
            gs.append(f"c{ci}_g{i // spec.group_size}" if spec.group_size else "")
    return np.stack(xs), np.array(ys, dtype=np.int64), gs


@dataclass
class DatasetManifest:
    paths: list
    labels: np.ndarray
    groups: list = None
    class_names: list = field(default_factory=list)
    root: str = "."

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.groups is not None and not any(self.groups):
            self.groups = None

    @property
    def num_classes(self):
        return len(self.class_names) if self.class_names else int(self.labels.max()) + 1

    def __len__(self):
        return len(self.paths)

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.root, path)

    def validate(self):
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {self.num_classes})")
        for p in self.paths:
            if not os.path.exists(self.resolve(p)):
                raise FileNotFoundError(f"manifest references missing file {p}")

    def load(self):
        """Stack every sample into one (N, H, W, C) array."""
        arrays = [read_rtf(self.resolve(p)) for p in self.paths]
        shapes = {a.shape for a in arrays}
        if len(shapes) > 1:
            raise ShapeMismatch(f"manifest samples have differing shapes: {sorted(shapes)}")
        return np.stack(arrays)

    def write(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            groups = self.groups or [""] * len(self.paths)
            for p, y, g in zip(self.paths, self.labels.tolist(), groups):
                writer.writerow([p, y, g])
        if self.class_names:
            with open(os.path.join(os.path.dirname(os.path.abspath(path)), CLASSES_FILE), "w") as fh:
                json.dump(self.class_names, fh, indent=2)
                fh.write("\n")

    @classmethod
    def read(cls, path):
        root = os.path.dirname(os.path.abspath(path))
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MANIFEST_HEADER:
                raise ConfigError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}, got {header}")
            paths, labels, groups = [], [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 3:
                    raise ConfigError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
                try:
                    labels.append(int(row[1]))
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: label {row[1]!r} is not an integer") from None
                paths.append(row[0])
                groups.append(row[2])
        names_path = os.path.join(root, CLASSES_FILE)
        names = []
        if os.path.exists(names_path):
            with open(names_path) as fh:
                names = json.load(fh)
        return cls(paths, np.array(labels, dtype=np.int64), groups, names, root)


def gen_covariance_dataset(spec, out_dir, seed):
    """Write one RTF file per sample plus ``manifest.csv``; returns the manifest."""
    x, y, groups = sample_covariance_dataset(spec, seed)
    os.makedirs(os.path.join(out_dir, "samples"), exist_ok=True)
    paths = []
    counters = {}
    for xi, yi in zip(x, y.tolist()):
        i = counters.get(yi, 0)
        counters[yi] = i + 1
        rel = os.path.join("samples", f"c{yi}_{i:05d}{EXTENSION}")
        write_rtf(os.path.join(out_dir, rel), xi)
        paths.append(rel)
    manifest = DatasetManifest(paths, y, groups, [c.name for c in spec.classes], out_dir)
    manifest.write(os.path.join(out_dir, "manifest.csv"))
    return manifest
