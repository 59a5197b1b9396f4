from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..errors import TooFewSamples


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def assign_folds(labels, k, seed=0, groups=None):
    """Fold id per sample, stratified by label.

    Units (single samples, or whole groups when ``groups`` is given) of each
    class are shuffled and dealt greedily to the fold holding the fewest
    units of that class, ties going to the fold with fewest samples overall
    and then the lowest index.  A group is stratified by its majority label.
    """
    labels = np.asarray(labels)
    n = labels.size
    if k < 2:
        raise ValueError("k must be at least 2")
    rng = np.random.default_rng(seed)
    if groups is None:
        units = {i: [i] for i in range(n)}
        unit_label = {i: int(labels[i]) for i in range(n)}
    else:
        groups = np.asarray(groups)
        units = {}
        for i, g in enumerate(groups.tolist()):
            units.setdefault(g, []).append(i)
        unit_label = {g: Counter(labels[idx].tolist()).most_common(1)[0][0] for g, idx in units.items()}
    by_class = {}
    for u, c in unit_label.items():
        by_class.setdefault(c, []).append(u)
    what = "groups" if groups is not None else "samples"
    for c, us in sorted(by_class.items()):
        if len(us) < k:
            raise TooFewSamples(f"class {c} has {len(us)} {what}, need at least k={k}")
    fold_of = np.empty(n, dtype=np.int64)
    fold_size = np.zeros(k, dtype=np.int64)
    for c in sorted(by_class):
        us = by_class[c]
        order = rng.permutation(len(us))
        class_units = np.zeros(k, dtype=np.int64)
        for j in order:
            u = us[j]
            f = min(range(k), key=lambda i: (class_units[i], fold_size[i], i))
            fold_of[units[u]] = f
            class_units[f] += 1
            fold_size[f] += len(units[u])
    return fold_of


def stratified_kfold(labels, k=5, seed=0, groups=None, group_aware=False):
    """``k`` (train, val, test) splits: fold f tests on f, validates on f+1 mod k.

    ``labels`` may also be a :class:`DatasetManifest`, whose group column is
    then used when ``group_aware`` is set.
    """
    if hasattr(labels, "labels"):
        if groups is None:
            groups = labels.groups
        labels = labels.labels
    if group_aware and groups is None:
        raise ValueError("group_aware splitting needs group ids")
    fold_of = assign_folds(labels, k, seed, groups if group_aware else None)
    splits = []
    for f in range(k):
        val_fold = (f + 1) % k
        splits.append(FoldSplit(
            fold=f,
            train=np.flatnonzero((fold_of != f) & (fold_of != val_fold)),
            val=np.flatnonzero(fold_of == val_fold),
            test=np.flatnonzero(fold_of == f),
        ))
    return splits
