"""Mini-batch training with checkpointing, and the k-fold driver."""

import csv
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError, DivergedLoss
from ..model import save_checkpoint
from .augment import augment_batch
from .optim import PlateauScheduler, SGDState, sgd_step

HISTORY_HEADER = ["epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc"]


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.5
    nesterov: bool = True
    patience: int = 50
    lr_factor: float = 10.0
    lr_floor: float = 0.0001
    epochs: int = 500
    l2: float = 0.01
    batch_size: int = 32
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        if self.lr_floor > self.lr:
            raise ConfigError("lr_floor must not exceed lr")
        if self.patience < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("patience, epochs and batch_size must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


class CheckpointTracker:
    """Keeps the epoch with the best validation accuracy; equal accuracy
    is broken by strictly lower validation loss."""

    def __init__(self):
        self.best_epoch = None
        self.best_acc = -math.inf
        self.best_loss = math.inf
        self.state = None

    def update(self, epoch, val_acc, val_loss, state_fn=None):
        better = val_acc > self.best_acc or (val_acc == self.best_acc and val_loss < self.best_loss)
        if better:
            self.best_epoch, self.best_acc, self.best_loss = epoch, val_acc, val_loss
            if state_fn is not None:
                self.state = state_fn()
        return better


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_acc: float
    best_val_loss: float
    best_state: dict = field(repr=False, default=None)


def evaluate(model, x, y, l2=0.0, batch_size=256):
    """Inference-mode ``(loss, accuracy, predictions)``; loss includes the penalty."""
    n = len(y)
    if n == 0:
        return math.nan, math.nan, np.zeros(0, dtype=np.int64)
    ce = 0.0
    preds = []
    for start in range(0, n, batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        loss, probs = model.loss(xb, yb, l2=0.0, train=False, backward=False)
        ce += loss * len(yb)
        preds.append(probs.argmax(axis=1))
    preds = np.concatenate(preds)
    return ce / n + model.penalty(l2), float((preds == y).mean()), preds


def write_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_HEADER[1:]])


def fit(model, x, y, split, config, scheduler=None):
    """Train ``model`` on ``split.train`` monitoring ``split.val``.

    The model ends holding the best checkpoint's parameters.
    """
    rng = np.random.default_rng(config.seed)
    sched = scheduler or PlateauScheduler(config.lr, config.patience, config.lr_factor, config.lr_floor)
    opt = SGDState()
    tracker = CheckpointTracker()
    train_idx = np.asarray(split.train)
    val_idx = np.asarray(split.val)
    xv, yv = x[val_idx], y[val_idx]
    trainable = model.params.trainable()
    values = {name: p.value for name, p in trainable}
    history = []
    for epoch in range(1, config.epochs + 1):
        lr = sched.lr
        order = train_idx[rng.permutation(train_idx.size)]
        total_loss = 0.0
        correct = 0
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            xb, yb = x[batch], y[batch]
            if config.augment:
                xb = augment_batch(xb, rng)
            loss, probs = model.loss(xb, yb, l2=config.l2, train=True, backward=True)
            if not math.isfinite(loss):
                raise DivergedLoss(epoch, loss)
            total_loss += loss * batch.size
            correct += int((probs.argmax(axis=1) == yb).sum())
            grads = {name: p.grad for name, p in trainable}
            sgd_step(values, grads, opt, lr, config.momentum, config.nesterov)
        train_loss = total_loss / max(order.size, 1)
        train_acc = correct / max(order.size, 1)
        if val_idx.size:
            val_loss, val_acc, _ = evaluate(model, xv, yv, config.l2)
        else:
            val_loss, val_acc = train_loss, train_acc
        if not math.isfinite(val_loss):
            raise DivergedLoss(epoch, val_loss)
        history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "train_acc": train_acc,
                        "val_loss": val_loss, "val_acc": val_acc})
        tracker.update(epoch, val_acc, val_loss, model.params.state)
        sched.step(val_loss)
    model.params.load_state(tracker.state)
    return TrainResult(history, tracker.best_epoch, tracker.best_acc, tracker.best_loss, tracker.state)


@dataclass
class FoldResult:
    fold: int
    train: TrainResult
    test_predictions: np.ndarray
    test_labels: np.ndarray


def train_folds(build_fn, x, y, splits, config, out_dir=None):
    """Fit a fresh model per fold (``build_fn(fold)``) and score it on the test part.

    With ``out_dir``, each fold gets ``fold{f}/checkpoint/`` and
    ``fold{f}/history.csv``.
    """
    results = []
    for split in splits:
        model = build_fn(split.fold)
        fold_cfg = TrainConfig(**{**config.to_dict(), "seed": config.seed + split.fold})
        res = fit(model, x, y, split, fold_cfg)
        test_idx = np.asarray(split.test)
        _, _, preds = evaluate(model, x[test_idx], y[test_idx])
        if out_dir is not None:
            fold_dir = os.path.join(out_dir, f"fold{split.fold}")
            os.makedirs(fold_dir, exist_ok=True)
            save_checkpoint(model, os.path.join(fold_dir, "checkpoint"),
                            extra={"best_epoch": res.best_epoch, "best_val_acc": res.best_val_acc,
                                   "best_val_loss": res.best_val_loss})
            write_history(os.path.join(fold_dir, "history.csv"), res.history)
        results.append(FoldResult(split.fold, res, preds, y[test_idx]))
    return results
