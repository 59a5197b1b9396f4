"""SGD with (Nesterov) momentum and a reduce-on-plateau learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class SGDState:
    velocity: dict = field(default_factory=dict)


def sgd_step(params, grads, state, lr, momentum=0.5, nesterov=True):
    """One in-place update of ``params`` (name -> array) from ``grads``.

    Velocity convention::

        v <- mu * v - lr * g
        w <- w + mu * v - lr * g     (Nesterov)
        w <- w + v                   (plain)

    Any weight penalty must already be folded into ``grads``.
    """
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeMismatch(f"{name}: gradient {g.shape} vs parameter {w.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(w)
        v = momentum * v - lr * g
        state.velocity[name] = v.astype(w.dtype, copy=False)
        if nesterov:
            w += (momentum * v - lr * g).astype(w.dtype, copy=False)
        else:
            w += v.astype(w.dtype, copy=False)
    return params, state


@dataclass
class PlateauScheduler:
    """Divide the learning rate by ``factor`` after ``patience`` epochs
    without a strict improvement of the monitored loss, never going below
    ``floor``."""

    lr: float = 0.01
    patience: int = 50
    factor: float = 10.0
    floor: float = 0.0001
    best: float = float("inf")
    wait: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.floor > self.lr:
            raise ValueError("lr floor must not exceed the initial lr")

    def step(self, val_loss):
        if val_loss < self.best:
            self.best = val_loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr / self.factor, self.floor)
                self.wait = 0
        return self.lr


def lr_plateau_step(state, epoch_val_loss):
    return state.step(epoch_val_loss)
