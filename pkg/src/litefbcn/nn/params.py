from dataclasses import dataclass, field

import numpy as np


@dataclass(eq=False)
class Param:
    """A named tensor plus its accumulated gradient.

    ``running`` marks batch-norm moving statistics: stored and checkpointed,
    never touched by the optimizer.
    """

    value: np.ndarray
    trainable: bool = True
    running: bool = False
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.trainable and self.running:
            raise ValueError("a parameter cannot be both trainable and a running statistic")
        self.zero_grad()

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


class ParamStore:
    """Ordered, uniquely named collection of :class:`Param`.

    Enumeration order is insertion order, so two models built from the same
    spec enumerate their parameters identically.
    """

    def __init__(self):
        self._params = {}

    def add(self, name, param):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        self._params[name] = param
        return param

    def extend(self, prefix, items):
        for name, param in items:
            self.add(f"{prefix}.{name}" if prefix else name, param)

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.items())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def trainable(self):
        return [(n, p) for n, p in self._params.items() if p.trainable]

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def astype(self, dtype):
        for p in self._params.values():
            p.value = p.value.astype(dtype)
            p.grad = p.grad.astype(dtype)

    def state(self):
        """Copies of every value, keyed by name."""
        return {n: p.value.copy() for n, p in self._params.items()}

    def load_state(self, state):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, p in self._params.items():
            v = np.asarray(state[n])
            if v.shape != p.value.shape:
                raise ValueError(f"{n}: shape {v.shape} does not match {p.value.shape}")
            p.value = v.astype(p.value.dtype, copy=True)
