"""Central finite-difference verification of the analytic gradients."""

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import Layer

REL_FLOOR = 1e-8


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    per_param: dict = field(default_factory=dict)
    per_kind: dict = field(default_factory=dict)
    n_kinks: int = 0

    def passed(self, tol=1e-4):
        return self.max_rel_error < tol


def param_kinds(model):
    """Map parameter name -> kind of the layer owning it."""
    by_id = {}
    layers = []
    for _, net in model.named_backbones():
        layers += [layer for _, layer in net.named_layers()]
    layers += [layer for _, layer in model.head.named_layers()]
    for layer in layers:
        for _, p in layer.params():
            by_id[id(p)] = layer.kind
    return {name: by_id[id(p)] for name, p in model.params}


def _kink_layers(model):
    layers = []
    for _, net in model.named_backbones():
        layers += [layer for _, layer in net.named_layers()]
    layers += [layer for _, layer in model.head.named_layers()]
    return [layer for layer in layers if type(layer).kink_signature is not Layer.kink_signature]


def _kink_state(layers):
    return [layer.kink_signature() for layer in layers]


def _kinked(layers, base, state):
    return any(type(layer).kink_crossed(b, a) for layer, b, a in zip(layers, base, state))


def _probe_quota(params, n_samples):
    """Per-tensor number of probes so every tensor gets at least two and the
    total reaches ``n_samples`` (when the model has that many entries)."""
    per_tensor = max(2, math.ceil(n_samples / max(len(params), 1)))
    largest = max((p.size for _, p in params), default=0)
    while sum(min(p.size, per_tensor) for _, p in params) < n_samples and per_tensor < largest:
        per_tensor += 1
    return per_tensor


def jitter_batchnorm(model, seed=0):
    """Move every batch-norm scale/shift off its (1, 0) initialization.

    At the init point a ReLU followed by a bias-free conv and another batch
    norm is exactly scale invariant, so the scale gradients vanish and a
    relative-error check only measures finite-difference noise.
    """
    rng = np.random.default_rng(seed)
    for name, p in model.params:
        if name.endswith(".gamma"):
            p.value = rng.uniform(0.5, 1.5, p.shape).astype(p.value.dtype)
        elif name.endswith(".beta"):
            p.value = rng.uniform(0.1, 0.6, p.shape).astype(p.value.dtype)
    return model


def grad_check(model, x, labels, h=1e-5, dtype=np.float64, n_samples=200, l2=0.01, seed=0, corrupt=False):
    """Compare backprop gradients of the training loss with central differences.

    Every trainable tensor is sampled (at least two entries each, at least
    ``n_samples`` entries overall).  The model is cast to ``dtype`` for the
    check and restored afterwards.  ``corrupt`` scales one analytic gradient
    by 1.5 as a negative control for the checker itself.

    A probe whose +h or -h evaluation flips a ReLU mask or a signed-sqrt sign
    straddles a kink, where a central difference is not a derivative.  So
    does one that moves a signed-sqrt input by more than a small fraction of
    its magnitude, since the curvature there swamps the O(h^2) term.  Such
    probes are counted in ``n_kinks``, left out of the error maximum, and
    replaced by another entry of the same tensor when one is left.
    """
    orig_dtype = model.dtype
    saved = model.params.state()
    model.astype(dtype)
    x = np.asarray(x, dtype=dtype)
    labels = np.asarray(labels)
    kinds = param_kinds(model)
    try:
        model.loss(x, labels, l2=l2, train=True, backward=True)
        kink_layers = _kink_layers(model)
        base = _kink_state(kink_layers)
        trainable = model.params.trainable()
        analytic = {name: p.grad.copy() for name, p in trainable}
        if corrupt:
            analytic[trainable[0][0]] *= 1.5
        rng = np.random.default_rng(seed)
        quota = _probe_quota(trainable, n_samples)
        report = GradCheckReport(0.0, 0)
        order = {name: list(rng.permutation(p.size)[::-1]) for name, p in trainable}
        counts = dict.fromkeys(order, 0)

        def probe(name, p):
            flat = p.value.reshape(-1)
            i = order[name].pop()
            old = flat[i]
            flat[i] = old + h
            lp, _ = model.loss(x, labels, l2=l2, train=True, backward=False)
            kinked = _kinked(kink_layers, base, _kink_state(kink_layers))
            flat[i] = old - h
            lm, _ = model.loss(x, labels, l2=l2, train=True, backward=False)
            kinked = kinked or _kinked(kink_layers, base, _kink_state(kink_layers))
            flat[i] = old
            if kinked:
                report.n_kinks += 1
                return
            err = relative_error(float(analytic[name].reshape(-1)[i]), (lp - lm) / (2 * h))
            report.per_param[name] = max(report.per_param.get(name, 0.0), err)
            kind = kinds[name]
            report.per_kind[kind] = max(report.per_kind.get(kind, 0.0), err)
            report.max_rel_error = max(report.max_rel_error, err)
            counts[name] += 1
            report.n_checked += 1

        for name, p in trainable:
            while order[name] and counts[name] < quota:
                probe(name, p)
        # entries lost to kinks are made up from whichever tensors have some left
        while report.n_checked < n_samples and any(order.values()):
            for name, p in trainable:
                if order[name] and report.n_checked < n_samples:
                    probe(name, p)
    finally:
        model.astype(orig_dtype)
        model.params.load_state(saved)
    return report


def check_layer(layer, inputs, h=1e-5, train=True, seed=0):
    """Finite-difference check of one layer in isolation (float64).

    The scalar probed is ``sum(r * layer(inputs))`` for a fixed random ``r``.
    ``inputs`` is an array, or a tuple for layers taking pairs.  Returns the
    maximum relative error over every input entry and every parameter entry.
    """
    pair = isinstance(inputs, tuple)
    xs = [np.array(v, dtype=np.float64) for v in (inputs if pair else (inputs,))]
    for _, p in layer.params():
        p.value = p.value.astype(np.float64)
        p.zero_grad()
    saved = {id(p): p.value.copy() for _, p in layer.params()}

    def run():
        out = layer.forward(tuple(xs) if pair else xs[0], train)
        return out

    out = run()
    r = np.random.default_rng([seed, 0xC0FFEE]).standard_normal(out.shape)
    dx = layer.backward(r)
    dxs = list(dx) if pair else [dx]

    def scalar():
        val = float((run() * r).sum())
        for _, p in layer.params():
            if p.running:
                p.value = saved[id(p)].copy()
        return val

    worst = 0.0
    targets = [(x, g) for x, g in zip(xs, dxs)]
    targets += [(p.value, p.grad.copy()) for _, p in layer.params() if p.trainable]
    for arr, grad in targets:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = scalar()
            flat[i] = old - h
            fm = scalar()
            flat[i] = old
            worst = max(worst, relative_error(float(gflat[i]), (fp - fm) / (2 * h)))
    return worst
