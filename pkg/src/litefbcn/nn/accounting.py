"""Parameter and FLOP accounting.

FLOP conventions (a multiply-add is 2 FLOPs):

* conv ``2*H'*W'*K*kh*kw*C`` plus ``H'*W'*K`` bias adds
* depthwise conv ``2*H'*W'*C*kh*kw`` (plus bias adds when present)
* dense ``2*D*M`` plus ``M`` bias adds
* self-bilinear pooling ``2*H*W*K^2``; dual ``2*H*W*K_A*K_B``
* inference batch norm 2 per element, ReLU / signed sqrt 1 per element,
  l2 normalization 3 per element, GAP ``H*W*C`` adds + ``C`` divides,
  softmax 3 per class
"""

from collections import OrderedDict

from .params import ParamStore


def _store_of(model):
    if isinstance(model, ParamStore):
        return model
    store = getattr(model, "params", None)
    if isinstance(store, ParamStore):
        return store
    if hasattr(model, "params_store"):
        return model.params_store
    store = ParamStore()
    store.extend("", model.params())
    return store


def count_params(model):
    """Exact parameter counts from a model's parameter store.

    Returns a dict with ``total``, ``trainable``, ``running`` and
    ``per_layer`` (layer prefix -> ``{"trainable": n, "running": n}``).
    Frozen non-running parameters, if any, count toward ``total`` only.
    """
    store = _store_of(model)
    per_layer = OrderedDict()
    total = trainable = running = 0
    for name, p in store:
        layer = name.rsplit(".", 1)[0] if "." in name else name
        slot = per_layer.setdefault(layer, {"trainable": 0, "running": 0})
        total += p.size
        if p.trainable:
            trainable += p.size
            slot["trainable"] += p.size
        elif p.running:
            running += p.size
            slot["running"] += p.size
    return {"total": total, "trainable": trainable, "running": running, "per_layer": dict(per_layer)}


def estimate_flops(model, input_shape=None):
    """Per-layer and total FLOPs for one image of ``input_shape`` (H, W, C)."""
    if input_shape is None:
        per_layer = model.layer_flops()
    else:
        per_layer = model.layer_flops(tuple(input_shape))
    return {"total": sum(f for _, _, f in per_layer),
            "per_layer": [{"layer": name, "kind": kind, "flops": f} for name, kind, f in per_layer]}
