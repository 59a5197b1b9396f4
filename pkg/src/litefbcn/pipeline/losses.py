import numpy as np

from ..errors import ShapeMismatch

PROB_CLAMP = 1e-12


def cross_entropy_loss(probs, one_hot):
    """Mean categorical cross-entropy and its gradient w.r.t. the logits.

    The gradient assumes ``probs`` came from a softmax: ``(p - y) / N``.
    """
    probs = np.asarray(probs)
    one_hot = np.asarray(one_hot)
    if probs.shape != one_hot.shape or probs.ndim != 2:
        raise ShapeMismatch(f"probs {probs.shape} and labels {one_hot.shape} must be equal (N, classes)")
    n = probs.shape[0]
    picked = (probs * one_hot).sum(axis=1)
    loss = float(-np.log(np.maximum(picked, PROB_CLAMP)).mean())
    return loss, (probs - one_hot) / n


def one_hot(labels, num_classes, dtype=np.float64):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, num_classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1
    return out
