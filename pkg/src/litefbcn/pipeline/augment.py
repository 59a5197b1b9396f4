import numpy as np

MAX_SHIFT_FRACTION = 0.1


def hflip(sample):
    """Mirror an (H, W, C) sample left-right."""
    return sample[:, ::-1, :].copy()


def circular_shift(sample, dy, dx):
    return np.roll(sample, (dy, dx), axis=(0, 1))


def augment(sample, rng):
    """Random horizontal flip (p = 0.5), then a circular shift of up to 10% per axis."""
    h, w = sample.shape[:2]
    if rng.random() < 0.5:
        sample = hflip(sample)
    my, mx = int(MAX_SHIFT_FRACTION * h), int(MAX_SHIFT_FRACTION * w)
    dy = int(rng.integers(-my, my + 1))
    dx = int(rng.integers(-mx, mx + 1))
    return circular_shift(sample, dy, dx)


def augment_batch(batch, rng):
    return np.stack([augment(s, rng) for s in batch])
