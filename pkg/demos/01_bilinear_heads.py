"""Walk through the pieces of a bilinear head on one random feature map."""

import numpy as np

from litefbcn import (bilinear_pool_self, channel_reduce, head_param_count, normalize_bilinear,
                      resolve_reduction)

rng = np.random.default_rng(0)

# a batch of one 4x4 map with 16 channels, NHWC like everything else here
features = rng.standard_normal((1, 4, 4, 16))

# a 1x1 reducer squeezes 16 channels down to 16 / gamma
gamma = 4
k = resolve_reduction(16, gamma)
weights = rng.standard_normal((1, 1, 16, k)) / 4
reduced = channel_reduce(features, weights)
print("reduced map:", reduced.shape)

# self-bilinear pooling sums outer products over every location
pooled = bilinear_pool_self(reduced)[0]
print("pooled matrix:", pooled.shape, "symmetric:", np.allclose(pooled, pooled.T))
print("smallest eigenvalue:", np.linalg.eigvalsh(pooled).min())
print("trace vs squared norm:", np.trace(pooled), (reduced ** 2).sum())

# flatten, signed square root, l2: the result always has unit length
vec = normalize_bilinear(pooled)
print("vector length:", vec.size, "norm:", np.linalg.norm(vec))
print("unchanged by positive scaling:", np.allclose(normalize_bilinear(7.5 * pooled), vec))

# how the classifier shrinks as gamma grows, for a 1024-channel backbone and 5 classes
for g in (2, 4, 8):
    print(f"LiteFBCN gamma={g}: {head_param_count('LiteFBCN', 1024, g, 5).total:>9,} parameters")
print(f"FastBCNN:          {head_param_count('FastBCNN', 1024, num_classes=5).total:>9,} parameters")
