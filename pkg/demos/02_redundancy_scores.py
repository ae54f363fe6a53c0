#!/usr/bin/env python3
"""How redundancy is detected from the weights alone.

A feature map is redundant when some other map's weight rows are a scaled
copy of its own: the consumer cannot tell them apart.  We plant a
duplicate channel and watch the importance pipeline push both copies'
scores to zero, without ever running data through the network."""

import numpy as np

from prunekit import importance

rng = np.random.default_rng(42)

weights = rng.standard_normal((3, 3, 6, 16))   # [K, K, in, out]
weights[:, :, 5, :] = -2.0 * weights[:, :, 2, :]  # channel 5 = -2 x channel 2

sim = importance.similarity_matrix(weights, detector="correlation")
print("pairwise similarity (abs correlation averaged over the 3x3 kernel):")
with np.printoptions(precision=2, suppress=True):
    print(sim.values)

normalized = importance.normalize(sim, mode="max")
scores = importance.topk_importance(normalized, k=1)
print()
print("importance (1 = keep, 0 = fully redundant), k=1:")
for ch, s in enumerate(scores):
    marker = "  <- planted copy pair" if ch in (2, 5) else ""
    print(f"  channel {ch}: {s:.4f}{marker}")

print()
print("negative scaling is caught too: the detector folds the sign, since an")
print("anti-correlated map carries the same information up to a factor.")
