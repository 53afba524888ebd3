"""Embedding basics: normalization, distances, PK batches, jitter, part pooling."""

import numpy as np

from reidlab import SampleMeta, eir_fuse, embed_augment, l2_normalize, pairwise_distances, part_pool, pk_sample

rng = np.random.default_rng(0)

# unit-norm rows
e = l2_normalize([[3.0, 4.0], [1.0, 0.0], [0.0, -2.0]])
print(e)

# euclidean, squared and cosine distances; the diagonal is exactly zero
for metric in ("euclidean", "sqeuclidean", "cosine"):
    print(metric, "\n", pairwise_distances(e, metric=metric).round(3))

# a PK batch: P identities, K samples each
meta = SampleMeta(np.repeat(np.arange(6), 5), np.tile([0, 1], 15))
batch = pk_sample(meta, 3, 4, rng)
print("batch labels", batch.labels)

# two jittered views of the same embeddings stay on the sphere
views = [embed_augment(e, 0.05, rng) for _ in range(2)]
print("view norms", np.linalg.norm(views[0], axis=1))

# horizontal parts pooled into one global vector and a concatenated local one
parts = rng.normal(size=(2, 4, 3))
g, local = part_pool(parts, "gmp")
print("global", g.shape, "local", local.shape)

# keep the most attended half of the tokens, max-pool them, append the global feature
tokens = rng.normal(size=(2, 6, 3))
fused = eir_fuse(tokens, rng.random((2, 6)), 0.5, g)
print("fused", fused.shape)
