"""Loss values and gradients on a small batch."""

import numpy as np

from reidlab.embeddings import l2_normalize
from reidlab.losses import (CenterTable, batch_hard_triplet, center_loss, centroid_triplet,
                            cross_entropy, quality_scores, quality_weighted, scm_total, supcon)

rng = np.random.default_rng(0)
y = np.repeat(np.arange(4), 4)
e = np.eye(4)[y] + 0.5 * rng.normal(size=(16, 4))

# every loss returns a value plus gradients keyed by input
tri = batch_hard_triplet(e, y, margin=0.3)
print("triplet", round(tri.value, 4), "grad norm", round(float(np.linalg.norm(tri.grads["embeddings"])), 4))

ce = cross_entropy(e @ rng.normal(size=(4, 4)), y)
ct = center_loss(e, y, CenterTable.zeros(4, 4))
ctl = centroid_triplet(e, y, 0.3)
z = l2_normalize(np.vstack([e, e + 0.05 * rng.normal(size=e.shape)]))
sup = supcon(z, np.concatenate([y, y]), 0.1)
print({k: round(v.value, 4) for k, v in dict(ce=ce, tri=tri, ct=ct, ctl=ctl, sup=sup).items()})

# the weighted total: ce + 1.0 tri + 0.0005 ct + 1.0 ctl + 0.2 sup
print("total", round(scm_total(dict(ce=ce, tri=tri, ct=ct, ctl=ctl, sup=sup)).value, 4))

# feature-norm quality: high-norm samples count more (weights 1 + 0.8 z)
q = quality_scores(e)
print("quality", q.round(2))
print("weighted triplet", round(quality_weighted(batch_hard_triplet, q, 0.8, e, y, 0.3).value, 4))
