"""Ranking, CMC / mAP and k-reciprocal re-ranking."""

import numpy as np

from reidlab import SampleMeta, average_precision, evaluate, rerank, summarize
from reidlab.evaluation import rank_from_distances

# AP of the ranked list (hit, miss, hit)
print(average_precision([1, 0, 1]))

rng = np.random.default_rng(0)
centers = rng.normal(size=(6, 8))
gy, qy = np.repeat(np.arange(6), 5), np.arange(6)
g = centers[gy] + 0.4 * rng.normal(size=(30, 8))
q = centers[qy] + 0.4 * rng.normal(size=(6, 8))
qm, gm = SampleMeta(qy, np.zeros(6)), SampleMeta(gy, np.ones(30))

# same identity and camera as the query is dropped before ranking
print(evaluate(q, qm, g, gm))

# lambda=1 gives back the euclidean ranking, lambda=0 uses the jaccard part alone
for lam in (1.0, 0.3, 0.0):
    d = rerank(q, g, k1=6, k2=3, lambda_value=lam)
    print(lam, round(summarize(rank_from_distances(d, qm, gm))["mAP"], 4))
