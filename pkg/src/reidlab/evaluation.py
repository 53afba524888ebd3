"""Retrieval ranking, CMC / mAP and k-reciprocal re-ranking.

Ranking follows the usual ReID protocol: gallery entries that share both the
identity and the camera of a query are removed before ranking, and queries
without any remaining true match are excluded from every average.
"""

from dataclasses import dataclass

import numpy as np

from .embeddings import SampleMeta, as_embeddings, pairwise_distances
from .errors import (DimMismatch, EmptyGallery, InsufficientSamples, NoEvaluableQueries,
                     NoRelevant, ShapeMismatch)


@dataclass
class RankingResult:
    orders: list
    relevance: list
    valid: list
    num_relevant: np.ndarray

    @property
    def num_queries(self):
        return len(self.orders)

    @property
    def evaluable(self):
        return self.num_relevant > 0


def rank_from_distances(dist, q_meta, g_meta, cross_camera=True, top_k=None):
    """Rank a precomputed ``(num_query, num_gallery)`` distance matrix."""
    dist = np.asarray(dist, dtype=np.float64)
    nq, ng = dist.shape
    if ng == 0:
        raise EmptyGallery("gallery is empty")
    if len(q_meta) != nq or len(g_meta) != ng:
        raise ShapeMismatch("metadata length does not match the distance matrix")
    orders, relevance, valid = [], [], []
    num_rel = np.zeros(nq, dtype=np.int64)
    for i in range(nq):
        same_id = g_meta.labels == q_meta.labels[i]
        keep = np.ones(ng, dtype=bool)
        if cross_camera:
            keep &= ~(same_id & (g_meta.cameras == q_meta.cameras[i]))
        idx = np.flatnonzero(keep)
        order = idx[np.argsort(dist[i, idx], kind="stable")]
        rel = same_id[order]
        num_rel[i] = int(rel.sum())
        if top_k is not None:
            order, rel = order[:top_k], rel[:top_k]
        orders.append(order)
        relevance.append(rel)
        valid.append(keep)
    return RankingResult(orders, relevance, valid, num_rel)


def rank_gallery(q_feat, q_meta, g_feat, g_meta, metric="euclidean",
                 cross_camera=True, top_k=None):
    """Sort the gallery by ascending distance to each query (ties by index)."""
    q_feat = as_embeddings(q_feat)
    g_feat = as_embeddings(g_feat)
    if q_feat.shape[1] != g_feat.shape[1]:
        raise DimMismatch(f"query dim {q_feat.shape[1]} vs gallery dim {g_feat.shape[1]}")
    if g_feat.shape[0] == 0:
        raise EmptyGallery("gallery is empty")
    dist = pairwise_distances(q_feat, g_feat, metric=metric)
    return rank_from_distances(dist, q_meta, g_meta, cross_camera, top_k)


def _first_hits(r):
    hits = np.full(r.num_queries, np.inf)
    for i, rel in enumerate(r.relevance):
        pos = np.flatnonzero(rel)
        if pos.size:
            hits[i] = pos[0] + 1
    return hits


def cmc_at(r, n):
    """Fraction of evaluable queries whose first true match ranks within ``n``."""
    if n < 1:
        raise ValueError("rank must be >= 1")
    ok = r.evaluable
    if not ok.any():
        raise NoEvaluableQueries("no query has a valid true match")
    return float(np.mean(_first_hits(r)[ok] <= n))


def cmc_curve(r, max_rank):
    ok = r.evaluable
    if not ok.any():
        raise NoEvaluableQueries("no query has a valid true match")
    hits = _first_hits(r)[ok]
    return np.array([np.mean(hits <= n) for n in range(1, max_rank + 1)])


def average_precision(relevance, num_relevant=None):
    """``(1/m) * sum_k P(k) rel(k)`` over an ordered relevance list."""
    rel = np.asarray(relevance, dtype=bool).reshape(-1)
    m = int(rel.sum()) if num_relevant is None else int(num_relevant)
    if m < 1:
        raise NoRelevant("average precision needs at least one relevant item")
    if m < rel.sum():
        raise ValueError("num_relevant is smaller than the number of hits")
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float(np.sum((hits / ranks)[rel]) / m)


def mean_ap(r):
    ok = np.flatnonzero(r.evaluable)
    if ok.size == 0:
        raise NoEvaluableQueries("no query has a valid true match")
    return float(np.mean([average_precision(r.relevance[i], r.num_relevant[i]) for i in ok]))


def summarize(r, ranks=(1, 5, 10)):
    """The metric summary document: mAP, Rank-n, query counts."""
    out = {"mAP": mean_ap(r)}
    for n in ranks:
        out[f"rank{n}"] = cmc_at(r, n)
    out["num_queries"] = int(r.evaluable.sum())
    out["num_excluded"] = int((~r.evaluable).sum())
    return out


def format_metrics(summary):
    """``name<TAB>value`` lines."""
    return "\n".join(f"{k}\t{v:.6f}" if isinstance(v, float) else f"{k}\t{v}"
                     for k, v in summary.items())


def evaluate(q_feat, q_meta, g_feat, g_meta, metric="euclidean", cross_camera=True):
    return summarize(rank_gallery(q_feat, q_meta, g_feat, g_meta, metric, cross_camera))


# --- k-reciprocal re-ranking -------------------------------------------------

def _k_reciprocal(initial_rank, i, k):
    forward = initial_rank[i, :k + 1]
    backward = initial_rank[forward, :k + 1]
    return forward[np.any(backward == i, axis=1)]


def reciprocal_sets(dist, k1):
    """Expanded k1-reciprocal neighbour set of every sample.

    A sample's mutual ``k1``-neighbours are extended with the mutual
    ``k1/2``-neighbours of each member when more than two thirds of those
    already lie in the set.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n < k1 + 1:
        raise InsufficientSamples(f"need at least k1+1={k1 + 1} samples, got {n}")
    initial_rank = np.argsort(dist, axis=1, kind="stable")
    half = int(np.around(k1 / 2))
    sets = []
    for i in range(n):
        recip = _k_reciprocal(initial_rank, i, k1)
        expansion = [recip]
        for cand in recip:
            cand_recip = _k_reciprocal(initial_rank, cand, half)
            if np.intersect1d(cand_recip, recip).size > 2.0 / 3.0 * cand_recip.size:
                expansion.append(cand_recip)
        sets.append(np.unique(np.concatenate(expansion)))
    return sets, initial_rank


def jaccard_from_sets(sets_a, sets_b):
    """Hard-set Jaccard distance ``1 - |A & B| / |A | B|`` for every pair."""
    out = np.zeros((len(sets_a), len(sets_b)))
    for i, a in enumerate(sets_a):
        a = set(np.asarray(a).tolist())
        for j, b in enumerate(sets_b):
            b = set(np.asarray(b).tolist())
            union = len(a | b)
            out[i, j] = 1.0 - len(a & b) / union if union else 0.0
    return out


def jaccard_matrix(features, k1=20, k2=6, mode="fuzzy"):
    """Full ``N x N`` k-reciprocal Jaccard distance over all rows of ``features``.

    ``mode="fuzzy"`` encodes each reciprocal set as a vector weighted by
    ``exp(-distance)``, smooths it over the ``k2`` nearest neighbours and
    compares vectors by min/max overlap; ``mode="hard"`` is plain
    intersection over union of the sets.
    """
    feats = as_embeddings(features)
    n = feats.shape[0]
    dist = pairwise_distances(feats, metric="sqeuclidean")
    col_max = dist.max(axis=0)
    dist = dist / np.where(col_max > 0, col_max, 1.0)[None, :]
    sets, initial_rank = reciprocal_sets(dist, k1)

    if mode == "hard":
        return jaccard_from_sets(sets, sets)
    if mode != "fuzzy":
        raise ValueError(f"unknown jaccard mode {mode!r}")

    v = np.zeros((n, n))
    for i, members in enumerate(sets):
        w = np.exp(-dist[i, members])
        v[i, members] = w / w.sum()
    if k2 > 1:
        v = np.stack([v[initial_rank[i, :k2]].mean(axis=0) for i in range(n)])

    out = np.zeros((n, n))
    for i in range(n):
        overlap = np.minimum(v[i][None, :], v).sum(axis=1)
        out[i] = 1.0 - overlap / (2.0 - overlap)
    out = np.clip(out, 0.0, 1.0)
    np.fill_diagonal(out, 0.0)
    return out


def jaccard_distance(features, num_query, k1=20, k2=6, mode="fuzzy"):
    """Query x gallery block of :func:`jaccard_matrix`.

    ``features`` stacks the queries (first ``num_query`` rows) over the
    gallery, so neighbourhoods are computed over both sets together.
    """
    n = as_embeddings(features).shape[0]
    if not 0 <= num_query <= n:
        raise ValueError("num_query out of range")
    return jaccard_matrix(features, k1, k2, mode)[:num_query, num_query:]


def rerank_final(d_jaccard, d_euclid, lambda_value=0.3):
    """``(1 - lambda) * D_jaccard + lambda * D_euclid``."""
    d_jaccard = np.asarray(d_jaccard, dtype=np.float64)
    d_euclid = np.asarray(d_euclid, dtype=np.float64)
    if d_jaccard.shape != d_euclid.shape:
        raise ShapeMismatch(f"jaccard {d_jaccard.shape} vs euclidean {d_euclid.shape}")
    if not 0.0 <= lambda_value <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return (1.0 - lambda_value) * d_jaccard + lambda_value * d_euclid


def rerank(q_feat, g_feat, k1=20, k2=6, lambda_value=0.3, mode="fuzzy"):
    """Re-ranked query x gallery distances using Euclidean as the base metric."""
    q_feat = as_embeddings(q_feat)
    g_feat = as_embeddings(g_feat)
    d_e = pairwise_distances(q_feat, g_feat, metric="euclidean")
    if lambda_value == 1.0:
        return d_e
    d_j = jaccard_distance(np.vstack([q_feat, g_feat]), q_feat.shape[0], k1, k2, mode)
    return rerank_final(d_j, d_e, lambda_value)


__all__ = [
    "RankingResult", "SampleMeta", "rank_gallery", "rank_from_distances", "cmc_at",
    "cmc_curve", "average_precision", "mean_ap", "summarize", "format_metrics",
    "evaluate", "reciprocal_sets", "jaccard_from_sets", "jaccard_matrix",
    "jaccard_distance",
    "rerank_final", "rerank",
]
