"""Density clustering and the pseudo-label refinement built on top of it.

Cluster assignments are integer vectors with ids ``0..L-1`` and ``NOISE``
(-1) for samples outside every dense region.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.metrics import adjusted_rand_score

from .embeddings import SampleMeta, as_embeddings, pairwise_distances
from .errors import AlphaOutOfRange, FewerThanTwoClusters, NoClusters, ShapeMismatch
from .memory import CameraProxyBank

NOISE = -1


def dbscan(e=None, eps=0.6, min_pts=8, metric="euclidean", dist=None):
    """Classic DBSCAN over the rows of ``e`` (or a precomputed ``dist``).

    A point is core when its closed ``eps``-ball (itself included) holds at
    least ``min_pts`` points. Clusters are grown breadth-first from seeds
    taken in ascending index order, so a border point reachable from two
    clusters joins whichever reaches it first.
    """
    if dist is None:
        dist = pairwise_distances(as_embeddings(e), metric=metric)
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ShapeMismatch(f"distance matrix must be square, got {dist.shape}")
    adj = dist <= eps
    neighbors = [np.flatnonzero(row) for row in adj]
    core = adj.sum(axis=1) >= min_pts

    unvisited = -2
    labels = np.full(n, unvisited, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != unvisited:
            continue
        if not core[i]:
            labels[i] = NOISE
            continue
        labels[i] = cluster
        queue = list(neighbors[i])
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            if labels[j] == NOISE:
                labels[j] = cluster
            if labels[j] != unvisited:
                continue
            labels[j] = cluster
            if core[j]:
                queue.extend(neighbors[j])
        cluster += 1
    return labels


def num_clusters(assignment):
    assignment = np.asarray(assignment)
    return int(assignment.max()) + 1 if assignment.size and assignment.max() >= 0 else 0


def noise_as_singletons(assignment):
    """Give each noise sample its own id above the real clusters (for ARI/NMI)."""
    out = np.array(assignment, dtype=np.int64)
    noise = np.flatnonzero(out == NOISE)
    out[noise] = num_clusters(out) + np.arange(noise.size)
    return out


def clustering_ari(assignment, truth):
    """Adjusted Rand index with noise samples treated as singletons."""
    with warnings.catch_warnings():
        # many singletons trip sklearn's "looks like regression" heuristic
        warnings.simplefilter("ignore", UserWarning)
        return float(adjusted_rand_score(np.asarray(truth), noise_as_singletons(assignment)))


def _membership(assignment, n_clusters):
    m = np.zeros((assignment.size, n_clusters))
    ok = assignment >= 0
    m[np.flatnonzero(ok), assignment[ok]] = 1.0
    return m


def silhouette(dist, assignment):
    """Per-sample silhouette ``(b - a) / max(a, b)`` from a square distance matrix.

    Noise samples and members of singleton clusters get ``nan``. Noise never
    counts towards ``a`` or ``b``.
    """
    dist = np.asarray(dist, dtype=np.float64)
    assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
    n = assignment.size
    if dist.shape != (n, n):
        raise ShapeMismatch(f"distance matrix {dist.shape} for {n} samples")
    n_clusters = num_clusters(assignment)
    if n_clusters < 2:
        raise FewerThanTwoClusters("silhouette needs at least two clusters")
    member = _membership(assignment, n_clusters)
    counts = member.sum(axis=0)
    sums = dist @ member

    s = np.full(n, np.nan)
    idx = np.flatnonzero(assignment >= 0)
    own = assignment[idx]
    valid = counts[own] > 1
    idx, own = idx[valid], own[valid]
    a = sums[idx, own] / (counts[own] - 1)
    means = sums[idx] / counts
    means[np.arange(idx.size), own] = np.inf
    b = means.min(axis=1)
    top = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s[idx] = np.where(top > 0, (b - a) / top, 0.0)
    return s


@dataclass
class CentroidSet:
    centroids: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return self.centroids.shape[0]


def _cluster_means(e, assignment, n_clusters, keep):
    sums = np.zeros((n_clusters, e.shape[1]))
    rows = np.flatnonzero(keep)
    np.add.at(sums, assignment[rows], e[rows])
    counts = np.bincount(assignment[rows], minlength=n_clusters)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    return means, counts


def centroids(e, assignment):
    """Mean feature of every cluster; noise rows are ignored."""
    e = as_embeddings(e)
    assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
    n_clusters = num_clusters(assignment)
    if n_clusters == 0:
        raise NoClusters("assignment contains no clusters")
    means, counts = _cluster_means(e, assignment, n_clusters, assignment >= 0)
    return CentroidSet(means, counts)


def confident_centroids(e, assignment, s, sigma_threshold=0.0):
    """Centroids from members whose silhouette exceeds ``sigma_threshold``.

    A cluster that loses every member to the filter keeps its plain centroid.
    A threshold of -1 or below filters nothing.
    """
    e = as_embeddings(e)
    assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
    base = centroids(e, assignment)
    if sigma_threshold <= -1.0:
        return base
    s = np.asarray(s, dtype=np.float64).reshape(-1)
    keep = (assignment >= 0) & (s > sigma_threshold)
    means, counts = _cluster_means(e, assignment, len(base), keep)
    empty = counts == 0
    means[empty] = base.centroids[empty]
    counts[empty] = base.counts[empty]
    return CentroidSet(means, counts)


def soft_assignment_matrix(e, cents, tau=0.1, positive_exponent=False):
    """Row-wise softmax of ``-d_E(f_i, m_j) / tau`` over all centroids.

    ``positive_exponent`` flips the exponent to ``+d/tau``, which favours
    distant centroids; it exists only for comparison.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rows = getattr(cents, "centroids", cents)
    d = pairwise_distances(as_embeddings(e), as_embeddings(rows), metric="euclidean")
    logits = d / tau if positive_exponent else -d / tau
    logits -= logits.max(axis=1, keepdims=True)
    g = np.exp(logits)
    return g / g.sum(axis=1, keepdims=True)


def one_hot(assignment, n_clusters=None):
    assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
    if np.any(assignment < 0):
        raise ValueError("one-hot labels cannot encode noise samples")
    n_clusters = num_clusters(assignment) if n_clusters is None else n_clusters
    out = np.zeros((assignment.size, n_clusters))
    out[np.arange(assignment.size), assignment] = 1.0
    return out


def refine_labels(hard, g, alpha=0.5):
    """Blend hard pseudo-labels with centroid soft assignments: ``(1-a) y + a G``."""
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}")
    g = np.asarray(g, dtype=np.float64)
    hard = np.asarray(hard)
    if hard.ndim == 1:
        hard = one_hot(hard, g.shape[1])
    if hard.shape != g.shape:
        raise ShapeMismatch(f"hard labels {hard.shape} vs soft assignment {g.shape}")
    if alpha == 0.0:
        return hard.astype(np.float64)
    if alpha == 1.0:
        return g.copy()
    return (1.0 - alpha) * hard + alpha * g


def camera_subclusters(e, assignment, cameras, momentum=0.2):
    """Split each cluster by camera and average every non-empty part.

    Proxies are ordered by (cluster, camera).
    """
    e = as_embeddings(e)
    if isinstance(cameras, SampleMeta):
        cameras = cameras.cameras
    cameras = np.asarray(cameras, dtype=np.int64).reshape(-1)
    assignment = np.asarray(assignment, dtype=np.int64).reshape(-1)
    if cameras.size != assignment.size:
        raise ShapeMismatch(f"{cameras.size} cameras for {assignment.size} samples")
    ok = assignment >= 0
    keys = np.stack([assignment[ok], cameras[ok]], axis=1)
    pairs, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    sums = np.zeros((pairs.shape[0], e.shape[1]))
    np.add.at(sums, inv, e[ok])
    counts = np.bincount(inv, minlength=pairs.shape[0])
    return CameraProxyBank(sums / counts[:, None], pairs[:, 0], pairs[:, 1], counts,
                           momentum=momentum)
