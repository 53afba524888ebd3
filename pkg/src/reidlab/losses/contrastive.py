"""Temperature-scaled contrastive losses on unit-norm features."""

import numpy as np

from ..embeddings import as_embeddings, is_normalized
from ..errors import (NoPositive, NoPositiveProxy, NotNormalized, ShapeMismatch,
                      UnassignedSample)
from .base import LossOutput, log_softmax, softmax


def _require_unit(x, name):
    if not is_normalized(x):
        raise NotNormalized(f"{name} rows must be L2-normalised")


def supcon(z, labels, temperature=0.1):
    """Supervised contrastive loss over a stacked multi-view batch.

    ``z`` holds both augmented views (``2N x D``, unit rows) and ``labels``
    the matching duplicated ids. Every other row of the batch sits in the
    denominator of each anchor.
    """
    z = as_embeddings(z)
    _require_unit(z, "z")
    n = z.shape[0]
    labels = np.asarray(labels).reshape(-1)
    if labels.size != n:
        raise ShapeMismatch(f"{labels.size} labels for {n} rows")
    self_mask = np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & ~self_mask
    n_pos = pos.sum(axis=1)
    if np.any(n_pos == 0):
        raise NoPositive(np.flatnonzero(n_pos == 0)[0])

    logits = np.where(self_mask, -np.inf, z @ z.T / temperature)
    logp = log_softmax(logits)
    per = -np.sum(np.where(pos, logp, 0.0), axis=1) / n_pos

    g_logits = softmax(logits) - pos / n_pos[:, None]
    g_logits[self_mask] = 0.0
    g_logits /= n
    grad = (g_logits + g_logits.T) @ z / temperature
    return LossOutput(float(per.mean()), {"z": grad}, per)


def ssl_contrastive(z1, z2, temperature=0.1):
    """InfoNCE between two views: row ``i`` of ``z2`` is the only positive of
    row ``i`` of ``z1`` (and vice versa); every other row is a negative."""
    z1 = as_embeddings(z1)
    z2 = as_embeddings(z2)
    if z1.shape != z2.shape:
        raise ShapeMismatch(f"views have shapes {z1.shape} and {z2.shape}")
    _require_unit(z1, "z1")
    _require_unit(z2, "z2")
    n = z1.shape[0]
    z = np.vstack([z1, z2])
    partner = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    sims = z @ z.T / temperature
    np.fill_diagonal(sims, -np.inf)
    m = sims.max(axis=1, keepdims=True)
    ex = np.exp(sims - m)
    denom = ex.sum(axis=1)
    rows = np.arange(2 * n)
    per = np.log(denom) + m[:, 0] - sims[rows, partner]

    g = ex / denom[:, None]
    g[rows, partner] -= 1.0
    g /= 2 * n
    grad = (g + g.T) @ z / temperature
    return LossOutput(float(per.mean()), {"z1": grad[:n], "z2": grad[n:]}, per)


def _bank_rows(bank):
    return as_embeddings(getattr(bank, "centroids", bank))


def cluster_nce(q, assignments, bank, temperature=0.05):
    """Cluster-level InfoNCE of each query against all memory centroids.

    The bank is treated as a constant: only ``q`` receives a gradient.
    """
    q = as_embeddings(q)
    cents = _bank_rows(bank)
    _require_unit(q, "q")
    _require_unit(cents, "memory bank")
    assignments = np.asarray(assignments, dtype=np.int64).reshape(-1)
    if assignments.size != q.shape[0]:
        raise ShapeMismatch(f"{assignments.size} assignments for {q.shape[0]} queries")
    k = cents.shape[0]
    if np.any(assignments < 0) or np.any(assignments >= k):
        raise UnassignedSample("every query must belong to a bank cluster")
    b = q.shape[0]
    logits = q @ cents.T / temperature
    logp = log_softmax(logits)
    rows = np.arange(b)
    per = -logp[rows, assignments]
    g = np.exp(logp)
    g[rows, assignments] -= 1.0
    grad = g @ cents / (temperature * b)
    return LossOutput(float(per.mean()), {"q": grad}, per)


def cap_loss(q, assignments, proxies, temperature=0.07, num_hard=50,
             cameras=None, exclude_own_camera=False):
    """Camera-aware proxy contrastive loss.

    Positives of sample ``i`` are the camera proxies of its own cluster;
    negatives are the ``num_hard`` most similar proxies of other clusters
    (all of them if fewer exist). Each positive competes with the shared
    negative set in its own two-level softmax, and the per-positive terms
    are averaged. With ``exclude_own_camera`` the proxy of the sample's own
    camera is dropped from the positives whenever another one exists
    (requires ``cameras``).
    """
    q = as_embeddings(q)
    _require_unit(q, "q")
    p_rows = as_embeddings(proxies.proxies)
    _require_unit(p_rows, "camera proxies")
    assignments = np.asarray(assignments, dtype=np.int64).reshape(-1)
    b = q.shape[0]
    if assignments.size != b:
        raise ShapeMismatch(f"{assignments.size} assignments for {b} queries")
    if exclude_own_camera:
        if cameras is None:
            raise ValueError("exclude_own_camera needs per-sample cameras")
        cameras = np.asarray(cameras).reshape(-1)

    sims = q @ p_rows.T / temperature
    grad = np.zeros_like(q)
    per = np.zeros(b)
    prox_cluster = proxies.proxy_cluster
    prox_camera = proxies.proxy_camera
    for i in range(b):
        pos = np.flatnonzero(prox_cluster == assignments[i])
        if pos.size == 0:
            raise NoPositiveProxy(f"sample {i}: cluster {assignments[i]} has no proxies")
        if exclude_own_camera and pos.size > 1:
            others = pos[prox_camera[pos] != cameras[i]]
            if others.size:
                pos = others
        negs = np.flatnonzero(prox_cluster != assignments[i])
        if negs.size > num_hard:
            order = np.argsort(-sims[i, negs], kind="stable")
            negs = negs[order[:num_hard]]
        s_pos = sims[i, pos]
        s_neg = sims[i, negs]
        m = max(s_pos.max(), s_neg.max()) if negs.size else s_pos.max()
        e_pos = np.exp(s_pos - m)
        e_neg = np.exp(s_neg - m)
        denom = e_pos + e_neg.sum()
        per[i] = np.mean(np.log(denom) - (s_pos - m))

        g_s = np.zeros(p_rows.shape[0])
        g_s[pos] = (e_pos / denom - 1.0) / pos.size
        g_s[negs] = e_neg * np.sum(1.0 / denom) / pos.size
        grad[i] = g_s @ p_rows / temperature
    return LossOutput(float(per.mean()), {"q": grad / b}, per)
