"""Triplet-family and center losses with hand-derived gradients."""

from dataclasses import dataclass

import numpy as np

from ..embeddings import as_embeddings, pairwise_distances
from ..errors import DegenerateBatch, MissingCenter, ShapeMismatch
from .base import LossOutput, check_sample_weights, softmax


def _labels(labels, n):
    labels = np.asarray(labels).reshape(-1)
    if labels.size != n:
        raise ShapeMismatch(f"{labels.size} labels for {n} embeddings")
    return labels


def mine_batch_hard(sqdist, labels):
    """Hardest positive (farthest, j != i) and negative (nearest) per anchor.

    Ties go to the lowest index.
    """
    n = labels.size
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    if not pos_mask.any(axis=1).all():
        bad = int(np.flatnonzero(~pos_mask.any(axis=1))[0])
        raise DegenerateBatch(f"anchor {bad} has no positive")
    if not neg_mask.any(axis=1).all():
        raise DegenerateBatch("batch contains a single class")
    pos = np.argmax(np.where(pos_mask, sqdist, -np.inf), axis=1)
    neg = np.argmin(np.where(neg_mask, sqdist, np.inf), axis=1)
    return pos, neg


def batch_hard_triplet(e, labels, margin=0.3, sample_weights=None):
    """Batch-hard triplet loss ``[d_ap^2/2 - d_an^2/2 + margin]_+``, mean over anchors."""
    e = as_embeddings(e)
    n = e.shape[0]
    labels = _labels(labels, n)
    w = check_sample_weights(sample_weights, n)
    sq = pairwise_distances(e, metric="sqeuclidean")
    pos, neg = mine_batch_hard(sq, labels)
    idx = np.arange(n)
    per = np.maximum(0.5 * sq[idx, pos] - 0.5 * sq[idx, neg] + margin, 0.0)

    active = per > 0
    coef = (w * active / n)[:, None]
    d_ap = (e - e[pos]) * coef
    d_an = (e - e[neg]) * coef
    grad = d_ap - d_an
    np.add.at(grad, pos, -d_ap)
    np.add.at(grad, neg, d_an)
    return LossOutput(float(np.mean(w * per)), {"embeddings": grad}, per)


@dataclass
class CenterTable:
    """Per-class centers, row ``c`` belonging to class id ``c``."""

    centers: np.ndarray
    lr: float = 0.5

    def __post_init__(self):
        self.centers = as_embeddings(self.centers).copy()

    @classmethod
    def zeros(cls, num_classes, dim, lr=0.5):
        return cls(np.zeros((num_classes, dim)), lr)


def center_loss(e, labels, centers):
    """``1/2 * sum_i ||f_i - c_{y_i}||^2`` (summed, not averaged)."""
    e = as_embeddings(e)
    table = centers.centers if isinstance(centers, CenterTable) else as_embeddings(centers)
    labels = _labels(labels, e.shape[0]).astype(np.int64)
    missing = labels[(labels < 0) | (labels >= table.shape[0])]
    if missing.size:
        raise MissingCenter(int(missing[0]))
    if table.shape[1] != e.shape[1]:
        raise ShapeMismatch(f"centers have dim {table.shape[1]}, features {e.shape[1]}")
    diff = e - table[labels]
    per = 0.5 * np.sum(diff * diff, axis=1)
    g_centers = np.zeros_like(table)
    np.add.at(g_centers, labels, -diff)
    return LossOutput(float(per.sum()), {"embeddings": diff, "centers": g_centers}, per)


def center_sgd_step(centers, grad):
    """One SGD step on the center table; returns a new table."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != centers.centers.shape:
        raise ShapeMismatch(f"gradient {grad.shape} vs centers {centers.centers.shape}")
    return CenterTable(centers.centers - centers.lr * grad, centers.lr)


def centroid_triplet(e, labels, margin=0.3):
    """Triplet loss against class centroids.

    The positive centroid leaves the anchor out; the negative is the nearest
    centroid of another class. Distances are squared Euclidean and the hinge
    wraps the whole margin expression.
    """
    e = as_embeddings(e)
    n, d = e.shape
    labels = _labels(labels, n)
    classes, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if classes.size < 2:
        raise DegenerateBatch("centroid triplet needs at least two classes")
    if np.any(counts[inv] < 2):
        bad = int(np.flatnonzero(counts[inv] < 2)[0])
        raise DegenerateBatch(f"anchor {bad} is alone in its class")

    sums = np.zeros((classes.size, d))
    np.add.at(sums, inv, e)
    cents = sums / counts[:, None]
    c_pos = (sums[inv] - e) / (counts[inv] - 1)[:, None]

    dist_c = pairwise_distances(e, cents, metric="sqeuclidean")
    dist_c[np.arange(n), inv] = np.inf
    neg = np.argmin(dist_c, axis=1)
    u = e - c_pos
    v = e - cents[neg]
    per = np.maximum(np.sum(u * u, axis=1) - np.sum(v * v, axis=1) + margin, 0.0)

    active = (per > 0)[:, None] / n
    gu = 2.0 * u * active
    gv = 2.0 * v * active
    grad = gu - gv
    # positive centroid: every same-class member except the anchor
    class_gu = np.zeros((classes.size, d))
    np.add.at(class_gu, inv, gu / (counts[inv] - 1)[:, None])
    grad -= class_gu[inv] - gu / (counts[inv] - 1)[:, None]
    # negative centroid: all members of the mined class
    class_gv = np.zeros((classes.size, d))
    np.add.at(class_gv, neg, gv)
    grad += class_gv[inv] / counts[inv][:, None]
    return LossOutput(float(per.mean()), {"embeddings": grad}, per)


def soft_triplet_distill(f_student, h_teacher, labels):
    """Soft triplet distillation between student and teacher features.

    Per anchor, the batch-hard positive/negative pair is mined on student
    distances. Both networks turn their (Euclidean) anchor-positive and
    anchor-negative distances into a two-way softmax over ``(-d_ap, -d_an)``;
    the loss is the cross-entropy of the student's pair against the
    teacher's, averaged over anchors. Only the student receives gradients.
    """
    f = as_embeddings(f_student)
    h = as_embeddings(h_teacher)
    if f.shape != h.shape:
        raise ShapeMismatch(f"student {f.shape} vs teacher {h.shape}")
    n = f.shape[0]
    labels = _labels(labels, n)
    sq = pairwise_distances(f, metric="sqeuclidean")
    pos, neg = mine_batch_hard(sq, labels)

    def pair_dists(x):
        dp = np.sqrt(np.maximum(np.sum((x - x[pos]) ** 2, axis=1), 1e-12))
        dn = np.sqrt(np.maximum(np.sum((x - x[neg]) ** 2, axis=1), 1e-12))
        return dp, dn

    sdp, sdn = pair_dists(f)
    tdp, tdn = pair_dists(h)
    p = softmax(np.stack([-sdp, -sdn], axis=1))
    t = softmax(np.stack([-tdp, -tdn], axis=1))
    per = -np.sum(t * np.log(np.maximum(p, 1e-300)), axis=1)

    # d loss / d logit = p - t ; logits are the negated distances
    g_dp = -(p[:, 0] - t[:, 0]) / n
    g_dn = -(p[:, 1] - t[:, 1]) / n
    up = (f - f[pos]) * (g_dp / sdp)[:, None]
    un = (f - f[neg]) * (g_dn / sdn)[:, None]
    grad = up + un
    np.add.at(grad, pos, -up)
    np.add.at(grad, neg, -un)
    return LossOutput(float(per.mean()), {"student": grad}, per)
