"""Softmax-based identity losses."""

import numpy as np

from ..errors import LabelOutOfRange, ShapeMismatch
from .base import LossOutput, check_sample_weights, log_softmax, softmax


def _check_labels(labels, n, c):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size != n:
        raise ShapeMismatch(f"{labels.size} labels for {n} rows of logits")
    if np.any(labels < 0) or np.any(labels >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    return labels


def cross_entropy(logits, labels, sample_weights=None):
    """Mean softmax cross-entropy against hard class ids."""
    logits = np.asarray(logits, dtype=np.float64)
    n, c = logits.shape
    labels = _check_labels(labels, n, c)
    w = check_sample_weights(sample_weights, n)
    logp = log_softmax(logits)
    per = -logp[np.arange(n), labels]
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    grad *= (w / n)[:, None]
    return LossOutput(float(np.mean(w * per)), {"logits": grad}, per)


def soft_cross_entropy(logits, targets, sample_weights=None):
    """Mean cross-entropy where each row of ``targets`` is a distribution."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeMismatch(f"targets {targets.shape} vs logits {logits.shape}")
    n = logits.shape[0]
    w = check_sample_weights(sample_weights, n)
    per = -np.sum(targets * log_softmax(logits), axis=1)
    mass = targets.sum(axis=1, keepdims=True)
    grad = (softmax(logits) * mass - targets) * (w / n)[:, None]
    return LossOutput(float(np.mean(w * per)), {"logits": grad}, per)


def _as_targets(labels, n, c):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape != (n, c):
            raise ShapeMismatch(f"soft labels {labels.shape} vs logits {(n, c)}")
        return labels.astype(np.float64)
    labels = _check_labels(labels, n, c)
    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    return onehot


def identity_two_branch(global_logits, local_logits, labels):
    """Identity loss summed over a global and a local classifier branch.

    ``labels`` is either a vector of class ids or an ``(N, C)`` soft-label
    matrix shared by both branches.
    """
    global_logits = np.asarray(global_logits, dtype=np.float64)
    local_logits = np.asarray(local_logits, dtype=np.float64)
    if global_logits.shape != local_logits.shape:
        raise ShapeMismatch(
            f"global {global_logits.shape} vs local {local_logits.shape} logits")
    targets = _as_targets(labels, *global_logits.shape)
    g = soft_cross_entropy(global_logits, targets)
    loc = soft_cross_entropy(local_logits, targets)
    return LossOutput(g.value + loc.value,
                      {"global_logits": g.grads["logits"],
                       "local_logits": loc.grads["logits"]},
                      g.per_sample + loc.per_sample)


def kl_distill(student_logits, teacher_logits):
    """Mean KL(softmax(teacher) || softmax(student)); teacher is constant."""
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != t.shape:
        raise ShapeMismatch(f"student {s.shape} vs teacher {t.shape}")
    n = s.shape[0]
    log_pt = log_softmax(t)
    pt = np.exp(log_pt)
    per = np.sum(pt * (log_pt - log_softmax(s)), axis=1)
    # tiny negative values are rounding noise
    per = np.maximum(per, 0.0)
    grad = (softmax(s) - pt) / n
    return LossOutput(float(per.mean()), {"student_logits": grad}, per)
