"""Image-quality weighting and the domain-identification network losses."""

import numpy as np

from ..embeddings import as_embeddings
from ..errors import DimMismatch
from .base import LossOutput


def quality_scores(e, h=0.33):
    """Per-sample quality from feature norms, standardised and clipped to [-1, 1].

    ``z_i = clip((||f_i|| - mean) / (std / h), -1, 1)`` with batch statistics;
    a batch of equal norms gives all zeros.
    """
    norms = np.linalg.norm(as_embeddings(e), axis=1)
    if norms.size < 2:
        raise ValueError("quality scores need a batch of at least two samples")
    if h <= 0:
        raise ValueError("h must be positive")
    sigma = norms.std()
    if sigma < 1e-12:
        return np.zeros_like(norms)
    return np.clip((norms - norms.mean()) / (sigma / h), -1.0, 1.0)


def quality_weights(z, lambda_z=0.8):
    if not 0.0 <= lambda_z <= 1.0:
        raise ValueError("lambda_z must lie in [0, 1]")
    return np.asarray(z, dtype=np.float64) * lambda_z + 1.0


def quality_weighted(loss_fn, z, lambda_z, *args, **kwargs):
    """Evaluate ``loss_fn`` with per-sample weights ``z * lambda_z + 1``.

    ``loss_fn`` must accept ``sample_weights``. The quality scores are
    constants here, so no gradient flows back through the feature norms.
    """
    return loss_fn(*args, sample_weights=quality_weights(z, lambda_z), **kwargs)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dnet_forward(e, weight, bias=0.0):
    """Domain-identification scores ``sigmoid(f . w + b)`` in [0, 1]."""
    e = as_embeddings(e)
    weight = np.asarray(weight, dtype=np.float64).reshape(-1)
    if weight.size != e.shape[1]:
        raise DimMismatch(f"scorer has {weight.size} weights, features have {e.shape[1]} dims")
    return _sigmoid(e @ weight + bias)


def dnet_backward(e, weight, bias, grad_scores):
    """Gradients of ``sum(grad_scores * dnet_forward(e, weight, bias))``."""
    e = as_embeddings(e)
    s = dnet_forward(e, weight, bias)
    g_pre = np.asarray(grad_scores, dtype=np.float64) * s * (1.0 - s)
    return {"embeddings": np.outer(g_pre, weight),
            "weight": e.T @ g_pre,
            "bias": float(g_pre.sum())}


def _mse_pair(src, tgt, src_target, tgt_target):
    src = np.asarray(src, dtype=np.float64).reshape(-1)
    tgt = np.asarray(tgt, dtype=np.float64).reshape(-1)
    if src.size == 0 or tgt.size == 0:
        raise ValueError("both score sets must be non-empty")
    ds = src - src_target
    dt = tgt - tgt_target
    value = np.mean(ds ** 2) + np.mean(dt ** 2)
    return LossOutput(float(value), {"source_scores": 2.0 * ds / src.size,
                                     "target_scores": 2.0 * dt / tgt.size})


def dnet_loss(source_scores, target_scores):
    """Discriminator objective: push source scores to 1 and target scores to 0."""
    return _mse_pair(source_scores, target_scores, 1.0, 0.0)


def dim_loss(source_scores, target_scores):
    """Domain-confusion objective for the encoder: every score towards 0.5."""
    return _mse_pair(source_scores, target_scores, 0.5, 0.5)
