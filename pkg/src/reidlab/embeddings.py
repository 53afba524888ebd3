"""Embedding-level numerics: normalisation, distances, PK sampling, part
pooling and the token fusion used by the transformer pipeline.

Embeddings are plain ``float64`` arrays of shape ``(N, D)``. Part and token
features are ``(N, K, D)`` arrays.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import (
    DimMismatch,
    FractionOutOfRange,
    InsufficientIdentities,
    ShapeMismatch,
    ZeroRow,
)

UNKNOWN = -1

EUCLIDEAN = "euclidean"
SQUARED_EUCLIDEAN = "sqeuclidean"
COSINE = "cosine"
METRICS = (EUCLIDEAN, SQUARED_EUCLIDEAN, COSINE)

_ZERO_NORM = 1e-12
# n*m*d above this switches from exact differences to the Gram expansion
_DIRECT_LIMIT = 1 << 22


@dataclass
class SampleMeta:
    """Identity label (``UNKNOWN`` allowed) and camera id per sample."""

    labels: np.ndarray
    cameras: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.cameras = np.asarray(self.cameras, dtype=np.int64).reshape(-1)
        if self.labels.shape != self.cameras.shape:
            raise ShapeMismatch(
                f"{self.labels.size} labels but {self.cameras.size} cameras")
        if np.any(self.cameras < 0):
            raise ValueError("camera ids must be non-negative")

    def __len__(self):
        return self.labels.size

    def subset(self, idx):
        return SampleMeta(self.labels[idx], self.cameras[idx])

    @classmethod
    def unlabeled(cls, cameras):
        cameras = np.asarray(cameras)
        return cls(np.full(cameras.shape, UNKNOWN), cameras)


@dataclass
class PKBatch:
    indices: np.ndarray
    p: int
    k: int
    labels: np.ndarray = field(default=None)


def as_embeddings(e):
    e = np.asarray(e, dtype=np.float64)
    if e.ndim == 1:
        e = e[None, :]
    if e.ndim != 2:
        raise ShapeMismatch(f"expected an (N, D) matrix, got shape {e.shape}")
    return e


def is_normalized(e, tol=1e-6):
    e = as_embeddings(e)
    if e.shape[0] == 0:
        return True
    return bool(np.all(np.abs(np.linalg.norm(e, axis=1) - 1.0) <= tol))


def l2_normalize(e):
    """Scale every row to unit L2 norm. Raises :class:`ZeroRow` on a null row."""
    e = as_embeddings(e)
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    bad = np.flatnonzero(norms[:, 0] < _ZERO_NORM)
    if bad.size:
        raise ZeroRow(bad[0])
    return e / norms


def l2_normalize_backward(x, grad_out):
    """Vector-Jacobian product of :func:`l2_normalize` at ``x``."""
    x = as_embeddings(x)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    y = x / norms
    return (grad_out - y * np.sum(grad_out * y, axis=1, keepdims=True)) / norms


def pairwise_distances(a, b=None, metric=EUCLIDEAN):
    """Distances between the rows of ``a`` and ``b`` (``b=None`` means ``a``).

    Supported metrics are ``"euclidean"``, ``"sqeuclidean"`` and ``"cosine"``
    (one minus cosine similarity, rows normalised internally).
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    a = as_embeddings(a)
    same = b is None or b is a
    b = a if same else as_embeddings(b)
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"dimension {a.shape[1]} vs {b.shape[1]}")

    if metric == COSINE:
        an = l2_normalize(a) if a.shape[0] else a
        bn = an if same else (l2_normalize(b) if b.shape[0] else b)
        out = np.clip(1.0 - an @ bn.T, 0.0, 2.0)
    else:
        if a.shape[0] * b.shape[0] * a.shape[1] <= _DIRECT_LIMIT:
            diff = a[:, None, :] - b[None, :, :]
            out = np.einsum("ijk,ijk->ij", diff, diff)
        else:
            out = (np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :]
                   - 2.0 * (a @ b.T))
            np.maximum(out, 0.0, out=out)
        if metric == EUCLIDEAN:
            out = np.sqrt(out)
    if same:
        np.fill_diagonal(out, 0.0)
    return out


def pk_sample(meta, p, k, rng):
    """Draw a P x K batch: ``p`` random identities, ``k`` rows each.

    Rows are drawn without replacement inside an identity; identities that
    own fewer than ``k`` rows are sampled with replacement. ``UNKNOWN``
    labels never enter a batch.
    """
    labels = meta.labels if isinstance(meta, SampleMeta) else np.asarray(meta)
    known = np.unique(labels[labels != UNKNOWN])
    if known.size < p:
        raise InsufficientIdentities(
            f"need {p} identities, only {known.size} available")
    chosen = rng.choice(known, size=p, replace=False)
    idx = []
    for lab in chosen:
        members = np.flatnonzero(labels == lab)
        idx.append(rng.choice(members, size=k, replace=members.size < k))
    idx = np.concatenate(idx).astype(np.int64)
    return PKBatch(indices=idx, p=int(p), k=int(k), labels=labels[idx])


def pk_epoch(meta, p, k, rng):
    """Yield PK batches covering every known identity once, in random order."""
    labels = meta.labels if isinstance(meta, SampleMeta) else np.asarray(meta)
    known = np.unique(labels[labels != UNKNOWN])
    if known.size < p:
        raise InsufficientIdentities(
            f"need {p} identities, only {known.size} available")
    order = rng.permutation(known)
    for start in range(0, order.size - p + 1, p):
        idx = []
        for lab in order[start:start + p]:
            members = np.flatnonzero(labels == lab)
            idx.append(rng.choice(members, size=k, replace=members.size < k))
        idx = np.concatenate(idx).astype(np.int64)
        yield PKBatch(indices=idx, p=int(p), k=int(k), labels=labels[idx])


def embed_augment(e, sigma, rng, normalized=None):
    """Gaussian jitter in feature space; re-normalises unit-norm inputs."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    e = as_embeddings(e)
    if sigma == 0:
        return e.copy()
    if normalized is None:
        normalized = e.shape[0] > 0 and is_normalized(e)
    out = e + rng.normal(0.0, sigma, size=e.shape)
    return l2_normalize(out) if normalized else out


def part_pool(pf, mode="gmp", concat_local=True):
    """Pool ``(N, K, D)`` part features.

    Returns ``(global, local)``: ``global`` is the max (``"gmp"``) or mean
    (``"gap"``) over parts, ``local`` the parts concatenated into
    ``(N, K*D)`` (``None`` when ``concat_local`` is false).
    """
    pf = np.asarray(pf, dtype=np.float64)
    if pf.ndim != 3 or pf.shape[1] < 1:
        raise ShapeMismatch(f"expected (N, K>=1, D) part features, got {pf.shape}")
    mode = mode.lower()
    if mode == "gmp":
        g = pf.max(axis=1)
    elif mode == "gap":
        g = pf.mean(axis=1)
    else:
        raise ValueError(f"unknown pooling mode {mode!r}")
    local = pf.reshape(pf.shape[0], -1) if concat_local else None
    return g, local


def part_pool_backward(pf, mode, grad_global, grad_local=None):
    pf = np.asarray(pf, dtype=np.float64)
    n, k, d = pf.shape
    grad = np.zeros_like(pf)
    if grad_global is not None:
        if mode.lower() == "gmp":
            arg = np.argmax(pf, axis=1)
            rows, cols = np.meshgrid(np.arange(n), np.arange(d), indexing="ij")
            grad[rows, arg, cols] += grad_global
        else:
            grad += grad_global[:, None, :] / k
    if grad_local is not None:
        grad += grad_local.reshape(n, k, d)
    return grad


def _top_tokens(attention, fraction, m):
    if not 0.0 < fraction <= 1.0:
        raise FractionOutOfRange(f"fraction must lie in (0, 1], got {fraction}")
    n_sel = max(1, math.ceil(fraction * m - 1e-9))
    # stable sort on negated scores: ties resolved by ascending token index
    order = np.argsort(-attention, axis=1, kind="stable")
    return np.sort(order[:, :n_sel], axis=1)


def eir_fuse(tokens, attention, fraction, global_feat, projection=None,
             return_cache=False):
    """Fuse the most attended local tokens into the global feature.

    For each sample the ``ceil(fraction * M)`` tokens with the highest
    attention are kept, L2-normalised, mapped through ``projection``
    (identity by default, ``(D, D)``), max-pooled and concatenated after the
    global feature's counterpart, giving ``(N, 2D)``: ``[maxpool, global]``.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    global_feat = as_embeddings(global_feat)
    n, m, d = tokens.shape
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim == 1:
        attention = np.broadcast_to(attention, (n, attention.size))
    if attention.shape != (n, m):
        raise ShapeMismatch(f"attention shape {attention.shape} != {(n, m)}")
    if global_feat.shape != (n, d):
        raise ShapeMismatch(f"global shape {global_feat.shape} != {(n, d)}")
    proj = np.eye(d) if projection is None else np.asarray(projection, dtype=np.float64)
    if proj.shape[0] != d:
        raise DimMismatch(f"projection expects {proj.shape[0]} inputs, tokens have {d}")

    sel = _top_tokens(attention, fraction, m)
    picked = np.take_along_axis(tokens, sel[:, :, None], axis=1)
    norms = np.linalg.norm(picked, axis=2, keepdims=True)
    if np.any(norms < _ZERO_NORM):
        raise ZeroRow(int(np.argwhere(norms[:, :, 0] < _ZERO_NORM)[0, 0]))
    unit = picked / norms
    projected = unit @ proj
    arg = np.argmax(projected, axis=1)
    pooled = np.take_along_axis(projected, arg[:, None, :], axis=1)[:, 0, :]
    out = np.concatenate([pooled, global_feat], axis=1)
    if not return_cache:
        return out
    cache = dict(shape=tokens.shape, sel=sel, unit=unit, norms=norms,
                 arg=arg, proj=proj)
    return out, cache


def eir_fuse_backward(cache, grad_out):
    """Gradients of :func:`eir_fuse` w.r.t. tokens, global and projection."""
    n, m, d = cache["shape"]
    sel, unit, norms, arg, proj = (cache[k] for k in ("sel", "unit", "norms", "arg", "proj"))
    d_out = proj.shape[1]
    g_pool, g_global = grad_out[:, :d_out], grad_out[:, d_out:]

    g_proj_out = np.zeros((n, sel.shape[1], d_out))
    rows, cols = np.meshgrid(np.arange(n), np.arange(d_out), indexing="ij")
    g_proj_out[rows, arg, cols] = g_pool
    g_proj = np.einsum("nsi,nso->io", unit, g_proj_out)
    g_unit = g_proj_out @ proj.T
    g_picked = (g_unit - unit * np.sum(g_unit * unit, axis=2, keepdims=True)) / norms

    g_tokens = np.zeros((n, m, d))
    np.put_along_axis(g_tokens, sel[:, :, None].repeat(d, axis=2), g_picked, axis=1)
    return {"tokens": g_tokens, "global": g_global.copy(), "projection": g_proj}
