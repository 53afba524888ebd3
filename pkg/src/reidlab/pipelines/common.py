import json
import logging

import numpy as np

from ..embeddings import l2_normalize, pairwise_distances
from ..evaluation import jaccard_matrix, rank_gallery, summarize
from ..losses import LossOutput

logger = logging.getLogger("reidlab")


class RunLog:
    """Append-only list of records, optionally mirrored to a (fresh) JSONL file."""

    def __init__(self, path=None):
        self.records = []
        self._fh = open(path, "w") if path else None

    def write(self, **record):
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None

    def of(self, kind):
        return [r for r in self.records if r.get("kind") == kind]


def retrieval_metrics(features, meta, cross_camera=True):
    """Held-out metrics with the test set as both query and gallery.

    The protocol mask removes each query's own row and its same-camera
    matches, so scores are cross-camera.
    """
    feats = l2_normalize(features)
    try:
        return summarize(rank_gallery(feats, meta, feats, meta, cross_camera=cross_camera))
    except Exception as exc:  # noqa: BLE001 - metrics must not kill training
        logger.warning("evaluation failed: %s", exc)
        return {"mAP": float("nan"), "rank1": float("nan"), "rank5": float("nan"),
                "rank10": float("nan"), "num_queries": 0, "num_excluded": len(meta)}


def relabel(labels):
    """Map arbitrary ids onto ``0..C-1``; returns ``(mapped, classes)``."""
    classes, mapped = np.unique(labels, return_inverse=True)
    return mapped.reshape(-1), classes


def as_role(out, role, grad_key=None, extra=None):
    """Rename the gradient of a single-input loss to ``role``."""
    key = grad_key or next(iter(out.grads))
    grads = {role: out.grads[key]}
    grads.update(extra or {})
    return LossOutput(out.value, grads, out.per_sample)


def clustering_distances(features, ccfg, rerank_cfg=None):
    """Distance matrix used for pseudo-labeling.

    Euclidean on L2-normalized features by default; k-reciprocal Jaccard
    when ``ccfg.use_jaccard`` is set.
    """
    feats = l2_normalize(features)
    if ccfg.use_jaccard:
        k1, k2 = (20, 6) if rerank_cfg is None else (rerank_cfg.k1, rerank_cfg.k2)
        return feats, jaccard_matrix(feats, min(k1, feats.shape[0] - 1), k2)
    return feats, pairwise_distances(feats, metric=ccfg.metric)
