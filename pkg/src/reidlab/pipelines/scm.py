"""Supervised training with the combined metric-learning objective.

Each PK batch is jittered twice. The first view feeds the classifier,
triplet, center and centroid-triplet losses; both views feed the
supervised contrastive term.
"""

import numpy as np

from ..config import RunConfig
from ..embeddings import embed_augment, l2_normalize, l2_normalize_backward, pk_sample
from ..encoder import SGD, LinearEncoder
from ..losses import (CenterTable, batch_hard_triplet, center_loss, center_sgd_step,
                      centroid_triplet, cross_entropy, scm_total, supcon)
from .common import RunLog, as_role, relabel, retrieval_metrics


def scm_step_losses(encoder, head, centers, x1, x2, y, cfg, projection=None):
    """Forward both views and return ``(components, total, caches)``.

    Component gradients are keyed by ``f1``/``f2`` (the two feature views),
    ``head`` and ``centers``.
    """
    lc = cfg.loss
    f1 = encoder(x1)
    f2 = encoder(x2)
    logits = head(f1)
    ce = cross_entropy(logits, y)
    g_head, g_f1 = head.backward(f1, ce.grads["logits"])

    tri = batch_hard_triplet(f1, y, lc.margin)
    ct = center_loss(f1, y, centers)
    ctl = centroid_triplet(f1, y, lc.margin)

    p1 = f1 if projection is None else f1 @ projection
    p2 = f2 if projection is None else f2 @ projection
    z = np.vstack([l2_normalize(p1), l2_normalize(p2)])
    sup = supcon(z, np.concatenate([y, y]), lc.tau_supcon)
    n = f1.shape[0]
    g_p1 = l2_normalize_backward(p1, sup.grads["z"][:n])
    g_p2 = l2_normalize_backward(p2, sup.grads["z"][n:])
    if projection is not None:
        g_p1, g_p2 = g_p1 @ projection.T, g_p2 @ projection.T

    parts = {
        "ce": as_role(ce, "f1", "logits", extra={"head": g_head["weight"]}),
        "tri": as_role(tri, "f1"),
        "ct": as_role(ct, "f1", "embeddings", extra={"centers": ct.grads["centers"]}),
        "ctl": as_role(ctl, "f1"),
        "sup": type(sup)(sup.value, {"f1": g_p1, "f2": g_p2}),
    }
    parts["ce"].grads["f1"] = g_f1
    return parts, scm_total(parts, lc)


def train_scm(train, cfg=None, test=None, encoder=None, log_path=None):
    """Train a linear encoder on labeled data.

    ``train`` / ``test`` are :class:`~reidlab.synthetic.SyntheticData`-like
    objects with ``raw`` and ``meta``. Returns ``(encoder, head, RunLog)``.
    """
    cfg = cfg or RunConfig()
    rng = np.random.default_rng(cfg.seed)
    y_all, classes = relabel(train.meta.labels)
    if encoder is None:
        encoder = LinearEncoder.random(train.raw.shape[1], cfg.embed_dim, rng)
    head = LinearEncoder.random(cfg.embed_dim, classes.size, rng, bias=False, scale=0.01)
    centers = CenterTable.zeros(classes.size, cfg.embed_dim, cfg.loss.center_lr)
    opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay)
    log = RunLog(log_path or cfg.log_path or None)

    batch = cfg.batch_p * cfg.batch_k
    steps = max(1, len(y_all) // batch)
    if test is not None:
        log.write(kind="eval", epoch=0, **retrieval_metrics(encoder(test.raw), test.meta))
    for epoch in range(1, cfg.epochs + 1):
        for step in range(steps):
            b = pk_sample(y_all, cfg.batch_p, cfg.batch_k, rng)
            x = train.raw[b.indices]
            y = y_all[b.indices]
            x1 = embed_augment(x, cfg.aug_sigma, rng, normalized=False)
            x2 = embed_augment(x, cfg.aug_sigma, rng, normalized=False)
            parts, total = scm_step_losses(encoder, head, centers, x1, x2, y, cfg)

            g_enc1, _ = encoder.backward(x1, total.grads["f1"])
            g_enc2, _ = encoder.backward(x2, total.grads["f2"])
            opt.step(encoder, {k: g_enc1[k] + g_enc2[k] for k in g_enc1})
            opt.step(head, {"weight": total.grads["head"]})
            # centers follow the batch-mean center gradient
            if cfg.lr:
                centers = center_sgd_step(centers, parts["ct"].grads["centers"] / len(y))
            log.write(kind="batch", epoch=epoch, step=step, loss=total.value,
                      **{k: v.value for k, v in parts.items()})
        if test is not None:
            log.write(kind="eval", epoch=epoch, **retrieval_metrics(encoder(test.raw), test.meta))
    log.close()
    return encoder, head, log
