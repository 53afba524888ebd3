"""Unsupervised training against cluster and camera-proxy memories.

Every epoch the current features are clustered; the memory bank is seeded
with cluster centroids and the proxy bank with per-camera sub-centroids.
Batches are drawn PK-style over pseudo-labels, the encoder is trained with
the cluster contrastive loss plus ``lambda_cap`` times the camera-aware
proxy loss, and both memories follow the batch features by momentum.

When the data carries token features, the sample feature is the fused
``[pooled top tokens, global]`` vector; the same linear encoder embeds the
raw sample and each token.
"""

import logging
from dataclasses import replace

import numpy as np

from ..config import RunConfig
from ..embeddings import (eir_fuse, eir_fuse_backward, embed_augment, l2_normalize,
                          l2_normalize_backward, pk_sample)
from ..encoder import SGD, LinearEncoder
from ..losses import cap_loss, cluster_nce, vitc_total
from ..memory import init_memory
from ..pseudo_labels import NOISE, camera_subclusters, centroids, clustering_ari, dbscan, num_clusters
from .common import RunLog, clustering_distances, relabel, retrieval_metrics

logger = logging.getLogger("reidlab")


def _forward(encoder, x, tokens, attention, fraction):
    """Unnormalized features and a cache for :func:`_backward`."""
    g = encoder(x)
    if tokens is None:
        return g, None
    n, m, _ = tokens.shape
    t = encoder(tokens.reshape(n * m, -1)).reshape(n, m, -1)
    fused, cache = eir_fuse(t, attention, fraction, g, return_cache=True)
    return fused, cache


def _backward(encoder, x, tokens, cache, grad):
    if cache is None:
        return encoder.backward(x, grad)[0]
    parts = eir_fuse_backward(cache, grad)
    g_g, _ = encoder.backward(x, parts["global"])
    n, m, _ = tokens.shape
    g_t, _ = encoder.backward(tokens.reshape(n * m, -1),
                              parts["tokens"].reshape(n * m, -1))
    return {k: g_g[k] + g_t[k] for k in g_g}


def extract_features(encoder, data, fraction=0.5):
    feats, _ = _forward(encoder, data.raw, data.tokens, data.attention, fraction)
    return feats


def train_vitc(data, cfg=None, encoder=None, lambda_cap=None, test=None, log_path=None):
    """Train ``encoder`` on unlabeled ``data`` (labels are used for scoring only).

    Returns ``(encoder, RunLog)``. The log holds one ``cluster`` record per
    clustering pass (``epoch`` = finished epochs, last pass after training)
    with ground-truth ARI, ``batch`` records, and ``eval`` records with
    cross-camera retrieval metrics on ``test`` (or on ``data`` when absent).
    """
    cfg = cfg or RunConfig()
    lc = cfg.loss if lambda_cap is None else replace(cfg.loss, lambda_cap=float(lambda_cap))
    rng = np.random.default_rng(cfg.seed)
    if encoder is None:
        encoder = LinearEncoder.random(data.raw.shape[1], cfg.embed_dim, rng)
    opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay)
    log = RunLog(log_path or cfg.log_path or None)
    truth = data.meta.labels
    cams = data.meta.cameras
    held_out = test if test is not None else data
    frac = cfg.eir_fraction

    def evaluate(epoch):
        feats = extract_features(encoder, held_out, frac)
        log.write(kind="eval", epoch=epoch, **retrieval_metrics(feats, held_out.meta))

    def cluster(epoch):
        feats, dist = clustering_distances(extract_features(encoder, data, frac),
                                           cfg.cluster, cfg.rerank)
        assign = dbscan(dist=dist, eps=cfg.cluster.eps, min_pts=cfg.cluster.min_pts)
        rec = dict(kind="cluster", epoch=epoch, num_clusters=num_clusters(assign),
                   num_noise=int(np.sum(assign == NOISE)))
        if np.all(truth >= 0):
            rec["ari"] = clustering_ari(assign, truth)
        log.write(**rec)
        return feats, assign

    evaluate(0)
    for epoch in range(1, cfg.epochs + 1):
        feats, assign = cluster(epoch - 1)
        n_clusters = num_clusters(assign)
        if n_clusters < 2:
            logger.warning("epoch %d: %d clusters, skipping", epoch, n_clusters)
            evaluate(epoch)
            continue
        bank = init_memory(centroids(feats, assign), cfg.memory_momentum)
        proxies = camera_subclusters(feats, assign, cams, cfg.memory_momentum).normalize()

        members = np.flatnonzero(assign != NOISE)
        pseudo, _ = relabel(assign[members])
        batch = cfg.batch_p * cfg.batch_k
        steps = max(1, members.size // batch)
        p = min(cfg.batch_p, n_clusters)
        for step in range(steps):
            b = members[pk_sample(pseudo, p, cfg.batch_k, rng).indices]
            x = embed_augment(data.raw[b], cfg.aug_sigma, rng, normalized=False)
            tokens = None if data.tokens is None else data.tokens[b]
            attention = None if data.attention is None else data.attention[b]
            f, cache = _forward(encoder, x, tokens, attention, frac)
            q = l2_normalize(f)
            y = assign[b]

            nce = cluster_nce(q, y, bank, lc.tau_nce)
            cap = cap_loss(q, y, proxies, lc.tau_cap, lc.cap_num_hard)
            total = vitc_total(nce, cap, lc)
            grads = _backward(encoder, x, tokens, cache, l2_normalize_backward(f, total.grads["q"]))
            opt.step(encoder, grads)

            bank.update_batch(q, y)
            for qi, yi, ci in zip(q, y, cams[b]):
                proxies.update(qi, yi, ci)
            log.write(kind="batch", epoch=epoch, step=step, loss=total.value,
                      nce=nce.value, cap=cap.value)
        evaluate(epoch)
    cluster(cfg.epochs)
    log.close()
    return encoder, log
