"""Teacher-student self-training on clustered, softly refined pseudo-labels.

Every epoch the teacher's features are clustered, cluster centroids are
recomputed from confidently assigned members only, and hard pseudo-labels
are blended with centroid soft assignments. The student then trains on a
global (max-pooled) and a local (concatenated parts) branch and distills
from the teacher, which follows the student by EMA after every step.

With ``source`` data the run also uses the two-domain terms: a
quality-weighted supervised loss on labeled source batches and the
domain-confusion loss against a jointly trained domain scorer.
"""

import logging

import numpy as np

from ..config import RunConfig
from ..embeddings import (SampleMeta, l2_normalize, part_pool,
                          part_pool_backward, pk_sample)
from ..encoder import SGD, LinearEncoder, flatten_models, unflatten_models
from ..errors import EmptyClustering
from ..losses import (LossOutput, batch_hard_triplet, cross_entropy, dim_loss, dnet_backward,
                      dnet_forward, dnet_loss, identity_two_branch, kl_distill,
                      quality_scores, quality_weighted, soft_triplet_distill, usl_total)
from ..memory import TeacherState, teacher_update
from ..pseudo_labels import (NOISE, clustering_ari, confident_centroids, dbscan, num_clusters,
                             refine_labels, silhouette, soft_assignment_matrix)
from .common import RunLog, clustering_distances, relabel, retrieval_metrics

logger = logging.getLogger("reidlab")


class PartModel:
    """Linear encoder emitting ``K`` part features plus two classifier heads."""

    def __init__(self, encoder, num_parts, head_global=None, head_local=None):
        self.encoder = encoder
        self.num_parts = num_parts
        self.head_global = head_global
        self.head_local = head_local

    @classmethod
    def random(cls, in_dim, embed_dim, num_parts, rng):
        return cls(LinearEncoder.random(in_dim, embed_dim * num_parts, rng), num_parts)

    @property
    def embed_dim(self):
        return self.encoder.out_dim // self.num_parts

    def layers(self):
        return [m for m in (self.encoder, self.head_global, self.head_local) if m is not None]

    def copy(self):
        return PartModel(self.encoder.copy(), self.num_parts,
                         self.head_global.copy() if self.head_global else None,
                         self.head_local.copy() if self.head_local else None)

    def parts(self, x):
        out = self.encoder(x)
        return out.reshape(out.shape[0], self.num_parts, self.embed_dim)

    def features(self, x):
        """Global (max-pooled) feature, the one used for clustering and retrieval."""
        return part_pool(self.parts(x), "gmp", concat_local=False)[0]

    def forward(self, x):
        parts = self.parts(x)
        g, local = part_pool(parts, "gmp")
        return dict(parts=parts, global_=g, local=local,
                    logits_g=self.head_global(g), logits_l=self.head_local(local))


def cluster_and_refine(features, ccfg, rerank_cfg=None):
    """Cluster features and build refined soft labels.

    Returns ``(assignment, soft_labels)`` where ``soft_labels`` has a row per
    sample (zero rows for noise).
    """
    feats, dist = clustering_distances(features, ccfg, rerank_cfg)
    assign = dbscan(dist=dist, eps=ccfg.eps, min_pts=ccfg.min_pts)
    n_clusters = num_clusters(assign)
    if n_clusters == 0:
        raise EmptyClustering("clustering produced no clusters")
    if n_clusters >= 2:
        s = silhouette(dist, assign)
        cents = confident_centroids(feats, assign, s, ccfg.sigma_threshold)
    else:
        cents = confident_centroids(feats, assign, np.ones(assign.size), -1.0)
    soft = np.zeros((assign.size, n_clusters))
    ok = assign != NOISE
    g = soft_assignment_matrix(feats[ok], cents, ccfg.tau_refine, ccfg.positive_exponent)
    soft[ok] = refine_labels(assign[ok], g, ccfg.alpha)
    return assign, soft, cents


def _init_heads(model, x, assign, n_clusters):
    out = model.parts(x)
    g, local = part_pool(out, "gmp")
    ok = assign != NOISE
    w_g = np.zeros((g.shape[1], n_clusters))
    w_l = np.zeros((local.shape[1], n_clusters))
    for k in range(n_clusters):
        members = ok & (assign == k)
        w_g[:, k] = l2_normalize(g[members].mean(axis=0))[0]
        w_l[:, k] = l2_normalize(local[members].mean(axis=0))[0]
    model.head_global = LinearEncoder(w_g)
    model.head_local = LinearEncoder(w_l)


def daprh_step_losses(student, teacher, x, y_hard, y_soft, cfg):
    """Four-term objective on one batch; returns ``(components, total, fwd)``."""
    lc = cfg.loss
    s = student.forward(x)
    t = teacher.forward(x)
    id_loss = identity_two_branch(s["logits_g"], s["logits_l"], y_soft)
    kl = kl_distill(s["logits_g"], t["logits_g"])
    tri = batch_hard_triplet(s["global_"], y_hard, lc.margin)
    stri = soft_triplet_distill(s["global_"], t["global_"], y_hard)
    parts = {
        "id": LossOutput(id_loss.value, {"logits_g": id_loss.grads["global_logits"],
                                         "logits_l": id_loss.grads["local_logits"]}),
        "kl": LossOutput(kl.value, {"logits_g": kl.grads["student_logits"]}),
        "tri": LossOutput(tri.value, {"global": tri.grads["embeddings"]}),
        "stri": LossOutput(stri.value, {"global": stri.grads["student"]}),
    }
    total = usl_total(parts["id"], parts["kl"], parts["tri"], parts["stri"], lc)
    return parts, total, s


def _student_grads(student, x, fwd, grads):
    """Backprop role gradients (``logits_g``, ``logits_l``, ``global``, ``local``)."""
    n = x.shape[0]
    g_global = grads.get("global", np.zeros_like(fwd["global_"])).copy()
    g_local = grads.get("local", np.zeros_like(fwd["local"])).copy()
    out = {}
    if "logits_g" in grads:
        gh, gi = student.head_global.backward(fwd["global_"], grads["logits_g"])
        out["head_global"] = gh
        g_global += gi
    if "logits_l" in grads:
        gh, gi = student.head_local.backward(fwd["local"], grads["logits_l"])
        out["head_local"] = gh
        g_local += gi
    g_parts = part_pool_backward(fwd["parts"], "gmp", g_global, g_local)
    out["encoder"], _ = student.encoder.backward(x, g_parts.reshape(n, -1))
    return out


class _DomainBranch:
    """Source-domain supervision plus the domain scorer for two-domain runs."""

    def __init__(self, source, embed_dim, cfg, rng):
        self.source = source
        self.y, classes = relabel(source.meta.labels)
        self.head = LinearEncoder.random(embed_dim, classes.size, rng, bias=False, scale=0.01)
        self.scorer_w = np.zeros(embed_dim)
        self.scorer_b = 0.0
        self.cfg = cfg

    def step(self, student, target_global, target_x, rng, opt):
        cfg, lc = self.cfg, self.cfg.loss
        b = pk_sample(self.y, cfg.batch_p, cfg.batch_k, rng)
        xs, ys = self.source.raw[b.indices], self.y[b.indices]
        parts = student.parts(xs)
        gs = part_pool(parts, "gmp", concat_local=False)[0]
        z = quality_scores(parts.reshape(len(ys), -1), lc.h)
        logits = self.head(gs)
        ce = quality_weighted(cross_entropy, z, lc.lambda_z, logits, ys)
        tri = quality_weighted(batch_hard_triplet, z, lc.lambda_z, gs, ys, lc.margin)
        g_head, g_gs = self.head.backward(gs, ce.grads["logits"])
        g_gs = g_gs + tri.grads["embeddings"]

        s_src = dnet_forward(gs, self.scorer_w, self.scorer_b)
        s_tgt = dnet_forward(target_global, self.scorer_w, self.scorer_b)
        disc = dnet_loss(s_src, s_tgt)
        conf = dim_loss(s_src, s_tgt)
        # scorer descends the discriminator loss, the encoder the confusion loss
        d_src = dnet_backward(gs, self.scorer_w, self.scorer_b, disc.grads["source_scores"])
        d_tgt = dnet_backward(target_global, self.scorer_w, self.scorer_b,
                              disc.grads["target_scores"])
        c_src = dnet_backward(gs, self.scorer_w, self.scorer_b, conf.grads["source_scores"])
        c_tgt = dnet_backward(target_global, self.scorer_w, self.scorer_b,
                              conf.grads["target_scores"])
        if cfg.lr:
            self.scorer_w = self.scorer_w - cfg.lr * (d_src["weight"] + d_tgt["weight"])
            self.scorer_b = self.scorer_b - cfg.lr * (d_src["bias"] + d_tgt["bias"])
        g_gs = g_gs + lc.lambda_dim * c_src["embeddings"]
        g_src = part_pool_backward(parts, "gmp", g_gs)
        enc_src, _ = student.encoder.backward(xs, g_src.reshape(len(ys), -1))
        opt.step(self.head, {"weight": g_head["weight"]}, key="source_head")
        values = dict(src_ce=ce.value, src_tri=tri.value, dnet=disc.value, dim=conf.value)
        return enc_src, lc.lambda_dim * c_tgt["embeddings"], values


def train_daprh_stage2(target, cfg=None, student=None, teacher=None, source=None,
                       test=None, log_path=None):
    """Unsupervised adaptation on ``target`` (labels ignored except for scoring).

    Returns ``(student, teacher, RunLog)``. The log has one ``cluster``
    record per clustering pass (``epoch`` = number of finished epochs,
    including a final pass after training) and ``batch`` records per step.
    """
    cfg = cfg or RunConfig()
    rng = np.random.default_rng(cfg.seed)
    if student is None:
        student = PartModel.random(target.raw.shape[1], cfg.embed_dim, cfg.num_parts, rng)
    if teacher is None:
        teacher = student.copy()
    truth = getattr(target, "truth", None)
    opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay)
    domain = _DomainBranch(source, student.embed_dim, cfg, rng) if source is not None else None
    log = RunLog(log_path or cfg.log_path or None)

    def record_clustering(epoch):
        feats = teacher.features(target.raw)
        try:
            assign, soft, _ = cluster_and_refine(feats, cfg.cluster, cfg.rerank)
        except EmptyClustering:
            assign, soft = np.full(len(target.raw), NOISE), None
        rec = dict(kind="cluster", epoch=epoch, num_clusters=num_clusters(assign),
                   num_noise=int(np.sum(assign == NOISE)))
        if truth is not None:
            rec["ari"] = clustering_ari(assign, truth)
        if test is not None:
            rec.update(retrieval_metrics(teacher.features(test.raw), test.meta))
        log.write(**rec)
        return assign, soft

    for epoch in range(1, cfg.epochs + 1):
        assign, soft = record_clustering(epoch - 1)
        n_clusters = num_clusters(assign)
        if soft is None or n_clusters < 2:
            logger.warning("epoch %d: %d clusters, skipping", epoch, n_clusters)
            continue
        ok = np.flatnonzero(assign != NOISE)
        _init_heads(student, target.raw, assign, n_clusters)
        teacher.head_global = student.head_global.copy()
        teacher.head_local = student.head_local.copy()
        state = TeacherState(flatten_models(teacher.layers()), cfg.ema_weight)
        opt.reset("head_global")
        opt.reset("head_local")

        usable = SampleMeta(assign[ok], np.zeros(ok.size, dtype=np.int64))
        n_ids = np.unique(assign[ok]).size
        p = min(cfg.batch_p, n_ids)
        steps = max(1, ok.size // (p * cfg.batch_k))
        for step in range(steps):
            b = pk_sample(usable, p, cfg.batch_k, rng)
            idx = ok[b.indices]
            x = target.raw[idx]
            parts, total, fwd = daprh_step_losses(student, teacher, x, assign[idx],
                                                  soft[idx], cfg)
            grads = _student_grads(student, x, fwd, total.grads)
            extra = {}
            if domain is not None:
                enc_src, g_tgt_global, extra = domain.step(student, fwd["global_"], x, rng, opt)
                tgt = _student_grads(student, x, fwd, {"global": g_tgt_global})["encoder"]
                for k in grads["encoder"]:
                    grads["encoder"][k] = grads["encoder"][k] + enc_src[k] + tgt[k]
            opt.step(student.encoder, grads["encoder"], key="encoder")
            opt.step(student.head_global, grads["head_global"], key="head_global")
            opt.step(student.head_local, grads["head_local"], key="head_local")
            state = teacher_update(state, flatten_models(student.layers()))
            unflatten_models(teacher.layers(), state.params)
            log.write(kind="batch", epoch=epoch, step=step, loss=total.value,
                      **{k: v.value for k, v in parts.items()}, **extra)
    record_clustering(cfg.epochs)
    log.close()
    return student, teacher, log


def pretrain_source(source, cfg=None, model=None):
    """Supervised source-domain warm-up: quality-weighted CE + triplet."""
    cfg = cfg or RunConfig()
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = PartModel.random(source.raw.shape[1], cfg.embed_dim, cfg.num_parts, rng)
    y, classes = relabel(source.meta.labels)
    head = LinearEncoder.random(model.embed_dim, classes.size, rng, bias=False, scale=0.01)
    opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay)
    lc = cfg.loss
    steps = max(1, y.size // (cfg.batch_p * cfg.batch_k))
    for _ in range(cfg.epochs):
        for _ in range(steps):
            b = pk_sample(y, cfg.batch_p, cfg.batch_k, rng)
            x, yb = source.raw[b.indices], y[b.indices]
            parts = model.parts(x)
            g = part_pool(parts, "gmp", concat_local=False)[0]
            z = quality_scores(parts.reshape(yb.size, -1), lc.h)
            ce = quality_weighted(cross_entropy, z, lc.lambda_z, head(g), yb)
            tri = quality_weighted(batch_hard_triplet, z, lc.lambda_z, g, yb, lc.margin)
            g_head, g_g = head.backward(g, ce.grads["logits"])
            g_parts = part_pool_backward(parts, "gmp", g_g + tri.grads["embeddings"])
            g_enc, _ = model.encoder.backward(x, g_parts.reshape(yb.size, -1))
            opt.step(model.encoder, g_enc, key="encoder")
            opt.step(head, g_head, key="head")
    return model
