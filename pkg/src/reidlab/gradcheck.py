"""Finite-difference check of every hand-written loss gradient.

Each case draws a random instance, evaluates the analytic gradient and
compares it with central differences. Losses with a selection step (hinge,
hardest-sample mining, top-k negatives) are non-differentiable on a measure
zero set; instances closer than ``KINK_MARGIN`` to one are redrawn and the
number of redraws is reported.

Losses that require unit-norm inputs are checked through ``l2_normalize``,
which exercises its backward too.
"""

import time
from dataclasses import dataclass

import numpy as np

from .embeddings import (eir_fuse, eir_fuse_backward, l2_normalize, l2_normalize_backward,
                         pairwise_distances, part_pool, part_pool_backward)
from .losses import (batch_hard_triplet, cap_loss, center_loss, centroid_triplet, cluster_nce,
                     cross_entropy, dim_loss, dnet_backward, dnet_forward, dnet_loss,
                     identity_two_branch, kl_distill, quality_scores, quality_weighted,
                     soft_cross_entropy, soft_triplet_distill, ssl_contrastive,
                     supcon, vitc_total)
from .memory import CameraProxyBank

STEP = 1e-5
TOLERANCE = 1e-4
KINK_MARGIN = 1e-3


def numeric_grad(fn, x, step=STEP):
    """Central differences of scalar ``fn`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = fn()
        flat[i] = old - step
        lo = fn()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * step)
    return g


def relative_error(a, b):
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


@dataclass
class CaseResult:
    name: str
    instances: int
    redraws: int
    max_error: float
    seconds: float

    @property
    def passed(self):
        return self.max_error < TOLERANCE


def _labels(rng, p, k):
    return rng.permutation(np.repeat(np.arange(p), k))


def _gap(values, mask=None):
    """Smallest distance between the best and second-best entry per row."""
    v = np.where(mask, values, -np.inf) if mask is not None else values
    top = -np.sort(-v, axis=1)[:, :2]
    gaps = top[:, 0] - top[:, 1]
    return np.min(gaps[np.isfinite(gaps)], initial=np.inf)


def _triplet_smooth(e, y, margin):
    sq = pairwise_distances(e, metric="sqeuclidean")
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(y.size, dtype=bool)
    if _gap(sq, pos) < KINK_MARGIN or _gap(-sq, ~same) < KINK_MARGIN:
        return False
    if margin is None:
        return True
    hinge = 0.5 * np.max(np.where(pos, sq, -np.inf), axis=1) \
        - 0.5 * np.min(np.where(~same, sq, np.inf), axis=1) + margin
    return np.min(np.abs(hinge)) > KINK_MARGIN


# Each builder returns (inputs, value() -> float, grads() -> dict) over the
# mutable ``inputs`` arrays, or None to request a redraw.

def _case_cross_entropy(rng):
    x = {"logits": rng.normal(size=(12, 5))}
    y = rng.integers(0, 5, 12)
    w = rng.uniform(0.2, 2.0, 12)
    f = lambda: cross_entropy(x["logits"], y, w)
    return x, lambda: f().value, lambda: f().grads


def _case_soft_cross_entropy(rng):
    t = l2_normalize(rng.random(size=(10, 4))) ** 2
    x = {"logits": rng.normal(size=(10, 4))}
    f = lambda: soft_cross_entropy(x["logits"], t)
    return x, lambda: f().value, lambda: f().grads


def _case_identity_two_branch(rng):
    x = {"global_logits": rng.normal(size=(8, 6)), "local_logits": rng.normal(size=(8, 6))}
    soft = rng.dirichlet(np.ones(6), size=8)
    f = lambda: identity_two_branch(x["global_logits"], x["local_logits"], soft)
    return x, lambda: f().value, lambda: f().grads


def _case_kl(rng):
    teacher = rng.normal(size=(9, 7))
    x = {"student_logits": rng.normal(size=(9, 7))}
    f = lambda: kl_distill(x["student_logits"], teacher)
    return x, lambda: f().value, lambda: f().grads


def _case_batch_hard(rng):
    y = _labels(rng, 4, 3)
    e = rng.normal(size=(12, 6))
    w = rng.uniform(0.5, 1.5, 12)
    if not _triplet_smooth(e, y, 0.3):
        return None
    x = {"embeddings": e}
    f = lambda: batch_hard_triplet(x["embeddings"], y, 0.3, w)
    return x, lambda: f().value, lambda: f().grads


def _case_center(rng):
    y = rng.integers(0, 4, 10)
    x = {"embeddings": rng.normal(size=(10, 5)), "centers": rng.normal(size=(4, 5))}
    f = lambda: center_loss(x["embeddings"], y, x["centers"])
    return x, lambda: f().value, lambda: f().grads


def _case_centroid_triplet(rng):
    y = _labels(rng, 4, 3)
    e = rng.normal(size=(12, 5))
    margin = 1.0
    # selection margin: nearest other-class centroid and the hinge
    classes = np.unique(y)
    cents = np.stack([e[y == c].mean(axis=0) for c in classes])
    d = pairwise_distances(e, cents, metric="sqeuclidean")
    d[np.arange(12), np.searchsorted(classes, y)] = np.inf
    if _gap(-d) < KINK_MARGIN:
        return None
    out = centroid_triplet(e, y, margin)
    if not np.any(out.per_sample > 0):
        return None
    hinge_arg = np.array([
        np.sum((e[i] - e[(y == y[i]) & (np.arange(12) != i)].mean(axis=0)) ** 2)
        - np.min(d[i]) + margin for i in range(12)])
    if np.min(np.abs(hinge_arg)) < KINK_MARGIN:
        return None
    x = {"embeddings": e}
    f = lambda: centroid_triplet(x["embeddings"], y, margin)
    return x, lambda: f().value, lambda: f().grads


def _case_soft_triplet(rng):
    y = _labels(rng, 3, 4)
    e = rng.normal(size=(12, 6))
    h = e + 0.3 * rng.normal(size=e.shape)
    if not _triplet_smooth(e, y, None):
        return None
    x = {"student": e}
    f = lambda: soft_triplet_distill(x["student"], h, y)
    return x, lambda: f().value, lambda: f().grads


def _through_normalize(raw, loss_of_unit, key_map):
    """Wrap a unit-norm loss so it is a function of raw rows."""
    def value():
        return loss_of_unit({k: l2_normalize(v) for k, v in raw.items()}).value

    def grads():
        out = loss_of_unit({k: l2_normalize(v) for k, v in raw.items()})
        return {k: l2_normalize_backward(raw[k], out.grads[key_map[k]]) for k in raw}
    return raw, value, grads


def _case_supcon(rng):
    y = rng.integers(0, 4, 8)
    y2 = np.concatenate([y, y])
    raw = {"z": rng.normal(size=(16, 6))}
    return _through_normalize(raw, lambda u: supcon(u["z"], y2, 0.1), {"z": "z"})


def _case_ssl(rng):
    raw = {"z1": rng.normal(size=(7, 5)), "z2": rng.normal(size=(7, 5))}
    return _through_normalize(raw, lambda u: ssl_contrastive(u["z1"], u["z2"], 0.1),
                              {"z1": "z1", "z2": "z2"})


def _case_cluster_nce(rng):
    bank = l2_normalize(rng.normal(size=(5, 6)))
    a = rng.integers(0, 5, 9)
    raw = {"q": rng.normal(size=(9, 6))}
    return _through_normalize(raw, lambda u: cluster_nce(u["q"], a, bank, 0.05), {"q": "q"})


def _random_proxies(rng, clusters, cameras, dim):
    cl, cam = np.meshgrid(np.arange(clusters), np.arange(cameras), indexing="ij")
    keep = rng.random(cl.size) < 0.8
    keep[::cameras] = True  # every cluster keeps at least one camera
    cl, cam = cl.reshape(-1)[keep], cam.reshape(-1)[keep]
    rows = l2_normalize(rng.normal(size=(cl.size, dim)))
    return CameraProxyBank(rows, cl, cam, np.ones(cl.size, dtype=np.int64), normalized=True)


def _case_cap(rng, num_hard=4):
    proxies = _random_proxies(rng, 5, 3, 6)
    a = rng.integers(0, 5, 8)
    q0 = rng.normal(size=(8, 6))
    sims = l2_normalize(q0) @ proxies.proxies.T / 0.07
    for i in range(8):
        negs = np.sort(sims[i, proxies.proxy_cluster != a[i]])[::-1]
        if negs.size > num_hard and negs[num_hard - 1] - negs[num_hard] < KINK_MARGIN:
            return None
    raw = {"q": q0}
    return _through_normalize(raw, lambda u: cap_loss(u["q"], a, proxies, 0.07, num_hard),
                              {"q": "q"})


def _case_vitc_total(rng):
    bank = l2_normalize(rng.normal(size=(4, 5)))
    proxies = _random_proxies(rng, 4, 2, 5)
    proxies.proxies = bank[proxies.proxy_cluster] + 0.1 * rng.normal(size=proxies.proxies.shape)
    proxies.proxies = l2_normalize(proxies.proxies)
    a = rng.integers(0, 4, 6)
    raw = {"q": rng.normal(size=(6, 5))}
    combined = lambda u: vitc_total(cluster_nce(u["q"], a, bank), cap_loss(u["q"], a, proxies))
    return _through_normalize(raw, combined, {"q": "q"})


def _case_quality_weighted_triplet(rng):
    # weights come from detached norm statistics
    y = _labels(rng, 4, 3)
    e = rng.normal(size=(12, 6)) * rng.uniform(0.5, 2.0, size=(12, 1))
    if not _triplet_smooth(e, y, 0.3):
        return None
    z = quality_scores(e)
    if np.min(np.abs(np.abs(z) - 1.0)) < KINK_MARGIN:
        return None
    x = {"embeddings": e}
    f = lambda: quality_weighted(batch_hard_triplet, z, 0.8, x["embeddings"], y, 0.3)
    return x, lambda: f().value, lambda: f().grads


def _case_dnet(rng):
    x = {"source_scores": rng.random(7), "target_scores": rng.random(5)}
    f = lambda: dnet_loss(x["source_scores"], x["target_scores"])
    return x, lambda: f().value, lambda: f().grads


def _case_dim(rng):
    x = {"source_scores": rng.random(6), "target_scores": rng.random(8)}
    f = lambda: dim_loss(x["source_scores"], x["target_scores"])
    return x, lambda: f().value, lambda: f().grads


def _case_dnet_scorer(rng):
    # dnet_loss composed with the sigmoid scorer, w.r.t. features and scorer params
    x = {"source": rng.normal(size=(6, 4)), "target": rng.normal(size=(5, 4)),
         "weight": rng.normal(size=4), "bias": np.array([rng.normal()])}

    def forward():
        s = dnet_forward(x["source"], x["weight"], x["bias"][0])
        t = dnet_forward(x["target"], x["weight"], x["bias"][0])
        return dnet_loss(s, t)

    def grads():
        out = forward()
        gs = dnet_backward(x["source"], x["weight"], x["bias"][0], out.grads["source_scores"])
        gt = dnet_backward(x["target"], x["weight"], x["bias"][0], out.grads["target_scores"])
        return {"source": gs["embeddings"], "target": gt["embeddings"],
                "weight": gs["weight"] + gt["weight"],
                "bias": np.array([gs["bias"] + gt["bias"]])}
    return x, lambda: forward().value, grads


def _case_part_pool(rng):
    pf = rng.normal(size=(5, 3, 4))
    # max pooling is kinked at ties across parts
    top = -np.sort(-pf, axis=1)
    if np.min(top[:, 0] - top[:, 1]) < KINK_MARGIN:
        return None
    cg, cl = rng.normal(size=(5, 4)), rng.normal(size=(5, 12))
    x = {"parts": pf}

    def value():
        g, loc = part_pool(x["parts"], "gmp")
        return float(np.sum(g * cg) + np.sum(loc * cl))
    return x, value, lambda: {"parts": part_pool_backward(x["parts"], "gmp", cg, cl)}


def _case_eir(rng):
    n, m, d = 4, 6, 5
    tokens = rng.normal(size=(n, m, d))
    att = rng.random(size=(n, m))
    proj = rng.normal(size=(d, d))
    fused, cache = eir_fuse(tokens, att, 0.5, rng.normal(size=(n, d)), proj, return_cache=True)
    projected = cache["unit"] @ proj
    top = -np.sort(-projected, axis=1)
    if np.min(top[:, 0] - top[:, 1]) < KINK_MARGIN:
        return None
    c = rng.normal(size=fused.shape)
    x = {"tokens": tokens, "global": rng.normal(size=(n, d)), "projection": proj}

    def value():
        return float(np.sum(eir_fuse(x["tokens"], att, 0.5, x["global"], x["projection"]) * c))

    def grads():
        _, cache = eir_fuse(x["tokens"], att, 0.5, x["global"], x["projection"],
                            return_cache=True)
        return eir_fuse_backward(cache, c)
    return x, value, grads


CASES = {
    "cross_entropy": _case_cross_entropy,
    "soft_cross_entropy": _case_soft_cross_entropy,
    "identity_two_branch": _case_identity_two_branch,
    "kl_distill": _case_kl,
    "batch_hard_triplet": _case_batch_hard,
    "center_loss": _case_center,
    "centroid_triplet": _case_centroid_triplet,
    "soft_triplet_distill": _case_soft_triplet,
    "supcon": _case_supcon,
    "ssl_contrastive": _case_ssl,
    "cluster_nce": _case_cluster_nce,
    "cap_loss": _case_cap,
    "vitc_total": _case_vitc_total,
    "quality_weighted_triplet": _case_quality_weighted_triplet,
    "dnet_loss": _case_dnet,
    "dim_loss": _case_dim,
    "dnet_scorer": _case_dnet_scorer,
    "part_pool": _case_part_pool,
    "eir_fuse": _case_eir,
}


def check_case(name, instances=20, seed=0, max_redraws=1000):
    build = CASES[name]
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    worst, redraws, done = 0.0, 0, 0
    t0 = time.perf_counter()
    while done < instances:
        case = build(rng)
        if case is None:
            redraws += 1
            if redraws > max_redraws:
                raise RuntimeError(f"{name}: could not draw a smooth instance")
            continue
        inputs, value, grads = case
        analytic = grads()
        for key, arr in inputs.items():
            num = numeric_grad(value, arr)
            worst = max(worst, relative_error(np.asarray(analytic[key]).reshape(num.shape), num))
        done += 1
    return CaseResult(name, instances, redraws, worst, time.perf_counter() - t0)


def run_all(instances=20, seed=0, names=None):
    return [check_case(n, instances, seed) for n in (names or CASES)]

