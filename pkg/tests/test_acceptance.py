"""Acceptance checks, one per criterion.

Each check returns ``(passed, detail)``. Under pytest every criterion is its
own test and prints a ``criterion N: PASS|FAIL detail`` line; run the file
directly to get just the nine lines.
"""

import json
import sys
import time

import numpy as np
from oracles import brute_retrieval, canonical, naive_dbscan

from reidlab import gradcheck as gc
from reidlab.cli import main as cli_main
from reidlab.config import ClusterConfig, RunConfig
from reidlab.embeddings import SampleMeta, l2_normalize, pairwise_distances
from reidlab.evaluation import (average_precision, cmc_curve, jaccard_from_sets, jaccard_matrix,
                                mean_ap, rank_from_distances, rerank)
from reidlab.io import decode_embeddings, encode_embeddings
from reidlab.memory import TeacherState, teacher_update
from reidlab.pipelines.scm import train_scm
from reidlab.pipelines.vitc import train_vitc
from reidlab.pseudo_labels import (camera_subclusters, centroids, dbscan, refine_labels,
                                   silhouette)
from reidlab.synthetic import preset, split_samples, synth_dataset


def criterion_1():
    start = time.perf_counter()
    results = gc.run_all(instances=20, seed=0)
    seconds = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_error)
    ok = all(r.passed and r.instances >= 20 for r in results) and seconds < 30
    return ok, (f"{len(results)} losses x 20 instances, worst {worst.name} "
                f"{worst.max_error:.1e} (< 1e-4), {seconds:.1f}s (< 30s)")


def criterion_2():
    hand_ap = abs(average_precision([1, 0, 1]) - 5 / 6) < 1e-12
    r = rank_from_distances([[0.1, 0.2, 0.3]], SampleMeta([0], [0]), SampleMeta([1, 0, 0], [1, 1, 1]))
    hand_cmc = np.array_equal(cmc_curve(r, 3), [0.0, 1.0, 1.0])
    rng = np.random.default_rng(0)
    worst, checked = 0.0, 0
    while checked < 30:
        nq, ng = (200, 200) if checked == 0 else rng.integers(1, 201, 2)
        q = SampleMeta(rng.integers(0, 5, nq), rng.integers(0, 3, nq))
        g = SampleMeta(rng.integers(0, 5, ng), rng.integers(0, 3, ng))
        dist = np.round(rng.random((nq, ng)) * 20) / 20
        r = rank_from_distances(dist, q, g)
        if not r.evaluable.any():
            continue
        m, cmc = brute_retrieval(dist.tolist(), q.labels.tolist(), q.cameras.tolist(),
                                 g.labels.tolist(), g.cameras.tolist(), 20)
        worst = max(worst, abs(mean_ap(r) - m), float(np.max(np.abs(cmc_curve(r, 20) - cmc))))
        checked += 1
    ok = hand_ap and hand_cmc and worst < 1e-12
    return ok, f"{checked} instances up to 200x200, max diff {worst:.1e}, hand cases {hand_ap and hand_cmc}"


def criterion_3():
    rng = np.random.default_rng(0)
    same_euclid = same_jaccard = True
    for _ in range(20):
        nq, ng = rng.integers(2, 15), rng.integers(20, 60)
        q, g = rng.normal(size=(nq, 6)), rng.normal(size=(ng, 6))
        base = np.argsort(pairwise_distances(q, g), axis=1, kind="stable")
        same_euclid &= np.array_equal(np.argsort(rerank(q, g, 10, 4, 1.0), axis=1, kind="stable"), base)
        jac = jaccard_matrix(np.vstack([q, g]), 10, 4)[:nq, nq:]
        same_jaccard &= np.array_equal(np.argsort(rerank(q, g, 10, 4, 0.0), axis=1, kind="stable"),
                                       np.argsort(jac, axis=1, kind="stable"))
    d = jaccard_from_sets([[0, 1], [0], [0, 1, 2]], [[0, 1], [1], [0]])
    hand = d[0, 0] == 0.0 and d[1, 1] == 1.0 and abs(d[2, 2] - 2 / 3) < 1e-15
    ok = bool(same_euclid and same_jaccard and hand)
    return ok, (f"lambda=1 euclidean order {bool(same_euclid)}, lambda=0 jaccard order "
                f"{bool(same_jaccard)}, hand values 0, 1, 2/3 {hand}")


def criterion_4():
    rng = np.random.default_rng(0)
    matches = 0
    for _ in range(50):
        n = int(rng.integers(5, 501))
        k = rng.integers(1, 6)
        centers = rng.uniform(-5, 5, size=(k, 2))
        pts = centers[rng.integers(0, k, n)] + rng.normal(0, rng.uniform(0.2, 1.0), size=(n, 2))
        pts = np.where(rng.random((n, 1)) < 0.2, rng.uniform(-7, 7, size=(n, 2)), pts)
        eps, min_pts = float(rng.uniform(0.2, 1.5)), int(rng.integers(2, 12))
        matches += canonical(dbscan(pts, eps, min_pts)) == canonical(naive_dbscan(pts.tolist(), eps, min_pts))

    in_range = True
    for _ in range(20):
        x = rng.normal(size=(40, 3))
        a = rng.integers(-1, 4, 40)
        a[:4] = [0, 0, 1, 1]
        s = silhouette(pairwise_distances(x), a)
        in_range &= bool(np.all(np.abs(s[~np.isnan(s)]) <= 1.0))

    # two unit-variance 2-D blobs with centers 10 sigma apart
    y = np.repeat([0, 1], 300)
    x = np.stack([10.0 * y, np.zeros(600)], axis=1) + rng.normal(size=(600, 2))
    blob_mean = float(np.nanmean(silhouette(pairwise_distances(x), y)))
    ok = matches == 50 and in_range and blob_mean > 0.9
    return ok, (f"dbscan = naive reference on {matches}/50, silhouette in [-1,1] {in_range}, "
                f"10-sigma blob mean {blob_mean:.3f} (needs > 0.9)")


def criterion_5():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n, k = rng.integers(1, 20), rng.integers(1, 10)
        g = rng.random((n, k)) ** rng.uniform(0.1, 5)
        g /= g.sum(axis=1, keepdims=True)
        y = refine_labels(rng.integers(0, k, n), g, float(rng.random()))
        worst = max(worst, float(np.max(np.abs(y.sum(axis=1) - 1.0))))
    g = np.array([[0.7, 0.3], [0.2, 0.8]])
    ends = (np.array_equal(refine_labels([0, 1], g, 0.0), np.eye(2))
            and np.array_equal(refine_labels([0, 1], g, 1.0), g))
    conservation = 0.0
    for _ in range(20):
        e = rng.normal(size=(80, 6))
        a, cams = rng.integers(-1, 5, 80), rng.integers(0, 4, 80)
        a[:5] = np.arange(5)
        bank, cents = camera_subclusters(e, a, cams), centroids(e, a)
        for c in range(len(cents)):
            rows = bank.cluster_proxies(c)
            mass = (bank.counts[rows, None] * bank.proxies[rows]).sum(axis=0)
            conservation = max(conservation, float(np.max(np.abs(mass - cents.counts[c] * cents.centroids[c]))))
    ok = worst < 1e-9 and ends and conservation < 1e-9
    return ok, (f"row-sum error {worst:.1e} over 1000 draws, endpoints exact {ends}, "
                f"conservation error {conservation:.1e}")


def criterion_6():
    w, theta0, student = 0.99, np.array([2.0, -1.0, 0.5, 3.0]), np.array([0.3, 0.3, -0.7, 0.0])
    t, worst = TeacherState(theta0, w), 0.0
    for step in range(1, 1001):
        t = teacher_update(t, student)
        worst = max(worst, float(np.max(np.abs(t.params - (student + w ** step * (theta0 - student))))))
    return worst < 1e-10, f"max deviation from geometric law {worst:.1e} over 1000 steps at w=0.99"


def criterion_7():
    data = synth_dataset(preset("easy"))
    train, test = split_samples(data, 0.5, np.random.default_rng(0))
    start = time.perf_counter()
    _, _, log = train_scm(train, RunConfig(epochs=50, batch_p=8, batch_k=4), test=test)
    seconds = time.perf_counter() - start
    evals = log.of("eval")
    base, final = evals[0]["rank1"], evals[-1]["rank1"]
    ok = final >= 0.95 and final > base and seconds < 60
    return ok, f"held-out rank1 {base:.3f} -> {final:.3f} in 50 epochs, {seconds:.1f}s"


def criterion_8():
    data = synth_dataset(preset("camera"))
    cfg = RunConfig(epochs=20, cluster=ClusterConfig(eps=0.5, min_pts=8))
    _, cap = train_vitc(data, cfg, lambda_cap=0.7)
    _, nocap = train_vitc(data, cfg, lambda_cap=0.0)
    c = cap.of("cluster")
    r_cap, r_nocap = cap.of("eval")[-1]["rank1"], nocap.of("eval")[-1]["rank1"]
    ok = c[-1]["ari"] > c[0]["ari"] and c[-1]["ari"] >= 0.8 and r_cap >= r_nocap
    return ok, (f"ARI {c[0]['ari']:.3f} -> {c[-1]['ari']:.3f}, cross-camera rank1 "
                f"{r_cap:.3f} (cap 0.7) vs {r_nocap:.3f} (cap 0)")


def _quiet_cli(argv):
    import contextlib
    import io
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli_main([str(a) for a in argv])
    return code, out.getvalue()


def criterion_9(tmp_dir=None):
    import tempfile
    with tempfile.TemporaryDirectory(dir=tmp_dir) as tmp:
        same = {}
        for name, argv in (("scm", ["train-scm", "--epochs", 5]),
                           ("daprh", ["train-daprh", "--epochs", 3, "--jaccard"]),
                           ("vitc", ["train-vitc", "--epochs", 5, "--eps", 0.5])):
            runs = []
            for rep in range(2):
                log, met = f"{tmp}/{name}{rep}.jsonl", f"{tmp}/{name}{rep}.json"
                code, out = _quiet_cli([*argv, "--seed", 7, "--log", log, "--metrics", met, "--quiet"])
                with open(log, "rb") as a, open(met, "rb") as b:
                    runs.append((code, out, a.read(), b.read()))
            same[name] = runs[0] == runs[1] and runs[0][0] == 0
        code, out = _quiet_cli(["io-roundtrip", "--count", 100, "--quiet"])
    rng = np.random.default_rng(0)
    empty = encode_embeddings(np.zeros((0, 5)), SampleMeta([], []))
    v, m, _ = decode_embeddings(empty)
    n0 = v.shape == (0, 5) and encode_embeddings(v, m) == empty
    e = l2_normalize(rng.normal(size=(9, 3)))
    buf = encode_embeddings(e, SampleMeta(np.arange(9) - 1, np.arange(9)), True)
    exact = encode_embeddings(*decode_embeddings(buf)) == buf
    ok = all(same.values()) and code == 0 and json.loads(out)["passed"] and n0 and exact
    return ok, (f"identical reruns {same}, 100-file round trip {json.loads(out)['passed']}, "
                f"N=0 file {n0}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


def _line(i, ok, detail):
    return f"criterion {i}: {'PASS' if ok else 'FAIL'}  {detail}"


def _check(i, capsys):
    ok, detail = CRITERIA[i - 1]()
    with capsys.disabled():
        print("\n" + _line(i, ok, detail))
    assert ok, detail


def test_criterion_1_gradients(capsys):
    _check(1, capsys)


def test_criterion_2_metric_oracle(capsys):
    _check(2, capsys)


def test_criterion_3_rerank_reductions(capsys):
    _check(3, capsys)


def test_criterion_4_clustering_oracle(capsys):
    _check(4, capsys)


def test_criterion_5_refinement_algebra(capsys):
    _check(5, capsys)


def test_criterion_6_ema_law(capsys):
    _check(6, capsys)


def test_criterion_7_scm_end_to_end(capsys):
    _check(7, capsys)


def test_criterion_8_vitc_end_to_end(capsys):
    _check(8, capsys)


def test_criterion_9_determinism(capsys):
    _check(9, capsys)


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, start=1):
        ok, detail = fn()
        failed += not ok
        print(_line(i, ok, detail), flush=True)
    sys.exit(1 if failed else 0)
