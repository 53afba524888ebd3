import numpy as np
import pytest
from oracles import brute_retrieval

from reidlab.embeddings import SampleMeta, pairwise_distances
from reidlab.errors import EmptyGallery, InsufficientSamples, NoEvaluableQueries, NoRelevant
from reidlab.evaluation import (average_precision, cmc_curve, format_metrics, jaccard_from_sets,
                                jaccard_matrix, mean_ap, rank_from_distances, rank_gallery,
                                reciprocal_sets, rerank, rerank_final, summarize)


def random_retrieval(rng, nq, ng, ids=5, cams=3):
    q = SampleMeta(rng.integers(0, ids, nq), rng.integers(0, cams, nq))
    g = SampleMeta(rng.integers(0, ids, ng), rng.integers(0, cams, ng))
    # quantized distances force ties
    dist = np.round(rng.random((nq, ng)) * 20) / 20
    return dist, q, g


def test_ap_hand_case():
    assert average_precision([1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)


def test_ap_all_relevant_first():
    assert average_precision([1, 1, 0, 0]) == 1.0


def test_ap_counts_missing_relevant():
    assert average_precision([1, 0], num_relevant=2) == 0.5
    with pytest.raises(NoRelevant):
        average_precision([0, 0])


def test_cmc_first_hit_rank_two():
    q = SampleMeta([0], [0])
    g = SampleMeta([1, 0, 0], [1, 1, 1])
    r = rank_from_distances([[0.1, 0.2, 0.3]], q, g)
    np.testing.assert_array_equal(cmc_curve(r, 3), [0.0, 1.0, 1.0])


def test_same_camera_matches_removed():
    q = SampleMeta([0], [0])
    g = SampleMeta([0, 0, 1], [0, 1, 1])
    r = rank_from_distances([[0.0, 0.5, 0.2]], q, g)
    np.testing.assert_array_equal(r.orders[0], [2, 1])
    assert summarize(r)["rank1"] == 0.0
    raw = rank_from_distances([[0.0, 0.5, 0.2]], q, g, cross_camera=False)
    assert summarize(raw)["rank1"] == 1.0


def test_queries_without_match_excluded():
    q = SampleMeta([0, 7], [0, 0])
    g = SampleMeta([0, 1], [1, 1])
    s = summarize(rank_from_distances([[0.1, 0.2], [0.1, 0.2]], q, g))
    assert s["num_queries"] == 1 and s["num_excluded"] == 1 and s["mAP"] == 1.0


def test_no_evaluable_queries():
    r = rank_from_distances([[0.1]], SampleMeta([0], [0]), SampleMeta([1], [0]))
    with pytest.raises(NoEvaluableQueries):
        mean_ap(r)


def test_empty_gallery():
    with pytest.raises(EmptyGallery):
        rank_gallery(np.zeros((1, 2)), SampleMeta([0], [0]), np.zeros((0, 2)), SampleMeta([], []))


def test_ties_break_by_gallery_index():
    g = SampleMeta([1, 0, 1], [1, 1, 1])
    r = rank_from_distances([[0.5, 0.5, 0.5]], SampleMeta([0], [0]), g)
    np.testing.assert_array_equal(r.orders[0], [0, 1, 2])


def test_metrics_match_brute_force_oracle():
    rng = np.random.default_rng(0)
    for trial in range(30):
        nq, ng = (200, 200) if trial == 0 else rng.integers(1, 201, 2)
        dist, q, g = random_retrieval(rng, nq, ng)
        r = rank_from_distances(dist, q, g)
        if not r.evaluable.any():
            continue
        m, cmc = brute_retrieval(dist.tolist(), q.labels.tolist(), q.cameras.tolist(),
                                 g.labels.tolist(), g.cameras.tolist(), 10)
        assert abs(mean_ap(r) - m) < 1e-12
        assert np.max(np.abs(cmc_curve(r, 10) - cmc)) < 1e-12


def test_format_metrics():
    text = format_metrics({"mAP": 0.5, "num_queries": 3})
    assert text == "mAP\t0.500000\nnum_queries\t3"


# --- re-ranking ---------------------------------------------------------------

def test_hard_jaccard_hand_values():
    d = jaccard_from_sets([[0, 1], [0], [0, 1, 2]], [[0, 1], [1], [0]])
    assert d[0, 0] == 0.0
    assert d[1, 1] == 1.0
    assert d[2, 2] == pytest.approx(2 / 3, abs=1e-15)


def test_reciprocal_sets_contain_self():
    x = np.random.default_rng(1).normal(size=(30, 4))
    sets, _ = reciprocal_sets(pairwise_distances(x, metric="sqeuclidean"), 5)
    assert all(i in s for i, s in enumerate(sets))


def test_reciprocal_sets_need_samples():
    with pytest.raises(InsufficientSamples):
        reciprocal_sets(np.zeros((5, 5)), 5)


@pytest.mark.parametrize("mode", ["fuzzy", "hard"])
def test_jaccard_matrix_range(mode):
    x = np.random.default_rng(2).normal(size=(40, 4))
    j = jaccard_matrix(x, 10, 3, mode)
    assert np.all((j >= 0) & (j <= 1)) and np.all(np.diag(j) == 0)
    np.testing.assert_allclose(j, j.T, atol=1e-12)


def test_rerank_lambda_one_is_euclidean():
    rng = np.random.default_rng(3)
    for _ in range(10):
        q, g = rng.normal(size=(8, 4)), rng.normal(size=(30, 4))
        d = rerank(q, g, 10, 3, 1.0)
        np.testing.assert_array_equal(np.argsort(d, axis=1, kind="stable"),
                                      np.argsort(pairwise_distances(q, g), axis=1, kind="stable"))


def test_rerank_lambda_zero_is_jaccard():
    rng = np.random.default_rng(4)
    q, g = rng.normal(size=(8, 4)), rng.normal(size=(30, 4))
    j = jaccard_matrix(np.vstack([q, g]), 10, 3)[:8, 8:]
    np.testing.assert_array_equal(rerank(q, g, 10, 3, 0.0), j)


def test_rerank_final_formula():
    dj, de = np.array([[0.2, 0.9]]), np.array([[1.0, 0.0]])
    np.testing.assert_allclose(rerank_final(dj, de, 0.3), [[0.44, 0.63]])
    with pytest.raises(ValueError):
        rerank_final(dj, de, 1.5)


def test_rerank_helps_on_clustered_gallery():
    rng = np.random.default_rng(5)
    centers = rng.normal(size=(6, 8)) * 2
    gy = np.repeat(np.arange(6), 6)
    g = centers[gy] + 0.6 * rng.normal(size=(36, 8))
    qy = np.arange(6)
    q = centers[qy] + 0.6 * rng.normal(size=(6, 8))
    qm, gm = SampleMeta(qy, np.zeros(6)), SampleMeta(gy, np.ones(36))
    base = mean_ap(rank_from_distances(pairwise_distances(q, g), qm, gm))
    rr = mean_ap(rank_from_distances(rerank(q, g, 6, 3, 0.3), qm, gm))
    assert rr >= base - 0.05
