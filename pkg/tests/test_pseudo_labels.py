import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import canonical, naive_dbscan

from reidlab.errors import AlphaOutOfRange, FewerThanTwoClusters, NoClusters
from reidlab.pseudo_labels import (NOISE, camera_subclusters, centroids, clustering_ari,
                                   confident_centroids, dbscan, noise_as_singletons,
                                   refine_labels, silhouette, soft_assignment_matrix)
from reidlab.embeddings import pairwise_distances


def random_2d(rng, n):
    k = rng.integers(1, 6)
    centers = rng.uniform(-5, 5, size=(k, 2))
    blobs = centers[rng.integers(0, k, n)] + rng.normal(0, rng.uniform(0.2, 1.0), size=(n, 2))
    scatter = rng.uniform(-7, 7, size=(n, 2))
    return np.where(rng.random((n, 1)) < 0.2, scatter, blobs)


def test_dbscan_matches_naive_reference():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(5, 501))
        pts = random_2d(rng, n)
        eps, min_pts = float(rng.uniform(0.2, 1.5)), int(rng.integers(2, 12))
        ours = dbscan(pts, eps, min_pts)
        assert canonical(ours) == canonical(naive_dbscan(pts.tolist(), eps, min_pts))


def test_dbscan_two_groups_and_noise():
    pts = np.array([[0, 0], [0, 0.1], [0.1, 0], [5, 5], [5, 5.1], [5.1, 5], [20, 20]], dtype=float)
    np.testing.assert_array_equal(dbscan(pts, 0.5, 3), [0, 0, 0, 1, 1, 1, NOISE])


def test_dbscan_all_noise_when_sparse():
    pts = np.arange(10, dtype=float)[:, None] * 10
    assert np.all(dbscan(pts, 1.0, 2) == NOISE)


def test_dbscan_precomputed_distance():
    pts = np.random.default_rng(1).normal(size=(40, 3))
    d = pairwise_distances(pts)
    np.testing.assert_array_equal(dbscan(dist=d, eps=0.8, min_pts=4), dbscan(pts, 0.8, 4))


def test_noise_as_singletons():
    np.testing.assert_array_equal(noise_as_singletons([0, -1, 1, -1]), [0, 2, 1, 3])


def test_ari_perfect_and_relabel():
    truth = np.repeat([0, 1, 2], 4)
    assert clustering_ari(truth, truth) == 1.0
    assert clustering_ari((truth + 1) % 3, truth) == 1.0


def test_silhouette_hand_values():
    # point 0: a = 1, b = mean(4, 5) = 4.5
    x = np.array([[0.0], [1.0], [4.0], [5.0]])
    s = silhouette(pairwise_distances(x), [0, 0, 1, 1])
    np.testing.assert_allclose(s, [(4.5 - 1) / 4.5, (3.5 - 1) / 3.5, (3.5 - 1) / 3.5, (4.5 - 1) / 4.5])


def test_silhouette_noise_and_singleton_are_nan():
    x = np.array([[0.0], [1.0], [4.0], [9.0]])
    s = silhouette(pairwise_distances(x), [0, 0, 1, NOISE])
    assert np.isnan(s[2]) and np.isnan(s[3]) and not np.isnan(s[0])


def test_silhouette_needs_two_clusters():
    with pytest.raises(FewerThanTwoClusters):
        silhouette(np.zeros((3, 3)), [0, 0, NOISE])


def test_silhouette_range_and_separated_blobs():
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=(30, 3))
        a = rng.integers(-1, 4, 30)
        a[:4] = [0, 0, 1, 1]
        s = silhouette(pairwise_distances(x), a)
        s = s[~np.isnan(s)]
        assert np.all((s >= -1) & (s <= 1))
    # two 1-D blobs 10 sigma apart: a ~ 2 sigma / sqrt(pi), b ~ 10 sigma
    y = np.repeat([0, 1], 2000)
    x = (10.0 * y + rng.normal(size=4000))[:, None]
    mean = np.nanmean(silhouette(pairwise_distances(x), y))
    assert abs(mean - (1 - 2 / np.sqrt(np.pi) / 10)) < 0.01
    x = (20.0 * y + rng.normal(size=4000))[:, None]
    assert np.nanmean(silhouette(pairwise_distances(x), y)) > 0.9


def test_centroids_ignore_noise():
    e = np.array([[0.0, 0.0], [2.0, 0.0], [100.0, 100.0], [1.0, 1.0]])
    c = centroids(e, [0, 0, NOISE, 1])
    np.testing.assert_array_equal(c.centroids, [[1.0, 0.0], [1.0, 1.0]])
    np.testing.assert_array_equal(c.counts, [2, 1])
    with pytest.raises(NoClusters):
        centroids(e, [NOISE] * 4)


def test_confident_centroids_drop_low_silhouette():
    e = np.array([[0.0], [1.0], [10.0], [11.0]])
    c = confident_centroids(e, [0, 0, 1, 1], np.array([0.9, -0.5, 0.8, 0.7]), 0.0)
    np.testing.assert_array_equal(c.centroids, [[0.0], [10.5]])
    kept = confident_centroids(e, [0, 0, 1, 1], np.array([-0.9, -0.5, 0.8, 0.7]), 0.0)
    np.testing.assert_array_equal(kept.centroids[0], [0.5])  # emptied cluster keeps its mean
    loose = confident_centroids(e, [0, 0, 1, 1], np.full(4, -0.99), -1.0)
    np.testing.assert_array_equal(loose.centroids, centroids(e, [0, 0, 1, 1]).centroids)


def test_soft_assignment_rows_and_preference():
    e = np.array([[0.0, 0.0], [5.0, 0.0]])
    g = soft_assignment_matrix(e, np.array([[0.0, 0.0], [5.0, 0.0]]), tau=0.1)
    np.testing.assert_allclose(g.sum(axis=1), 1.0, atol=1e-12)
    assert g[0, 0] > 0.99 and g[1, 1] > 0.99
    flipped = soft_assignment_matrix(e, np.array([[0.0, 0.0], [5.0, 0.0]]), 0.1, positive_exponent=True)
    assert flipped[0, 1] > 0.99


def test_refine_endpoints_and_range():
    g = np.array([[0.7, 0.3], [0.2, 0.8]])
    np.testing.assert_array_equal(refine_labels([0, 0], g, 0.0), [[1.0, 0.0], [1.0, 0.0]])
    np.testing.assert_array_equal(refine_labels([0, 0], g, 1.0), g)
    np.testing.assert_allclose(refine_labels([0, 1], g, 0.5), [[0.85, 0.15], [0.1, 0.9]])
    for bad in (-0.1, 1.1):
        with pytest.raises(AlphaOutOfRange):
            refine_labels([0, 1], g, bad)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_refine_stays_on_simplex(seed, alpha):
    rng = np.random.default_rng(seed)
    g = rng.random((6, 4))
    g /= g.sum(axis=1, keepdims=True)
    y = refine_labels(rng.integers(0, 4, 6), g, alpha)
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-9)


def test_camera_proxies_conserve_cluster_mass():
    rng = np.random.default_rng(3)
    e = rng.normal(size=(60, 5))
    a = rng.integers(-1, 4, 60)
    cams = rng.integers(0, 3, 60)
    bank = camera_subclusters(e, a, cams)
    cents = centroids(e, a)
    for k in range(len(cents)):
        rows = bank.cluster_proxies(k)
        mass = (bank.counts[rows, None] * bank.proxies[rows]).sum(axis=0)
        np.testing.assert_allclose(mass, cents.counts[k] * cents.centroids[k], atol=1e-9)
    # ordered by (cluster, camera) with one proxy per non-empty pair
    pairs = list(zip(bank.proxy_cluster, bank.proxy_camera))
    assert pairs == sorted(set(zip(a[a >= 0], cams[a >= 0])))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dbscan_permutation_invariant_on_core_points(seed):
    # border points reachable from two clusters depend on scan order; cores never do
    rng = np.random.default_rng(seed)
    pts = random_2d(rng, int(rng.integers(10, 120)))
    eps, min_pts = 0.8, 4
    perm = rng.permutation(len(pts))
    a, b = dbscan(pts, eps, min_pts), np.empty(len(pts), dtype=np.int64)
    b[perm] = dbscan(pts[perm], eps, min_pts)
    core = (pairwise_distances(pts) <= eps).sum(axis=1) >= min_pts
    pairs = {(int(x), int(y)) for x, y in zip(a[core], b[core])}
    assert len(pairs) == len({x for x, _ in pairs}) == len({y for _, y in pairs})
    np.testing.assert_array_equal(a == NOISE, b == NOISE)


def test_dbscan_permutation_invariant_separated():
    rng = np.random.default_rng(4)
    y = np.repeat(np.arange(4), 15)
    pts = 10 * rng.normal(size=(4, 2))[y] + 0.2 * rng.normal(size=(60, 2))
    perm = rng.permutation(60)
    a = dbscan(pts, 1.0, 4)
    b = np.empty(60, dtype=np.int64)
    b[perm] = dbscan(pts[perm], 1.0, 4)
    assert clustering_ari(a, b) == 1.0
