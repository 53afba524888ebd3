"""Pseudo-labels: DBSCAN, silhouette filtering, soft refinement, camera proxies."""

import numpy as np

from reidlab import (camera_subclusters, clustering_ari, confident_centroids, dbscan, refine_labels,
                     silhouette, soft_assignment_matrix)
from reidlab.embeddings import pairwise_distances

rng = np.random.default_rng(0)
truth = np.repeat(np.arange(3), 20)
cams = np.tile([0, 1], 30)
x = np.array([[0, 0], [4, 0], [0, 4]])[truth] + 0.5 * rng.normal(size=(60, 2))

labels = dbscan(x, eps=0.8, min_pts=5)
print("clusters", labels.max() + 1, "noise", int(np.sum(labels == -1)))
print("ARI", round(clustering_ari(labels, truth), 3))

# members with negative silhouette do not move the centroids
s = silhouette(pairwise_distances(x), labels)
cents = confident_centroids(x, labels, s, 0.0)
print("centroids\n", cents.centroids.round(2))

# blend one-hot labels with a softmax over centroid distances
ok = labels >= 0
g = soft_assignment_matrix(x[ok], cents, tau=0.5)
soft = refine_labels(labels[ok], g, alpha=0.5)
print("row sums", soft.sum(axis=1)[:5])

# one proxy per (cluster, camera)
bank = camera_subclusters(x, labels, cams)
print(list(zip(bank.proxy_cluster.tolist(), bank.proxy_camera.tolist(), bank.counts.tolist())))
