"""Momentum-updated cluster and camera-proxy memories, and the EMA teacher."""

from dataclasses import dataclass, field

import numpy as np

from .embeddings import as_embeddings, l2_normalize
from .errors import ClusterOutOfRange, NoClusters, ShapeMismatch, UnknownProxy


def _momentum_step(row, q, m):
    return m * row + (1.0 - m) * q


def _renorm(v):
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else v


@dataclass
class MemoryBank:
    """``K x D`` cluster centroids updated by ``c <- m c + (1 - m) q``."""

    centroids: np.ndarray
    momentum: float = 0.2
    normalized: bool = True

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")

    def __len__(self):
        return self.centroids.shape[0]

    def update(self, q, cluster_id):
        k = int(cluster_id)
        if not 0 <= k < len(self):
            raise ClusterOutOfRange(f"cluster {k} not in [0, {len(self)})")
        row = _momentum_step(self.centroids[k], np.asarray(q, dtype=np.float64), self.momentum)
        self.centroids[k] = _renorm(row) if self.normalized else row
        return self

    def update_batch(self, qs, cluster_ids):
        """Sequential per-sample updates in batch order."""
        for q, k in zip(as_embeddings(qs), np.asarray(cluster_ids).reshape(-1)):
            self.update(q, k)
        return self


def init_memory(centroids, momentum=0.2, normalize=True):
    """Fresh bank from a :class:`~reidlab.pseudo_labels.CentroidSet` or array."""
    rows = as_embeddings(getattr(centroids, "centroids", centroids)).copy()
    if rows.shape[0] == 0:
        raise NoClusters("cannot build a memory bank without clusters")
    if normalize:
        rows = l2_normalize(rows)
    return MemoryBank(rows, momentum, normalize)


def memory_update(bank, q, cluster_id):
    return bank.update(q, cluster_id)


@dataclass
class CameraProxyBank:
    """Per-(cluster, camera) centroids.

    ``proxies`` is ``P x D``; ``proxy_cluster`` and ``proxy_camera`` label each
    row, ``index`` maps ``(cluster, camera)`` to the row and ``counts`` holds
    the member count each proxy was built from.
    """

    proxies: np.ndarray
    proxy_cluster: np.ndarray
    proxy_camera: np.ndarray
    counts: np.ndarray
    momentum: float = 0.2
    normalized: bool = False
    index: dict = field(default=None)

    def __post_init__(self):
        self.proxy_cluster = np.asarray(self.proxy_cluster, dtype=np.int64)
        self.proxy_camera = np.asarray(self.proxy_camera, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.index is None:
            self.index = {(int(a), int(b)): i for i, (a, b)
                          in enumerate(zip(self.proxy_cluster, self.proxy_camera))}

    def __len__(self):
        return self.proxies.shape[0]

    @property
    def num_clusters(self):
        return int(self.proxy_cluster.max()) + 1 if len(self) else 0

    def cluster_proxies(self, cluster_id):
        return np.flatnonzero(self.proxy_cluster == cluster_id)

    def normalize(self, momentum=None):
        """Copy with unit-norm proxies (the form the CAP loss consumes)."""
        return CameraProxyBank(l2_normalize(self.proxies), self.proxy_cluster.copy(),
                               self.proxy_camera.copy(), self.counts.copy(),
                               self.momentum if momentum is None else momentum, True)

    def update(self, q, cluster_id, camera_id):
        key = (int(cluster_id), int(camera_id))
        if key not in self.index:
            raise UnknownProxy(f"no proxy for cluster {key[0]}, camera {key[1]}")
        i = self.index[key]
        row = _momentum_step(self.proxies[i], np.asarray(q, dtype=np.float64), self.momentum)
        self.proxies[i] = _renorm(row) if self.normalized else row
        return self


def proxy_update(bank, q, cluster_id, camera_id):
    return bank.update(q, cluster_id, camera_id)


@dataclass
class TeacherState:
    """Flat parameter vector of the EMA teacher."""

    params: np.ndarray
    weight: float = 0.99

    def __post_init__(self):
        self.params = np.array(self.params, dtype=np.float64).reshape(-1)
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("EMA weight must lie in [0, 1]")


def teacher_update(t, student):
    """``theta' <- w theta' + (1 - w) theta``; returns a new state."""
    student = np.asarray(student, dtype=np.float64).reshape(-1)
    if student.shape != t.params.shape:
        raise ShapeMismatch(f"student has {student.size} params, teacher {t.params.size}")
    return TeacherState(t.weight * t.params + (1.0 - t.weight) * student, t.weight)
