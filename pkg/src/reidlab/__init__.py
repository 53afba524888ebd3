"""Person re-identification losses, pseudo-labeling, memories and evaluation
on embedding vectors, with toy trainers over synthetic data."""

from .config import ClusterConfig, LossConfig, RerankConfig, RunConfig, load_run_config
from .embeddings import (UNKNOWN, PKBatch, SampleMeta, eir_fuse, embed_augment, l2_normalize,
                         pairwise_distances, part_pool, pk_sample)
from .evaluation import (average_precision, cmc_curve, evaluate, jaccard_distance, mean_ap,
                         rank_from_distances, rank_gallery, rerank, rerank_final, summarize)
from .io import read_csv, read_embeddings, write_embeddings
from .memory import (CameraProxyBank, MemoryBank, TeacherState, init_memory, memory_update,
                     proxy_update, teacher_update)
from .pseudo_labels import (NOISE, camera_subclusters, centroids, clustering_ari,
                            confident_centroids, dbscan, refine_labels, silhouette,
                            soft_assignment_matrix)
from .synthetic import preset, synth_dataset, synth_two_domain

__version__ = "0.1.0"
