from .base import LossOutput, weighted_sum
from .classification import cross_entropy, identity_two_branch, kl_distill, soft_cross_entropy
from .combine import scm_total, usl_total, vitc_total
from .contrastive import cap_loss, cluster_nce, ssl_contrastive, supcon
from .domain import (dim_loss, dnet_backward, dnet_forward, dnet_loss, quality_scores,
                     quality_weighted, quality_weights)
from .triplet import (CenterTable, batch_hard_triplet, center_loss, center_sgd_step,
                      centroid_triplet, mine_batch_hard, soft_triplet_distill)

__all__ = [
    "LossOutput", "weighted_sum",
    "cross_entropy", "soft_cross_entropy", "identity_two_branch", "kl_distill",
    "batch_hard_triplet", "mine_batch_hard", "center_loss", "center_sgd_step",
    "CenterTable", "centroid_triplet", "soft_triplet_distill",
    "supcon", "ssl_contrastive", "cluster_nce", "cap_loss",
    "quality_scores", "quality_weights", "quality_weighted",
    "dnet_forward", "dnet_backward", "dnet_loss", "dim_loss",
    "scm_total", "usl_total", "vitc_total",
]
