"""Weighted objectives of the three training pipelines."""

from ..config import LossConfig
from .base import LossOutput, weighted_sum


def scm_total(parts, cfg=None):
    """``ce + l_tri*tri + l_ct*ct + l_ctl*ctl + l_sup*sup``.

    ``parts`` maps component names (``ce``, ``tri``, ``ct``, ``ctl``, ``sup``)
    to LossOutputs; missing components count as zero.
    """
    cfg = cfg or LossConfig()
    weights = {"ce": 1.0, "tri": cfg.lambda_tri, "ct": cfg.lambda_ct,
               "ctl": cfg.lambda_ctl, "sup": cfg.lambda_sup}
    unknown = set(parts) - set(weights)
    if unknown:
        raise KeyError(f"unknown loss components {sorted(unknown)}")
    return weighted_sum([(weights[k], parts[k]) for k in weights if k in parts])


def usl_total(id_loss, kl, tri, stri, cfg=None):
    """Teacher-student objective ``(1-w1) id + w1 kl + (1-w2) tri + w2 stri``."""
    cfg = cfg or LossConfig()
    return weighted_sum([(1.0 - cfg.w1, id_loss), (cfg.w1, kl),
                         (1.0 - cfg.w2, tri), (cfg.w2, stri)])


def vitc_total(nce, cap, cfg=None):
    """``nce + lambda_cap * cap``."""
    cfg = cfg or LossConfig()
    return weighted_sum([(1.0, nce), (cfg.lambda_cap, cap)])


def zero_loss():
    return LossOutput(0.0, {})
