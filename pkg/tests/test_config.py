import json

import pytest

from reidlab.config import (ClusterConfig, LossConfig, RerankConfig, RunConfig, load_run_config,
                            run_config_from_dict)


def test_defaults():
    cfg = RunConfig()
    assert cfg.loss.margin == 0.3 and cfg.loss.tau_supcon == 0.1
    assert (cfg.cluster.eps, cfg.cluster.min_pts, cfg.cluster.alpha) == (0.6, 8, 0.5)
    assert (cfg.rerank.k1, cfg.rerank.k2, cfg.rerank.lambda_value) == (20, 6, 0.3)
    assert cfg.ema_weight == 0.99 and cfg.memory_momentum == 0.2
    assert not cfg.cluster.use_jaccard


def test_file_and_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"epochs": 3, "loss": {"margin": 0.5}}))
    cfg = load_run_config(path, {"cluster.eps": 0.4, "loss.lambda_sup": 0.0})
    assert cfg.epochs == 3 and cfg.loss.margin == 0.5
    assert cfg.cluster.eps == 0.4 and cfg.loss.lambda_sup == 0.0
    assert isinstance(cfg.loss, LossConfig) and isinstance(cfg.cluster, ClusterConfig)


def test_roundtrip_dict():
    cfg = load_run_config(None, {"seed": 4, "rerank.k1": 10})
    again = load_run_config(None, None)
    assert again != cfg
    assert run_config_from_dict(cfg.to_dict()) == cfg


def test_unknown_key():
    with pytest.raises(KeyError):
        load_run_config(None, {"loss.bogus": 1})


@pytest.mark.parametrize("build", [
    lambda: LossConfig(tau_nce=0.0),
    lambda: LossConfig(w1=1.5),
    lambda: LossConfig(margin=-1),
    lambda: ClusterConfig(eps=0),
    lambda: ClusterConfig(min_pts=0),
    lambda: RerankConfig(k1=3, k2=6),
    lambda: RunConfig(epochs=0),
    lambda: RunConfig(lr=-0.1),
])
def test_validation(build):
    with pytest.raises(ValueError):
        build()
