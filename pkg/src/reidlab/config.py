"""Hyperparameter containers and JSON config loading."""

from dataclasses import asdict, dataclass, field, fields, is_dataclass
import json


@dataclass
class LossConfig:
    margin: float = 0.3
    tau_supcon: float = 0.1
    tau_nce: float = 0.05
    tau_cap: float = 0.07
    lambda_tri: float = 1.0
    lambda_ct: float = 0.0005
    lambda_ctl: float = 1.0
    lambda_sup: float = 0.2
    lambda_z: float = 0.8
    h: float = 0.33
    w1: float = 0.4
    w2: float = 0.8
    lambda_dim: float = 0.1
    lambda_cap: float = 0.7
    cap_num_hard: int = 50
    center_lr: float = 0.5

    def __post_init__(self):
        for name in ("tau_supcon", "tau_nce", "tau_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lambda_z", "w1", "w2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")


@dataclass
class ClusterConfig:
    eps: float = 0.6
    min_pts: int = 8
    metric: str = "euclidean"
    tau_refine: float = 0.1
    alpha: float = 0.5
    sigma_threshold: float = 0.0
    positive_exponent: bool = False
    use_jaccard: bool = False

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


@dataclass
class RerankConfig:
    k1: int = 20
    k2: int = 6
    lambda_value: float = 0.3

    def __post_init__(self):
        if not self.k1 >= self.k2 >= 1:
            raise ValueError("need k1 >= k2 >= 1")
        if not 0.0 <= self.lambda_value <= 1.0:
            raise ValueError("lambda_value must lie in [0, 1]")


@dataclass
class RunConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    epochs: int = 50
    batch_p: int = 8
    batch_k: int = 4
    lr: float = 0.05
    momentum: float = 0.0
    weight_decay: float = 0.0
    embed_dim: int = 16
    num_parts: int = 2
    aug_sigma: float = 0.05
    ema_weight: float = 0.99
    memory_momentum: float = 0.2
    eir_fraction: float = 0.5
    test_fraction: float = 0.5
    seed: int = 0
    log_path: str = ""
    metrics_path: str = ""
    model_path: str = ""

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    def to_dict(self):
        return asdict(self)


def _build(cls, data):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise KeyError(f"unknown config key {cls.__name__}.{key}")
        default = known[key].default_factory() if callable(known[key].default_factory) else None
        if is_dataclass(default) and isinstance(value, dict):
            value = _build(type(default), value)
        kwargs[key] = value
    return cls(**kwargs)


def run_config_from_dict(data):
    return _build(RunConfig, data)


def load_run_config(path=None, overrides=None):
    """Read a JSON run config and apply ``section.key=value`` style overrides."""
    data = {}
    if path:
        with open(path) as fh:
            data = json.load(fh)
    for dotted, value in (overrides or {}).items():
        node = data
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return run_config_from_dict(data)
