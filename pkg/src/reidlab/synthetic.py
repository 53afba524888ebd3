"""Synthetic multi-camera identity data.

Each sample is ``identity_mean + camera_offset + noise``. Identity means lie
on a sphere of radius ``separation``; each camera adds its own fixed offset
vector of norm ``camera_offset``. The offsets are what makes cross-camera
retrieval hard for an untrained encoder.
"""

from dataclasses import asdict, dataclass, replace

import numpy as np

from .embeddings import SampleMeta


@dataclass(frozen=True)
class SyntheticSpec:
    identities: int = 8
    cameras: int = 2
    samples_per_camera: int = 10
    raw_dim: int = 32
    separation: float = 1.0
    camera_offset: float = 1.2
    noise: float = 0.05
    seed: int = 0
    num_tokens: int = 0
    token_noise: float = 1.0

    def __post_init__(self):
        for name in ("identities", "cameras", "samples_per_camera", "raw_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("separation", "camera_offset", "noise", "token_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.num_tokens < 0:
            raise ValueError("num_tokens must be >= 0")

    def to_dict(self):
        return asdict(self)


PRESETS = {
    # supervised pipeline
    "easy": SyntheticSpec(),
    # unsupervised camera-aware pipeline
    "camera": SyntheticSpec(identities=12, cameras=3, samples_per_camera=12, raw_dim=32,
                            separation=1.0, camera_offset=0.3, noise=0.06),
    # well separated, tiny: sanity checks
    "separated": SyntheticSpec(identities=2, cameras=1, samples_per_camera=20, raw_dim=8,
                               separation=10.0, camera_offset=0.0, noise=0.05),
}


def preset(name, **overrides):
    try:
        spec = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(spec, **overrides)


def _sphere(rng, n, d, radius):
    v = rng.normal(size=(n, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return radius * v / norms


@dataclass
class SyntheticData:
    raw: np.ndarray
    meta: SampleMeta
    truth: np.ndarray
    tokens: np.ndarray = None
    attention: np.ndarray = None

    def subset(self, idx):
        return SyntheticData(
            self.raw[idx], self.meta.subset(idx), self.truth[idx],
            None if self.tokens is None else self.tokens[idx],
            None if self.attention is None else self.attention[idx])

    def __len__(self):
        return self.raw.shape[0]


def synth_dataset(spec, domain_shift=None):
    """Generate a dataset; deterministic for a given spec.

    Samples are ordered identity-major, then camera, then repeat. When
    ``spec.num_tokens > 0`` per-sample token features and attention scores
    are generated too: high-attention tokens are near-copies of the sample,
    the rest are dominated by noise.
    """
    rng = np.random.default_rng(spec.seed)
    means = _sphere(rng, spec.identities, spec.raw_dim, spec.separation)
    offsets = _sphere(rng, spec.cameras, spec.raw_dim, spec.camera_offset)
    ids = np.repeat(np.arange(spec.identities), spec.cameras * spec.samples_per_camera)
    cams = np.tile(np.repeat(np.arange(spec.cameras), spec.samples_per_camera), spec.identities)
    raw = means[ids] + offsets[cams] + rng.normal(0.0, spec.noise, size=(ids.size, spec.raw_dim))
    if domain_shift is not None:
        raw = raw + np.asarray(domain_shift, dtype=np.float64)
    data = SyntheticData(raw, SampleMeta(ids, cams), ids.copy())
    if spec.num_tokens:
        m = spec.num_tokens
        attention = rng.random(size=(ids.size, m))
        informative = attention >= np.median(attention, axis=1, keepdims=True)
        scale = np.where(informative, spec.noise, spec.token_noise)[:, :, None]
        data.tokens = raw[:, None, :] + scale * rng.normal(size=(ids.size, m, spec.raw_dim))
        data.attention = attention
    return data


def split_samples(data, test_fraction, rng):
    """Per (identity, camera) split into train and held-out parts."""
    train, test = [], []
    keys = data.meta.labels * (data.meta.cameras.max() + 1) + data.meta.cameras
    for key in np.unique(keys):
        members = rng.permutation(np.flatnonzero(keys == key))
        n_test = int(round(test_fraction * members.size))
        if members.size > 1:
            n_test = min(max(n_test, 1), members.size - 1)
        test.extend(members[:n_test])
        train.extend(members[n_test:])
    return data.subset(np.sort(train)), data.subset(np.sort(test))


def synth_two_domain(spec, target_identities=None, shift=0.5):
    """Labeled source and unlabeled-style target sharing one camera network.

    Both domains reuse the same camera offsets but have disjoint identity
    means; the target is additionally translated by a random vector of norm
    ``shift``. Returns ``(source, target)``; target labels are kept as
    ground truth for scoring only.
    """
    rng = np.random.default_rng(spec.seed)
    n_tgt = spec.identities if target_identities is None else target_identities
    means = _sphere(rng, spec.identities + n_tgt, spec.raw_dim, spec.separation)
    offsets = _sphere(rng, spec.cameras, spec.raw_dim, spec.camera_offset)
    shift_vec = _sphere(rng, 1, spec.raw_dim, shift)[0]

    def build(identity_means, extra):
        p = identity_means.shape[0]
        ids = np.repeat(np.arange(p), spec.cameras * spec.samples_per_camera)
        cams = np.tile(np.repeat(np.arange(spec.cameras), spec.samples_per_camera), p)
        noise = rng.normal(0.0, spec.noise, size=(ids.size, spec.raw_dim))
        raw = identity_means[ids] + offsets[cams] + extra + noise
        return SyntheticData(raw, SampleMeta(ids, cams), ids.copy())

    source = build(means[:spec.identities], 0.0)
    target = build(means[spec.identities:], shift_vec)
    return source, target
