from dataclasses import dataclass, field

import numpy as np


@dataclass
class LossOutput:
    """A scalar loss and its gradients keyed by input role.

    ``per_sample`` holds the unreduced per-anchor values where the loss has
    them.
    """

    value: float
    grads: dict = field(default_factory=dict)
    per_sample: np.ndarray = None

    def __float__(self):
        return float(self.value)


def weighted_sum(terms):
    """Combine ``[(weight, LossOutput), ...]`` into one LossOutput.

    Gradients sharing a role name are added, so callers must make sure roles
    refer to the same tensor.
    """
    value = 0.0
    grads = {}
    for weight, out in terms:
        value += weight * out.value
        for role, g in out.grads.items():
            if role in grads:
                grads[role] = grads[role] + weight * g
            else:
                grads[role] = weight * g
    return LossOutput(float(value), grads)


def check_sample_weights(weights, n):
    if weights is None:
        return np.ones(n)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.size != n:
        raise ValueError(f"{weights.size} sample weights for {n} samples")
    return weights


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))
