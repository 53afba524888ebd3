"""Linear stand-in for the backbone, and a plain SGD optimiser."""

import numpy as np

from .embeddings import as_embeddings
from .errors import DimMismatch, ShapeMismatch


class LinearEncoder:
    """``f = x @ weight + bias``.

    ``params`` is a dict of arrays so optimisers and the EMA teacher can
    treat any number of layers uniformly.
    """

    def __init__(self, weight, bias=None):
        weight = np.array(weight, dtype=np.float64)
        if weight.ndim != 2:
            raise ShapeMismatch("weight must be a 2-D matrix")
        self.params = {"weight": weight}
        if bias is not None:
            bias = np.array(bias, dtype=np.float64).reshape(-1)
            if bias.size != weight.shape[1]:
                raise ShapeMismatch("bias length must equal the output width")
            self.params["bias"] = bias

    @classmethod
    def random(cls, in_dim, out_dim, rng, bias=True, scale=None):
        scale = 1.0 / np.sqrt(in_dim) if scale is None else scale
        w = rng.normal(0.0, scale, size=(in_dim, out_dim))
        return cls(w, np.zeros(out_dim) if bias else None)

    @property
    def in_dim(self):
        return self.params["weight"].shape[0]

    @property
    def out_dim(self):
        return self.params["weight"].shape[1]

    def forward(self, x):
        x = as_embeddings(x)
        if x.shape[1] != self.in_dim:
            raise DimMismatch(f"encoder expects {self.in_dim} inputs, got {x.shape[1]}")
        out = x @ self.params["weight"]
        if "bias" in self.params:
            out = out + self.params["bias"]
        return out

    __call__ = forward

    def backward(self, x, grad_out):
        """Parameter gradients and the input gradient for upstream ``grad_out``."""
        x = as_embeddings(x)
        grads = {"weight": x.T @ grad_out}
        if "bias" in self.params:
            grads["bias"] = grad_out.sum(axis=0)
        return grads, grad_out @ self.params["weight"].T

    def copy(self):
        return LinearEncoder(self.params["weight"], self.params.get("bias"))

    def get_flat(self):
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def set_flat(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        offset = 0
        for k in sorted(self.params):
            size = self.params[k].size
            self.params[k] = flat[offset:offset + size].reshape(self.params[k].shape).copy()
            offset += size
        if offset != flat.size:
            raise ShapeMismatch(f"flat vector has {flat.size} values, model {offset}")


def flatten_models(models):
    return np.concatenate([m.get_flat() for m in models]) if models else np.zeros(0)


def unflatten_models(models, flat):
    offset = 0
    for m in models:
        size = m.get_flat().size
        m.set_flat(flat[offset:offset + size])
        offset += size


class SGD:
    """SGD with optional heavy-ball momentum and L2 weight decay."""

    def __init__(self, lr, momentum=0.0, weight_decay=0.0):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._velocity = {}

    def step(self, model, grads, key=None):
        key = id(model) if key is None else key
        vel = self._velocity.setdefault(key, {})
        for name, g in grads.items():
            p = model.params[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.momentum:
                v = vel.get(name)
                v = g.copy() if v is None else self.momentum * v + g
                vel[name] = v
                g = v
            if self.lr:
                model.params[name] = p - self.lr * g

    def reset(self, key):
        self._velocity.pop(key, None)
