"""
Small numpy neural substrate: two-layer ReLU MLPs with explicit forward caches,
hand-written reverse passes, numerically stable logistic helpers and Adam.
"""
import math
from dataclasses import dataclass
from typing import Dict, Iterable, Tuple

import numpy as np
from numpy.typing import NDArray

Tensors = Dict[str, NDArray[np.float64]]

@dataclass(frozen=True)
class MlpCache:
    x: NDArray[np.float64]
    pre: NDArray[np.float64]
    hidden: NDArray[np.float64]

def mlp_shapes(name: str, in_dim: int, hidden: int, out_dim: int) -> Dict[str, Tuple[int, ...]]:
    return {
        f"{name}.w1": (in_dim, hidden),
        f"{name}.b1": (hidden,),
        f"{name}.w2": (hidden, out_dim),
        f"{name}.b2": (out_dim,),
    }

def init_mlp(rng: np.random.Generator, name: str, in_dim: int, hidden: int, out_dim: int) -> Tensors:
    # He init for the ReLU layer, fan-in scaling for the linear output
    return {
        f"{name}.w1": rng.normal(0.0, math.sqrt(2.0 / in_dim), size=(in_dim, hidden)),
        f"{name}.b1": np.zeros(hidden),
        f"{name}.w2": rng.normal(0.0, math.sqrt(1.0 / hidden), size=(hidden, out_dim)),
        f"{name}.b2": np.zeros(out_dim),
    }

def mlp_forward(params: Tensors, name: str, x: NDArray) -> Tuple[NDArray[np.float64], MlpCache]:
    pre = x @ params[f"{name}.w1"] + params[f"{name}.b1"]
    hidden = np.maximum(pre, 0.0)
    out = hidden @ params[f"{name}.w2"] + params[f"{name}.b2"]
    return out, MlpCache(x, pre, hidden)

def mlp_backward(params: Tensors, name: str, cache: MlpCache, d_out: NDArray, grads: Tensors) -> NDArray[np.float64]:
    """Accumulate parameter gradients into ``grads`` and return the gradient w.r.t. the input."""
    grads[f"{name}.w2"] += cache.hidden.T @ d_out
    grads[f"{name}.b2"] += d_out.sum(axis=0)
    d_hidden = d_out @ params[f"{name}.w2"].T
    d_pre = d_hidden * (cache.pre > 0.0)
    grads[f"{name}.w1"] += cache.x.T @ d_pre
    grads[f"{name}.b1"] += d_pre.sum(axis=0)
    return d_pre @ params[f"{name}.w1"].T

def sigmoid(z: NDArray) -> NDArray[np.float64]:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out

def softplus(z: NDArray) -> NDArray[np.float64]:
    """log(1 + e^z) without overflow; -log(sigmoid(z)) = softplus(-z)."""
    return np.logaddexp(0.0, np.asarray(z, dtype=np.float64))

def zeros_like(params: Tensors) -> Tensors:
    return {k: np.zeros_like(v) for k, v in params.items()}

def all_finite(tensors: Iterable[NDArray]) -> bool:
    return all(np.all(np.isfinite(t)) for t in tensors)

class Adam:
    def __init__(self, params: Tensors, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = zeros_like(params)
        self.v = zeros_like(params)

    def step(self, params: Tensors, grads: Tensors) -> None:
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            m_hat = self.m[key] / c1
            v_hat = self.v[key] / c2
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
