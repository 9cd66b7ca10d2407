"""Adam optimizer and global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericError
from .params import ParamStore


class Adam:
    """Standard Adam with bias correction over a ParamStore.

    step() requires a gradient for every registered parameter so a forgotten
    gradient never silently reads as zero.
    """

    def __init__(self, store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(value) for name, value in store.items()}
        self.v = {name: np.zeros_like(value) for name, value in store.items()}

    def step(self, grads: dict[str, np.ndarray]):
        missing = [n for n in self.store.names() if n not in grads]
        if missing:
            raise ContractError(f"missing gradients for {missing}")
        extra = sorted(set(grads) - set(self.store.names()))
        if extra:
            raise ContractError(f"gradients for unregistered parameters {extra}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in self.store.names():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            self.store[name] = self.store[name] - update


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float = 5.0):
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns (clipped grads, pre-clip norm). Reduction order is fixed by name.
    """
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    norm = float(np.sqrt(total))
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm
