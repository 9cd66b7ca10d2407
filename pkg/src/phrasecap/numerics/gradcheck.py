"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from . import tape
from .params import ParamStore


def grad_check(fn, store: ParamStore, eps: float = 1e-5) -> float:
    """Compare analytic gradients of fn against central differences.

    fn maps a dict of parameter Vars to a scalar Var and must be
    deterministic (verified with two forward passes). Returns the max over
    coordinates of |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractError(f"eps {eps} outside [1e-7, 1e-3]")

    def forward_value():
        with tape.no_grad():
            return float(fn(store.as_vars()).data)

    if forward_value() != forward_value():
        raise ContractError("function is not deterministic across forward passes")

    pvars = store.as_vars()
    loss = fn(pvars)
    tape.backward(loss)
    analytic = store.grads_from(pvars)

    worst = 0.0
    for name, value in store.items():
        flat = value.reshape(-1)
        ga = analytic[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = forward_value()
            flat[j] = orig - eps
            down = forward_value()
            flat[j] = orig
            gn = (up - down) / (2.0 * eps)
            err = abs(ga[j] - gn) / max(1e-8, abs(ga[j]) + abs(gn))
            if err > worst:
                worst = err
    return worst
