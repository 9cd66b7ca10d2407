"""Small layer helpers over the tape: MLPs and the public LSTM step."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError
from . import tape
from .params import ParamStore

_ACTIVATIONS = {
    "relu": tape.relu,
    "tanh": tape.tanh,
    "sigmoid": tape.sigmoid,
    "identity": lambda v: v,
}


@dataclass(frozen=True)
class MLPSpec:
    """Layer output sizes plus one activation name per layer."""

    sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        if len(self.sizes) == 0:
            raise ConfigError("MLP spec needs at least one layer")
        if len(self.sizes) != len(self.activations):
            raise ConfigError("MLP spec sizes/activations length mismatch")
        unknown = [a for a in self.activations if a not in _ACTIVATIONS]
        if unknown:
            raise ConfigError(f"unknown activations {unknown}")


def mlp(hidden: int, depth: int, out: int, hidden_act="relu", out_act="identity") -> MLPSpec:
    """Conventional spec: depth-1 hidden layers of `hidden`, then `out`."""
    sizes = (hidden,) * (depth - 1) + (out,)
    acts = (hidden_act,) * (depth - 1) + (out_act,)
    return MLPSpec(sizes, acts)


def mlp_register(store: ParamStore, prefix: str, in_dim: int, spec: MLPSpec, rng):
    # biases drawn like weights: exact zeros park ReLU inputs on the kink,
    # which breaks finite-difference checks
    prev = in_dim
    for k, size in enumerate(spec.sizes):
        store.register(f"{prefix}.w{k}", (size, prev), rng, fan_in=prev)
        store.register(f"{prefix}.b{k}", (size,), rng, fan_in=prev)
        prev = size


def mlp_apply(pvars, x, spec: MLPSpec, prefix: str):
    """Affine + activation chain; final layer activation per the spec."""
    h = x
    for k, act in enumerate(spec.activations):
        h = tape.affine(pvars[f"{prefix}.w{k}"], pvars[f"{prefix}.b{k}"], h)
        h = _ACTIVATIONS[act](h)
    return h


def lstm_register(store: ParamStore, prefix: str, in_dim: int, hidden: int, rng):
    store.register(f"{prefix}.w", (4 * hidden, in_dim + hidden), rng, fan_in=in_dim + hidden)
    store.register(f"{prefix}.b", (4 * hidden,), rng, fan_in=in_dim + hidden)


def lstm_step(state, x, w, b):
    """One LSTM cell step: ((h, c), x, params) -> ((h', c'), output=h')."""
    h, c = state
    h2, c2 = tape.lstm(w, b, x, h, c)
    return (h2, c2), h2
