"""Named parameter storage, initialization and checkpoint I/O."""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from ..errors import ContractError, FormatError
from .tape import Var

CHECKPOINT_VERSION = 1


class ParamStore:
    """Registry of named float64 parameter tensors.

    Names are unique and each parameter is registered exactly once; iteration
    is in sorted-name order so reductions over the store are order-fixed.
    """

    def __init__(self):
        self._params: dict[str, np.ndarray] = {}

    def register(self, name: str, shape, rng: np.random.Generator, fan_in=None, zero=False):
        """Add a tensor initialized uniform(-s, s), s = 1/sqrt(fan_in).

        fan_in defaults to the last dimension; zero=True skips random init
        (biases, initial states).
        """
        if name in self._params:
            raise ContractError(f"parameter {name!r} registered twice")
        shape = tuple(int(s) for s in shape)
        if zero:
            value = np.zeros(shape)
        else:
            if fan_in is None:
                fan_in = shape[-1] if shape else 1
            s = 1.0 / np.sqrt(max(fan_in, 1))
            value = rng.uniform(-s, s, size=shape)
        self._params[name] = np.ascontiguousarray(value, dtype=np.float64)
        return self._params[name]

    def names(self):
        return sorted(self._params)

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> np.ndarray:
        if name not in self._params:
            raise ContractError(f"unknown parameter {name!r}")
        return self._params[name]

    def __setitem__(self, name, value):
        if name not in self._params:
            raise ContractError(f"unknown parameter {name!r}")
        old = self._params[name]
        value = np.ascontiguousarray(value, dtype=np.float64)
        if value.shape != old.shape:
            raise ContractError(f"parameter {name!r} shape {old.shape} -> {value.shape}")
        self._params[name] = value

    def __len__(self):
        return len(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def as_vars(self) -> dict[str, Var]:
        """Fresh leaf Vars over the current values (one training step's view)."""
        return {name: Var(value, name=name) for name, value in self.items()}

    def grads_from(self, pvars: dict[str, Var]) -> dict[str, np.ndarray]:
        """Collect accumulated gradients, zeros where a parameter was unused."""
        out = {}
        for name, value in self.items():
            v = pvars[name]
            out[name] = v.grad if v.grad is not None else np.zeros_like(value)
        return out

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        dup._params = {k: v.copy() for k, v in self._params.items()}
        return dup

    def n_values(self) -> int:
        return sum(v.size for v in self._params.values())


def save_checkpoint(store: ParamStore, path, meta=None):
    """Versioned JSON checkpoint; values round-trip bitwise via repr floats."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            name: {"shape": list(value.shape), "values": value.reshape(-1).tolist()}
            for name, value in store.items()
        },
    }
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path):
    """Returns (ParamStore, meta). Rejects unknown versions."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version in {path}")
    store = ParamStore()
    for name, entry in doc["params"].items():
        shape = tuple(entry["shape"])
        value = np.asarray(entry["values"], dtype=np.float64).reshape(shape)
        store._params[name] = np.ascontiguousarray(value)
    return store, doc.get("meta", {})
