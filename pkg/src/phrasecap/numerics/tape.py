"""Reverse-mode autodiff over a dynamically recorded tape.

Vars wrap float64 numpy arrays; ops record Nodes linking input Vars to output
Vars together with a backward closure. `backward(scalar_var)` topologically
sorts the recorded subgraph and accumulates gradients into the leaves. The
heavy arithmetic is delegated to the selected kernel backend so the tape is
backend-agnostic.

Constants (feature grids, dropout masks) are passed as plain ndarrays and
receive no gradient. Inside a `no_grad()` block no nodes are recorded, which
turns every op into its plain forward.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericError, ShapeError
from . import kernels as K

_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording (forward-only decode paths)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Var:
    __slots__ = ("data", "grad", "node", "name")

    def __init__(self, data, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = self.name or "var"
        return f"Var({label}, shape={self.data.shape})"


class Node:
    __slots__ = ("inputs", "outputs", "bwd")

    def __init__(self, inputs, outputs, bwd):
        self.inputs = inputs
        self.outputs = outputs
        self.bwd = bwd


def _record(inputs, out_data, bwd):
    """Create output Vars and, when recording, the backing node."""
    single = not isinstance(out_data, tuple)
    outs = [Var(out_data)] if single else [Var(d) for d in out_data]
    if _grad_enabled:
        node = Node([v for v in inputs], outs, bwd)
        for o in outs:
            o.node = node
    return outs[0] if single else tuple(outs)


def _data(v):
    return v.data if isinstance(v, Var) else v


def _name(v, fallback):
    return (v.name if isinstance(v, Var) and v.name else None) or fallback


def backward(root: Var):
    """Accumulate d(root)/d(leaf) into .grad over the recorded subgraph."""
    if root.data.shape != ():
        raise ContractError("backward requires a scalar root")
    if root.node is None:
        return
    order = []
    visited = set()
    stack = [(root.node, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for v in node.inputs:
            if isinstance(v, Var) and v.node is not None and id(v.node) not in visited:
                stack.append((v.node, False))
    root.grad = np.asarray(1.0)
    for node in reversed(order):
        gouts = [o.grad for o in node.outputs]
        if all(g is None for g in gouts):
            continue
        gouts = [
            g if g is not None else np.zeros_like(o.data)
            for g, o in zip(gouts, node.outputs)
        ]
        for v, g in zip(node.inputs, node.bwd(*gouts)):
            if g is None or not isinstance(v, Var):
                continue
            if v.grad is None:
                v.grad = g
            else:
                v.grad = v.grad + g


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def affine(w: Var, b: Var, x) -> Var:
    """W @ x + b."""
    wd, bd, xd = _data(w), _data(b), _data(x)
    if wd.ndim != 2 or wd.shape[1] != xd.shape[0]:
        raise ShapeError(
            f"affine: {_name(w, 'W')} is {wd.shape}, input {_name(x, 'x')} is {xd.shape}"
        )
    y = K.affine_fwd(wd, bd, xd)

    def bwd(gy):
        gw, gb, gx = K.affine_bwd(wd, xd, gy)
        return gw, gb, gx

    return _record([w, b, x], y, bwd)


def rows_affine(x_const: np.ndarray, w: Var, b: Var) -> Var:
    """X @ W.T + b over constant rows X (n, in) -> (n, out)."""
    wd, bd = _data(w), _data(b)
    y = K.rows_affine_fwd(x_const, wd, bd)

    def bwd(gy):
        _, gw, gb = K.rows_affine_bwd(x_const, wd, gy)
        return gw, gb

    return _record([w, b], y, bwd)


def lstm(w: Var, b: Var, x, h, c):
    """One LSTM cell step; returns (h', c'). Output equals h'."""
    wd, bd, xd, hd, cd = _data(w), _data(b), _data(x), _data(h), _data(c)
    hid = hd.shape[0]
    if wd.shape != (4 * hid, xd.shape[0] + hid):
        raise ShapeError(
            f"lstm_step: {_name(w, 'W')} is {wd.shape}, expected "
            f"({4 * hid}, {xd.shape[0] + hid}) for input {xd.shape} and hidden {hd.shape}"
        )
    if cd.shape != hd.shape:
        raise ShapeError(f"lstm_step: cell state {cd.shape} != hidden state {hd.shape}")
    h2, c2, cache = K.lstm_fwd(wd, bd, xd, hd, cd)

    def bwd(gh2, gc2):
        return K.lstm_bwd(wd, xd, hd, cd, cache, gh2, gc2)

    return _record([w, b, x, h, c], (h2, c2), bwd)


def tanh(x) -> Var:
    y = K.tanh_fwd(_data(x))
    return _record([x], y, lambda gy: (K.tanh_bwd(y, gy),))


def sigmoid(x) -> Var:
    y = K.sigmoid_fwd(_data(x))
    return _record([x], y, lambda gy: (K.sigmoid_bwd(y, gy),))


def relu(x) -> Var:
    xd = _data(x)
    y = K.relu_fwd(xd)
    return _record([x], y, lambda gy: (K.relu_bwd(xd, gy),))


def softmax(z) -> Var:
    """Distribution over a vector of finite logits."""
    zd = _data(z)
    if zd.ndim not in (1, 2) or zd.size == 0:
        raise ShapeError(f"softmax expects a non-empty vector, got shape {zd.shape}")
    if not np.all(np.isfinite(zd)):
        raise NumericError("softmax input contains NaN/Inf")
    p = K.softmax_fwd(zd)
    return _record([z], p, lambda gp: (K.softmax_bwd(p, gp),))


def logprob(z, k: int) -> Var:
    """log softmax(z)[k] as a scalar."""
    zd = _data(z)
    lp, p = K.logprob_fwd(zd, k)
    return _record([z], np.asarray(lp), lambda g: (K.logprob_bwd(p, k, float(g)),))


def matvec(m: Var, v) -> Var:
    md, vd = _data(m), _data(v)
    if md.shape[1] != vd.shape[0]:
        raise ShapeError(f"matvec: {md.shape} @ {vd.shape}")
    y = K.matvec_fwd(md, vd)

    def bwd(gy):
        gm, gv = K.matvec_bwd(md, vd, gy)
        return gm, gv

    return _record([m, v], y, bwd)


def wsum(rows_const: np.ndarray, w) -> Var:
    """Weighted sum of constant rows: rows.T @ w (attention combine)."""
    y = K.wsum_fwd(rows_const, _data(w))
    return _record([w], y, lambda gy: (K.wsum_bwd(rows_const, _data(w), gy)[1],))


def brows_add(m: Var, v: Var) -> Var:
    """Broadcast-add a vector to every row of a matrix."""
    y = _data(m) + _data(v)
    return _record([m, v], y, lambda gy: (gy, gy.sum(axis=0)))


def add(a, b) -> Var:
    y = _data(a) + _data(b)
    return _record([a, b], y, lambda gy: (gy, gy))


def mul(a, b) -> Var:
    ad, bd = _data(a), _data(b)
    y = ad * bd
    return _record([a, b], y, lambda gy: (gy * bd, gy * ad))


def mul_const(a, m: np.ndarray) -> Var:
    """Elementwise multiply by a constant mask (dropout et al.)."""
    y = _data(a) * m
    return _record([a], y, lambda gy: (gy * m,))


def scale_shift(a, alpha: float, beta: float = 0.0) -> Var:
    y = alpha * _data(a) + beta
    return _record([a], y, lambda gy: (alpha * gy,))


def concat(parts) -> Var:
    parts = list(parts)
    datas = [_data(p) for p in parts]
    y = np.concatenate(datas)
    sizes = [d.shape[0] for d in datas]
    offs = np.cumsum([0] + sizes)

    def bwd(gy):
        return tuple(gy[offs[i] : offs[i + 1]].copy() for i in range(len(parts)))

    return _record(parts, y, bwd)


def embed(table: Var, idx: int) -> Var:
    td = _data(table)
    y = td[idx].copy()

    def bwd(gy):
        gt = np.zeros_like(td)
        gt[idx] = gy
        return (gt,)

    return _record([table], y, bwd)


def mean_stack(vs) -> Var:
    vs = list(vs)
    if not vs:
        raise ContractError("mean_stack of zero vectors")
    y = np.mean([_data(v) for v in vs], axis=0)
    inv = 1.0 / len(vs)
    return _record(vs, y, lambda gy: tuple(inv * gy for _ in vs))


def vsum(v) -> Var:
    vd = _data(v)
    y = np.asarray(vd.sum())
    return _record([v], y, lambda g: (np.full_like(vd, float(g)),))


def asum(vs) -> Var:
    """Sum of scalar Vars."""
    vs = list(vs)
    y = np.asarray(sum(float(_data(v)) for v in vs))
    return _record(vs, y, lambda g: tuple(np.asarray(float(g)) for _ in vs))


def wadd(vs, weights) -> Var:
    """Weighted sum of scalar Vars with constant weights."""
    vs = list(vs)
    y = np.asarray(sum(float(_data(v)) * w for v, w in zip(vs, weights)))
    return _record(vs, y, lambda g: tuple(np.asarray(float(g) * w) for w in weights))


def exp(v) -> Var:
    y = np.exp(_data(v))
    return _record([v], y, lambda gy: (gy * y,))


def add_const(a, c: np.ndarray) -> Var:
    y = _data(a) + c
    return _record([a], y, lambda gy: (gy,))


def lstm_encode(w: Var, b: Var, table: Var, ids, h0: np.ndarray, c0: np.ndarray) -> Var:
    """Whole-sequence LSTM over embedded token ids; returns the final hidden
    state. Fused in the kernel backend (the encoder hot loop)."""
    ids = list(ids)
    if not ids:
        raise ContractError("lstm_encode of an empty sequence")
    wd, bd, td = _data(w), _data(b), _data(table)
    hT, cache = K.lstm_seq_fwd(wd, bd, td, ids, h0, c0)

    def bwd(ghT):
        gw, gb, gtable, _, _ = K.lstm_seq_bwd(wd, td, ids, cache, ghT)
        return gw, gb, gtable

    return _record([w, b, table], hT, bwd)


def embed_mean(table: Var, ids) -> Var:
    """Mean of embedding rows (fused phrase pooling)."""
    ids = list(ids)
    if not ids:
        raise ContractError("embed_mean of an empty phrase")
    td = _data(table)
    y = K.embed_mean_fwd(td, ids)
    return _record([table], y, lambda gy: (K.embed_mean_bwd(td, ids, gy),))
