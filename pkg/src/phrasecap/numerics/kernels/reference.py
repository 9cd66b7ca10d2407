"""Numpy reference implementation of the hot kernels.

Every function here has a twin in the compiled `_core` backend; the tape layer
calls whichever backend `phrasecap.numerics.kernels` selected at import. All
arrays are float64 and C-contiguous. Backward functions return gradients in
the same order as the forward inputs.
"""

import numpy as np

NAME = "reference"


def affine_fwd(w, b, x):
    """y = W @ x + b for a single vector x."""
    return w @ x + b


def affine_bwd(w, x, gy):
    return np.outer(gy, x), gy.copy(), w.T @ gy


def rows_affine_fwd(xs, w, b):
    """Y = X @ W.T + b applied to every row of X (n, in) -> (n, out)."""
    return xs @ w.T + b


def rows_affine_bwd(xs, w, gy):
    return gy @ w, gy.T @ xs, gy.sum(axis=0)


def lstm_fwd(w, b, x, h, c):
    """One LSTM cell step.

    w is (4H, I+H) over the concatenated [x; h], gate rows ordered
    input/forget/candidate/output. Returns (h2, c2, cache) where cache holds
    the post-activation gates and tanh(c2) needed by the backward pass.
    """
    hid = h.shape[0]
    z = w @ np.concatenate([x, h]) + b
    i = _sigmoid(z[:hid])
    f = _sigmoid(z[hid : 2 * hid])
    g = np.tanh(z[2 * hid : 3 * hid])
    o = _sigmoid(z[3 * hid :])
    c2 = f * c + i * g
    tc2 = np.tanh(c2)
    h2 = o * tc2
    cache = np.concatenate([i, f, g, o, tc2])
    return h2, c2, cache


def lstm_bwd(w, x, h, c, cache, gh2, gc2):
    hid = h.shape[0]
    i, f, g, o, tc2 = (cache[k * hid : (k + 1) * hid] for k in range(5))
    go = gh2 * tc2
    gc = gc2 + gh2 * o * (1.0 - tc2 * tc2)
    gi = gc * g
    gg = gc * i
    gf = gc * c
    gc_prev = gc * f
    gz = np.concatenate(
        [
            gi * i * (1.0 - i),
            gf * f * (1.0 - f),
            gg * (1.0 - g * g),
            go * o * (1.0 - o),
        ]
    )
    xh = np.concatenate([x, h])
    gw = np.outer(gz, xh)
    gxh = w.T @ gz
    return gw, gz, gxh[: x.shape[0]], gxh[x.shape[0] :], gc_prev


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, gy):
    return gy * (1.0 - y * y)


def sigmoid_fwd(x):
    return _sigmoid(x)


def sigmoid_bwd(y, gy):
    return gy * y * (1.0 - y)


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, gy):
    return np.where(x > 0.0, gy, 0.0)


def softmax_fwd(z):
    """Shift-stable softmax over a vector or the last axis of a matrix."""
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_bwd(p, gp):
    dot = (p * gp).sum(axis=-1, keepdims=True)
    return p * (gp - dot)


def logprob_fwd(z, k):
    """log softmax(z)[k], returned with the softmax probabilities."""
    m = z.max()
    e = np.exp(z - m)
    s = e.sum()
    p = e / s
    return float(z[k] - m - np.log(s)), p


def logprob_bwd(p, k, g):
    gz = -g * p
    gz[k] += g
    return gz


def matvec_fwd(m, v):
    return m @ v


def matvec_bwd(m, v, gs):
    return np.outer(gs, v), m.T @ gs


def wsum_fwd(m, w):
    """Weighted sum of the rows of m: y = m.T @ w."""
    return m.T @ w


def wsum_bwd(m, w, gy):
    return np.outer(w, gy), m @ gy


def lstm_seq_fwd(w, b, table, ids, h0, c0):
    """Run an LSTM over embedded token ids; returns (hT, cache).

    The cache stacks everything the backward pass needs: hidden/cell states
    per step and the post-activation gates.
    """
    hid = h0.shape[0]
    T = len(ids)
    hs = np.empty((T + 1, hid))
    cs = np.empty((T + 1, hid))
    gates = np.empty((T, 5 * hid))
    hs[0] = h0
    cs[0] = c0
    h, c = h0, c0
    for t, wid in enumerate(ids):
        h, c, cache = lstm_fwd(w, b, table[wid], h, c)
        hs[t + 1] = h
        cs[t + 1] = c
        gates[t] = cache
    return hs[T].copy(), (hs, cs, gates)


def lstm_seq_bwd(w, table, ids, cache, ghT):
    hs, cs, gates = cache
    hid = hs.shape[1]
    T = len(ids)
    gw = np.zeros_like(w)
    gb = np.zeros(4 * hid)
    gtable = np.zeros_like(table)
    gh = ghT.copy()
    gc = np.zeros(hid)
    for t in range(T - 1, -1, -1):
        gw_t, gb_t, gx, gh, gc = lstm_bwd(
            w, table[ids[t]], hs[t], cs[t], gates[t], gh, gc
        )
        gw += gw_t
        gb += gb_t
        gtable[ids[t]] += gx
    return gw, gb, gtable, gh, gc


def embed_mean_fwd(table, ids):
    return table[list(ids)].mean(axis=0)


def embed_mean_bwd(table, ids, gy):
    gtable = np.zeros_like(table)
    share = gy / len(ids)
    for wid in ids:
        gtable[wid] += share
    return gtable


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
