# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core: fused LSTM cell, affines, softmax/log-prob and the
attention primitives. Function-for-function twin of `reference.py`."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()

NAME = "cython"


cdef inline double _sig(double x) nogil:
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


def _c(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


# plain affines stay on BLAS: numpy's dgemv beats a naive loop at these
# shapes, so the compiled core only owns kernels where fusion wins

def affine_fwd(w, b, x):
    return w @ x + b


def affine_bwd(w, x, gy):
    return np.outer(gy, x), gy.copy(), w.T @ gy


def rows_affine_fwd(xs, w, b):
    return xs @ w.T + b


def rows_affine_bwd(xs, w, gy):
    return gy @ w, gy.T @ xs, gy.sum(axis=0)


def lstm_fwd(w, b, x, h, c):
    cdef double[:, ::1] W = _c(w)
    cdef double[::1] B = _c(b)
    cdef double[::1] X = _c(x)
    cdef double[::1] H = _c(h)
    cdef double[::1] C = _c(c)
    cdef Py_ssize_t hid = H.shape[0], ni = X.shape[0]
    cdef Py_ssize_t rows = 4 * hid, cols = ni + hid
    z = np.empty(rows)
    cdef double[::1] Z = z
    cdef Py_ssize_t r, k
    cdef double acc
    for r in range(rows):
        acc = B[r]
        for k in range(ni):
            acc += W[r, k] * X[k]
        for k in range(hid):
            acc += W[r, ni + k] * H[k]
        Z[r] = acc
    h2 = np.empty(hid)
    c2 = np.empty(hid)
    cache = np.empty(5 * hid)
    cdef double[::1] H2 = h2
    cdef double[::1] C2 = c2
    cdef double[::1] CA = cache
    cdef double gi, gf, gg, go, cc, tc
    for k in range(hid):
        gi = _sig(Z[k])
        gf = _sig(Z[hid + k])
        gg = tanh(Z[2 * hid + k])
        go = _sig(Z[3 * hid + k])
        cc = gf * C[k] + gi * gg
        tc = tanh(cc)
        C2[k] = cc
        H2[k] = go * tc
        CA[k] = gi
        CA[hid + k] = gf
        CA[2 * hid + k] = gg
        CA[3 * hid + k] = go
        CA[4 * hid + k] = tc
    return h2, c2, cache


def lstm_bwd(w, x, h, c, cache, gh2, gc2):
    cdef double[:, ::1] W = _c(w)
    cdef double[::1] X = _c(x)
    cdef double[::1] H = _c(h)
    cdef double[::1] C = _c(c)
    cdef double[::1] CA = _c(cache)
    cdef double[::1] GH2 = _c(gh2)
    cdef double[::1] GC2 = _c(gc2)
    cdef Py_ssize_t hid = H.shape[0], ni = X.shape[0]
    cdef Py_ssize_t rows = 4 * hid
    gz = np.empty(rows)
    gc_prev = np.empty(hid)
    cdef double[::1] GZ = gz
    cdef double[::1] GCP = gc_prev
    cdef Py_ssize_t k, r
    cdef double gi, gf, gg, go, tc, gout, gc_all
    for k in range(hid):
        gi = CA[k]
        gf = CA[hid + k]
        gg = CA[2 * hid + k]
        go = CA[3 * hid + k]
        tc = CA[4 * hid + k]
        gout = GH2[k] * tc
        gc_all = GC2[k] + GH2[k] * go * (1.0 - tc * tc)
        GZ[k] = gc_all * gg * gi * (1.0 - gi)
        GZ[hid + k] = gc_all * C[k] * gf * (1.0 - gf)
        GZ[2 * hid + k] = gc_all * gi * (1.0 - gg * gg)
        GZ[3 * hid + k] = gout * go * (1.0 - go)
        GCP[k] = gc_all * gf
    gw = np.empty((rows, ni + hid))
    gx = np.zeros(ni)
    gh = np.zeros(hid)
    cdef double[:, ::1] GW = gw
    cdef double[::1] GX = gx
    cdef double[::1] GH = gh
    cdef double g
    for r in range(rows):
        g = GZ[r]
        for k in range(ni):
            GW[r, k] = g * X[k]
            GX[k] += g * W[r, k]
        for k in range(hid):
            GW[r, ni + k] = g * H[k]
            GH[k] += g * W[r, ni + k]
    return gw, gz, gx, gh, gc_prev


def tanh_fwd(x):
    cdef double[::1] X = _c(x).reshape(-1)
    y = np.empty(X.shape[0])
    cdef double[::1] Y = y
    cdef Py_ssize_t k
    for k in range(X.shape[0]):
        Y[k] = tanh(X[k])
    return y.reshape(np.shape(x))


def tanh_bwd(y, gy):
    cdef double[::1] Y = _c(y).reshape(-1)
    cdef double[::1] GY = _c(gy).reshape(-1)
    gx = np.empty(Y.shape[0])
    cdef double[::1] GX = gx
    cdef Py_ssize_t k
    for k in range(Y.shape[0]):
        GX[k] = GY[k] * (1.0 - Y[k] * Y[k])
    return gx.reshape(np.shape(y))


def sigmoid_fwd(x):
    cdef double[::1] X = _c(x).reshape(-1)
    y = np.empty(X.shape[0])
    cdef double[::1] Y = y
    cdef Py_ssize_t k
    for k in range(X.shape[0]):
        Y[k] = _sig(X[k])
    return y.reshape(np.shape(x))


def sigmoid_bwd(y, gy):
    cdef double[::1] Y = _c(y).reshape(-1)
    cdef double[::1] GY = _c(gy).reshape(-1)
    gx = np.empty(Y.shape[0])
    cdef double[::1] GX = gx
    cdef Py_ssize_t k
    for k in range(Y.shape[0]):
        GX[k] = GY[k] * Y[k] * (1.0 - Y[k])
    return gx.reshape(np.shape(y))


def relu_fwd(x):
    cdef double[::1] X = _c(x).reshape(-1)
    y = np.empty(X.shape[0])
    cdef double[::1] Y = y
    cdef Py_ssize_t k
    for k in range(X.shape[0]):
        Y[k] = X[k] if X[k] > 0.0 else 0.0
    return y.reshape(np.shape(x))


def relu_bwd(x, gy):
    cdef double[::1] X = _c(x).reshape(-1)
    cdef double[::1] GY = _c(gy).reshape(-1)
    gx = np.empty(X.shape[0])
    cdef double[::1] GX = gx
    cdef Py_ssize_t k
    for k in range(X.shape[0]):
        GX[k] = GY[k] if X[k] > 0.0 else 0.0
    return gx.reshape(np.shape(x))


def softmax_fwd(z):
    zarr = _c(z)
    if zarr.ndim == 2:
        out = np.empty_like(zarr)
        for j in range(zarr.shape[0]):
            out[j] = softmax_fwd(zarr[j])
        return out
    cdef double[::1] Z = zarr
    cdef Py_ssize_t n = Z.shape[0], k
    p = np.empty(n)
    cdef double[::1] P = p
    cdef double m = Z[0], s = 0.0
    for k in range(1, n):
        if Z[k] > m:
            m = Z[k]
    for k in range(n):
        P[k] = exp(Z[k] - m)
        s += P[k]
    for k in range(n):
        P[k] /= s
    return p


def softmax_bwd(p, gp):
    parr = _c(p)
    if parr.ndim == 2:
        out = np.empty_like(parr)
        gparr = _c(gp)
        for j in range(parr.shape[0]):
            out[j] = softmax_bwd(parr[j], gparr[j])
        return out
    cdef double[::1] P = parr
    cdef double[::1] GP = _c(gp)
    cdef Py_ssize_t n = P.shape[0], k
    gz = np.empty(n)
    cdef double[::1] GZ = gz
    cdef double dot = 0.0
    for k in range(n):
        dot += P[k] * GP[k]
    for k in range(n):
        GZ[k] = P[k] * (GP[k] - dot)
    return gz


def logprob_fwd(z, k):
    cdef double[::1] Z = _c(z)
    cdef Py_ssize_t n = Z.shape[0], j
    cdef Py_ssize_t kk = k
    p = np.empty(n)
    cdef double[::1] P = p
    cdef double m = Z[0], s = 0.0
    for j in range(1, n):
        if Z[j] > m:
            m = Z[j]
    for j in range(n):
        P[j] = exp(Z[j] - m)
        s += P[j]
    for j in range(n):
        P[j] /= s
    return float(Z[kk] - m - log(s)), p


def logprob_bwd(p, k, g):
    cdef double[::1] P = _c(p)
    cdef Py_ssize_t n = P.shape[0], j
    cdef double gg = g
    gz = np.empty(n)
    cdef double[::1] GZ = gz
    for j in range(n):
        GZ[j] = -gg * P[j]
    GZ[k] += gg
    return gz


def lstm_seq_fwd(w, b, table, ids, h0, c0):
    cdef double[:, ::1] W = _c(w)
    cdef double[::1] B = _c(b)
    cdef double[:, ::1] TB = _c(table)
    cdef long[::1] IDS = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t hid = h0.shape[0], e = TB.shape[1]
    cdef Py_ssize_t T = IDS.shape[0]
    hs = np.empty((T + 1, hid))
    cs = np.empty((T + 1, hid))
    gates = np.empty((T, 5 * hid))
    cdef double[:, ::1] HS = hs
    cdef double[:, ::1] CS = cs
    cdef double[:, ::1] GA = gates
    cdef double[::1] H0 = _c(h0)
    cdef double[::1] C0 = _c(c0)
    cdef Py_ssize_t t, r, k, wid
    cdef double acc, gi, gf, gg, go, cc, tc
    cdef double[::1] z = np.empty(4 * hid)
    for k in range(hid):
        HS[0, k] = H0[k]
        CS[0, k] = C0[k]
    for t in range(T):
        wid = IDS[t]
        for r in range(4 * hid):
            acc = B[r]
            for k in range(e):
                acc += W[r, k] * TB[wid, k]
            for k in range(hid):
                acc += W[r, e + k] * HS[t, k]
            z[r] = acc
        for k in range(hid):
            gi = _sig(z[k])
            gf = _sig(z[hid + k])
            gg = tanh(z[2 * hid + k])
            go = _sig(z[3 * hid + k])
            cc = gf * CS[t, k] + gi * gg
            tc = tanh(cc)
            CS[t + 1, k] = cc
            HS[t + 1, k] = go * tc
            GA[t, k] = gi
            GA[t, hid + k] = gf
            GA[t, 2 * hid + k] = gg
            GA[t, 3 * hid + k] = go
            GA[t, 4 * hid + k] = tc
    return hs[T].copy(), (hs, cs, gates)


def lstm_seq_bwd(w, table, ids, cache, ghT):
    hs, cs, gates = cache
    cdef double[:, ::1] W = _c(w)
    cdef double[:, ::1] TB = _c(table)
    cdef long[::1] IDS = np.ascontiguousarray(ids, dtype=np.int64)
    cdef double[:, ::1] HS = _c(hs)
    cdef double[:, ::1] CS = _c(cs)
    cdef double[:, ::1] GA = _c(gates)
    cdef Py_ssize_t hid = HS.shape[1], e = TB.shape[1]
    cdef Py_ssize_t T = IDS.shape[0]
    gw = np.zeros((4 * hid, e + hid))
    gb = np.zeros(4 * hid)
    gtable = np.zeros_like(np.asarray(table))
    gh_out = np.empty(hid)
    gc_out = np.empty(hid)
    cdef double[:, ::1] GW = gw
    cdef double[::1] GB = gb
    cdef double[:, ::1] GT = gtable
    cdef double[::1] GH = gh_out
    cdef double[::1] GC = gc_out
    cdef double[::1] gh = _c(ghT).copy()
    cdef double[::1] gc = np.zeros(hid)
    cdef double[::1] gz = np.empty(4 * hid)
    cdef double[::1] gh_prev = np.empty(hid)
    cdef Py_ssize_t t, r, k, wid
    cdef double gi, gf, gg, go, tc, gout, gc_all, g
    for t in range(T - 1, -1, -1):
        wid = IDS[t]
        for k in range(hid):
            gi = GA[t, k]
            gf = GA[t, hid + k]
            gg = GA[t, 2 * hid + k]
            go = GA[t, 3 * hid + k]
            tc = GA[t, 4 * hid + k]
            gout = gh[k] * tc
            gc_all = gc[k] + gh[k] * go * (1.0 - tc * tc)
            gz[k] = gc_all * gg * gi * (1.0 - gi)
            gz[hid + k] = gc_all * CS[t, k] * gf * (1.0 - gf)
            gz[2 * hid + k] = gc_all * gi * (1.0 - gg * gg)
            gz[3 * hid + k] = gout * go * (1.0 - go)
            gc[k] = gc_all * gf
        for k in range(hid):
            gh_prev[k] = 0.0
        for r in range(4 * hid):
            g = gz[r]
            GB[r] += g
            for k in range(e):
                GW[r, k] += g * TB[wid, k]
                GT[wid, k] += g * W[r, k]
            for k in range(hid):
                GW[r, e + k] += g * HS[t, k]
                gh_prev[k] += g * W[r, e + k]
        for k in range(hid):
            gh[k] = gh_prev[k]
    for k in range(hid):
        GH[k] = gh[k]
        GC[k] = gc[k]
    return gw, gb, gtable, gh_out, gc_out


def embed_mean_fwd(table, ids):
    cdef double[:, ::1] TB = _c(table)
    cdef long[::1] IDS = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t e = TB.shape[1], T = IDS.shape[0]
    y = np.zeros(e)
    cdef double[::1] Y = y
    cdef Py_ssize_t t, k
    for t in range(T):
        for k in range(e):
            Y[k] += TB[IDS[t], k]
    for k in range(e):
        Y[k] /= T
    return y


def embed_mean_bwd(table, ids, gy):
    cdef double[:, ::1] TB = _c(table)
    cdef long[::1] IDS = np.ascontiguousarray(ids, dtype=np.int64)
    cdef double[::1] GY = _c(gy)
    cdef Py_ssize_t e = TB.shape[1], T = IDS.shape[0]
    gtable = np.zeros_like(np.asarray(table))
    cdef double[:, ::1] GT = gtable
    cdef Py_ssize_t t, k
    for t in range(T):
        for k in range(e):
            GT[IDS[t], k] += GY[k] / T
    return gtable


def matvec_fwd(m, v):
    cdef double[:, ::1] M = _c(m)
    cdef double[::1] V = _c(v)
    cdef Py_ssize_t n = M.shape[0], d = M.shape[1], j, k
    s = np.empty(n)
    cdef double[::1] S = s
    cdef double acc
    for j in range(n):
        acc = 0.0
        for k in range(d):
            acc += M[j, k] * V[k]
        S[j] = acc
    return s


def matvec_bwd(m, v, gs):
    cdef double[:, ::1] M = _c(m)
    cdef double[::1] V = _c(v)
    cdef double[::1] GS = _c(gs)
    cdef Py_ssize_t n = M.shape[0], d = M.shape[1], j, k
    gm = np.empty((n, d))
    gv = np.zeros(d)
    cdef double[:, ::1] GM = gm
    cdef double[::1] GV = gv
    cdef double g
    for j in range(n):
        g = GS[j]
        for k in range(d):
            GM[j, k] = g * V[k]
            GV[k] += g * M[j, k]
    return gm, gv


def wsum_fwd(m, w):
    cdef double[:, ::1] M = _c(m)
    cdef double[::1] Wt = _c(w)
    cdef Py_ssize_t n = M.shape[0], d = M.shape[1], j, k
    y = np.zeros(d)
    cdef double[::1] Y = y
    cdef double g
    for j in range(n):
        g = Wt[j]
        for k in range(d):
            Y[k] += g * M[j, k]
    return y


def wsum_bwd(m, w, gy):
    cdef double[:, ::1] M = _c(m)
    cdef double[::1] Wt = _c(w)
    cdef double[::1] GY = _c(gy)
    cdef Py_ssize_t n = M.shape[0], d = M.shape[1], j, k
    gm = np.empty((n, d))
    gw = np.zeros(n)
    cdef double[:, ::1] GM = gm
    cdef double[::1] GW = gw
    cdef double acc
    for j in range(n):
        acc = 0.0
        for k in range(d):
            GM[j, k] = Wt[j] * GY[k]
            acc += M[j, k] * GY[k]
        GW[j] = acc
    return gm, gw
