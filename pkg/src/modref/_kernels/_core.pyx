# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel core.

Signature-compatible with ``numpy_backend``; fused loops avoid the
temporaries the vectorized fallback allocates. Float32 and float64 are
dispatched through a fused type so gradient checks can run in 64-bit
through the same code path.
"""

import numpy as np

from libc.math cimport INFINITY, exp, pow, sqrt, tanh

name = "compiled"

ctypedef fused floating:
    float
    double

cdef double GELU_C = 0.7978845608028653558798921198687  # sqrt(2/pi)
cdef double GELU_A = 0.044715


cdef inline object _dtype_of(bint is_double):
    return np.float64 if is_double else np.float32


def softmax_fwd(floating[:, ::1] x, double inv_tau):
    cdef Py_ssize_t r = x.shape[0], n = x.shape[1], i, j
    out_np = np.empty((r, n), dtype=_dtype_of(floating is double))
    cdef floating[:, ::1] out = out_np
    cdef double m, s, z
    for i in range(r):
        m = -INFINITY
        for j in range(n):
            z = x[i, j] * inv_tau
            if z > m:
                m = z
        s = 0.0
        for j in range(n):
            z = exp(x[i, j] * inv_tau - m)
            out[i, j] = <floating> z
            s += z
        for j in range(n):
            out[i, j] = <floating> (out[i, j] / s)
    return out_np


def softmax_bwd(floating[:, ::1] y, floating[:, ::1] g, double inv_tau):
    cdef Py_ssize_t r = y.shape[0], n = y.shape[1], i, j
    out_np = np.empty((r, n), dtype=_dtype_of(floating is double))
    cdef floating[:, ::1] out = out_np
    cdef double dot
    for i in range(r):
        dot = 0.0
        for j in range(n):
            dot += g[i, j] * y[i, j]
        for j in range(n):
            out[i, j] = <floating> ((g[i, j] - dot) * y[i, j] * inv_tau)
    return out_np


def layer_norm_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias, double eps):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1], i, j
    dtype = _dtype_of(floating is double)
    y_np = np.empty((r, d), dtype=dtype)
    xhat_np = np.empty((r, d), dtype=dtype)
    istd_np = np.empty(r, dtype=dtype)
    cdef floating[:, ::1] y = y_np
    cdef floating[:, ::1] xhat = xhat_np
    cdef floating[::1] istd = istd_np
    cdef double mu, var, diff, s
    for i in range(r):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        s = 1.0 / sqrt(var + eps)
        istd[i] = <floating> s
        for j in range(d):
            diff = (x[i, j] - mu) * s
            xhat[i, j] = <floating> diff
            y[i, j] = <floating> (diff * gain[j] + bias[j])
    return y_np, xhat_np, istd_np


def layer_norm_bwd(floating[:, ::1] g, floating[:, ::1] xhat, floating[::1] inv_std, floating[::1] gain):
    cdef Py_ssize_t r = g.shape[0], d = g.shape[1], i, j
    dtype = _dtype_of(floating is double)
    gx_np = np.empty((r, d), dtype=dtype)
    ggain_np = np.zeros(d, dtype=dtype)
    gbias_np = np.zeros(d, dtype=dtype)
    cdef floating[:, ::1] gx = gx_np
    cdef floating[::1] ggain = ggain_np
    cdef floating[::1] gbias = gbias_np
    cdef double m1, m2, dxh
    for i in range(r):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dxh = g[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            dxh = g[i, j] * gain[j]
            gx[i, j] = <floating> ((dxh - m1 - xhat[i, j] * m2) * inv_std[i])
            ggain[j] = <floating> (ggain[j] + g[i, j] * xhat[i, j])
            gbias[j] = <floating> (gbias[j] + g[i, j])
    return gx_np, ggain_np, gbias_np


def gelu_fwd(x):
    out = np.empty_like(x)
    _gelu_fwd_flat(x.reshape(-1), out.reshape(-1))
    return out


def gelu_bwd(x, g):
    out = np.empty_like(x)
    _gelu_bwd_flat(x.reshape(-1), np.ascontiguousarray(g).reshape(-1), out.reshape(-1))
    return out


def _gelu_fwd_flat(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double t, xi
    for i in range(n):
        xi = x[i]
        t = tanh(GELU_C * (xi + GELU_A * xi * xi * xi))
        out[i] = <floating> (0.5 * xi * (1.0 + t))


def _gelu_bwd_flat(floating[::1] x, floating[::1] g, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double t, xi, du
    for i in range(n):
        xi = x[i]
        t = tanh(GELU_C * (xi + GELU_A * xi * xi * xi))
        du = GELU_C * (1.0 + 3.0 * GELU_A * xi * xi)
        out[i] = <floating> (g[i] * (0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * du))
    return None


def attention_fwd(floating[:, ::1] q, floating[:, ::1] k, floating[:, ::1] v, int num_heads, bint causal):
    cdef Py_ssize_t lq = q.shape[0], lk = k.shape[0], d = q.shape[1]
    cdef Py_ssize_t h = num_heads, dh = d // num_heads
    dtype = _dtype_of(floating is double)
    out_np = np.zeros((lq, d), dtype=dtype)
    w_np = np.zeros((h, lq, lk), dtype=dtype)
    cdef floating[:, ::1] out = out_np
    cdef floating[:, :, ::1] w = w_np
    cdef double scale = 1.0 / sqrt(<double> dh)
    cdef Py_ssize_t hi, off, i, j, c, lim
    cdef double acc, m, s
    for hi in range(h):
        off = hi * dh
        for i in range(lq):
            lim = i + 1 if causal else lk
            m = -INFINITY
            for j in range(lim):
                acc = 0.0
                for c in range(dh):
                    acc += q[i, off + c] * k[j, off + c]
                acc *= scale
                w[hi, i, j] = <floating> acc
                if acc > m:
                    m = acc
            s = 0.0
            for j in range(lim):
                acc = exp(w[hi, i, j] - m)
                w[hi, i, j] = <floating> acc
                s += acc
            for j in range(lim):
                w[hi, i, j] = <floating> (w[hi, i, j] / s)
            for j in range(lim):
                for c in range(dh):
                    out[i, off + c] += <floating> (w[hi, i, j] * v[j, off + c])
    return out_np, w_np


def attention_bwd(floating[:, ::1] g, floating[:, ::1] q, floating[:, ::1] k, floating[:, ::1] v,
                  floating[:, :, ::1] w, int num_heads, bint causal):
    cdef Py_ssize_t lq = q.shape[0], lk = k.shape[0], d = q.shape[1]
    cdef Py_ssize_t h = num_heads, dh = d // num_heads
    dtype = _dtype_of(floating is double)
    gq_np = np.zeros((lq, d), dtype=dtype)
    gk_np = np.zeros((lk, d), dtype=dtype)
    gv_np = np.zeros((lk, d), dtype=dtype)
    gw_np = np.zeros(lk, dtype=dtype)
    cdef floating[:, ::1] gq = gq_np
    cdef floating[:, ::1] gk = gk_np
    cdef floating[:, ::1] gv = gv_np
    cdef floating[::1] gw = gw_np
    cdef double scale = 1.0 / sqrt(<double> dh)
    cdef Py_ssize_t hi, off, i, j, c, lim
    cdef double acc, dot, gs
    for hi in range(h):
        off = hi * dh
        for i in range(lq):
            lim = i + 1 if causal else lk
            dot = 0.0
            for j in range(lim):
                acc = 0.0
                for c in range(dh):
                    acc += g[i, off + c] * v[j, off + c]
                gw[j] = <floating> acc
                dot += acc * w[hi, i, j]
            for j in range(lim):
                gs = w[hi, i, j] * (gw[j] - dot)
                for c in range(dh):
                    gq[i, off + c] += <floating> (scale * gs * k[j, off + c])
                    gk[j, off + c] += <floating> (scale * gs * q[i, off + c])
                    gv[j, off + c] += <floating> (w[hi, i, j] * g[i, off + c])
    return gq_np, gk_np, gv_np


def adam_step(floating[::1] param, floating[::1] grad, floating[::1] m, floating[::1] v,
              long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, <double> t)
    cdef double bc2 = 1.0 - pow(beta2, <double> t)
    cdef double mi, vi
    for i in range(n):
        mi = beta1 * m[i] + (1.0 - beta1) * grad[i]
        vi = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        m[i] = <floating> mi
        v[i] = <floating> vi
        param[i] = <floating> (param[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps))
