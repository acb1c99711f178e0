"""Pure-numpy kernel implementations.

Reference backend for the hot forward/backward kernels. The compiled
backend in ``_core.pyx`` mirrors these signatures exactly; either one can
serve the autodiff layer. All functions take C-contiguous float32 or
float64 arrays and never mutate their inputs (except ``adam_step``, whose
contract is in-place).
"""

import math

import numpy as np

name = "numpy"

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715


def softmax_fwd(x, inv_tau):
    """Row softmax of x * inv_tau, stabilized by max subtraction. x: (R, N)."""
    z = x * x.dtype.type(inv_tau)
    z = z - z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def softmax_bwd(y, g, inv_tau):
    """Gradient wrt the pre-scale input given softmax output y and upstream g."""
    dot = (g * y).sum(axis=1, keepdims=True)
    return (y * (g - dot)) * y.dtype.type(inv_tau)


def layer_norm_fwd(x, gain, bias, eps):
    """Per-row normalization with affine output. Returns (y, xhat, inv_std)."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv_std
    y = xhat * gain + bias
    return y, xhat, np.ascontiguousarray(inv_std[:, 0])


def layer_norm_bwd(g, xhat, inv_std, gain):
    """Gradients (gx, ggain, gbias) for layer_norm_fwd."""
    d = xhat.shape[1]
    dxhat = g * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    gx = (dxhat - m1 - xhat * m2) * inv_std[:, None]
    ggain = (g * xhat).sum(axis=0)
    gbias = g.sum(axis=0)
    return gx, ggain, gbias


def gelu_fwd(x):
    """Tanh-approximation GELU, elementwise over any shape."""
    c = x.dtype.type(GELU_C)
    a = x.dtype.type(GELU_A)
    t = np.tanh(c * (x + a * x * x * x))
    return x.dtype.type(0.5) * x * (1.0 + t)


def gelu_bwd(x, g):
    """Elementwise gradient of gelu_fwd."""
    c = x.dtype.type(GELU_C)
    a = x.dtype.type(GELU_A)
    t = np.tanh(c * (x + a * x * x * x))
    du = c * (1.0 + 3.0 * a * x * x)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
    return (g * dy).astype(x.dtype, copy=False)


def attention_fwd(q, k, v, num_heads, causal):
    """Scaled dot-product attention.

    q: (Lq, d), k/v: (Lk, d); d split into num_heads segments. When causal,
    Lq == Lk and position i attends to keys 0..i. Returns (out (Lq, d),
    weights (H, Lq, Lk)) with weights kept for the backward pass.
    """
    lq, d = q.shape
    lk = k.shape[0]
    h = num_heads
    dh = d // h
    scale = 1.0 / math.sqrt(dh)
    qh = q.reshape(lq, h, dh)
    kh = k.reshape(lk, h, dh)
    vh = v.reshape(lk, h, dh)
    scores = np.einsum("ihd,jhd->hij", qh, kh) * q.dtype.type(scale)
    if causal:
        mask = np.triu(np.ones((lq, lk), dtype=bool), k=1)
        scores[:, mask] = -np.inf
    scores -= scores.max(axis=2, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=2, keepdims=True)
    out = np.einsum("hij,jhd->ihd", scores, vh).reshape(lq, d)
    return np.ascontiguousarray(out), np.ascontiguousarray(scores)


def attention_bwd(g, q, k, v, weights, num_heads, causal):
    """Gradients (gq, gk, gv) for attention_fwd; weights from the forward."""
    lq, d = q.shape
    lk = k.shape[0]
    h = num_heads
    dh = d // h
    scale = q.dtype.type(1.0 / math.sqrt(dh))
    gh = g.reshape(lq, h, dh)
    qh = q.reshape(lq, h, dh)
    kh = k.reshape(lk, h, dh)
    vh = v.reshape(lk, h, dh)
    gw = np.einsum("ihd,jhd->hij", gh, vh)
    dot = (gw * weights).sum(axis=2, keepdims=True)
    gs = weights * (gw - dot)
    gq = np.einsum("hij,jhd->ihd", gs, kh).reshape(lq, d) * scale
    gk = np.einsum("hij,ihd->jhd", gs, qh).reshape(lk, d) * scale
    gv = np.einsum("hij,ihd->jhd", weights, gh).reshape(lk, d)
    return (
        np.ascontiguousarray(gq),
        np.ascontiguousarray(gk),
        np.ascontiguousarray(gv),
    )


def adam_step(param, grad, m, v, t, lr, beta1, beta2, eps):
    """Bias-corrected Adam update, in place on param/m/v. t is 1-based."""
    dt = param.dtype.type
    b1, b2 = dt(beta1), dt(beta2)
    m *= b1
    m += (1.0 - b1) * grad
    v *= b2
    v += (1.0 - b2) * (grad * grad)
    mhat = m / dt(1.0 - beta1**t)
    vhat = v / dt(1.0 - beta2**t)
    param -= dt(lr) * mhat / (np.sqrt(vhat) + dt(eps))
