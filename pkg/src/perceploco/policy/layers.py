"""Layer primitives with hand-written backward passes.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the cache and the output gradient.  Linear weights are ``(out, in)``
and act on the last axis.  Convolutions work on single ``(C, H, W)`` maps.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LN_EPS = 1e-5


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0))).astype(x.dtype)


def linear_forward(x, w, b=None):
    y = x @ w.T
    if b is not None:
        y = y + b
    return y, x


def linear_backward(x, w, dy, has_bias=True):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = dy2.T @ x2
    db = dy2.sum(axis=0) if has_bias else None
    dx = dy @ w
    return dx, dw, db


def layernorm_forward(x, gamma, beta, eps=LN_EPS):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def layernorm_backward(cache, dy):
    xhat, inv, gamma = cache
    n = xhat.shape[-1]
    dgamma = (dy * xhat).reshape(-1, n).sum(axis=0)
    dbeta = dy.reshape(-1, n).sum(axis=0)
    dxhat = dy * gamma
    dx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(p, dp, axis=-1):
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


def conv_output_size(size: int, k: int = 3, stride: int = 2, pad: int = 1) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x, w, b, stride=2, pad=1):
    """``x`` is ``(C, H, W)``, ``w`` is ``(Cout, C, k, k)``."""
    c, h, wd = x.shape
    cout, _, k, _ = w.shape
    ho, wo = conv_output_size(h, k, stride, pad), conv_output_size(wd, k, stride, pad)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, : stride * ho : stride, : stride * wo : stride]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * k * k)
    out = cols @ w.reshape(cout, -1).T + b
    return out.T.reshape(cout, ho, wo), (cols, x.shape, w, stride, pad)


def conv2d_backward(cache, dout):
    cols, xshape, w, stride, pad = cache
    c, h, wd = xshape
    cout, _, k, _ = w.shape
    ho, wo = dout.shape[1:]
    dmat = dout.reshape(cout, ho * wo).T
    dw = (dmat.T @ cols).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(cout, -1)).reshape(ho, wo, c, k, k)
    dxp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=dout.dtype)
    for ki in range(k):
        for kj in range(k):
            dxp[:, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += dcols[:, :, :, ki, kj].transpose(2, 0, 1)
    return dxp[:, pad : pad + h, pad : pad + wd], dw, db


def avgpool2_forward(x):
    """2x2 mean pooling; an odd trailing row or column is dropped."""
    c, h, w = x.shape
    ho, wo = h // 2, w // 2
    return x[:, : 2 * ho, : 2 * wo].reshape(c, ho, 2, wo, 2).mean(axis=(2, 4)), x.shape


def avgpool2_backward(shape, dout):
    dx = np.zeros(shape, dtype=dout.dtype)
    c, ho, wo = dout.shape
    dx[:, : 2 * ho, : 2 * wo] = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2) / 4.0
    return dx


def gru_forward(x, h, w_ih, w_hh, b_ih, b_hh):
    """Gated recurrent unit (reset, update, candidate gate order)."""
    n = h.shape[-1]
    gi = w_ih @ x + b_ih
    gh = w_hh @ h + b_hh
    r = sigmoid(gi[:n] + gh[:n])
    z = sigmoid(gi[n : 2 * n] + gh[n : 2 * n])
    hn = gh[2 * n :]
    cand = np.tanh(gi[2 * n :] + r * hn)
    h_new = (1.0 - z) * cand + z * h
    return h_new, (x, h, r, z, cand, hn, w_ih, w_hh)


def gru_backward(cache, dh_new):
    x, h, r, z, cand, hn, w_ih, w_hh = cache
    dz = dh_new * (h - cand)
    dcand = dh_new * (1.0 - z)
    dh = dh_new * z
    da_n = dcand * (1.0 - cand * cand)
    dr = da_n * hn
    dhn = da_n * r
    da_r = dr * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    dgi = np.concatenate([da_r, da_z, da_n])
    dgh = np.concatenate([da_r, da_z, dhn])
    dw_ih = np.outer(dgi, x)
    dw_hh = np.outer(dgh, h)
    dx = w_ih.T @ dgi
    dh = dh + w_hh.T @ dgh
    return dx, dh, dw_ih, dw_hh, dgi, dgh


def lstm_forward(x, h, c, w_ih, w_hh, b):
    """Long short-term memory cell (input, forget, cell, output gate order)."""
    n = h.shape[-1]
    a = w_ih @ x + w_hh @ h + b
    i = sigmoid(a[:n])
    f = sigmoid(a[n : 2 * n])
    g = np.tanh(a[2 * n : 3 * n])
    o = sigmoid(a[3 * n :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return (h_new, c_new), (x, h, c, i, f, g, o, tc, w_ih, w_hh)


def lstm_backward(cache, dh_new, dc_new):
    x, h, c, i, f, g, o, tc, w_ih, w_hh = cache
    do = dh_new * tc
    dc = dc_new + dh_new * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c
    dc_prev = dc * f
    da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)])
    dw_ih = np.outer(da, x)
    dw_hh = np.outer(da, h)
    dx = w_ih.T @ da
    dh = w_hh.T @ da
    return dx, dh, dc_prev, dw_ih, dw_hh, da
