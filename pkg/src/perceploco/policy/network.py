"""Cross-modal recurrent locomotion policy: blocks, composed forward, analytic backward.

Data flow for one control step::

    depth ──► tokenizer ──► tokens Z ─────────────┐
      │                                          ▼
      └──► velocity LSTM ──► v̂ ─► proprio MLP ─► e_p ─► cross-attention ─► ē
                               ▲                    │
    proprio o_p ───────────────┘                    ▼
                                      x = [e_p; ē] ─► gated residual ─► f
                                                    f ─► GRU ─► W_h h = z
                                         (z, f) ─► highway gate ─► y ─► action head ─► a

Each block has a ``*_forward`` returning ``(outputs, cache)`` and a
``*_backward`` returning ``(param_grads, input_grads)``.  Parameter
gradients are dicts keyed by the same names as :class:`PolicyParams`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import RangeError, ShapeError, SpecificationError, StateError
from . import layers as L


@dataclass(frozen=True)
class PolicyDims:
    n_joints: int = 12
    token_dim: int = 64
    heads: int = 4
    image_hw: tuple[int, int] = (48, 64)
    conv_channels: tuple[int, ...] = (8, 16, 32)
    proprio_hidden: int = 128
    grf_hidden: int = 128
    head_hidden: tuple[int, ...] = (128, 128)
    vel_channels: tuple[int, ...] = (4, 4)
    vel_features: int = 32
    vel_hidden: int = 64

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_hw", tuple(int(v) for v in self.image_hw))
        for name in ("conv_channels", "head_hidden", "vel_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.n_joints < 1 or self.token_dim < 1 or self.heads < 1:
            raise SpecificationError("dims must be positive")
        if self.token_dim % self.heads:
            raise SpecificationError("token_dim must be divisible by heads")
        h, w = self.token_grid
        if h < 1 or w < 1:
            raise SpecificationError("image too small for the convolution stack")

    @property
    def proprio_dim(self) -> int:
        return 9 + 3 * self.n_joints

    @property
    def fused_dim(self) -> int:
        return 2 * self.token_dim

    @property
    def gru_hidden(self) -> int:
        return 2 * self.token_dim

    @property
    def head_dim(self) -> int:
        return self.token_dim // self.heads

    def _reduced(self, n_convs: int) -> tuple[int, int]:
        h, w = self.image_hw
        for _ in range(n_convs):
            h, w = L.conv_output_size(h), L.conv_output_size(w)
        return h, w

    @property
    def token_grid(self) -> tuple[int, int]:
        h, w = self._reduced(len(self.conv_channels))
        return h // 2, w // 2

    @property
    def n_tokens(self) -> int:
        h, w = self.token_grid
        return h * w

    @property
    def vel_flat(self) -> int:
        h, w = self._reduced(len(self.vel_channels))
        return self.vel_channels[-1] * h * w

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyDims":
        return cls(**data)


def param_shapes(dims: PolicyDims) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes; the order fixes initialization and file layout."""
    d, d2 = dims.token_dim, dims.fused_dim
    shapes: dict[str, tuple[int, ...]] = {}
    c_in = 1
    for k, c in enumerate(dims.conv_channels):
        shapes[f"tok.conv{k}.w"] = (c, c_in, 3, 3)
        shapes[f"tok.conv{k}.b"] = (c,)
        c_in = c
    shapes["tok.proj.w"] = (d, c_in)
    shapes["tok.proj.b"] = (d,)

    c_in = 1
    for k, c in enumerate(dims.vel_channels):
        shapes[f"vel.conv{k}.w"] = (c, c_in, 3, 3)
        shapes[f"vel.conv{k}.b"] = (c,)
        c_in = c
    shapes["vel.proj.w"] = (dims.vel_features, dims.vel_flat)
    shapes["vel.proj.b"] = (dims.vel_features,)
    hv = dims.vel_hidden
    shapes["vel.lstm.w_ih"] = (4 * hv, dims.proprio_dim + dims.vel_features)
    shapes["vel.lstm.w_hh"] = (4 * hv, hv)
    shapes["vel.lstm.b"] = (4 * hv,)
    shapes["vel.out.w"] = (3, hv)
    shapes["vel.out.b"] = (3,)

    shapes["prop.l0.w"] = (dims.proprio_hidden, dims.proprio_dim + 3)
    shapes["prop.l0.b"] = (dims.proprio_hidden,)
    shapes["prop.l1.w"] = (d, dims.proprio_hidden)
    shapes["prop.l1.b"] = (d,)

    shapes["attn.ln_q.g"] = (d,)
    shapes["attn.ln_q.b"] = (d,)
    shapes["attn.ln_kv.g"] = (d,)
    shapes["attn.ln_kv.b"] = (d,)
    for name in ("wq", "wk", "wv", "wo"):
        shapes[f"attn.{name}"] = (d, d)
    shapes["attn.bo"] = (d,)

    shapes["grf.ln.g"] = (d2,)
    shapes["grf.ln.b"] = (d2,)
    shapes["grf.w1"] = (dims.grf_hidden, d2)
    shapes["grf.b1"] = (dims.grf_hidden,)
    shapes["grf.w2"] = (2 * d2, dims.grf_hidden)
    shapes["grf.b2"] = (2 * d2,)

    hg = dims.gru_hidden
    shapes["gru.w_ih"] = (3 * hg, d2)
    shapes["gru.w_hh"] = (3 * hg, hg)
    shapes["gru.b_ih"] = (3 * hg,)
    shapes["gru.b_hh"] = (3 * hg,)
    shapes["rec.w"] = (d2, hg)

    shapes["hw.w"] = (d2, 2 * d2)
    shapes["hw.b"] = (d2,)

    width = d2
    for k, hdim in enumerate(dims.head_hidden):
        shapes[f"head.l{k}.w"] = (hdim, width)
        shapes[f"head.l{k}.b"] = (hdim,)
        width = hdim
    shapes["head.out.w"] = (dims.n_joints, width)
    shapes["head.out.b"] = (dims.n_joints,)
    return shapes


BLOCK_PREFIXES = {
    "tokenizer": ("tok.",),
    "velocity": ("vel.",),
    "proprio": ("prop.",),
    "attention": ("attn.",),
    "grf": ("grf.",),
    "gru": ("gru.", "rec."),
    "highway": ("hw.",),
    "head": ("head.",),
}


def block_params(names, block: str) -> list[str]:
    prefixes = BLOCK_PREFIXES[block]
    return [n for n in names if n.startswith(prefixes)]


class PolicyParams:
    """Named parameter tensors plus the dims that shaped them.

    Arrays are exposed read-only; use :meth:`with_tensors` or :meth:`astype` to
    derive modified copies.
    """

    def __init__(self, dims: PolicyDims, tensors: dict[str, np.ndarray], dtype=np.float64):
        expected = param_shapes(dims)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise ShapeError(f"parameter names mismatch (missing {missing}, unexpected {extra})")
        self.dims = dims
        self.dtype = np.dtype(dtype)
        self._t: dict[str, np.ndarray] = {}
        for name, shape in expected.items():
            arr = np.array(tensors[name], dtype=self.dtype)
            if arr.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise SpecificationError(f"{name} has non-finite entries")
            arr.setflags(write=False)
            self._t[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._t[name]

    def __iter__(self):
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def items(self):
        return self._t.items()

    def names(self) -> list[str]:
        return list(self._t)

    def with_tensors(self, updates: dict[str, np.ndarray]) -> "PolicyParams":
        merged = dict(self._t)
        merged.update(updates)
        return PolicyParams(self.dims, merged, self.dtype)

    def astype(self, dtype) -> "PolicyParams":
        return PolicyParams(self.dims, self._t, dtype)

    def count(self) -> int:
        return sum(a.size for a in self._t.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyParams):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.names() == other.names()
            and all(np.array_equal(self[n], other[n]) for n in self)
        )


_BIAS_WEIGHT = {"attn.bo": "attn.wo", "grf.b1": "grf.w1", "grf.b2": "grf.w2"}


def init_params(dims: PolicyDims | None = None, seed: int = 0, dtype=np.float64) -> PolicyParams:
    """Seeded fan-in uniform initialization; layer-norm scales start at 1 and offsets at 0.

    Values are drawn in float32 so that they survive the weight container
    unchanged.
    """
    dims = dims or PolicyDims()
    rng = np.random.default_rng(seed)
    shapes = param_shapes(dims)
    tensors = {}
    for name, shape in shapes.items():
        if ".ln" in name:
            tensors[name] = np.ones(shape) if name.endswith(".g") else np.zeros(shape)
            continue
        if name.startswith("gru."):
            fan = dims.gru_hidden
        elif name.startswith("vel.lstm."):
            fan = dims.vel_hidden
        elif len(shape) > 1:
            fan = int(np.prod(shape[1:]))
        else:
            fan = int(np.prod(shapes[_BIAS_WEIGHT.get(name, name[:-1] + "w")][1:]))
        bound = 1.0 / math.sqrt(fan)
        tensors[name] = rng.uniform(-bound, bound, shape).astype(np.float32)
    return PolicyParams(dims, tensors, dtype)


def zero_grads(params: PolicyParams, names=None) -> dict[str, np.ndarray]:
    names = params.names() if names is None else names
    return {n: np.zeros_like(params[n]) for n in names}


def _acc(grads: dict, name: str, g) -> None:
    if name in grads:
        grads[name] = grads[name] + g
    else:
        grads[name] = np.array(g, copy=True)


# ---------------------------------------------------------------------------
# observation assembly


def assemble_proprio(ang_vel, gravity, command, q, q0, qd, action_prev) -> np.ndarray:
    """Proprioceptive vector: angular velocity, gravity, command, q - q0, qd, previous action."""
    parts = [np.asarray(v, dtype=np.float64).ravel() for v in (ang_vel, gravity, command)]
    for v, name in zip(parts, ("ang_vel", "gravity", "command")):
        if v.shape != (3,):
            raise ShapeError(f"{name} must have 3 entries")
    q, q0, qd, a = (np.asarray(v, dtype=np.float64).ravel() for v in (q, q0, qd, action_prev))
    if not (q.shape == q0.shape == qd.shape == a.shape):
        raise ShapeError("joint vectors must share one length")
    return np.concatenate(parts + [q - q0, qd, a])


def _check_depth(depth, dims: PolicyDims, dtype) -> np.ndarray:
    depth = np.asarray(depth, dtype=dtype)
    if depth.shape != dims.image_hw:
        raise ShapeError(f"depth image must be {dims.image_hw}, got {depth.shape}")
    if np.any(~np.isfinite(depth)) or np.any(np.abs(depth) > 0.5):
        raise RangeError("normalized depth must lie in [-0.5, 0.5]")
    return depth


def _check_vec(v, n: int, name: str, dtype) -> np.ndarray:
    v = np.asarray(v, dtype=dtype)
    if v.shape != (n,):
        raise ShapeError(f"{name} must have shape ({n},), got {v.shape}")
    return v


# ---------------------------------------------------------------------------
# blocks


def tokenize_forward(P: PolicyParams, depth):
    """Conv stack (ELU) -> 2x2 average pool -> per-cell linear projection, tokens row-major."""
    dims = P.dims
    x = _check_depth(depth, dims, P.dtype)[None]
    convs = []
    for k in range(len(dims.conv_channels)):
        pre, cc = L.conv2d_forward(x, P[f"tok.conv{k}.w"], P[f"tok.conv{k}.b"])
        convs.append((cc, pre))
        x = L.elu(pre)
    pooled, pshape = L.avgpool2_forward(x)
    cells = pooled.reshape(pooled.shape[0], -1).T
    tokens = cells @ P["tok.proj.w"].T + P["tok.proj.b"]
    return tokens, {"convs": convs, "pshape": pshape, "pooled_shape": pooled.shape, "cells": cells}


def tokenize_backward(P: PolicyParams, cache, d_tokens):
    grads: dict = {}
    dcells, dw, db = L.linear_backward(cache["cells"], P["tok.proj.w"], d_tokens)
    grads["tok.proj.w"], grads["tok.proj.b"] = dw, db
    dx = L.avgpool2_backward(cache["pshape"], dcells.T.reshape(cache["pooled_shape"]))
    for k in reversed(range(len(cache["convs"]))):
        cc, pre = cache["convs"][k]
        dx, dw, db = L.conv2d_backward(cc, dx * L.elu_grad(pre))
        grads[f"tok.conv{k}.w"], grads[f"tok.conv{k}.b"] = dw, db
    return grads, dx[0]


def velocity_forward(P: PolicyParams, proprio, depth, h, c):
    """Depth compression + LSTM step; returns ``(v_hat, h_new, c_new)``."""
    dims = P.dims
    x = _check_depth(depth, dims, P.dtype)[None]
    proprio = _check_vec(proprio, dims.proprio_dim, "proprio", P.dtype)
    h = _check_vec(h, dims.vel_hidden, "velocity hidden state", P.dtype)
    c = _check_vec(c, dims.vel_hidden, "velocity cell state", P.dtype)
    convs = []
    for k in range(len(dims.vel_channels)):
        pre, cc = L.conv2d_forward(x, P[f"vel.conv{k}.w"], P[f"vel.conv{k}.b"])
        convs.append((cc, pre))
        x = L.elu(pre)
    flat = x.ravel()
    feat_pre = P["vel.proj.w"] @ flat + P["vel.proj.b"]
    feat = L.elu(feat_pre)
    inp = np.concatenate([proprio, feat])
    (h_new, c_new), lc = L.lstm_forward(inp, h, c, P["vel.lstm.w_ih"], P["vel.lstm.w_hh"], P["vel.lstm.b"])
    v = P["vel.out.w"] @ h_new + P["vel.out.b"]
    cache = {"convs": convs, "conv_shape": x.shape, "flat": flat, "feat_pre": feat_pre, "lstm": lc, "h_new": h_new}
    return (v, h_new, c_new), cache


def velocity_backward(P: PolicyParams, cache, dv, dh_new=None, dc_new=None):
    """Returns ``(grads, (d_proprio, d_depth, d_h, d_c))``."""
    dims = P.dims
    grads: dict = {}
    h_new = cache["h_new"]
    grads["vel.out.w"] = np.outer(dv, h_new)
    grads["vel.out.b"] = np.array(dv, copy=True)
    dh = P["vel.out.w"].T @ dv
    if dh_new is not None:
        dh = dh + dh_new
    dc = np.zeros_like(h_new) if dc_new is None else dc_new
    dinp, dh_prev, dc_prev, dw_ih, dw_hh, da = L.lstm_backward(cache["lstm"], dh, dc)
    grads["vel.lstm.w_ih"], grads["vel.lstm.w_hh"], grads["vel.lstm.b"] = dw_ih, dw_hh, da
    dprop = dinp[: dims.proprio_dim]
    dfeat = dinp[dims.proprio_dim :] * L.elu_grad(cache["feat_pre"])
    grads["vel.proj.w"] = np.outer(dfeat, cache["flat"])
    grads["vel.proj.b"] = dfeat
    dx = (P["vel.proj.w"].T @ dfeat).reshape(cache["conv_shape"])
    for k in reversed(range(len(cache["convs"]))):
        cc, pre = cache["convs"][k]
        dx, dw, db = L.conv2d_backward(cc, dx * L.elu_grad(pre))
        grads[f"vel.conv{k}.w"], grads[f"vel.conv{k}.b"] = dw, db
    return grads, (dprop, dx[0], dh_prev, dc_prev)


def velocity_loss(v_hat, v_true) -> tuple[float, np.ndarray]:
    """Squared-error loss on the velocity estimate and its gradient w.r.t. ``v_hat``."""
    diff = np.asarray(v_hat, dtype=np.float64) - np.asarray(v_true, dtype=np.float64)
    return float(diff @ diff), 2.0 * diff


def proprio_forward(P: PolicyParams, proprio, v_hat):
    inp = np.concatenate([np.asarray(proprio, dtype=P.dtype), np.asarray(v_hat, dtype=P.dtype)])
    pre = P["prop.l0.w"] @ inp + P["prop.l0.b"]
    hid = L.elu(pre)
    e = P["prop.l1.w"] @ hid + P["prop.l1.b"]
    return e, {"inp": inp, "pre": pre, "hid": hid}


def proprio_backward(P: PolicyParams, cache, de):
    grads = {"prop.l1.w": np.outer(de, cache["hid"]), "prop.l1.b": np.array(de, copy=True)}
    dpre = (P["prop.l1.w"].T @ de) * L.elu_grad(cache["pre"])
    grads["prop.l0.w"] = np.outer(dpre, cache["inp"])
    grads["prop.l0.b"] = dpre
    dinp = P["prop.l0.w"].T @ dpre
    n = P.dims.proprio_dim
    return grads, (dinp[:n], dinp[n:])


def attention_forward(P: PolicyParams, e_p, tokens):
    """Single-query multi-head attention of the proprio token over depth tokens."""
    dims = P.dims
    d, nh, dh = dims.token_dim, dims.heads, dims.head_dim
    e_p = np.asarray(e_p, dtype=P.dtype)
    tokens = np.asarray(tokens, dtype=P.dtype)
    if e_p.shape != (d,) or tokens.ndim != 2 or tokens.shape[1] != d or tokens.shape[0] < 1:
        raise ShapeError(f"attention expects query ({d},) and tokens (N, {d})")
    qn, lnq = L.layernorm_forward(e_p, P["attn.ln_q.g"], P["attn.ln_q.b"])
    kvn, lnkv = L.layernorm_forward(tokens, P["attn.ln_kv.g"], P["attn.ln_kv.b"])
    q = qn @ P["attn.wq"].T
    k = kvn @ P["attn.wk"].T
    v = kvn @ P["attn.wv"].T
    qh = q.reshape(nh, dh)
    kh = k.reshape(-1, nh, dh).transpose(1, 0, 2)
    vh = v.reshape(-1, nh, dh).transpose(1, 0, 2)
    scale = 1.0 / math.sqrt(dh)
    scores = np.einsum("hd,hnd->hn", qh, kh) * scale
    weights = L.softmax(scores, axis=-1)
    heads = np.einsum("hn,hnd->hd", weights, vh)
    concat = heads.reshape(d)
    out = P["attn.wo"] @ concat + P["attn.bo"]
    cache = {
        "qn": qn, "lnq": lnq, "kvn": kvn, "lnkv": lnkv,
        "qh": qh, "kh": kh, "vh": vh, "weights": weights, "concat": concat, "scale": scale,
    }
    return out, cache


def attention_backward(P: PolicyParams, cache, dout):
    dims = P.dims
    d, nh, dh = dims.token_dim, dims.heads, dims.head_dim
    grads = {"attn.wo": np.outer(dout, cache["concat"]), "attn.bo": np.array(dout, copy=True)}
    dheads = (P["attn.wo"].T @ dout).reshape(nh, dh)
    w = cache["weights"]
    dw = np.einsum("hd,hnd->hn", dheads, cache["vh"])
    dvh = np.einsum("hn,hd->hnd", w, dheads)
    dscores = L.softmax_backward(w, dw, axis=-1) * cache["scale"]
    dqh = np.einsum("hn,hnd->hd", dscores, cache["kh"])
    dkh = np.einsum("hn,hd->hnd", dscores, cache["qh"])
    n = w.shape[1]
    dq = dqh.reshape(d)
    dk = dkh.transpose(1, 0, 2).reshape(n, d)
    dv = dvh.transpose(1, 0, 2).reshape(n, d)
    grads["attn.wq"] = np.outer(dq, cache["qn"])
    grads["attn.wk"] = dk.T @ cache["kvn"]
    grads["attn.wv"] = dv.T @ cache["kvn"]
    dqn = P["attn.wq"].T @ dq
    dkvn = dk @ P["attn.wk"] + dv @ P["attn.wv"]
    de, grads["attn.ln_q.g"], grads["attn.ln_q.b"] = L.layernorm_backward(cache["lnq"], dqn)
    dtok, grads["attn.ln_kv.g"], grads["attn.ln_kv.b"] = L.layernorm_backward(cache["lnkv"], dkvn)
    return grads, (de, dtok)


def grf_forward(P: PolicyParams, x):
    x = _check_vec(x, P.dims.fused_dim, "fusion input", P.dtype)
    xn, ln = L.layernorm_forward(x, P["grf.ln.g"], P["grf.ln.b"])
    pre = P["grf.w1"] @ xn + P["grf.b1"]
    hid = L.elu(pre)
    cg = P["grf.w2"] @ hid + P["grf.b2"]
    n = x.shape[0]
    c, g = cg[:n], cg[n:]
    sg = L.sigmoid(g)
    f = x + c * sg
    return f, {"ln": ln, "xn": xn, "pre": pre, "hid": hid, "c": c, "sg": sg}


def grf_backward(P: PolicyParams, cache, df):
    c, sg = cache["c"], cache["sg"]
    dcg = np.concatenate([df * sg, df * c * sg * (1.0 - sg)])
    grads = {"grf.w2": np.outer(dcg, cache["hid"]), "grf.b2": dcg}
    dpre = (P["grf.w2"].T @ dcg) * L.elu_grad(cache["pre"])
    grads["grf.w1"] = np.outer(dpre, cache["xn"])
    grads["grf.b1"] = dpre
    dxn = P["grf.w1"].T @ dpre
    dx_ln, grads["grf.ln.g"], grads["grf.ln.b"] = L.layernorm_backward(cache["ln"], dxn)
    return grads, df + dx_ln


def recurrent_forward(P: PolicyParams, f, h):
    """GRU step then the recurrent projection; returns ``(h_new, z_rec)``."""
    h = _check_vec(h, P.dims.gru_hidden, "GRU hidden state", P.dtype)
    f = _check_vec(f, P.dims.fused_dim, "fused feature", P.dtype)
    h_new, gc = L.gru_forward(f, h, P["gru.w_ih"], P["gru.w_hh"], P["gru.b_ih"], P["gru.b_hh"])
    z = P["rec.w"] @ h_new
    return (h_new, z), {"gru": gc, "h_new": h_new}


def recurrent_backward(P: PolicyParams, cache, dz, dh_new=None):
    grads = {"rec.w": np.outer(dz, cache["h_new"])}
    dh = P["rec.w"].T @ dz
    if dh_new is not None:
        dh = dh + dh_new
    df, dh_prev, dw_ih, dw_hh, dgi, dgh = L.gru_backward(cache["gru"], dh)
    grads["gru.w_ih"], grads["gru.w_hh"] = dw_ih, dw_hh
    grads["gru.b_ih"], grads["gru.b_hh"] = dgi, dgh
    return grads, (df, dh_prev)


def highway_forward(P: PolicyParams, z, f):
    """Convex blend ``beta * z + (1 - beta) * f`` with a learned sigmoid gate."""
    zf = np.concatenate([z, f])
    beta = L.sigmoid(P["hw.w"] @ zf + P["hw.b"])
    y = beta * z + (1.0 - beta) * f
    return (y, beta), {"zf": zf, "beta": beta, "z": z, "f": f}


def highway_backward(P: PolicyParams, cache, dy):
    beta, z, f = cache["beta"], cache["z"], cache["f"]
    dpre = dy * (z - f) * beta * (1.0 - beta)
    grads = {"hw.w": np.outer(dpre, cache["zf"]), "hw.b": dpre}
    dzf = P["hw.w"].T @ dpre
    n = z.shape[0]
    return grads, (dy * beta + dzf[:n], dy * (1.0 - beta) + dzf[n:])


def head_forward(P: PolicyParams, y):
    acts = [np.asarray(y, dtype=P.dtype)]
    pres = []
    for k in range(len(P.dims.head_hidden)):
        pre = P[f"head.l{k}.w"] @ acts[-1] + P[f"head.l{k}.b"]
        pres.append(pre)
        acts.append(L.elu(pre))
    a = P["head.out.w"] @ acts[-1] + P["head.out.b"]
    return a, {"acts": acts, "pres": pres}


def head_backward(P: PolicyParams, cache, da):
    acts, pres = cache["acts"], cache["pres"]
    grads = {"head.out.w": np.outer(da, acts[-1]), "head.out.b": np.array(da, copy=True)}
    dh = P["head.out.w"].T @ da
    for k in reversed(range(len(pres))):
        dpre = dh * L.elu_grad(pres[k])
        grads[f"head.l{k}.w"] = np.outer(dpre, acts[k])
        grads[f"head.l{k}.b"] = dpre
        dh = P[f"head.l{k}.w"].T @ dpre
    return grads, dh


# ---------------------------------------------------------------------------
# composed step


@dataclass
class PolicyState:
    gru_h: np.ndarray
    vel_h: np.ndarray
    vel_c: np.ndarray
    action_prev: np.ndarray

    @classmethod
    def zeros(cls, dims: PolicyDims, dtype=np.float64) -> "PolicyState":
        return cls(
            gru_h=np.zeros(dims.gru_hidden, dtype),
            vel_h=np.zeros(dims.vel_hidden, dtype),
            vel_c=np.zeros(dims.vel_hidden, dtype),
            action_prev=np.zeros(dims.n_joints, dtype),
        )

    def reset(self) -> None:
        for arr in (self.gru_h, self.vel_h, self.vel_c, self.action_prev):
            arr[...] = 0.0

    def copy(self) -> "PolicyState":
        return PolicyState(self.gru_h.copy(), self.vel_h.copy(), self.vel_c.copy(), self.action_prev.copy())


@dataclass
class ForwardTrace:
    """Intermediates of one step; ``caches`` feeds :func:`backward` and is dropped by :meth:`release`."""

    proprio: np.ndarray
    velocity: np.ndarray
    tokens: np.ndarray
    e_p: np.ndarray
    e_bar: np.ndarray
    x: np.ndarray
    f: np.ndarray
    h: np.ndarray
    z_rec: np.ndarray
    beta: np.ndarray
    y: np.ndarray
    attention: np.ndarray
    action: np.ndarray
    caches: dict | None = field(default=None, repr=False)

    def release(self) -> None:
        self.caches = None


@dataclass
class StepOutput:
    action: np.ndarray
    q_target: np.ndarray
    state: PolicyState
    trace: ForwardTrace


def forward(proprio, depth, state: PolicyState, params: PolicyParams, q0=None) -> StepOutput:
    """One control step; ``state`` is not mutated, the successor is returned."""
    if state is None:
        raise StateError("policy state is not initialized")
    dims = params.dims
    proprio = _check_vec(proprio, dims.proprio_dim, "proprio", params.dtype)
    depth = _check_depth(depth, dims, params.dtype)
    (v_hat, vh, vc), c_vel = velocity_forward(params, proprio, depth, state.vel_h, state.vel_c)
    e_p, c_prop = proprio_forward(params, proprio, v_hat)
    tokens, c_tok = tokenize_forward(params, depth)
    e_bar, c_att = attention_forward(params, e_p, tokens)
    x = np.concatenate([e_p, e_bar])
    f, c_grf = grf_forward(params, x)
    (h, z), c_rec = recurrent_forward(params, f, state.gru_h)
    (y, beta), c_hw = highway_forward(params, z, f)
    a, c_head = head_forward(params, y)
    q0 = np.zeros(dims.n_joints, params.dtype) if q0 is None else _check_vec(q0, dims.n_joints, "q0", params.dtype)
    trace = ForwardTrace(
        proprio=proprio, velocity=v_hat, tokens=tokens, e_p=e_p, e_bar=e_bar, x=x, f=f, h=h,
        z_rec=z, beta=beta, y=y, attention=c_att["weights"], action=a,
        caches={"vel": c_vel, "prop": c_prop, "tok": c_tok, "att": c_att, "grf": c_grf,
                "rec": c_rec, "hw": c_hw, "head": c_head},
    )
    new_state = PolicyState(gru_h=h, vel_h=vh, vel_c=vc, action_prev=a.copy())
    return StepOutput(action=a, q_target=q0 + a, state=new_state, trace=trace)


@dataclass
class Gradients:
    params: dict[str, np.ndarray]
    inputs: dict[str, np.ndarray]


def backward(trace: ForwardTrace, params: PolicyParams, d_action, d_velocity=None,
             d_gru_h=None, d_vel_h=None, d_vel_c=None) -> Gradients:
    """Gradients of a scalar loss given its derivative w.r.t. the step outputs.

    ``d_velocity`` is the loss gradient on the velocity estimate (e.g. from
    :func:`velocity_loss`); ``d_gru_h``, ``d_vel_h`` and ``d_vel_c`` are
    gradients flowing back from later steps into the new recurrent state.
    """
    if trace is None or trace.caches is None:
        raise StateError("backward needs a trace retained from forward")
    c = trace.caches
    grads: dict = {}

    def merge(g):
        for k, v in g.items():
            _acc(grads, k, v)

    g, dy = head_backward(params, c["head"], np.asarray(d_action, dtype=params.dtype))
    merge(g)
    g, (dz, df_hw) = highway_backward(params, c["hw"], dy)
    merge(g)
    g, (df_rec, dh_prev) = recurrent_backward(params, c["rec"], dz, d_gru_h)
    merge(g)
    g, dx = grf_backward(params, c["grf"], df_hw + df_rec)
    merge(g)
    d = params.dims.token_dim
    g, (de_att, dtok) = attention_backward(params, c["att"], dx[d:])
    merge(g)
    g, d_depth = tokenize_backward(params, c["tok"], dtok)
    merge(g)
    g, (dprop, dv) = proprio_backward(params, c["prop"], dx[:d] + de_att)
    merge(g)
    if d_velocity is not None:
        dv = dv + d_velocity
    g, (dprop_v, d_depth_v, dvh, dvc) = velocity_backward(params, c["vel"], dv, d_vel_h, d_vel_c)
    merge(g)
    for name in params:
        if name not in grads:
            grads[name] = np.zeros_like(params[name])
    return Gradients(
        params={n: grads[n] for n in params},
        inputs={
            "proprio": dprop + dprop_v,
            "depth": d_depth + d_depth_v,
            "gru_h": dh_prev,
            "vel_h": dvh,
            "vel_c": dvc,
        },
    )


def rollout_forward(proprios, depths, params: PolicyParams, state: PolicyState | None = None, q0=None):
    """Sequential forward over a trajectory; returns the list of step outputs."""
    state = state or PolicyState.zeros(params.dims, params.dtype)
    outs = []
    for o, dimg in zip(proprios, depths):
        out = forward(o, dimg, state, params, q0)
        outs.append(out)
        state = out.state
    return outs
