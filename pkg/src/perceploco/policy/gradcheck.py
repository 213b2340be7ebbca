"""Central finite-difference verification of every block's analytic backward.

For each block a scalar probe ``loss = <w, outputs>`` with random ``w`` is
differentiated along random unit directions in the joint space of block
parameters and block inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import network as N

BLOCKS = ("tokenizer", "attention", "grf", "gru", "highway", "head", "velocity", "proprio", "network")
# the network entry spans every parameter; it is not a block
_NETWORK_PREFIXES = tuple(p for ps in N.BLOCK_PREFIXES.values() for p in ps)


class _Overlay:
    """Parameter view with some tensors swapped out, without re-validation."""

    def __init__(self, base: N.PolicyParams, tensors: dict[str, np.ndarray]):
        self.dims = base.dims
        self.dtype = base.dtype
        self._base = base
        self._t = tensors

    def __getitem__(self, name):
        t = self._t.get(name)
        return self._base[name] if t is None else t

    def __iter__(self):
        return iter(self._base)


def _inputs(block: str, dims: N.PolicyDims, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, d2 = dims.token_dim, dims.fused_dim
    depth = rng.uniform(-0.4, 0.4, dims.image_hw)
    proprio = rng.normal(0.0, 0.5, dims.proprio_dim)
    table = {
        "tokenizer": {"depth": depth},
        "velocity": {
            "proprio": proprio,
            "depth": depth,
            "h": rng.uniform(-0.9, 0.9, dims.vel_hidden),
            "c": rng.normal(0.0, 0.5, dims.vel_hidden),
        },
        "proprio": {"proprio": proprio, "v": rng.normal(0.0, 0.5, 3)},
        "attention": {"e_p": rng.normal(0.0, 1.0, d), "tokens": rng.normal(0.0, 1.0, (dims.n_tokens, d))},
        "grf": {"x": rng.normal(0.0, 1.0, d2)},
        "gru": {"f": rng.normal(0.0, 1.0, d2), "h": rng.uniform(-0.9, 0.9, dims.gru_hidden)},
        "highway": {"z": rng.normal(0.0, 1.0, d2), "f": rng.normal(0.0, 1.0, d2)},
        "head": {"y": rng.normal(0.0, 1.0, d2)},
        "network": {
            "proprio": proprio,
            "depth": depth,
            "gru_h": rng.uniform(-0.9, 0.9, dims.gru_hidden),
            "vel_h": rng.uniform(-0.9, 0.9, dims.vel_hidden),
            "vel_c": rng.normal(0.0, 0.5, dims.vel_hidden),
        },
    }
    return table[block]


def _run(block: str, P, x: dict):
    """Forward returning a tuple of output arrays and a closure mapping output grads to grads."""
    if block == "tokenizer":
        out, c = N.tokenize_forward(P, x["depth"])
        return (out,), lambda d: _pack(*N.tokenize_backward(P, c, d[0]), ("depth",))
    if block == "velocity":
        (v, h, cc), c = N.velocity_forward(P, x["proprio"], x["depth"], x["h"], x["c"])
        return (v, h, cc), lambda d: _pack(*N.velocity_backward(P, c, d[0], d[1], d[2]), ("proprio", "depth", "h", "c"))
    if block == "proprio":
        out, c = N.proprio_forward(P, x["proprio"], x["v"])
        return (out,), lambda d: _pack(*N.proprio_backward(P, c, d[0]), ("proprio", "v"))
    if block == "attention":
        out, c = N.attention_forward(P, x["e_p"], x["tokens"])
        return (out,), lambda d: _pack(*N.attention_backward(P, c, d[0]), ("e_p", "tokens"))
    if block == "grf":
        out, c = N.grf_forward(P, x["x"])
        return (out,), lambda d: _pack(*N.grf_backward(P, c, d[0]), ("x",))
    if block == "gru":
        (h, z), c = N.recurrent_forward(P, x["f"], x["h"])
        return (h, z), lambda d: _pack(*N.recurrent_backward(P, c, d[1], d[0]), ("f", "h"))
    if block == "highway":
        (y, _), c = N.highway_forward(P, x["z"], x["f"])
        return (y,), lambda d: _pack(*N.highway_backward(P, c, d[0]), ("z", "f"))
    if block == "head":
        out, c = N.head_forward(P, x["y"])
        return (out,), lambda d: _pack(*N.head_backward(P, c, d[0]), ("y",))
    if block == "network":
        state = N.PolicyState(x["gru_h"], x["vel_h"], x["vel_c"], np.zeros(P.dims.n_joints))
        out = N.forward(x["proprio"], x["depth"], state, P)
        s = out.state

        def back(d):
            g = N.backward(out.trace, P, d[0], d[1], d[2], d[3], d[4])
            return g.params, {k: g.inputs[k] for k in ("proprio", "depth", "gru_h", "vel_h", "vel_c")}

        return (out.action, out.trace.velocity, s.gru_h, s.vel_h, s.vel_c), back
    raise KeyError(block)


def _pack(param_grads, input_grads, names):
    if not isinstance(input_grads, tuple):
        input_grads = (input_grads,)
    return param_grads, dict(zip(names, input_grads))


@dataclass
class BlockResult:
    block: str
    max_rel_error: float
    directions: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def check_block(block: str, params: N.PolicyParams, rng: np.random.Generator,
                directions: int = 1000, step: float = 1e-5) -> BlockResult:
    t0 = time.perf_counter()
    params = params.astype(np.float64)
    if block == "network":
        names = [n for n in params if n.startswith(_NETWORK_PREFIXES)]
    else:
        names = N.block_params(params.names(), block)
    x0 = _inputs(block, params.dims, rng)
    outs, back = _run(block, params, x0)
    probes = [rng.standard_normal(o.shape) for o in outs]
    pgrad, igrad = back(probes)

    keys = [("p", n) for n in names] + [("x", n) for n in x0]
    base = {("p", n): params[n] for n in names}
    base.update({("x", n): x0[n] for n in x0})
    analytic = {("p", n): pgrad[n] for n in names}
    analytic.update({("x", n): igrad[n] for n in x0})
    sizes = [base[k].size for k in keys]
    flat_grad = np.concatenate([np.asarray(analytic[k], dtype=np.float64).ravel() for k in keys])

    def loss(offset: np.ndarray) -> float:
        parts = np.split(offset, np.cumsum(sizes)[:-1])
        ptens, xs = {}, {}
        for k, part in zip(keys, parts):
            val = base[k] + part.reshape(base[k].shape)
            (ptens if k[0] == "p" else xs)[k[1]] = val
        o, _ = _run(block, _Overlay(params, ptens), xs)
        return float(sum(np.sum(w * oi) for w, oi in zip(probes, o)))

    worst = 0.0
    for _ in range(directions):
        u = rng.standard_normal(flat_grad.size)
        u /= np.linalg.norm(u)
        numeric = (loss(step * u) - loss(-step * u)) / (2.0 * step)
        exact = float(flat_grad @ u)
        denom = max(abs(numeric), abs(exact), 1e-8)
        worst = max(worst, abs(numeric - exact) / denom)
    return BlockResult(block, worst, directions, time.perf_counter() - t0)


def run_gradcheck(seed: int = 0, directions: int = 1000, blocks=BLOCKS, dims: N.PolicyDims | None = None,
                  step: float = 1e-5) -> list[BlockResult]:
    rng = np.random.default_rng(seed)
    params = perturbed_params(dims or N.PolicyDims(), rng)
    return [check_block(b, params, rng, directions, step) for b in blocks]


def perturbed_params(dims: N.PolicyDims, rng: np.random.Generator) -> N.PolicyParams:
    """Initialized parameters with layer-norm affines moved off their identity start."""
    params = N.init_params(dims, int(rng.integers(2**31)))
    updates = {}
    for n in params:
        if ".ln" in n:
            base = 1.0 if n.endswith(".g") else 0.0
            updates[n] = base + rng.normal(0.0, 0.2, params[n].shape)
    return params.with_tensors(updates)
