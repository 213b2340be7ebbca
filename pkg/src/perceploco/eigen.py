"""Batched eigen-decomposition of symmetric 3x3 matrices.

Closed-form trigonometric eigenvalues with cross-product eigenvectors, and a
cyclic Jacobi fallback for matrices whose spectrum is (nearly) clustered or
whose off-diagonal coupling is exactly zero.  The trigonometric route loses
accuracy like ``eps / gap`` as two eigenvalues approach each other, so the
fallback triggers on a relative gap rather than an absolute one.
"""

from __future__ import annotations

import numpy as np

# relative eigenvalue gap below which the closed form is not trusted
CLUSTER_RTOL = 1e-4
JACOBI_SWEEPS = 12


def _closed_form_values(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a00, a11, a22 = a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]
    a01, a02, a12 = a[:, 0, 1], a[:, 0, 2], a[:, 1, 2]
    q = (a00 + a11 + a22) / 3.0
    b00, b11, b22 = a00 - q, a11 - q, a22 - q
    p2 = (b00 * b00 + b11 * b11 + b22 * b22 + 2.0 * (a01 * a01 + a02 * a02 + a12 * a12)) / 6.0
    p = np.sqrt(p2)
    safe = np.where(p > 0, p, 1.0)
    c00, c11, c22 = b00 / safe, b11 / safe, b22 / safe
    c01, c02, c12 = a01 / safe, a02 / safe, a12 / safe
    det = (
        c00 * (c11 * c22 - c12 * c12)
        - c01 * (c01 * c22 - c12 * c02)
        + c02 * (c01 * c12 - c11 * c02)
    )
    r = np.clip(0.5 * det, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    hi = q + 2.0 * p * np.cos(phi)
    lo = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - hi - lo
    vals = np.stack([lo, mid, hi], axis=-1)
    vals.sort(axis=-1)
    return vals, p, q


def _null_vector(a: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Unit vector spanning the null space of ``a - lam I`` (rank 2 assumed)."""
    m = a - lam[:, None, None] * np.eye(3)
    r0, r1, r2 = m[:, 0], m[:, 1], m[:, 2]
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=1)
    norms = np.linalg.norm(cands, axis=-1)
    best = np.argmax(norms, axis=1)
    idx = np.arange(len(a))
    v = cands[idx, best]
    return v / norms[idx, best][:, None]


def _closed_form(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    vals, _, _ = _closed_form_values(a)
    v0 = _null_vector(a, vals[:, 0])
    v2 = _null_vector(a, vals[:, 2])
    # re-orthogonalise v2 against v0 and complete the right-handed basis
    v2 = v2 - np.sum(v2 * v0, axis=-1, keepdims=True) * v0
    v2 /= np.linalg.norm(v2, axis=-1, keepdims=True)
    v1 = np.cross(v2, v0)
    return vals, np.stack([v0, v1, v2], axis=-1)


def _jacobi(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = a.copy()
    n = len(a)
    v = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    idx = np.arange(n)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _jacobi_sweeps(a, v, idx, n)


def _jacobi_sweeps(a, v, idx, n):
    for _ in range(JACOBI_SWEEPS):
        off = a[:, 0, 1] ** 2 + a[:, 0, 2] ** 2 + a[:, 1, 2] ** 2
        if not np.any(off > 0):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[:, p, q]
            active = apq != 0.0
            if not np.any(active):
                continue
            app, aqq = a[:, p, p], a[:, q, q]
            theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(theta == 0.0, 1.0, t)
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
            rot[idx, p, p] = c
            rot[idx, q, q] = c
            rot[idx, p, q] = s
            rot[idx, q, p] = -s
            a = np.transpose(rot, (0, 2, 1)) @ a @ rot
            a[idx, p, q] = np.where(active, 0.0, a[idx, p, q])
            a[idx, q, p] = a[idx, p, q]
            v = v @ rot
    vals = np.diagonal(a, axis1=1, axis2=2).copy()
    order = np.argsort(vals, axis=-1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=-1)
    v = np.take_along_axis(v, order[:, None, :], axis=-1)
    return vals, v


def eigh3(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors (columns) of symmetric 3x3 matrices.

    Accepts shape ``(3, 3)`` or ``(n, 3, 3)``; only the upper triangle is read.
    """
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 2
    batch = a.reshape(-1, 3, 3)
    upper = np.triu(batch)
    sym = upper + np.transpose(np.triu(batch, 1), (0, 2, 1))
    # power-of-two rescale so the cross products neither underflow nor overflow
    _, exponent = np.frexp(np.max(np.abs(sym), axis=(1, 2)))
    sym = np.ldexp(sym, -exponent[:, None, None])

    vals, p, _ = _closed_form_values(sym)
    scale = np.maximum(np.max(np.abs(vals), axis=-1), np.finfo(float).tiny)
    gap = np.minimum(vals[:, 1] - vals[:, 0], vals[:, 2] - vals[:, 1])
    decoupled = (sym[:, 0, 1] == 0) | (sym[:, 0, 2] == 0) | (sym[:, 1, 2] == 0)
    fallback = (gap <= CLUSTER_RTOL * scale) | decoupled | (p == 0)

    out_vals = np.empty_like(vals)
    out_vecs = np.empty_like(sym)
    if np.any(~fallback):
        cv, cvec = _closed_form(sym[~fallback])
        out_vals[~fallback], out_vecs[~fallback] = cv, cvec
    if np.any(fallback):
        jv, jvec = _jacobi(sym[fallback])
        out_vals[fallback], out_vecs[fallback] = jv, jvec
    out_vals = np.ldexp(out_vals, exponent[:, None])
    if single:
        return out_vals[0], out_vecs[0]
    return out_vals.reshape(a.shape[:-2] + (3,)), out_vecs.reshape(a.shape)


def closed_form_only(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """The trigonometric route without fallback; exposed for diagnostics."""
    batch = np.asarray(a, dtype=np.float64).reshape(-1, 3, 3)
    return _closed_form(batch)
