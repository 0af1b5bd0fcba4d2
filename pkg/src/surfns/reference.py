"""Lagrange elements on the reference triangle.

Node ordering: the three vertices (0,0), (1,0), (0,1); then the interior
nodes of the edges (0,1), (1,2), (0,2), each run from its lower-numbered to
its higher-numbered vertex; then interior nodes in lexicographic order of
their barycentric coordinates.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
LOCAL_EDGES = ((0, 1), (1, 2), (0, 2))


def n_local(k: int) -> int:
    return (k + 1) * (k + 2) // 2


@lru_cache(maxsize=None)
def reference_nodes(k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("Lagrange degree must be >= 1")
    nodes = [tuple(v) for v in REF_VERTICES]
    for a, b in LOCAL_EDGES:
        va, vb = REF_VERTICES[a], REF_VERTICES[b]
        for j in range(1, k):
            nodes.append(tuple(va + (j / k) * (vb - va)))
    interior = []
    for i in range(1, k):
        for j in range(1, k - i):
            # barycentric (l0, l1, l2) = ((k-i-j)/k, i/k, j/k)
            interior.append(((k - i - j) / k, i / k, j / k))
    interior.sort(reverse=True)
    for l0, l1, l2 in interior:
        nodes.append((l1, l2))
    out = np.array(nodes, dtype=float)
    out.setflags(write=False)
    return out


def _exponents(k):
    return [(i, j) for total in range(k + 1) for i in range(total, -1, -1) for j in [total - i]]


@lru_cache(maxsize=None)
def _coefficients(k):
    exps = _exponents(k)
    nodes = reference_nodes(k)
    V = np.array([[x**i * y**j for i, j in exps] for x, y in nodes])
    return np.linalg.inv(V)


def _monomials(k, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    exps = _exponents(k)

    def pw(base, e):
        return base**e if e > 0 else np.ones_like(base)

    def dpw(base, e):
        return e * base ** (e - 1) if e > 0 else np.zeros_like(base)

    def ddpw(base, e):
        return e * (e - 1) * base ** (e - 2) if e > 1 else np.zeros_like(base)

    val = np.stack([pw(x, i) * pw(y, j) for i, j in exps], axis=-1)
    dx = np.stack([dpw(x, i) * pw(y, j) for i, j in exps], axis=-1)
    dy = np.stack([pw(x, i) * dpw(y, j) for i, j in exps], axis=-1)
    dxx = np.stack([ddpw(x, i) * pw(y, j) for i, j in exps], axis=-1)
    dxy = np.stack([dpw(x, i) * dpw(y, j) for i, j in exps], axis=-1)
    dyy = np.stack([pw(x, i) * ddpw(y, j) for i, j in exps], axis=-1)
    return val, dx, dy, dxx, dxy, dyy


def eval_basis(k: int, ref_pts, second=False):
    """Values ``(Q, n)`` and reference gradients ``(Q, n, 2)`` of the degree-k
    Lagrange basis; with ``second=True`` also Hessians ``(Q, n, 2, 2)``."""
    C = _coefficients(k)
    val, dx, dy, dxx, dxy, dyy = _monomials(k, ref_pts)
    values = val @ C
    grads = np.stack([dx @ C, dy @ C], axis=-1)
    if not second:
        return values, grads
    hxx, hxy, hyy = dxx @ C, dxy @ C, dyy @ C
    hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
    return values, grads, hess


@lru_cache(maxsize=None)
def subdivision(levels: int):
    """Uniform split of the reference triangle into ``4**levels`` triangles.

    Returns lattice points ``(M, 2)`` and sub-triangle connectivity ``(T, 3)``.
    """
    m = 2**levels
    index = {}
    pts = []
    for j in range(m + 1):
        for i in range(m + 1 - j):
            index[i, j] = len(pts)
            pts.append((i / m, j / m))
    tris = []
    for j in range(m):
        for i in range(m - j):
            tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j + 1 < m:
                tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    return np.array(pts), np.array(tris, dtype=np.int64)
