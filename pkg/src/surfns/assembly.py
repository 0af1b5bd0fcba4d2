"""Sparse assembly of the discrete surface forms.

Every form is evaluated for all elements at once with ``einsum`` and scattered
through a cached COO->CSR map.  The scatter uses ``np.bincount`` over a fixed
element-ordered index list, so repeated assemblies are bitwise identical and
independent of how the element-kernel work was split across threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.io
import scipy.sparse as sp

from .fespace import FESpace
from .mesh import DegenerateElement
from .quadrature import quadrature
from .reference import eval_basis

_THREADS = 1


def set_threads(n: int | None):
    """Worker count for element kernels (``None`` or ``<= 0``: all cores)."""
    global _THREADS
    import os

    _THREADS = max(1, int(n)) if n and n > 0 else (os.cpu_count() or 1)


def default_quad_degree(k_u: int, k_g: int) -> int:
    return 2 * k_u + k_g


def _check_same_mesh(*spaces):
    m = spaces[0].mesh
    if any(s.mesh is not m for s in spaces[1:]):
        raise ValueError("spaces live on different meshes")


def _qdeg(space, qdeg):
    return qdeg if qdeg is not None else default_quad_degree(space.degree, space.mesh.k_g)


def _dx(mesh, qdeg):
    """Quadrature weights times surface measure, ``(F, Q)``."""
    g = mesh.quad_geometry(qdeg)
    return g.measure * quadrature(qdeg).weights[None, :]


_CHUNK = 256


def _chunked(kernel, n_elements):
    """Evaluate ``kernel(slice)`` over element chunks, concatenated in order.

    Chunk boundaries do not depend on the worker count: einsum may pick a
    different contraction order for a different block shape, which would
    change the last bits of the result.
    """
    slices = [slice(a, min(a + _CHUNK, n_elements)) for a in range(0, n_elements, _CHUNK)]
    if _THREADS <= 1 or len(slices) == 1:
        parts = [kernel(s) for s in slices]
    else:
        with ThreadPoolExecutor(_THREADS) as pool:
            parts = list(pool.map(kernel, slices))
    return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)


class _Pattern:
    """CSR sparsity of a (row space, column space) pair plus the scatter map."""

    def __init__(self, row_dofs, col_dofs, shape):
        F, nr = row_dofs.shape
        nc = col_dofs.shape[1]
        rows = np.broadcast_to(row_dofs[:, :, None], (F, nr, nc)).ravel()
        cols = np.broadcast_to(col_dofs[:, None, :], (F, nr, nc)).ravel()
        key = rows.astype(np.int64) * shape[1] + cols
        ukey, self.inverse = np.unique(key, return_inverse=True)
        self.indices = (ukey % shape[1]).astype(np.int32)
        counts = np.bincount(ukey // shape[1], minlength=shape[0])
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self.shape = shape
        self.nnz = len(ukey)

    def build(self, local):
        data = np.bincount(self.inverse, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def _pattern(row_space: FESpace, col_space: FESpace):
    # DOF maps depend only on (topology, degree, components)
    key = ("pattern", row_space.components, row_space.degree,
           col_space.components, col_space.degree)
    cache = row_space.mesh._cache
    if key not in cache:
        cache[key] = _Pattern(
            row_space.element_dof_map,
            col_space.element_dof_map,
            (row_space.dof_count, col_space.dof_count),
        )
    return cache[key]


def _scatter(row_space, col_space, local):
    F = local.shape[0]
    return _pattern(row_space, col_space).build(local.reshape(F, -1))


def _vector_space(space):
    if space.components != 3:
        raise ValueError("a vector (3-component) space is required")


# -- pointwise evaluation ----------------------------------------------------


def tangential_gradient_at(space: FESpace, element: int, ref_pt, coeffs):
    """Gamma_h tangential gradient of an FE function at one reference point.

    Returns a 3-vector for scalar spaces and a 3x3 matrix ``[i, j] = D_j v_i``
    for vector spaces.
    """
    mesh = space.mesh
    ref = np.atleast_2d(np.asarray(ref_pt, dtype=float))
    g = mesh.geometry(ref, second=False)
    if g.measure[element, 0] < 1e-14:
        raise DegenerateElement("element with vanishing surface measure")
    _, rg = eval_basis(space.degree, ref)
    grads = g.tangent_map[element, 0] @ rg[0].T  # (3, n)
    c = space.split(coeffs)[:, space.element_dofs[element]]  # (C, n)
    out = c @ grads.T
    return out[0] if space.components == 1 else out


# -- bilinear forms ------------------------------------------------------------


def assemble_mass(space: FESpace, qdeg=None):
    """L2 mass matrix; block diagonal over components for vector spaces."""
    qdeg = _qdeg(space, qdeg)
    phi, _ = space.tabulate(qdeg)
    dx = _dx(space.mesh, qdeg)
    ms = _chunked(lambda s: np.einsum("fq,qa,qb->fab", dx[s], phi, phi), space.mesh.n_elements)
    if space.components == 1:
        return _scatter(space, space, ms)
    F, n = ms.shape[:2]
    local = np.zeros((F, 3, n, 3, n))
    for c in range(3):
        local[:, c, :, c, :] = ms
    return _scatter(space, space, local)


def assemble_strain(space: FESpace, qdeg=None):
    """``int E_h(w) : E_h(v)`` with ``E_h`` the symmetric part of ``P_h grad_h v``."""
    _vector_space(space)
    qdeg = _qdeg(space, qdeg)
    _, g = space.tabulate(qdeg)
    dx = _dx(space.mesh, qdeg)
    P = space.mesh.quad_geometry(qdeg).projector

    def kernel(s):
        gs, ws = g[s], dx[s]
        gg = np.einsum("fqai,fqbi->fqab", gs, gs)
        t1 = np.einsum("fq,fqcd,fqab->fcadb", ws, P[s], gg, optimize=True)
        t2 = np.einsum("fq,fqbc,fqad->fcadb", ws, gs, gs, optimize=True)
        return 0.5 * (t1 + t2)

    return _scatter(space, space, _chunked(kernel, space.mesh.n_elements))


def assemble_a_h(space: FESpace, qdeg=None):
    """Energy form ``a_h = strain + mass`` (unit coefficients)."""
    return (assemble_strain(space, qdeg) + assemble_mass(space, qdeg)).tocsr()


def assemble_b_L(velocity: FESpace, pressure: FESpace, lam: FESpace | None, qdeg=None):
    """Constraint blocks ``B_p``, ``B_lambda`` (rows: test space) and the
    pressure mean row ``m``.  ``lam=None`` skips ``B_lambda``."""
    _vector_space(velocity)
    spaces = (velocity, pressure) + ((lam,) if lam is not None else ())
    _check_same_mesh(*spaces)
    qdeg = _qdeg(velocity, qdeg)
    mesh = velocity.mesh
    dx = _dx(mesh, qdeg)
    phi, _ = velocity.tabulate(qdeg)
    psi, dpsi = pressure.tabulate(qdeg)
    Bp = _chunked(
        lambda s: np.einsum("fq,qa,fqjc->fjca", dx[s], phi, dpsi[s], optimize=True),
        mesh.n_elements,
    )
    Bp = _scatter(pressure, velocity, Bp)
    mloc = np.einsum("fq,qj->fj", dx, psi)
    m = np.bincount(pressure.element_dofs.ravel(), weights=mloc.ravel(),
                    minlength=pressure.n_scalar)
    Bl = None
    if lam is not None:
        chi, _ = lam.tabulate(qdeg)
        nh = mesh.quad_geometry(qdeg).normal
        Bl = _chunked(
            lambda s: np.einsum("fq,qj,qa,fqc->fjca", dx[s], chi, phi, nh[s], optimize=True),
            mesh.n_elements,
        )
        Bl = _scatter(lam, velocity, Bl)
    return Bp, Bl, m


def _advecting(space, w, qdeg):
    wq = space.values_at_quadrature(w, qdeg)
    P = space.mesh.quad_geometry(qdeg).projector
    return np.einsum("fqij,fqj->fqi", P, wq)


def assemble_convection(space: FESpace, w, qdeg=None):
    """``c_h(w; u, v) = int ((P_h w . grad^cov) u) . v``; rows test ``v``,
    columns trial ``u``."""
    _vector_space(space)
    qdeg = _qdeg(space, qdeg)
    phi, g = space.tabulate(qdeg)
    dx = _dx(space.mesh, qdeg)
    P = space.mesh.quad_geometry(qdeg).projector
    wq = _advecting(space, w, qdeg)

    def kernel(s):
        wg = np.einsum("fqai,fqi->fqa", g[s], wq[s])
        return np.einsum("fq,fqdc,fqa,qb->fdbca", dx[s], P[s], wg, phi, optimize=True)

    return _scatter(space, space, _chunked(kernel, space.mesh.n_elements))


def _curvature_coupling(space, z, qdeg):
    # K[v, w] = int (w . n_h)(z . H_h v)
    phi, _ = space.tabulate(qdeg)
    geo = space.mesh.quad_geometry(qdeg)
    dx = _dx(space.mesh, qdeg)
    zq = space.values_at_quadrature(z, qdeg)
    hz = np.einsum("fqji,fqj->fqi", geo.weingarten, zq)  # H_h^T z

    def kernel(s):
        return np.einsum("fq,fqd,qb,fqc,qa->fdbca", dx[s], hz[s], phi, geo.normal[s], phi,
                         optimize=True)

    return _scatter(space, space, _chunked(kernel, space.mesh.n_elements))


def assemble_skew_convection(space: FESpace, w, qdeg=None):
    """Skew-symmetrised inertia with the two Weingarten corrections."""
    qdeg = _qdeg(space, qdeg)
    C = assemble_convection(space, w, qdeg)
    K = _curvature_coupling(space, w, qdeg)
    return (0.5 * (C - C.T) - 0.5 * (K - K.T)).tocsr()


def assemble_penalty(space: FESpace, tau: float, normal_mode: str = "improved", qdeg=None):
    """``tau int (u . n~)(v . n~)`` with ``n~ = n o pi`` ("improved") or ``n_h``."""
    _vector_space(space)
    if not tau > 0:
        raise ValueError("tau must be positive")
    qdeg = _qdeg(space, qdeg)
    mesh = space.mesh
    if normal_mode == "improved":
        nt = mesh.exact_at_quadrature(qdeg)["n"]
    elif normal_mode == "discrete":
        nt = mesh.quad_geometry(qdeg).normal
    else:
        raise ValueError(f"unknown normal mode {normal_mode!r}")
    phi, _ = space.tabulate(qdeg)
    dx = _dx(mesh, qdeg) * tau
    local = _chunked(
        lambda s: np.einsum("fq,fqc,fqd,qa,qb->fcadb", dx[s], nt[s], nt[s], phi, phi,
                            optimize=True),
        mesh.n_elements,
    )
    return _scatter(space, space, local)


def assemble_forcing(space: FESpace, f, t=0.0, qdeg=None):
    """Load vector ``int f(pi(x), t) . phi_i``.

    ``f`` is either an array of values at the quadrature points, shape
    ``(F, Q, 3)`` (``(F, Q)`` for scalar spaces), or a callable ``f(p, t)``
    on the exact surface.
    """
    qdeg = _qdeg(space, qdeg)
    mesh = space.mesh
    if callable(f):
        p = mesh.exact_at_quadrature(qdeg)["p"]
        F, Q = p.shape[:2]
        vals = np.asarray(f(p.reshape(-1, 3), t), dtype=float)
        vals = vals.reshape((F, Q, 3) if space.components == 3 else (F, Q))
    else:
        vals = np.asarray(f, dtype=float)
    phi, _ = space.tabulate(qdeg)
    dx = _dx(mesh, qdeg)
    if space.components == 1:
        loc = np.einsum("fq,fq,qa->fa", dx, vals, phi)
    else:
        loc = np.einsum("fq,fqc,qa->fca", dx, vals, phi)
    loc = loc.reshape(mesh.n_elements, -1)
    return np.bincount(space.element_dof_map.ravel(), weights=loc.ravel(),
                       minlength=space.dof_count)


def quadrature_integral(mesh, values, qdeg):
    """``int_{Gamma_h} values`` for values given at quadrature points ``(F, Q, ...)``."""
    return np.einsum("fq,fq...->...", _dx(mesh, qdeg), values)


def dump_matrix(path, A, comment=""):
    """Write a sparse matrix in MatrixMarket coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)


__all__ = [
    "assemble_mass",
    "assemble_strain",
    "assemble_a_h",
    "assemble_b_L",
    "assemble_convection",
    "assemble_skew_convection",
    "assemble_penalty",
    "assemble_forcing",
    "tangential_gradient_at",
    "quadrature_integral",
    "dump_matrix",
    "default_quad_degree",
    "set_threads",
]
