"""Error norms, convergence orders, inf-sup estimates and geometric errors."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly as asm
from .quadrature import quadrature


class EigensolveFailure(RuntimeError):
    pass


@dataclass
class ErrorReport:
    level: int
    h: float
    dt: float
    ndof_u: int
    ndof_p: int
    ndof_lambda: int
    err_u: float  # max_n ||u - u_h||
    err_Pu: float  # max_n ||P_h (u - u_h)||
    err_n: float  # max_n ||u_h . n_h||
    err_grad: float  # (dt sum_n ||grad^cov_h (u - u_h)||^2)^(1/2)
    err_p: float
    err_lambda: float = float("nan")
    err_n_exact: float = float("nan")  # max_n ||u_h . (n o pi)||
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def eoc(errors, hs):
    """``log(e_k / e_{k+1}) / log(h_k / h_{k+1})`` between consecutive levels."""
    e = np.asarray(errors, dtype=float)
    h = np.asarray(hs, dtype=float)
    if e.shape != h.shape or e.size < 2:
        raise ValueError("need two or more errors with matching mesh sizes")
    if np.any(e <= 0) or np.any(h <= 0):
        raise ValueError("errors and mesh sizes must be positive")
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


def eoc_table(reports, keys=("err_u", "err_Pu", "err_n", "err_grad", "err_p")):
    hs = [r.h for r in reports]
    out = {}
    for k in keys:
        vals = [getattr(r, k) for r in reports]
        if len(vals) < 2 or not all(np.isfinite(vals)) or min(vals) <= 0:
            out[k] = np.full(max(len(vals) - 1, 0), np.nan)
        else:
            out[k] = eoc(vals, hs)
    return out


# -- error norms ---------------------------------------------------------------


def _lift_inverse(mesh, qdeg):
    """``(I + d H)^{-1}`` at the quadrature points (derivative of pi is P times this)."""
    key = ("lift_inv", qdeg)
    if key not in mesh._cache:
        ex = mesh.exact_at_quadrature(qdeg)
        mat = np.eye(3) + ex["d"][..., None, None] * ex["H"]
        mesh._cache[key] = np.linalg.inv(mat)
    return mesh._cache[key]


def exact_covariant_gradient(mesh, qdeg, grad_exact):
    """Discrete covariant gradient of the inverse lift of a field whose surface
    gradient at the closest points is ``grad_exact``."""
    Ph = mesh.quad_geometry(qdeg).projector
    return Ph @ grad_exact @ _lift_inverse(mesh, qdeg) @ Ph


def error_norms(traj, problem, spaces, qdeg=None, level=0):
    """Space-time error norms of a trajectory against the exact solution."""
    V, Qs, L = spaces.velocity, spaces.pressure, spaces.lam
    mesh = V.mesh
    if qdeg is None:
        qdeg = asm.default_quad_degree(V.degree, mesh.k_g)
    geo = mesh.quad_geometry(qdeg)
    dx = geo.measure * quadrature(qdeg).weights
    nh, Ph = geo.normal, geo.projector
    nex = mesh.exact_at_quadrature(qdeg)["n"]

    def l2(v):
        return float(np.sqrt(max(np.einsum("fq,fq...->...", dx, v * v).sum(), 0.0)))

    e_u = e_pu = e_n = e_nx = 0.0
    s_grad = s_p = s_l = 0.0
    dt = traj.times[1] - traj.times[0] if len(traj.times) > 1 else 0.0
    for n, t in enumerate(traj.times):
        ex = problem.exact_at_quadrature(mesh, qdeg, t)
        uh = V.values_at_quadrature(traj.velocity[n], qdeg)
        diff = ex["u"] - uh
        e_u = max(e_u, l2(diff))
        e_pu = max(e_pu, l2(np.einsum("fqij,fqj->fqi", Ph, diff)))
        e_n = max(e_n, l2(np.einsum("fqi,fqi->fq", uh, nh)))
        e_nx = max(e_nx, l2(np.einsum("fqi,fqi->fq", uh, nex)))
        if n == 0:
            continue
        gh = Ph @ V.gradients_at_quadrature(traj.velocity[n], qdeg) @ Ph
        gex = exact_covariant_gradient(mesh, qdeg, ex["grad"])
        s_grad += dt * l2(gex - gh) ** 2
        ph = Qs.values_at_quadrature(traj.pressure[n - 1], qdeg)
        s_p += dt * l2(ex["p"] - ph) ** 2
        if traj.lam is not None and L is not None:
            lh = L.values_at_quadrature(traj.lam[n - 1], qdeg)
            s_l += dt * l2(ex["lam"] - lh) ** 2
    has_l = traj.lam is not None and L is not None
    return ErrorReport(
        level=level,
        h=mesh.h,
        dt=float(dt),
        ndof_u=V.dof_count,
        ndof_p=Qs.dof_count,
        ndof_lambda=L.dof_count if has_l else 0,
        err_u=e_u,
        err_Pu=e_pu,
        err_n=e_n,
        err_grad=float(np.sqrt(s_grad)),
        err_p=float(np.sqrt(s_p)),
        err_lambda=float(np.sqrt(s_l)) if has_l else float("nan"),
        err_n_exact=e_nx,
    )


def l2_norm(space, coeffs, qdeg=None):
    """``||v_h||_{L2(Gamma_h)}`` of an FE function."""
    mesh = space.mesh
    qdeg = qdeg or asm.default_quad_degree(space.degree, mesh.k_g)
    v = space.values_at_quadrature(coeffs, qdeg)
    dx = mesh.quad_geometry(qdeg).measure * quadrature(qdeg).weights
    return float(np.sqrt(np.einsum("fq,fq...->...", dx, v * v).sum()))


# -- inf-sup -------------------------------------------------------------------------


def estimate_infsup(spaces, qdeg=None, variant="L2", return_all=False):
    """Discrete inf-sup constant of ``b_h^L`` with the velocity in the ``a_h``
    norm and ``(q, xi)`` in ``L2 x L2`` (``variant="L2"``) or ``L2 x H_h^{-1}``
    (``variant="Hm1"``).

    Solves the dense generalised eigenproblem ``B A^{-1} B^T y = s^2 G y`` on
    the complement of the constant-pressure mode and returns the smallest
    ``s``.
    """
    V, Qs, L = spaces.velocity, spaces.pressure, spaces.lam
    if qdeg is None:
        qdeg = asm.default_quad_degree(V.degree, V.mesh.k_g)
    A = asm.assemble_a_h(V, qdeg)
    Bp, Bl, _ = asm.assemble_b_L(V, Qs, L, qdeg)
    B = sp.vstack([Bp, Bl]).tocsr() if Bl is not None else Bp
    if B.shape[0] > 3000:
        raise EigensolveFailure("inf-sup estimate is limited to small meshes")
    Mp = asm.assemble_mass(Qs, qdeg).toarray()
    blocks = [Mp]
    if L is not None:
        Ml = asm.assemble_mass(L, qdeg)
        if variant == "Hm1":
            K = Ml + _scalar_stiffness(L, qdeg)
            Gl = Ml @ spla.splu(sp.csc_matrix(K)).solve(Ml.toarray())
            blocks.append(0.5 * (Gl + Gl.T))
        elif variant == "L2":
            blocks.append(Ml.toarray())
        else:
            raise ValueError(f"unknown variant {variant!r}")
    G = sla.block_diag(*blocks)
    lu = spla.splu(sp.csc_matrix(A))
    X = lu.solve(B.T.toarray())
    S = B @ X
    S = 0.5 * (S + S.T)
    c = np.zeros(G.shape[0])
    c[: Qs.dof_count] = 1.0
    Gc = G @ c
    # push the constant-pressure mode to a large eigenvalue
    S = S + 1e3 * np.outer(Gc, Gc) / (c @ Gc)
    try:
        w = sla.eigh(S, G, eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigensolveFailure(str(exc)) from exc
    w = np.clip(w, 0.0, None)
    beta = float(np.sqrt(w[0]))
    return (beta, np.sqrt(w)) if return_all else beta


def _scalar_stiffness(space, qdeg):
    _, g = space.tabulate(qdeg)
    dx = space.mesh.quad_geometry(qdeg).measure * quadrature(qdeg).weights
    local = np.einsum("fq,fqai,fqbi->fab", dx, g, g)
    return asm._scatter(space, space, local)


def condition_estimate(K):
    """1-norm condition number estimate of a sparse matrix."""
    K = sp.csc_matrix(K)
    lu = spla.splu(K)
    inv = spla.LinearOperator(K.shape, matvec=lu.solve, rmatvec=lambda x: lu.solve(x, "T"))
    return float(spla.onenormest(K) * spla.onenormest(inv))


# -- geometry ------------------------------------------------------------------------


def geometric_error_report(mesh, qdeg=None):
    """Maxima over quadrature points of ``|d|``, ``|n - n_h|``, ``|H - H_h|``
    (Frobenius) and the absolute area error when the exact area is known."""
    qdeg = qdeg or 2 * mesh.k_g + 2
    g = mesh.quad_geometry(qdeg)
    ex = mesh.exact_at_quadrature(qdeg)
    out = dict(
        h=mesh.h,
        dist=float(np.abs(ex["d"]).max()),
        normal=float(np.linalg.norm(ex["n"] - g.normal, axis=-1).max()),
        weingarten=float(np.linalg.norm(ex["H"] - g.weingarten, axis=(-2, -1)).max()),
        area=mesh.area(qdeg),
    )
    radius = getattr(mesh.surface, "radius", None)
    if radius is not None:
        out["area_error"] = abs(out["area"] - 4 * np.pi * radius**2)
    return out


__all__ = [
    "ErrorReport",
    "EigensolveFailure",
    "eoc",
    "eoc_table",
    "error_norms",
    "exact_covariant_gradient",
    "estimate_infsup",
    "condition_estimate",
    "geometric_error_report",
    "l2_norm",
]
