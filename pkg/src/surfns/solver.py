"""Saddle-point solves: steady Stokes, Ritz-Stokes initial data and the
linearised backward-Euler Navier-Stokes loop."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly as asm
from .fespace import FESpace, interpolate

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class SingularSystem(SolverError):
    pass


class NonConvergence(SolverError):
    pass


class BlowUp(SolverError):
    pass


class Formulation(str, enum.Enum):
    LAGRANGE = "lagrange"
    PENALTY = "penalty"


class Inertia(str, enum.Enum):
    PLAIN = "plain"
    SKEW = "skew"


class InitialCondition(str, enum.Enum):
    INTERPOLATION = "interpolation"
    RITZ = "ritz"


@dataclass
class TimeConfig:
    dt: float
    t_end: float = 1.0
    mu: float = 0.5
    formulation: Formulation = Formulation.LAGRANGE
    inertia: Inertia = Inertia.PLAIN
    zeroth_order: bool = True
    initial_condition: InitialCondition = InitialCondition.RITZ
    tau_alpha: float = 2.5  # penalty tau = tau_alpha / h^2
    normal_mode: str = "improved"
    backend: str = "direct"
    rtol: float = 1e-10
    qdeg: int | None = None
    blowup_factor: float = 1e6

    def __post_init__(self):
        self.formulation = Formulation(self.formulation)
        self.inertia = Inertia(self.inertia)
        self.initial_condition = InitialCondition(self.initial_condition)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < self.dt * (1 - 1e-12):
            raise ValueError("t_end must be >= dt")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


@dataclass
class Spaces:
    velocity: FESpace
    pressure: FESpace
    lam: FESpace | None

    @property
    def mesh(self):
        return self.velocity.mesh


def build_spaces(mesh, k_u=2, k_pr=None, k_lambda=None, with_lambda=True):
    k_pr = k_u - 1 if k_pr is None else k_pr
    k_lambda = k_u - 1 if k_lambda is None else k_lambda
    if k_u < 2 or k_pr != k_u - 1:
        raise ValueError("Taylor-Hood pairing requires k_u >= 2 and k_pr = k_u - 1")
    if k_lambda not in (k_u - 1, k_u):
        raise ValueError("k_lambda must be k_u - 1 or k_u")
    lam = FESpace(mesh, k_lambda, 1) if with_lambda else None
    return Spaces(FESpace(mesh, k_u, 3), FESpace(mesh, k_pr, 1), lam)


@dataclass
class BlockSystem:
    """Monolithic ``[u | p | lambda | mean multiplier]`` saddle-point system."""

    A: sp.spmatrix
    Bp: sp.spmatrix
    Bl: sp.spmatrix | None
    m: np.ndarray
    rhs: np.ndarray | None = None

    @property
    def sizes(self):
        nl = 0 if self.Bl is None else self.Bl.shape[0]
        return self.A.shape[0], self.Bp.shape[0], nl, 1

    @property
    def matrix(self):
        nu, npr, nl, _ = self.sizes
        mcol = sp.csr_matrix(self.m.reshape(-1, 1))
        blocks = [
            [self.A, self.Bp.T, None if self.Bl is None else self.Bl.T, None],
            [self.Bp, None, None, mcol],
        ]
        if self.Bl is not None:
            blocks.append([self.Bl, None, None, None])
        blocks.append([None, mcol.T, None, None])
        if self.Bl is None:
            blocks = [[b for j, b in enumerate(row) if j != 2] for row in blocks]
        return sp.bmat(blocks, format="csc")

    def full_rhs(self, f_u):
        nu, npr, nl, _ = self.sizes
        return np.concatenate([f_u, np.zeros(npr + nl + 1)])

    def split(self, x):
        nu, npr, nl, _ = self.sizes
        u = x[:nu]
        p = x[nu:nu + npr]
        lam = x[nu + npr:nu + npr + nl] if nl else None
        return u, p, lam, x[-1]

    def constraint_residuals(self, u, p):
        """Max basis-wise ``|b_h^L(u, .)|`` and ``|int p|``."""
        r = np.abs(self.Bp @ u).max()
        if self.Bl is not None:
            r = max(r, np.abs(self.Bl @ u).max())
        return float(r), float(abs(self.m @ p))


class DirectFactor:
    """SuperLU factorisation tuned for symmetric-pattern saddle-point matrices.

    With ``primal`` (the size of the leading positive definite block) the
    zero constraint diagonal is shifted by ``-regularization * max|diag|``.
    The shifted matrix is quasi-definite, so it factors with diagonal pivots
    in the fill-reducing order; the shift is removed again by iterative
    refinement against the true matrix in :func:`solve_linear`.  Without
    ``primal`` threshold pivoting is used, which can fill in far more when
    the constraint space is large.
    """

    def __init__(self, K, primal=None, regularization=1e-12):
        K = sp.csc_matrix(K)
        self.regularized = primal is not None and primal < K.shape[0]
        try:
            if self.regularized:
                scale = np.abs(K.diagonal()[:primal]).max()
                shift = np.zeros(K.shape[0])
                shift[primal:] = -regularization * scale
                self.lu = spla.splu(sp.csc_matrix(K + sp.diags(shift)), permc_spec="MMD_AT_PLUS_A",
                                    diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))
            else:
                # minimum degree on A^T + A with relaxed diagonal pivoting fills
                # in several times less than the default COLAMD for these systems
                self.lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                                    options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise SingularSystem(str(exc)) from exc

    def solve(self, b):
        return self.lu.solve(b)


def solve_linear(K, b=None, backend="direct", rtol=1e-10, factor=None, restart=50, maxiter=20,
                 refine=6, primal=None):
    """Solve ``K x = b`` with relative residual ``<= rtol``.

    ``direct`` uses a sparse LU with iterative refinement.  ``gmres`` runs
    restarted GMRES preconditioned by ``factor`` (an LU of a nearby matrix,
    e.g. an earlier time step); without one the LU of ``K`` itself is used.
    ``primal`` is the size of the leading definite block of a saddle-point
    matrix (taken from ``K`` when it is a :class:`BlockSystem`); it enables
    the regularised factorisation of :class:`DirectFactor`.  Returns
    ``(x, relative_residual)``.
    """
    if isinstance(K, BlockSystem):
        primal = K.sizes[0] if primal is None else primal
        K, b = K.matrix, (K.full_rhs(K.rhs) if b is None else b)
    K = sp.csc_matrix(K)
    b = np.asarray(b, dtype=float)
    bn = np.linalg.norm(b)
    if bn == 0.0:
        return np.zeros_like(b), 0.0
    if backend == "direct":
        lu = factor if factor is not None else DirectFactor(K, primal)
        x = _refined(K, b, lu, refine, rtol)
        if (np.linalg.norm(b - K @ x) > rtol * bn or not np.all(np.isfinite(x))) \
                and getattr(lu, "regularized", False) and factor is None:
            log.debug("regularised factorisation stalled; refactoring with pivoting")
            x = _refined(K, b, DirectFactor(K), refine, rtol)
    elif backend == "gmres":
        lu = factor if factor is not None else DirectFactor(K, primal)
        M = spla.LinearOperator(K.shape, matvec=lu.solve)
        x, info = spla.gmres(K, b, M=M, rtol=0.1 * rtol, atol=0.0, restart=restart,
                             maxiter=maxiter)
        if info != 0:
            raise NonConvergence(f"GMRES stopped with info={info}")
    else:
        raise ValueError(f"unknown backend {backend!r}")
    if not np.all(np.isfinite(x)):
        raise SingularSystem("non-finite solution")
    res = float(np.linalg.norm(b - K @ x) / bn)
    if res > rtol:
        raise SingularSystem(f"relative residual {res:.3e} above {rtol:.1e}")
    return x, res


def _refined(K, b, lu, steps, rtol):
    """Iterative refinement until the residual is far below ``rtol`` or stops
    decreasing; the constraint rows then hold to near round-off."""
    bn = np.linalg.norm(b)
    x = lu.solve(b)
    r = b - K @ x
    rn = np.linalg.norm(r)
    for _ in range(steps):
        if not np.isfinite(rn) or rn <= 1e-4 * rtol * bn:
            break
        y = x + lu.solve(r)
        ry = b - K @ y
        ryn = np.linalg.norm(ry)
        if not ryn < rn:
            break
        x, r, rn = y, ry, ryn
    return x


# -- steady problems -------------------------------------------------------------


def _constraint_blocks(spaces, qdeg):
    return asm.assemble_b_L(spaces.velocity, spaces.pressure, spaces.lam, qdeg)


def _quad(spaces, qdeg):
    return qdeg if qdeg is not None else asm.default_quad_degree(spaces.velocity.degree,
                                                                 spaces.mesh.k_g)


def steady_stokes_solve(spaces: Spaces, mu, rhs_field, qdeg=None, rtol=1e-10, backend="direct"):
    """``2 mu (E_h u, E_h v) + (u, v) + b_h^L(v, {p, lambda}) = (f, v)`` with the
    homogeneous constraints.  ``rhs_field`` is a callable ``f(p)`` on the exact
    surface or an array of values at the quadrature points."""
    qdeg = _quad(spaces, qdeg)
    V = spaces.velocity
    A = 2.0 * mu * asm.assemble_strain(V, qdeg) + asm.assemble_mass(V, qdeg)
    Bp, Bl, m = _constraint_blocks(spaces, qdeg)
    f = rhs_field
    if callable(f):
        f = lambda p, t, _g=rhs_field: _g(p)  # noqa: E731
    rhs = asm.assemble_forcing(V, f, 0.0, qdeg)
    sysm = BlockSystem(A.tocsr(), Bp, Bl, m, rhs)
    x, res = solve_linear(sysm, sysm.full_rhs(rhs), backend, rtol)
    u, p, lam, _ = sysm.split(x)
    return dict(u=u, p=p, lam=lam, residual=res, system=sysm)


def ritz_stokes_initial(spaces: Spaces, u0, qdeg=None, rtol=1e-10, penalty=None):
    """Discrete Ritz-Stokes projection with right-hand side ``a_h(I_h u0, .)``.

    ``u0`` is a callable on the exact surface or a coefficient vector.  With
    ``penalty`` (a matrix) the energy form is ``a_h + penalty`` and no
    tangential multiplier is used.
    """
    qdeg = _quad(spaces, qdeg)
    V = spaces.velocity
    Iu = interpolate(V, u0) if callable(u0) else np.asarray(u0, dtype=float)
    if not np.any(Iu):
        return np.zeros(V.dof_count)
    A = asm.assemble_a_h(V, qdeg)
    if penalty is not None:
        A = (A + penalty).tocsr()
    Bp, Bl, m = _constraint_blocks(spaces, qdeg)
    sysm = BlockSystem(A, Bp, Bl, m, A @ Iu)
    x, _ = solve_linear(sysm, rtol=rtol)
    return sysm.split(x)[0]


# -- unsteady loop -----------------------------------------------------------------


@dataclass
class StepInfo:
    t: float
    residual: float
    constraint: float
    pressure_mean: float
    kinetic_energy: float


@dataclass
class Trajectory:
    times: np.ndarray  # (N + 1,)
    velocity: np.ndarray  # (N + 1, ndof_u)
    pressure: np.ndarray  # (N, ndof_p), steps 1..N
    lam: np.ndarray | None  # (N, ndof_lambda)
    info: list = field(default_factory=list)
    initial_energy: float = 0.0

    @property
    def n_steps(self):
        return len(self.times) - 1

    def energies(self):
        return np.array([self.initial_energy] + [s.kinetic_energy for s in self.info])


def penalty_tau(mesh, alpha=2.5):
    return alpha / mesh.h**2


def unsteady_solve(spaces: Spaces, problem, config: TimeConfig, u0=None, forcing=None,
                   callback=None) -> Trajectory:
    """Backward Euler with the inertia term frozen at the previous step.

    ``u0`` overrides the problem's initial velocity (callable or coefficients);
    ``forcing`` overrides the load, either ``"zero"`` or a callable
    ``t -> values at quadrature points``.
    """
    qdeg = _quad(spaces, config.qdeg)
    V = spaces.velocity
    mesh = spaces.mesh
    dt, mu = config.dt, config.mu
    M = asm.assemble_mass(V, qdeg)
    S = asm.assemble_strain(V, qdeg)
    penalty = None
    if config.formulation == Formulation.PENALTY:
        if spaces.lam is not None:
            spaces = Spaces(spaces.velocity, spaces.pressure, None)
        penalty = asm.assemble_penalty(V, penalty_tau(mesh, config.tau_alpha),
                                       config.normal_mode, qdeg)
    elif spaces.lam is None:
        raise ValueError("the Lagrange formulation needs a multiplier space")
    Bp, Bl, m = _constraint_blocks(spaces, qdeg)

    base = M / dt + 2.0 * mu * S
    if config.zeroth_order:
        base = base + M
    if penalty is not None:
        base = base + penalty
    base = base.tocsr()

    if u0 is None:
        u0 = lambda p: problem.velocity(p, 0.0)  # noqa: E731
    if config.initial_condition == InitialCondition.RITZ:
        u = ritz_stokes_initial(spaces, u0, qdeg, penalty=penalty)
    else:
        u = interpolate(V, u0) if callable(u0) else np.asarray(u0, dtype=float).copy()

    def load(t):
        if forcing == "zero":
            return np.zeros(V.dof_count)
        if callable(forcing):
            vals = forcing(t)
        else:
            vals = problem.forcing_at_quadrature(mesh, qdeg, t, config.zeroth_order)
        return asm.assemble_forcing(V, vals, t, qdeg)

    N = config.n_steps
    times = np.arange(N + 1) * dt
    traj = Trajectory(times, np.zeros((N + 1, V.dof_count)),
                      np.zeros((N, spaces.pressure.dof_count)),
                      None if spaces.lam is None else np.zeros((N, spaces.lam.dof_count)))
    traj.velocity[0] = u
    e0 = float(u @ (M @ u))
    traj.initial_energy = e0
    factor = None
    for n in range(1, N + 1):
        t = times[n]
        if config.inertia == Inertia.SKEW:
            C = asm.assemble_skew_convection(V, u, qdeg)
        else:
            C = asm.assemble_convection(V, u, qdeg)
        sysm = BlockSystem((base + C).tocsr(), Bp, Bl, m, M @ u / dt + load(t))
        K = sysm.matrix
        if config.backend == "gmres" and factor is None:
            factor = DirectFactor(K, V.dof_count)
        x, res = solve_linear(K, sysm.full_rhs(sysm.rhs), config.backend, config.rtol,
                              factor=factor if config.backend == "gmres" else None,
                              primal=V.dof_count)
        u, p, lam, _ = sysm.split(x)
        cres, pmean = sysm.constraint_residuals(u, p)
        energy = float(u @ (M @ u))
        traj.velocity[n] = u
        traj.pressure[n - 1] = p
        if lam is not None:
            traj.lam[n - 1] = lam
        traj.info.append(StepInfo(t, res, cres, pmean, energy))
        if e0 > 0 and energy > config.blowup_factor * e0:
            raise BlowUp(f"kinetic energy {energy:.3e} at t={t:.4g}")
        if callback is not None:
            callback(n, traj)
        log.debug("step %d t=%.4g res=%.2e constraint=%.2e", n, t, res, cres)
    return traj
