"""Manufactured surface Navier-Stokes problems and a finite-difference oracle
for the surface differential operators.

Exact solutions are time-separable, ``u = sum_i a_i(t) U_i(x)`` and
``p = sum_j b_j(t) P_j(x)``.  Spatial operator values of each mode are
evaluated once per mesh at the projected quadrature points, so the forcing at
any time is a cheap combination of cached arrays.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Sphere, Surface, tangential_projector, varying_curvature_surface


class ForcingMode(str, enum.Enum):
    FULL = "full"  # full ambient residual, exact lambda = 0
    TANGENTIAL = "tangential"  # P * residual, exact lambda = 2 mu n . div E(u)


FIRST_STEP = 1e-5
SECOND_STEP = 1e-4
_CHUNK = 4096


# -- finite-difference oracle -------------------------------------------------


def _fd_gradient(surface, field, x, step, richardson=False):
    """Ambient central differences of ``field o pi`` at ``x`` (on the surface).

    Returns ``(N, *vshape, 3)`` with the derivative index last.
    """
    x = np.atleast_2d(x)

    def once(h):
        N = len(x)
        shifts = np.concatenate([np.eye(3) * h, -np.eye(3) * h])  # (6, 3)
        y = (x[None, :, :] + shifts[:, None, :]).reshape(-1, 3)
        v = np.asarray(field(surface.closest_point(y)), dtype=float)
        v = v.reshape((6, N) + v.shape[1:])
        d = (v[:3] - v[3:]) / (2 * h)  # (3, N, ...)
        return np.moveaxis(d, 0, -1)

    if not richardson:
        return once(step)
    return (4.0 * once(0.5 * step) - once(step)) / 3.0


def surface_gradient(surface, field, x, step=FIRST_STEP, richardson=False):
    """Tangential gradient of a scalar or vector field given on the surface."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = []
    for i in range(0, len(x), _CHUNK):
        xs = x[i:i + _CHUNK]
        g = _fd_gradient(surface, field, xs, step, richardson)
        P = surface.projector(xs)
        out.append(np.einsum("n...j,njk->n...k", g, P))
    return np.concatenate(out, axis=0)


def _strain_field(surface, field, step, richardson):
    def E(p):
        G = surface_gradient(surface, field, p, step, richardson)
        P = surface.projector(p)
        cov = P @ G
        return 0.5 * (cov + np.swapaxes(cov, -1, -2))

    return E


def surface_operator_oracle(surface: Surface, field, x, step=FIRST_STEP,
                            outer_step=SECOND_STEP, richardson=False, second=True):
    """Surface operators of a vector field at points ``x`` of the surface.

    Returns a dict with ``grad`` (tangential gradient, ``[i, j] = D_j u_i``),
    ``cov`` (``P grad``), ``E`` (rate of strain), ``div`` and, when
    ``second``, ``divE`` (surface divergence of ``E``, via nested differences).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    G = surface_gradient(surface, field, x, step, richardson)
    P = surface.projector(x)
    cov = P @ G
    out = dict(grad=G, cov=cov, E=0.5 * (cov + np.swapaxes(cov, -1, -2)),
               div=np.trace(G, axis1=-2, axis2=-1))
    if second:
        E = _strain_field(surface, field, step, richardson)
        dE = surface_gradient(surface, E, x, outer_step, richardson)  # (N, 3, 3, 3)
        out["divE"] = np.einsum("nijj->ni", dE)
    return out


def surface_curl(surface: Surface, psi, x, t=None):
    """``n x grad_Gamma psi`` for a scalar ``psi(x)`` (or ``psi(x, t)``) given in
    ambient coordinates with its ambient gradient ``psi.grad``; without a
    ``grad`` attribute the tangential gradient is taken by finite differences."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = surface.normal(x)
    if hasattr(psi, "grad"):
        g = psi.grad(x) if t is None else psi.grad(x, t)
    else:
        f = psi if t is None else (lambda y: psi(y, t))
        g = surface_gradient(surface, f, x)
    return np.cross(n, g)


# -- problem description --------------------------------------------------------


@dataclass
class Mode:
    """``time(t) * space(x)``; ``dtime`` is the analytic derivative of ``time``."""

    time: Callable[[float], float]
    space: Callable[[np.ndarray], np.ndarray]
    dtime: Callable[[float], float] | None = None

    def derivative(self, t, h=1e-6):
        if self.dtime is not None:
            return self.dtime(t)
        return (self.time(t + h) - self.time(t - h)) / (2 * h)


@dataclass(eq=False)
class ProblemSpec:
    name: str
    surface: Surface
    velocity_modes: list
    pressure_modes: list
    mu: float = 0.5
    forcing_mode: ForcingMode = ForcingMode.FULL
    richardson: bool = False
    step: float = FIRST_STEP  # oracle first-derivative step
    outer_step: float = SECOND_STEP  # oracle nested second-derivative step
    _cache: dict = field(default_factory=dict, repr=False)

    # pointwise exact fields
    def velocity(self, x, t):
        x = np.atleast_2d(x)
        out = np.zeros((len(x), 3))
        for m in self.velocity_modes:
            out += m.time(t) * m.space(x)
        return out

    def pressure(self, x, t):
        x = np.atleast_2d(x)
        out = np.zeros(len(x))
        for m in self.pressure_modes:
            out += m.time(t) * m.space(x)
        return out

    def _spatial(self, p):
        """Per-mode operator values at surface points ``p``."""
        U, G, D, Pv, Pg = [], [], [], [], []
        for m in self.velocity_modes:
            o = surface_operator_oracle(self.surface, m.space, p, self.step, self.outer_step,
                                        richardson=self.richardson)
            U.append(m.space(p))
            G.append(o["grad"])
            D.append(o["divE"])
        for m in self.pressure_modes:
            Pv.append(m.space(p))
            Pg.append(surface_gradient(self.surface, m.space, p, self.step,
                                       richardson=self.richardson))
        z = np.zeros((0,) + p.shape)
        return dict(
            U=np.array(U) if U else z,
            grad=np.array(G) if G else np.zeros((0, len(p), 3, 3)),
            divE=np.array(D) if D else z,
            p=np.array(Pv) if Pv else np.zeros((0, len(p))),
            gradp=np.array(Pg) if Pg else z,
            n=self.surface.normal(p),
        )

    def _combine(self, data, t, zeroth_order=True):
        a = np.array([m.time(t) for m in self.velocity_modes])
        da = np.array([m.derivative(t) for m in self.velocity_modes])
        b = np.array([m.time(t) for m in self.pressure_modes])
        n = data["n"]
        P = tangential_projector(n)
        u = np.einsum("i,i...->...", a, data["U"])
        grad = np.einsum("i,i...->...", a, data["grad"])
        cov = P @ grad
        divE = np.einsum("i,i...->...", a, data["divE"])
        f = np.einsum("i,i...->...", da, data["U"])
        f = f + np.einsum("...ij,...j->...i", cov, u)
        f = f - 2.0 * self.mu * divE
        f = f + np.einsum("j,j...->...", b, data["gradp"])
        if zeroth_order:
            f = f + u
        lam_n = 2.0 * self.mu * np.einsum("...i,...i->...", n, divE)
        if self.forcing_mode == ForcingMode.TANGENTIAL:
            f = np.einsum("...ij,...j->...i", P, f)
            lam = lam_n
        else:
            lam = np.zeros_like(lam_n)
        return f, lam

    def forcing(self, x, t, zeroth_order=True):
        """Momentum residual of the exact solution at surface points ``x``."""
        f, _ = self._combine(self._spatial(np.atleast_2d(x)), t, zeroth_order)
        return f

    def lambda_exact(self, x, t):
        _, lam = self._combine(self._spatial(np.atleast_2d(x)), t)
        return lam

    # cached quadrature-point data
    def quadrature_data(self, mesh, qdeg):
        key = (id(mesh), qdeg)
        if key not in self._cache:
            ex = mesh.exact_at_quadrature(qdeg)
            F, Q = ex["d"].shape
            flat = self._spatial(ex["p"].reshape(-1, 3))
            shaped = {}
            for k, v in flat.items():
                if k == "n":
                    shaped[k] = v.reshape(F, Q, 3)
                else:
                    shaped[k] = v.reshape((v.shape[0], F, Q) + v.shape[2:])
            self._cache[key] = (mesh, shaped)  # keep mesh alive so id stays unique
        return self._cache[key][1]

    def forcing_at_quadrature(self, mesh, qdeg, t, zeroth_order=True):
        f, _ = self._combine(self.quadrature_data(mesh, qdeg), t, zeroth_order)
        return f

    def exact_at_quadrature(self, mesh, qdeg, t):
        """Exact ``u``, its surface tangential gradient, ``p`` and ``lambda`` at
        the closest points of the quadrature points."""
        data = self.quadrature_data(mesh, qdeg)
        a = np.array([m.time(t) for m in self.velocity_modes])
        b = np.array([m.time(t) for m in self.pressure_modes])
        _, lam = self._combine(data, t)
        return dict(
            u=np.einsum("i,i...->...", a, data["U"]),
            grad=np.einsum("i,i...->...", a, data["grad"]),
            p=np.einsum("j,j...->...", b, data["p"]),
            lam=lam,
        )

    def clear_cache(self):
        self._cache.clear()


# -- built-in problems ------------------------------------------------------------


def _const(c):
    return lambda t: c


def killing_field(x, scale=4.0):
    """Rotation about the x3 axis, ``scale * (-x2, x1, 0)``."""
    x = np.atleast_2d(x)
    return scale * np.stack([-x[:, 1], x[:, 0], np.zeros(len(x))], axis=-1)


def zero_problem(surface=None, mu=0.5):
    return ProblemSpec("zero", surface or Sphere(1.0), [], [], mu=mu)


class _Psi:
    """``cos(2 pi x1) cos(2 pi x2) cos(2 pi x3) / (2 pi)`` with ambient gradient."""

    def __call__(self, x):
        c = np.cos(2 * np.pi * x)
        return c.prod(axis=-1) / (2 * np.pi)

    def grad(self, x):
        c = np.cos(2 * np.pi * x)
        s = np.sin(2 * np.pi * x)
        return -np.stack(
            [s[:, 0] * c[:, 1] * c[:, 2], c[:, 0] * s[:, 1] * c[:, 2], c[:, 0] * c[:, 1] * s[:, 2]],
            axis=-1,
        )


def varying_surface_problem(mu=0.5, forcing_mode=ForcingMode.FULL):
    """Stream-function flow on the varying-curvature surface."""
    surf = varying_curvature_surface()
    psi = _Psi()
    U = lambda x: surface_curl(surf, psi, x)  # noqa: E731
    Pfun = lambda x: (np.sin(np.pi * x[:, 0]) * np.sin(2 * np.pi * x[:, 1])  # noqa: E731
                      * np.sin(2 * np.pi * x[:, 2]))
    return ProblemSpec(
        "varying",
        surf,
        [Mode(lambda t: 1.0 - 2.0 * t, U, _const(-2.0))],
        [Mode(_const(1.0), Pfun, _const(0.0))],
        mu=mu,
        forcing_mode=forcing_mode,
    )


def sphere_killing_problem(mu=0.5, forcing_mode=ForcingMode.FULL):
    """``u = (1 + x3 (2 + t/2)^3) K``, ``p = (1 + t)^3 x1 x2^2 x3`` on the unit sphere."""
    surf = Sphere(1.0)
    return ProblemSpec(
        "sphere",
        surf,
        [
            Mode(_const(1.0), killing_field, _const(0.0)),
            Mode(lambda t: (2.0 + 0.5 * t) ** 3,
                 lambda x: x[:, 2:3] * killing_field(x),
                 lambda t: 1.5 * (2.0 + 0.5 * t) ** 2),
        ],
        [Mode(lambda t: (1.0 + t) ** 3, lambda x: x[:, 0] * x[:, 1] ** 2 * x[:, 2],
              lambda t: 3.0 * (1.0 + t) ** 2)],
        mu=mu,
        forcing_mode=forcing_mode,
    )


def builtin_problems(forcing_mode=ForcingMode.FULL):
    return [
        zero_problem(),
        varying_surface_problem(forcing_mode=forcing_mode),
        sphere_killing_problem(forcing_mode=forcing_mode),
    ]


def make_problem(name, mu=0.5, forcing_mode=ForcingMode.FULL):
    if name in ("varying", "dziuk"):
        return varying_surface_problem(mu, forcing_mode)
    if name in ("sphere", "killing"):
        return sphere_killing_problem(mu, forcing_mode)
    if name == "zero":
        return zero_problem(mu=mu)
    raise ValueError(f"unknown problem {name!r}")
