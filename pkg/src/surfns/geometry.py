"""Exact closed surfaces: closest-point projection, signed distance, normal
and Weingarten map.

All point-wise operations accept either a single point of shape ``(3,)`` or a
batch of shape ``(N, 3)`` and return arrays of the matching leading shape.
"""
from __future__ import annotations

import numpy as np


class GeometryError(RuntimeError):
    pass


class NonConvergence(GeometryError):
    pass


class OutOfReach(GeometryError):
    pass


class DegenerateGradient(GeometryError):
    pass


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _unbatch(y, single):
    return y[0] if single else y


def tangential_projector(n):
    """``I - n n^T`` for a batch of unit normals ``(..., 3)``."""
    n = np.asarray(n, dtype=float)
    return np.eye(3) - n[..., :, None] * n[..., None, :]


class Surface:
    """Base class of the shipped exact surfaces.

    Subclasses provide the batched kernels ``_project``, ``_normal``,
    ``_weingarten`` and ``_inside_sign``; the public methods handle shapes.
    """

    projection_tolerance = 1e-12
    max_newton_iters = 50
    reach = 0.3

    name = "surface"

    def closest_point(self, x):
        xb, single = _as_batch(x)
        return _unbatch(self._project(xb), single)

    def signed_distance(self, x):
        xb, single = _as_batch(x)
        p = self._project(xb)
        d = np.linalg.norm(xb - p, axis=-1) * self._inside_sign(xb)
        return _unbatch(d, single)

    def project_with_distance(self, x):
        """Closest points and signed distances in one projection pass."""
        xb, single = _as_batch(x)
        p = self._project(xb)
        d = np.linalg.norm(xb - p, axis=-1) * self._inside_sign(xb)
        return _unbatch(p, single), _unbatch(d, single)

    def normal(self, p):
        pb, single = _as_batch(p)
        return _unbatch(self._normal(pb), single)

    def projector(self, p):
        return tangential_projector(self.normal(p))

    def weingarten(self, p):
        pb, single = _as_batch(p)
        return _unbatch(self._weingarten(pb), single)

    def mean_curvature(self, p):
        return np.trace(self.weingarten(p), axis1=-2, axis2=-1)

    def from_sphere(self, s):
        """Map points of the unit sphere onto this surface (base mesh vertices)."""
        raise NotImplementedError

    def weingarten_fd(self, p, step=1e-5):
        """Central differences of ``normal(closest_point(.))`` around ``p``."""
        pb, single = _as_batch(p)
        cols = []
        for k in range(3):
            e = np.zeros(3)
            e[k] = step
            np_ = self._normal(self._project(pb + e))
            nm = self._normal(self._project(pb - e))
            cols.append((np_ - nm) / (2 * step))
        return _unbatch(np.stack(cols, axis=-1), single)


class Sphere(Surface):
    name = "sphere"

    def __init__(self, radius=1.0):
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        # radial projection is defined everywhere except the centre
        self.reach = self.radius

    def _project(self, x):
        r = np.linalg.norm(x, axis=-1)
        if np.any(r < 1e-12 * self.radius):
            raise OutOfReach("closest point undefined at the sphere centre")
        return self.radius * x / r[:, None]

    def _inside_sign(self, x):
        return np.where(np.linalg.norm(x, axis=-1) >= self.radius, 1.0, -1.0)

    def _normal(self, p):
        return p / np.linalg.norm(p, axis=-1)[:, None]

    def _weingarten(self, p):
        n = self._normal(p)
        return tangential_projector(n) / self.radius

    def from_sphere(self, s):
        return self.radius * np.asarray(s, dtype=float)

    def __repr__(self):
        return f"Sphere(radius={self.radius})"


class LevelSetSurface(Surface):
    """Zero level set of ``phi`` with analytic gradient and Hessian.

    ``phi``, ``grad`` and ``hess`` are batched callables mapping ``(N, 3)`` to
    ``(N,)``, ``(N, 3)`` and ``(N, 3, 3)``. ``sphere_map`` optionally maps the
    unit sphere onto the surface and is only used to place base vertices.
    """

    name = "levelset"

    def __init__(self, phi, grad, hess, sphere_map=None, reach=0.3):
        self.phi = phi
        self.grad = grad
        self.hess = hess
        self.sphere_map = sphere_map
        self.reach = reach

    def _inside_sign(self, x):
        return np.where(self.phi(x) >= 0.0, 1.0, -1.0)

    def _project(self, x, p0=None):
        # Newton on  p - x + s grad(p) = 0,  phi(p) = 0  for (p, s); the first
        # step from (x, 0) is the classical p <- p - phi grad/|grad|^2 update.
        p = x.copy() if p0 is None else np.array(p0, dtype=float)
        g = self.grad(p)
        s = np.einsum("ij,ij->i", x - p, g) / np.einsum("ij,ij->i", g, g)
        tol = self.projection_tolerance
        eye = np.eye(3)
        active = np.ones(len(x), dtype=bool)
        for _ in range(self.max_newton_iters):
            idx = np.nonzero(active)[0]
            if idx.size == 0:
                break
            pa, sa, xa = p[idx], s[idx], x[idx]
            ga = self.grad(pa)
            ha = self.hess(pa)
            r1 = pa - xa + sa[:, None] * ga
            r2 = self.phi(pa)
            jac = np.zeros((idx.size, 4, 4))
            jac[:, :3, :3] = eye + sa[:, None, None] * ha
            jac[:, :3, 3] = ga
            jac[:, 3, :3] = ga
            rhs = -np.concatenate([r1, r2[:, None]], axis=1)
            try:
                step = np.linalg.solve(jac, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise NonConvergence("singular Newton system in projection") from exc
            # plain Newton is sufficient inside the reach; halve runaway steps
            big = np.linalg.norm(step[:, :3], axis=1) > self.reach
            step[big] *= 0.5
            p[idx] = pa + step[:, :3]
            s[idx] = sa + step[:, 3]
            gnorm = np.linalg.norm(self.grad(p[idx]), axis=1)
            done = (np.abs(self.phi(p[idx])) <= tol * 1e-2) & (
                np.linalg.norm(step[:, :3], axis=1) <= tol * gnorm
            )
            stalled = np.linalg.norm(step[:, :3], axis=1) <= 1e-15 * (1 + np.linalg.norm(p[idx], axis=1))
            active[idx[done | stalled]] = False
            if np.any(np.linalg.norm(p[idx] - xa, axis=1) > 4 * self.reach):
                raise OutOfReach("projection iterate left the tubular neighbourhood")
        else:
            if np.any(active):
                raise NonConvergence(
                    f"closest-point Newton did not converge in {self.max_newton_iters} iterations"
                )
        if np.any(np.abs(self.phi(p)) > tol):
            raise NonConvergence("projected point misses the level set")
        if np.any(np.linalg.norm(p - x, axis=1) > self.reach):
            raise OutOfReach("query point outside the tubular neighbourhood")
        return p

    def _normal(self, p):
        g = self.grad(p)
        gn = np.linalg.norm(g, axis=-1)
        if np.any(gn < 1e-10):
            raise DegenerateGradient("level-set gradient vanishes")
        return g / gn[:, None]

    def _weingarten(self, p):
        g = self.grad(p)
        gn = np.linalg.norm(g, axis=-1)
        if np.any(gn < 1e-10):
            raise DegenerateGradient("level-set gradient vanishes")
        P = tangential_projector(g / gn[:, None])
        return P @ self.hess(p) @ P / gn[:, None, None]

    def from_sphere(self, s):
        if self.sphere_map is None:
            raise NotImplementedError("no sphere map for this level set")
        return self.sphere_map(np.asarray(s, dtype=float))


def _vc_phi(x):
    s = 1.0 + 0.5 * np.sin(np.pi * x[:, 0])
    return 0.25 * x[:, 0] ** 2 + x[:, 1] ** 2 + 4.0 * x[:, 2] ** 2 / s**2 - 1.0


def _vc_grad(x):
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    s = 1.0 + 0.5 * np.sin(np.pi * x1)
    ds = 0.5 * np.pi * np.cos(np.pi * x1)
    return np.stack(
        [0.5 * x1 - 8.0 * x3**2 * ds / s**3, 2.0 * x2, 8.0 * x3 / s**2], axis=-1
    )


def _vc_hess(x):
    x1, x3 = x[:, 0], x[:, 2]
    s = 1.0 + 0.5 * np.sin(np.pi * x1)
    ds = 0.5 * np.pi * np.cos(np.pi * x1)
    dds = -0.5 * np.pi**2 * np.sin(np.pi * x1)
    h = np.zeros((len(x), 3, 3))
    h[:, 0, 0] = 0.5 - 8.0 * x3**2 * (dds / s**3 - 3.0 * ds**2 / s**4)
    h[:, 1, 1] = 2.0
    h[:, 2, 2] = 8.0 / s**2
    h[:, 0, 2] = h[:, 2, 0] = -16.0 * x3 * ds / s**3
    return h


def _vc_sphere_map(p):
    p = np.atleast_2d(p)
    return np.stack(
        [
            2.0 * p[:, 0],
            p[:, 1],
            0.5 * p[:, 2] * (1.0 + 0.5 * np.sin(2.0 * np.pi * p[:, 0])),
        ],
        axis=-1,
    )


def varying_curvature_surface():
    """Ellipsoid-like surface whose thickness oscillates along the x1 axis."""
    surf = LevelSetSurface(_vc_phi, _vc_grad, _vc_hess, sphere_map=_vc_sphere_map)
    surf.name = "varying"
    return surf


def make_surface(name):
    if name == "sphere":
        return Sphere(1.0)
    if name == "varying":
        return varying_curvature_surface()
    raise ValueError(f"unknown surface {name!r}")
