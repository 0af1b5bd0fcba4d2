"""Continuous Lagrange spaces on curved surface meshes."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .mesh import HighOrderMesh, lagrange_numbering
from .quadrature import quadrature
from .reference import eval_basis, n_local, reference_nodes


@dataclass(eq=False)
class FESpace:
    """Scalar (``components=1``) or vector (``components=3``) space of degree k.

    Vector DOFs are laid out component-major: all x-components, then y, then z.
    """

    mesh: HighOrderMesh
    degree: int
    components: int = 1
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")
        if self.components not in (1, 3):
            raise ValueError("components must be 1 or 3")
        self.element_dofs, self.n_scalar = lagrange_numbering(self.mesh.topology, self.degree)

    @property
    def n_local(self):
        return n_local(self.degree)

    @property
    def dof_count(self):
        return self.components * self.n_scalar

    @cached_property
    def element_dof_map(self):
        """Global DOFs per element, ordered ``(component, local node)``."""
        c = np.arange(self.components)[:, None] * self.n_scalar
        return (c[None, :, :] + self.element_dofs[:, None, :]).reshape(self.mesh.n_elements, -1)

    @cached_property
    def dof_coordinates(self):
        """Position on Gamma_h of each scalar DOF."""
        g = self.mesh.geometry(reference_nodes(self.degree), second=False)
        out = np.empty((self.n_scalar, 3))
        out[self.element_dofs.ravel()] = g.x.reshape(-1, 3)
        return out

    def tabulate(self, qdeg):
        """Basis values ``(Q, n)`` and Gamma_h tangential gradients
        ``(F, Q, n, 3)`` at the quadrature points of degree ``qdeg``."""
        key = ("tab", qdeg)
        if key not in self._cache:
            rule = quadrature(qdeg)
            vals, rgrads = eval_basis(self.degree, rule.points)
            geo = self.mesh.quad_geometry(qdeg)
            grads = np.einsum("fqik,qak->fqai", geo.tangent_map, rgrads)
            self._cache[key] = (vals, grads)
        return self._cache[key]

    def split(self, coeffs):
        """Reshape a vector coefficient array to ``(components, n_scalar)``."""
        return np.asarray(coeffs).reshape(self.components, self.n_scalar)

    def values_at_quadrature(self, coeffs, qdeg):
        vals, _ = self.tabulate(qdeg)
        c = self.split(coeffs)[:, self.element_dofs]  # (C, F, n)
        out = np.einsum("qa,cfa->fqc", vals, c)
        return out[..., 0] if self.components == 1 else out

    def gradients_at_quadrature(self, coeffs, qdeg):
        """Tangential gradient: ``(F, Q, 3)`` scalar or ``(F, Q, 3, 3)`` vector
        with ``[..., i, j] = D_j v_i``."""
        _, grads = self.tabulate(qdeg)
        c = self.split(coeffs)[:, self.element_dofs]
        out = np.einsum("fqaj,cfa->fqcj", grads, c)
        return out[..., 0, :] if self.components == 1 else out


def build_space(mesh: HighOrderMesh, degree: int, components: int = 1) -> FESpace:
    return FESpace(mesh, degree, components)


def interpolate(space: FESpace, f, on_surface=True):
    """Nodal interpolant of ``f``.

    ``f`` maps points ``(N, 3)`` to values ``(N,)`` or ``(N, 3)``. With
    ``on_surface`` the field is defined on the exact surface and is evaluated
    at the closest points of the DOF coordinates (inverse lift).
    """
    x = space.dof_coordinates
    if on_surface:
        x = space.mesh.surface.closest_point(x)
    vals = np.asarray(f(x), dtype=float)
    if space.components == 1:
        return np.broadcast_to(vals, (space.n_scalar,)).astype(float).copy()
    vals = np.broadcast_to(vals, (space.n_scalar, 3))
    return vals.T.reshape(-1).copy()
