"""Icosphere base triangulations and their degree-k_g curved elevation."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import Surface, tangential_projector
from .quadrature import quadrature
from .reference import LOCAL_EDGES, eval_basis, n_local, reference_nodes


class DegenerateElement(ValueError):
    pass


_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTICES = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=float,
)
_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class MeshTopology:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (F, 3)

    @cached_property
    def _edge_data(self):
        tri = self.triangles
        loc = np.array(LOCAL_EDGES)
        pairs = np.sort(tri[:, loc], axis=-1).reshape(-1, 2)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        tri_edges = inverse.reshape(-1, 3)
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        count = np.zeros(len(edges), dtype=np.int64)
        for f, e in zip(np.repeat(np.arange(len(tri)), 3), inverse.ravel()):
            if count[e] >= 2:
                raise ValueError("non-manifold edge")
            edge_tris[e, count[e]] = f
            count[e] += 1
        return edges, tri_edges, edge_tris, count

    @property
    def edges(self):
        return self._edge_data[0]

    @property
    def tri_edges(self):
        return self._edge_data[1]

    @property
    def edge_triangles(self):
        return self._edge_data[2]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_triangles

    def is_closed_manifold(self):
        return bool(np.all(self._edge_data[3] == 2))


def _icosphere(refinements):
    verts = _ICO_VERTICES / np.linalg.norm(_ICO_VERTICES, axis=1)[:, None]
    faces = _ICO_FACES.copy()
    for _ in range(refinements):
        topo = MeshTopology(verts, faces)
        edges, tri_edges = topo.edges, topo.tri_edges
        mid = verts[edges[:, 0]] + verts[edges[:, 1]]
        mid /= np.linalg.norm(mid, axis=1)[:, None]
        m = len(verts) + tri_edges  # midpoint ids of local edges (01, 12, 02)
        a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
        m01, m12, m02 = m[:, 0], m[:, 1], m[:, 2]
        faces = np.concatenate(
            [
                np.stack([a, m01, m02], 1),
                np.stack([m01, b, m12], 1),
                np.stack([m02, m12, c], 1),
                np.stack([m01, m12, m02], 1),
            ]
        )
        verts = np.concatenate([verts, mid])
    return verts, faces


def build_base_mesh(surface: Surface, refinements: int) -> MeshTopology:
    """Icosahedron refined ``refinements`` times, mapped onto ``surface``."""
    if refinements < 0:
        raise ValueError("refinements must be >= 0")
    sverts, faces = _icosphere(refinements)
    # outward orientation on the sphere
    v = sverts[faces]
    nrm = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    flip = np.einsum("ij,ij->i", nrm, v.sum(axis=1)) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return MeshTopology(surface.from_sphere(sverts), faces)


def lagrange_numbering(topo: MeshTopology, k: int):
    """Global node numbering of a continuous degree-k Lagrange space.

    Vertices come first, then ``k-1`` nodes per edge ordered from the lower to
    the higher global vertex, then interior nodes per triangle.
    Returns ``(element_map (F, n_local), n_nodes)``.
    """
    V, E, F = topo.n_vertices, topo.n_edges, topo.n_triangles
    ne = k - 1
    ni = (k - 1) * (k - 2) // 2
    emap = np.empty((F, n_local(k)), dtype=np.int64)
    tri = topo.triangles
    emap[:, :3] = tri
    col = 3
    for le, (a, b) in enumerate(LOCAL_EDGES):
        eid = topo.tri_edges[:, le]
        forward = tri[:, a] < tri[:, b]
        for j in range(1, k):
            pos = np.where(forward, j - 1, k - 1 - j)
            emap[:, col] = V + eid * ne + pos
            col += 1
    for i in range(ni):
        emap[:, col] = V + E * ne + np.arange(F) * ni + i
        col += 1
    return emap, V + E * ne + F * ni


@dataclass(frozen=True)
class ElementGeometry:
    """Geometry of every element at a fixed set of reference points."""

    ref_points: np.ndarray  # (Q, 2)
    x: np.ndarray  # (F, Q, 3)
    jac: np.ndarray  # (F, Q, 3, 2)
    measure: np.ndarray  # (F, Q) |J1 x J2|
    normal: np.ndarray  # (F, Q, 3)
    tangent_map: np.ndarray  # (F, Q, 3, 2) = J (J^T J)^{-1}
    weingarten: np.ndarray | None  # (F, Q, 3, 3)

    @property
    def projector(self):
        return tangential_projector(self.normal)


@dataclass(eq=False)
class HighOrderMesh:
    surface: Surface
    topology: MeshTopology
    k_g: int
    nodes: np.ndarray  # (N, 3)
    element_nodes: np.ndarray  # (F, n_local(k_g))
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_elements(self):
        return self.topology.n_triangles

    @cached_property
    def element_diameters(self):
        v = self.topology.vertices[self.topology.triangles]
        lens = np.stack(
            [np.linalg.norm(v[:, a] - v[:, b], axis=1) for a, b in LOCAL_EDGES], axis=1
        )
        return lens.max(axis=1)

    @property
    def h(self):
        return float(self.element_diameters.max())

    @property
    def quasi_uniformity(self):
        d = self.element_diameters
        return float(d.max() / d.min())

    def geometry(self, ref_pts, second=True) -> ElementGeometry:
        """Vectorised element maps at ``ref_pts`` for all elements."""
        ref_pts = np.atleast_2d(np.asarray(ref_pts, dtype=float))
        _, grads, hess = eval_basis(self.k_g, ref_pts, second=True)
        vals = eval_basis(self.k_g, ref_pts)[0]
        X = self.nodes[self.element_nodes]  # (F, n, 3)
        x = np.einsum("qa,fai->fqi", vals, X)
        J = np.einsum("qak,fai->fqik", grads, X)
        cr = np.cross(J[..., 0], J[..., 1])
        meas = np.linalg.norm(cr, axis=-1)
        if np.any(meas < 1e-14):
            raise DegenerateElement("element with vanishing surface measure")
        n = cr / meas[..., None]
        G = np.einsum("fqik,fqil->fqkl", J, J)
        T = np.einsum("fqik,fqkl->fqil", J, np.linalg.inv(G))
        H = None
        if second:
            D2 = np.einsum("qakl,fai->fqikl", hess, X)  # second derivatives of F_T
            # derivative of the unnormalised normal J1 x J2 along each ref direction
            dcr = np.stack(
                [
                    np.cross(D2[..., 0, a], J[..., 1]) + np.cross(J[..., 0], D2[..., 1, a])
                    for a in range(2)
                ],
                axis=-1,
            )  # (F, Q, 3, 2)
            P = tangential_projector(n)
            dn = np.einsum("fqij,fqja->fqia", P, dcr) / meas[..., None, None]
            H = np.einsum("fqia,fqja->fqij", dn, T)
            H = np.einsum("fqij,fqjk->fqik", P, H)
        return ElementGeometry(ref_pts, x, J, meas, n, T, H)

    def quad_geometry(self, degree: int) -> ElementGeometry:
        key = ("quad", degree)
        if key not in self._cache:
            rule = quadrature(degree)
            self._cache[key] = self.geometry(rule.points)
        return self._cache[key]

    def exact_at_quadrature(self, degree: int):
        """Closest points, signed distances, exact normals and Weingarten maps
        of the quadrature points of ``quad_geometry(degree)``."""
        key = ("exact", degree)
        if key not in self._cache:
            g = self.quad_geometry(degree)
            F, Q = g.x.shape[:2]
            p, d = self.surface.project_with_distance(g.x.reshape(-1, 3))
            n = self.surface.normal(p)
            H = self.surface.weingarten(p)
            self._cache[key] = dict(
                p=p.reshape(F, Q, 3),
                d=d.reshape(F, Q),
                n=n.reshape(F, Q, 3),
                H=H.reshape(F, Q, 3, 3),
            )
        return self._cache[key]

    def area(self, degree=None):
        degree = degree or 2 * self.k_g + 2
        g = self.quad_geometry(degree)
        w = quadrature(degree).weights
        return float(np.einsum("fq,q->", g.measure, w))

    def element_frame(self, element: int, ref_pt):
        """Frame of one element at one reference point."""
        ref = np.atleast_2d(np.asarray(ref_pt, dtype=float))
        g = self.geometry(ref)
        e = element
        return dict(
            x=g.x[e, 0],
            J=g.jac[e, 0],
            n_h=g.normal[e, 0],
            P_h=tangential_projector(g.normal[e, 0]),
            surface_measure=g.measure[e, 0],
            H_h=g.weingarten[e, 0],
        )


def elevate_geometry(surface: Surface, base: MeshTopology, k_g: int) -> HighOrderMesh:
    """Curved mesh whose degree-k_g Lagrange nodes are closest points of the
    corresponding nodes of the flat triangles."""
    if k_g not in (1, 2, 3):
        raise ValueError("k_g must be 1, 2 or 3")
    emap, n_nodes = lagrange_numbering(base, k_g)
    ref = reference_nodes(k_g)
    bary = np.column_stack([1 - ref[:, 0] - ref[:, 1], ref[:, 0], ref[:, 1]])
    affine = np.einsum("ab,fbi->fai", bary, base.vertices[base.triangles])
    nodes = np.zeros((n_nodes, 3))
    nodes[emap.ravel()] = affine.reshape(-1, 3)
    V = base.n_vertices
    nodes[:V] = base.vertices
    if k_g > 1:
        # edge nodes are recomputed from global edge orientation so both
        # neighbours see bit-identical coordinates
        E = base.n_edges
        lo, hi = base.vertices[base.edges[:, 0]], base.vertices[base.edges[:, 1]]
        for j in range(1, k_g):
            ids = V + np.arange(E) * (k_g - 1) + (j - 1)
            nodes[ids] = lo + (j / k_g) * (hi - lo)
        nodes[V:] = surface.closest_point(nodes[V:])
    return HighOrderMesh(surface, base, k_g, nodes, emap)


def build_mesh(surface: Surface, refinements: int, k_g: int) -> HighOrderMesh:
    return elevate_geometry(surface, build_base_mesh(surface, refinements), k_g)
