"""Legacy ASCII VTK (POLYDATA) export of FE fields on a curved surface mesh."""
from __future__ import annotations

import numpy as np

from .reference import eval_basis, subdivision


def _fmt(a):
    return "\n".join(" ".join(f"{v:.10g}" for v in row) for row in np.atleast_2d(a))


def sample_on_subdivision(mesh, levels=None):
    """Points and flat sub-triangles of each curved element.

    Each element is split into ``4**levels`` triangles (default ``k_g - 1``).
    Points are duplicated per element, which keeps discontinuous element-wise
    data representable.
    """
    levels = mesh.k_g - 1 if levels is None else levels
    ref, tris = subdivision(levels)
    g = mesh.geometry(ref, second=False)
    F, R = g.x.shape[:2]
    pts = g.x.reshape(-1, 3)
    conn = (tris[None, :, :] + R * np.arange(F)[:, None, None]).reshape(-1, 3)
    return ref, pts, conn


def _field_at(space, coeffs, ref):
    vals, _ = eval_basis(space.degree, ref)
    c = space.split(coeffs)[:, space.element_dofs]  # (C, F, n)
    out = np.einsum("qa,cfa->fqc", vals, c).reshape(-1, space.components)
    return out


def write_vtk(path, mesh, fields=None, title="surface fields", levels=None):
    """Write ``fields`` (name -> (space, coeffs) or None) at the sub-triangle
    vertices.  ``None`` entries are written as zero arrays (scalar, or vector
    for ``velocity``)."""
    ref, pts, conn = sample_on_subdivision(mesh, levels)
    n_pts = len(pts)
    lines = ["# vtk DataFile Version 2.0", title[:255], "ASCII", "DATASET POLYDATA",
             f"POINTS {n_pts} double", _fmt(pts),
             f"POLYGONS {len(conn)} {4 * len(conn)}",
             _fmt(np.column_stack([np.full(len(conn), 3), conn]))]
    if fields:
        lines.append(f"POINT_DATA {n_pts}")
        for name, entry in fields.items():
            if entry is None:
                ncomp = 3 if name == "velocity" else 1
                data = np.zeros((n_pts, ncomp))
            else:
                space, coeffs = entry
                data = _field_at(space, coeffs, ref)
                ncomp = space.components
            if ncomp == 3:
                lines += [f"VECTORS {name} double", _fmt(data)]
            else:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(data.reshape(-1, 1))]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
