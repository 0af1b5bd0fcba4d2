"""Surface finite elements for the unsteady incompressible Navier-Stokes
equations on closed surfaces, with curved high-order meshes and Taylor-Hood
elements constrained by a tangential Lagrange multiplier or a penalty."""

from .geometry import (
    DegenerateGradient,
    NonConvergence,
    OutOfReach,
    Sphere,
    Surface,
    make_surface,
    varying_curvature_surface,
)
from .mesh import HighOrderMesh, MeshTopology, build_base_mesh, build_mesh, elevate_geometry
from .fespace import FESpace, build_space, interpolate
from .quadrature import quadrature
from .solver import (
    BlockSystem,
    Formulation,
    Inertia,
    InitialCondition,
    TimeConfig,
    Trajectory,
    build_spaces,
    ritz_stokes_initial,
    solve_linear,
    steady_stokes_solve,
    unsteady_solve,
)
from .problems import ForcingMode, ProblemSpec, builtin_problems, make_problem
from .analysis import ErrorReport, eoc, error_norms, estimate_infsup, geometric_error_report

__version__ = "0.1.0"
