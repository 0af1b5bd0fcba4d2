import numpy as np
import pytest

from surfns.geometry import Sphere, varying_curvature_surface
from surfns.mesh import build_mesh


@pytest.fixture(scope="session")
def sphere():
    return Sphere(1.0)


@pytest.fixture(scope="session")
def varying():
    return varying_curvature_surface()


@pytest.fixture(scope="session")
def sphere_mesh_r1_kg2(sphere):
    return build_mesh(sphere, 1, 2)


@pytest.fixture(scope="session")
def sphere_mesh_r1_kg3(sphere):
    return build_mesh(sphere, 1, 3)


@pytest.fixture(scope="session")
def varying_mesh_r1_kg2(varying):
    return build_mesh(varying, 1, 2)


def random_sphere_points(n, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 3))
    return x / np.linalg.norm(x, axis=1)[:, None]
