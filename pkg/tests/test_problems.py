import numpy as np
import pytest

from surfns.geometry import Sphere
from surfns.mesh import build_mesh
from surfns.problems import (
    ForcingMode,
    _Psi,
    builtin_problems,
    killing_field,
    make_problem,
    surface_curl,
    surface_gradient,
    surface_operator_oracle,
)
from surfns.quadrature import quadrature

from conftest import random_sphere_points


def _surface_points(surface, n, seed):
    return surface.closest_point(surface.from_sphere(random_sphere_points(n, seed)))


# -- oracle ---------------------------------------------------------------------------


def test_oracle_constant_field(sphere):
    x = random_sphere_points(10, 1)
    o = surface_operator_oracle(sphere, lambda p: np.tile([1.0, 2.0, 3.0], (len(p), 1)), x)
    for k in ("grad", "cov", "E", "div", "divE"):
        assert np.abs(o[k]).max() < 1e-9


def test_oracle_killing_field_has_zero_strain(sphere):
    x = random_sphere_points(1000, 2)
    o = surface_operator_oracle(sphere, killing_field, x, second=False)
    assert np.abs(o["E"]).max() <= 1e-6


def test_oracle_laplace_beltrami_of_x3(sphere):
    x = random_sphere_points(100, 3)
    grad = lambda p: surface_gradient(sphere, lambda y: y[:, 2], p)  # noqa: E731
    lap = np.trace(surface_gradient(sphere, grad, x, 1e-4), axis1=1, axis2=2)
    assert np.abs(lap + 2 * x[:, 2]).max() <= 1e-4


def test_oracle_matches_analytic_tangential_gradient(varying):
    psi = _Psi()
    x = _surface_points(varying, 50, 4)
    P = varying.projector(x)
    exact = np.einsum("nij,nj->ni", P, psi.grad(x))
    assert np.abs(surface_gradient(varying, psi, x) - exact).max() < 1e-8


def test_oracle_step_cross_validation(varying):
    prob = make_problem("varying")
    mode = prob.velocity_modes[0].space
    x = _surface_points(varying, 30, 5)
    a = surface_operator_oracle(varying, mode, x, 1e-5, 1e-4, richardson=True)
    b = surface_operator_oracle(varying, mode, x, 1e-4, 1e-4, richardson=True)
    for k in ("grad", "divE"):
        scale = np.abs(a[k]).max()
        assert np.abs(a[k] - b[k]).max() <= 1e-4 * scale


# -- curl ---------------------------------------------------------------------------------


def test_surface_curl_examples(sphere, varying):
    x = np.array([[1.0, 0, 0]])
    assert np.allclose(surface_curl(sphere, lambda p: p[:, 2], x), [[0, -1, 0]], atol=1e-9)
    assert np.abs(surface_curl(sphere, lambda p: np.full(len(p), 3.0), x)).max() < 1e-9
    # two independent tangential-gradient paths for the stream function
    psi = _Psi()
    y = np.array([[0.0, 1.0, 0.0]])
    analytic = surface_curl(varying, psi, y)
    fd = surface_curl(varying, lambda p: psi(p), y)
    assert np.abs(analytic - fd).max() < 1e-7


# -- built-in problems -----------------------------------------------------------------------


def test_builtin_problem_list():
    names = [p.name for p in builtin_problems()]
    assert names == ["zero", "varying", "sphere"]
    with pytest.raises(ValueError):
        make_problem("torus")


def test_zero_problem_fields(sphere):
    z = make_problem("zero")
    x = random_sphere_points(10, 0)
    assert np.all(z.velocity(x, 0.3) == 0) and np.all(z.pressure(x, 0.3) == 0)
    assert np.abs(z.forcing(x, 0.3)).max() == 0


def test_problem_value_examples():
    v = make_problem("varying")
    assert v.pressure(np.array([[1.0, 0, 0]]), 0.0)[0] == pytest.approx(0.0, abs=1e-15)
    s = make_problem("sphere")
    x = random_sphere_points(5000, 6)
    assert np.linalg.norm(killing_field(x), axis=1).max() == pytest.approx(4.0, rel=1e-4)
    # J(t) K at a pole-free point, transcribed closed form
    p = np.array([[0.6, 0.0, 0.8]])
    t = 0.4
    expect = (1 + 0.8 * (2 + 0.5 * t) ** 3) * 4 * np.array([0.0, 0.6, 0.0])
    assert np.allclose(s.velocity(p, t), expect)
    assert s.pressure(p, t)[0] == pytest.approx(0.0)


@pytest.mark.parametrize("name", ["varying", "sphere"])
def test_problem_tangential_and_divergence_free(name):
    prob = make_problem(name)
    surf = prob.surface
    x = _surface_points(surf, 1000, 8)
    n = surf.normal(x)
    for t in (0.0, 0.37, 1.0):
        u = prob.velocity(x, t)
        assert np.abs(np.einsum("ni,ni->n", u, n)).max() <= 1e-10
    o = surface_operator_oracle(surf, lambda p: prob.velocity(p, 0.7), x[:200], second=False,
                                richardson=True)
    assert np.abs(o["div"]).max() <= 1e-6


@pytest.mark.parametrize("name", ["varying", "sphere"])
def test_problem_pressure_has_zero_mean(name):
    prob = make_problem(name)
    m = build_mesh(prob.surface, 3, 3)
    qd = 10
    ex = m.exact_at_quadrature(qd)
    p = prob.pressure(ex["p"].reshape(-1, 3), 0.5).reshape(ex["d"].shape)
    dx = m.quad_geometry(qd).measure * quadrature(qd).weights
    assert abs(np.sum(dx * p)) <= 1e-8


def test_steady_killing_forcing_closed_form(sphere):
    from surfns.problems import Mode, ProblemSpec

    prob = ProblemSpec("steady", sphere, [Mode(lambda t: 1.0, killing_field, lambda t: 0.0)], [],
                       mu=0.7)
    x = random_sphere_points(100, 9)
    f = prob.forcing(x, 0.0)
    K = killing_field(x)
    # (K . grad) K for the linear map K = A x is A K, projected tangentially
    A = 4 * np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 0]])
    P = sphere.projector(x)
    closed = np.einsum("nij,nj->ni", P, K @ A.T) + K
    assert np.abs(f - closed).max() <= 1e-5 * np.abs(closed).max()


def test_sphere_forcing_dual_step_consistency():
    rng = np.random.default_rng(10)
    x = random_sphere_points(20, 10)
    ts = rng.uniform(0, 1, 20)
    fine = make_problem("sphere")
    coarse = make_problem("sphere")
    coarse.step = 1e-4
    f1 = np.array([fine.forcing(x[i:i + 1], ts[i])[0] for i in range(20)])
    f2 = np.array([coarse.forcing(x[i:i + 1], ts[i])[0] for i in range(20)])
    assert np.abs(f1 - f2).max() <= 1e-4 * np.abs(f1).max()


def test_sphere_killing_mode_divergence_free(sphere):
    x = random_sphere_points(300, 11)
    field = lambda p: p[:, 2:3] * killing_field(p)  # noqa: E731
    o = surface_operator_oracle(sphere, field, x, second=False, richardson=True)
    assert np.abs(o["div"]).max() <= 1e-6


def test_tangential_forcing_mode(sphere):
    full = make_problem("sphere", forcing_mode=ForcingMode.FULL)
    tang = make_problem("sphere", forcing_mode=ForcingMode.TANGENTIAL)
    x = random_sphere_points(20, 12)
    ff, ft = full.forcing(x, 0.3), tang.forcing(x, 0.3)
    n = Sphere(1.0).normal(x)
    assert np.abs(np.einsum("ni,ni->n", ft, n)).max() < 1e-12
    assert np.allclose(ft, ff - np.einsum("ni,ni->n", ff, n)[:, None] * n)
    assert np.all(full.lambda_exact(x, 0.3) == 0)
    # normal part of the full residual is the normal strain divergence term
    assert np.allclose(np.einsum("ni,ni->n", ff, n) + tang.lambda_exact(x, 0.3), 0, atol=1e-6)


def test_quadrature_data_is_cached():
    prob = make_problem("sphere")
    m = build_mesh(prob.surface, 1, 2)
    a = prob.quadrature_data(m, 6)
    assert prob.quadrature_data(m, 6) is a
    prob.clear_cache()
    assert prob.quadrature_data(m, 6) is not a
