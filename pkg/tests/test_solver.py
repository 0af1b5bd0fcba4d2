import numpy as np
import pytest
import scipy.sparse as sp

from surfns import assembly as asm
from surfns.analysis import eoc, error_norms, exact_covariant_gradient, l2_norm
from surfns.fespace import interpolate
from surfns.mesh import build_mesh
from surfns.problems import Mode, ProblemSpec, killing_field, make_problem, surface_operator_oracle
from surfns.quadrature import quadrature
from surfns.solver import (
    BlockSystem,
    BlowUp,
    Formulation,
    SingularSystem,
    TimeConfig,
    build_spaces,
    ritz_stokes_initial,
    solve_linear,
    steady_stokes_solve,
    unsteady_solve,
)


# -- linear algebra -------------------------------------------------------------------


def test_solve_identity():
    b = np.random.default_rng(0).normal(size=20)
    x, res = solve_linear(sp.identity(20), b)
    assert np.array_equal(x, b) and res == 0.0


def test_solve_mass_system(sphere_mesh_r1_kg2):
    from surfns.fespace import build_space

    M = asm.assemble_mass(build_space(sphere_mesh_r1_kg2, 2, 3))
    x, res = solve_linear(M, M @ np.ones(M.shape[0]))
    assert np.abs(x - 1).max() <= 1e-10 and res <= 1e-10


def test_singular_system_raises():
    with pytest.raises(SingularSystem):
        solve_linear(sp.csc_matrix((3, 3)), np.ones(3))


@pytest.mark.parametrize("k_l", [1, 2])
def test_regularized_factor_matches_pivoted(sphere_mesh_r1_kg2, k_l):
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, k_l)
    V = spaces.velocity
    Bp, Bl, m = asm.assemble_b_L(V, spaces.pressure, spaces.lam)
    A = (asm.assemble_a_h(V) + 8.0 * asm.assemble_mass(V)).tocsr()
    f = np.random.default_rng(5).normal(size=V.dof_count)
    sysm = BlockSystem(A, Bp, Bl, m, f)
    x_reg, r_reg = solve_linear(sysm)
    x_piv, r_piv = solve_linear(sysm.matrix, sysm.full_rhs(f))
    assert r_reg <= 1e-10 and r_piv <= 1e-10
    assert np.abs(x_reg - x_piv).max() <= 1e-9 * np.abs(x_piv).max()
    u, p = sysm.split(x_reg)[:2]
    cres, pmean = sysm.constraint_residuals(u, p)
    assert cres <= 1e-12 and pmean <= 1e-12


def test_block_system_layout(sphere_mesh_r1_kg2):
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1)
    V = spaces.velocity
    Bp, Bl, m = asm.assemble_b_L(V, spaces.pressure, spaces.lam)
    sysm = BlockSystem(asm.assemble_a_h(V), Bp, Bl, m)
    K = sysm.matrix
    n = V.dof_count + spaces.pressure.dof_count + spaces.lam.dof_count + 1
    assert K.shape == (n, n)
    # constraint rows are the transposed coupling columns
    assert abs(K - K.T).max() < 1e-14


# -- steady problems -----------------------------------------------------------------------


def test_steady_stokes_zero_rhs(sphere_mesh_r1_kg2):
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1)
    out = steady_stokes_solve(spaces, 0.5, lambda p: np.zeros((len(p), 3)))
    assert not np.any(out["u"]) and not np.any(out["p"]) and not np.any(out["lam"])


def _steady_problem(sphere, mu):
    # u = 0.5 x3 K + K, p = x1 x2^2 x3; f = -2 mu div E(u) + grad p + u
    U = lambda x: (1 + 0.5 * x[:, 2:3]) * killing_field(x)  # noqa: E731
    prob = ProblemSpec("steady", sphere, [Mode(lambda t: 1.0, U, lambda t: 0.0)],
                       [Mode(lambda t: 1.0, lambda x: x[:, 0] * x[:, 1] ** 2 * x[:, 2],
                             lambda t: 0.0)], mu=mu)
    return prob


def test_steady_stokes_manufactured_rate(sphere):
    mu = 0.5
    prob = _steady_problem(sphere, mu)
    errs, hs = [], []
    for r in (1, 2, 3):
        mesh = build_mesh(sphere, r, 3)
        spaces = build_spaces(mesh, 2, 1, 1)
        qd = asm.default_quad_degree(2, 3)
        data = prob.quadrature_data(mesh, qd)
        # strip the convective and time terms: steady Stokes residual only
        f = -2 * mu * data["divE"][0] + data["gradp"][0] + data["U"][0]
        out = steady_stokes_solve(spaces, mu, f, qd)
        assert out["residual"] <= 1e-10
        cres, pmean = out["system"].constraint_residuals(out["u"], out["p"])
        assert cres <= 1e-9 and pmean <= 1e-10
        V = spaces.velocity
        Ph = mesh.quad_geometry(qd).projector
        gh = Ph @ V.gradients_at_quadrature(out["u"], qd) @ Ph
        gex = exact_covariant_gradient(mesh, qd, data["grad"][0])
        diff = np.concatenate([(gex - gh).reshape(gh.shape[:2] + (9,)),
                               data["U"][0] - V.values_at_quadrature(out["u"], qd)], axis=-1)
        dx = mesh.quad_geometry(qd).measure * quadrature(qd).weights
        errs.append(np.sqrt(np.einsum("fq,fqi->", dx, diff**2)))
        hs.append(mesh.h)
    rates = eoc(errs, hs)
    assert 1.6 <= rates[-1] <= 2.6, rates


def test_ritz_zero_initial(sphere_mesh_r1_kg2):
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1)
    u = ritz_stokes_initial(spaces, lambda p: np.zeros((len(p), 3)))
    assert not np.any(u)


def test_ritz_projection_rate_and_constraints(sphere):
    errs, hs = [], []
    field = lambda x: (1 + 0.5 * x[:, 2:3]) * killing_field(x)  # noqa: E731
    for r in (1, 2, 3):
        mesh = build_mesh(sphere, r, 3)
        spaces = build_spaces(mesh, 2, 1, 1)
        u = ritz_stokes_initial(spaces, field)
        V = spaces.velocity
        Bp, Bl, _ = asm.assemble_b_L(V, spaces.pressure, spaces.lam)
        assert max(np.abs(Bp @ u).max(), np.abs(Bl @ u).max()) <= 1e-9
        errs.append(l2_norm(V, u - interpolate(V, field)))
        hs.append(mesh.h)
    assert eoc(errs, hs)[-1] >= 3 - 0.4


# -- time stepping --------------------------------------------------------------------------


def test_time_config_invariants():
    with pytest.raises(ValueError):
        TimeConfig(dt=0.0)
    with pytest.raises(ValueError):
        TimeConfig(dt=0.5, t_end=0.25)
    assert TimeConfig(dt=0.125).n_steps == 8


def test_trajectory_shapes_and_constraints(sphere_mesh_r1_kg2):
    prob = make_problem("sphere")
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1)
    traj = unsteady_solve(spaces, prob, TimeConfig(dt=0.25, t_end=1.0))
    assert traj.velocity.shape[0] == 5 and traj.pressure.shape[0] == 4 and traj.lam.shape[0] == 4
    for s in traj.info:
        assert s.residual <= 1e-9 and s.constraint <= 1e-8 and s.pressure_mean <= 1e-9


def test_tiny_step_is_consistent(sphere_mesh_r1_kg2):
    prob = make_problem("sphere")
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1)
    traj = unsteady_solve(spaces, prob, TimeConfig(dt=1e-8, t_end=1e-8))
    assert l2_norm(spaces.velocity, traj.velocity[1] - traj.velocity[0]) <= 1e-6


@pytest.mark.parametrize("formulation", ["lagrange", "penalty"])
def test_skew_energy_identity(sphere, formulation):
    # with skew inertia every step satisfies
    # |u^n|^2 - |u^{n-1}|^2 + |u^n - u^{n-1}|^2 + 2 dt a(u^n, u^n) = 2 dt (f^n, u^n)
    mesh = build_mesh(sphere, 1, 2)
    prob = make_problem("sphere")
    spaces = build_spaces(mesh, 2, 1, 1, with_lambda=formulation == "lagrange")
    cfg = TimeConfig(dt=0.1, t_end=0.5, inertia="skew", formulation=formulation)
    traj = unsteady_solve(spaces, prob, cfg)
    V = spaces.velocity
    qd = asm.default_quad_degree(2, 2)
    M = asm.assemble_mass(V, qd)
    A = 2 * cfg.mu * asm.assemble_strain(V, qd) + M
    if formulation == "penalty":
        A = A + asm.assemble_penalty(V, 2.5 / mesh.h**2, "improved", qd)
    for n in range(1, traj.n_steps + 1):
        u, u0 = traj.velocity[n], traj.velocity[n - 1]
        f = asm.assemble_forcing(V, prob.forcing_at_quadrature(mesh, qd, traj.times[n]), 0, qd)
        lhs = u @ M @ u - u0 @ M @ u0 + (u - u0) @ M @ (u - u0) + 2 * cfg.dt * (u @ A @ u)
        rhs = 2 * cfg.dt * (f @ u)
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-10 * (u0 @ M @ u0))


def test_gmres_and_direct_agree(sphere_mesh_r1_kg2):
    prob = make_problem("sphere")
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1)
    a = unsteady_solve(spaces, prob, TimeConfig(dt=0.25, t_end=0.5))
    b = unsteady_solve(spaces, prob, TimeConfig(dt=0.25, t_end=0.5, backend="gmres"))
    assert np.abs(a.velocity - b.velocity).max() <= 1e-8
    assert np.abs(a.pressure - b.pressure).max() <= 1e-8 * max(1, np.abs(a.pressure).max())


def test_interpolated_initial_condition(sphere_mesh_r1_kg2):
    prob = make_problem("sphere")
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1)
    traj = unsteady_solve(spaces, prob, TimeConfig(dt=0.5, initial_condition="interpolation"))
    assert np.array_equal(traj.velocity[0],
                          interpolate(spaces.velocity, lambda p: prob.velocity(p, 0.0)))


def test_blowup_detection(sphere_mesh_r1_kg2):
    prob = make_problem("sphere")
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1)
    with pytest.raises(BlowUp):
        unsteady_solve(spaces, prob, TimeConfig(dt=0.5, blowup_factor=1e-3))


def test_lagrange_needs_multiplier_space(sphere_mesh_r1_kg2):
    spaces = build_spaces(sphere_mesh_r1_kg2, 2, 1, 1, with_lambda=False)
    with pytest.raises(ValueError):
        unsteady_solve(spaces, make_problem("sphere"), TimeConfig(dt=0.5))


def test_formulations_agree_tangentially(sphere):
    # Lagrange with k_lambda = k_u against the improved-normal penalty method
    mesh = build_mesh(sphere, 2, 2)
    prob = make_problem("sphere")
    cfg = dict(dt=0.125, t_end=0.5)
    sl = build_spaces(mesh, 2, 1, 2)
    tl = unsteady_solve(sl, prob, TimeConfig(**cfg))
    sp_ = build_spaces(mesh, 2, 1, 2, with_lambda=False)
    tp = unsteady_solve(sp_, prob, TimeConfig(formulation=Formulation.PENALTY, **cfg))
    el = error_norms(tl, prob, sl).err_Pu
    ep = error_norms(tp, prob, sp_).err_Pu
    V = sl.velocity
    qd = asm.default_quad_degree(2, 2)
    Ph = mesh.quad_geometry(qd).projector
    dx = mesh.quad_geometry(qd).measure * quadrature(qd).weights
    gap = 0.0
    for n in range(tl.n_steps + 1):
        d = V.values_at_quadrature(tl.velocity[n] - tp.velocity[n], qd)
        d = np.einsum("fqij,fqj->fqi", Ph, d)
        gap = max(gap, np.sqrt(np.einsum("fq,fqi->", dx, d**2)))
    assert gap <= 3 * max(el, ep)


def test_oracle_used_for_steady_forcing_is_cross_validated(sphere):
    prob = _steady_problem(sphere, 0.5)
    x = sphere.closest_point(np.random.default_rng(3).normal(size=(30, 3)))
    field = prob.velocity_modes[0].space
    a = surface_operator_oracle(sphere, field, x, 1e-5, 1e-4, richardson=True)
    b = surface_operator_oracle(sphere, field, x, 1e-4, 1e-4, richardson=True)
    assert np.abs(a["divE"] - b["divE"]).max() <= 1e-4 * np.abs(a["divE"]).max()
