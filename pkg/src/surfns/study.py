"""Convergence-study drivers shared by the CLI and the test-suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, fields, replace

import numpy as np

from .analysis import eoc_table, error_norms, estimate_infsup, geometric_error_report
from .geometry import make_surface
from .mesh import build_mesh
from .problems import ForcingMode, make_problem
from .solver import Formulation, TimeConfig, build_spaces, unsteady_solve


@dataclass
class RunConfig:
    surface: str = "varying"
    k_u: int = 2
    k_pr: int = 1
    k_lambda: int = 1
    k_g: int = 3
    base_refine: int = 1
    levels: int = 3
    dt0: float = 0.5
    t_end: float = 1.0
    mu: float = 0.5
    tau_alpha: float = 2.5
    formulation: str = "lagrange"
    inertia: str = "plain"
    initial_condition: str = "ritz"
    forcing_mode: str = "full"
    normal_mode: str = "improved"
    backend: str = "direct"
    quad_degree: int | None = None
    zeroth_order: bool = True
    out_path: str = "out.csv"
    seed: int = 0
    threads: int | None = None

    def validate(self):
        if self.surface not in ("sphere", "varying"):
            raise ValueError(f"unknown surface {self.surface!r}")
        if self.k_u < 2 or self.k_pr != self.k_u - 1:
            raise ValueError("k_pr must equal k_u - 1 with k_u >= 2")
        if self.k_lambda not in (self.k_u - 1, self.k_u):
            raise ValueError("k_lambda must be k_u - 1 or k_u")
        if self.k_g not in (1, 2, 3):
            raise ValueError("k_g must be 1, 2 or 3")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_refine < 0:
            raise ValueError("base_refine must be >= 0")
        if not (self.dt0 > 0 and self.t_end > 0 and self.mu > 0):
            raise ValueError("dt0, t_end and mu must be positive")
        Formulation(self.formulation)
        ForcingMode(self.forcing_mode)
        return self

    @classmethod
    def field_types(cls):
        return {f.name: f.type for f in fields(cls)}


def level_dt(cfg: RunConfig, level: int) -> float:
    """Mesh size halves per level and the time step is divided by four."""
    return cfg.dt0 / 4**level


def run_level(cfg: RunConfig, level: int, problem=None):
    """Solve one refinement level; returns ``(report, trajectory, spaces)``."""
    problem = problem or make_problem(cfg.surface, cfg.mu, ForcingMode(cfg.forcing_mode))
    t0 = time.perf_counter()
    mesh = build_mesh(problem.surface, cfg.base_refine + level, cfg.k_g)
    penalty = Formulation(cfg.formulation) == Formulation.PENALTY
    spaces = build_spaces(mesh, cfg.k_u, cfg.k_pr, cfg.k_lambda, with_lambda=not penalty)
    tc = TimeConfig(
        dt=level_dt(cfg, level),
        t_end=cfg.t_end,
        mu=cfg.mu,
        formulation=cfg.formulation,
        inertia=cfg.inertia,
        zeroth_order=cfg.zeroth_order,
        initial_condition=cfg.initial_condition,
        tau_alpha=cfg.tau_alpha,
        normal_mode=cfg.normal_mode,
        backend=cfg.backend,
        qdeg=cfg.quad_degree,
    )
    traj = unsteady_solve(spaces, problem, tc)
    rep = error_norms(traj, problem, spaces, cfg.quad_degree, level=level)
    rep.extra.update(
        refinements=cfg.base_refine + level,
        max_constraint=max(s.constraint for s in traj.info),
        max_pressure_mean=max(s.pressure_mean for s in traj.info),
        max_residual=max(s.residual for s in traj.info),
        seconds=time.perf_counter() - t0,
    )
    problem.clear_cache()
    return rep, traj, spaces


def convergence_study(cfg: RunConfig, progress=None):
    cfg.validate()
    problem = make_problem(cfg.surface, cfg.mu, ForcingMode(cfg.forcing_mode))
    reports = []
    for level in range(cfg.levels):
        rep, _, _ = run_level(cfg, level, problem)
        reports.append(rep)
        if progress:
            progress(rep)
    return reports


CSV_HEADER = ("level,h,dt,ndof_u,ndof_p,ndof_lambda,err_u_LinfL2,err_Pu_LinfL2,err_n_LinfL2,"
              "err_grad_L2L2,err_p_L2L2,eoc_u,eoc_Pu,eoc_n,eoc_grad,eoc_p")
_ERR_KEYS = ("err_u", "err_Pu", "err_n", "err_grad", "err_p")


def fmt(x):
    """Scientific notation with six significant digits."""
    return f"{float(x):.5e}"


def report_rows(reports):
    rates = eoc_table(reports, _ERR_KEYS)
    rows = []
    for i, r in enumerate(reports):
        cells = [str(r.level), fmt(r.h), fmt(r.dt), str(r.ndof_u), str(r.ndof_p), str(r.ndof_lambda)]
        cells += [fmt(getattr(r, k)) for k in _ERR_KEYS]
        cells += ["" if i == 0 else fmt(rates[k][i - 1]) for k in _ERR_KEYS]
        rows.append(",".join(cells))
    return rows


def reports_to_csv(reports, prefix_cols=None):
    prefix_cols = prefix_cols or []
    head = ",".join([c for c, _ in prefix_cols] + [CSV_HEADER])
    pre = ",".join(v for _, v in prefix_cols)
    rows = [(pre + "," if pre else "") + row for row in report_rows(reports)]
    return "\n".join([head] + rows) + "\n"


def compare_configs(base: RunConfig):
    """Penalty (k_g=2, improved normal) and Lagrange (k_g=3, k_lambda=1)
    settings of the sphere comparison."""
    common = dict(surface="sphere", k_u=2, k_pr=1)
    pm = replace(base, **common, k_g=2, k_lambda=1, formulation="penalty", normal_mode="improved")
    lm = replace(base, **common, k_g=3, k_lambda=1, formulation="lagrange")
    return pm, lm


def geometry_study(surface_name, k_g, refinements, qdeg=None):
    surf = make_surface(surface_name)
    rows = []
    for r in refinements:
        rep = geometric_error_report(build_mesh(surf, r, k_g), qdeg)
        rep["refinements"] = r
        rows.append(rep)
    return rows


def geometry_csv(rows):
    keys = ["dist", "normal", "weingarten", "area_error"]
    keys = [k for k in keys if k in rows[0]]
    head = ["level", "refinements", "h"] + [f"max_{k}" if k != "area_error" else k for k in keys]
    head += [f"eoc_{k}" for k in keys]
    hs = np.array([r["h"] for r in rows])
    out = [",".join(head)]
    for i, r in enumerate(rows):
        cells = [str(i), str(r["refinements"]), fmt(r["h"])] + [fmt(r[k]) for k in keys]
        for k in keys:
            if i == 0 or r[k] <= 0 or rows[i - 1][k] <= 0:
                cells.append("")
            else:
                cells.append(fmt(np.log(rows[i - 1][k] / r[k]) / np.log(hs[i - 1] / hs[i])))
        out.append(",".join(cells))
    return "\n".join(out) + "\n"


def infsup_study(cfg: RunConfig, with_hm1=True):
    surf = make_surface(cfg.surface)
    rows = []
    for level in range(cfg.levels):
        r = cfg.base_refine + level
        mesh = build_mesh(surf, r, cfg.k_g)
        spaces = build_spaces(mesh, cfg.k_u, cfg.k_pr, cfg.k_lambda)
        beta = estimate_infsup(spaces, cfg.quad_degree)
        beta_h = estimate_infsup(spaces, cfg.quad_degree, variant="Hm1") if with_hm1 else float("nan")
        rows.append(dict(level=level, refinements=r, h=mesh.h, ndof_u=spaces.velocity.dof_count,
                         ndof_p=spaces.pressure.dof_count, ndof_lambda=spaces.lam.dof_count,
                         beta_L2=beta, beta_Hm1=beta_h))
    return rows


def infsup_csv(rows):
    head = "level,refinements,h,ndof_u,ndof_p,ndof_lambda,beta_L2,beta_Hm1"
    out = [head]
    for r in rows:
        out.append(",".join([str(r["level"]), str(r["refinements"]), fmt(r["h"]), str(r["ndof_u"]),
                             str(r["ndof_p"]), str(r["ndof_lambda"]), fmt(r["beta_L2"]),
                             fmt(r["beta_Hm1"])]))
    return "\n".join(out) + "\n"
