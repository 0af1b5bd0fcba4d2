"""Command-line front end: ``surfns {converge,compare,geomcheck,infsup,export-vtk}``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import assembly
from .solver import SolverError
from .study import (
    RunConfig,
    compare_configs,
    convergence_study,
    geometry_csv,
    geometry_study,
    infsup_csv,
    infsup_study,
    reports_to_csv,
)

log = logging.getLogger("surfns")

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(name, value):
    typ = RunConfig.field_types()[name]
    if isinstance(value, str):
        value = value.strip()
        if "None" in str(typ) and value.lower() in ("", "none"):
            return None
        if "bool" in str(typ):
            try:
                return _BOOL[value.lower()]
            except KeyError:
                raise ValueError(f"{name}: expected a boolean, got {value!r}") from None
        if "int" in str(typ):
            return int(value)
        if "float" in str(typ):
            return float(value)
    return value


def read_config_file(path):
    """Plain ``key = value`` lines; ``#`` starts a comment; dashes in keys are
    accepted for underscores."""
    out = {}
    known = {f.name for f in fields(RunConfig)}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "k_l":
            key = "k_lambda"
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def _add_run_flags(p, defaults: RunConfig):
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="key=value configuration file (flags override it)")
    g.add_argument("--surface", choices=["sphere", "varying"])
    g.add_argument("--k-u", type=int, dest="k_u")
    g.add_argument("--k-pr", type=int, dest="k_pr")
    g.add_argument("--k-lambda", "--k-l", type=int, dest="k_lambda")
    g.add_argument("--k-g", type=int, dest="k_g")
    g.add_argument("--base-refine", type=int, dest="base_refine")
    g.add_argument("--levels", type=int)
    g.add_argument("--dt0", type=float)
    g.add_argument("--t-end", type=float, dest="t_end")
    g.add_argument("--mu", type=float)
    g.add_argument("--tau-alpha", type=float, dest="tau_alpha")
    g.add_argument("--formulation", choices=["lagrange", "penalty"])
    g.add_argument("--inertia", choices=["plain", "skew"])
    g.add_argument("--initial-condition", choices=["ritz", "interpolation"], dest="initial_condition")
    g.add_argument("--forcing-mode", choices=["full", "tangential"], dest="forcing_mode")
    g.add_argument("--normal-mode", choices=["improved", "discrete"], dest="normal_mode")
    g.add_argument("--backend", choices=["direct", "gmres"])
    g.add_argument("--quad-degree", type=int, dest="quad_degree")
    g.add_argument("--no-zeroth-order", action="store_const", const=False, dest="zeroth_order")
    g.add_argument("--out", "--out-path", dest="out_path")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="assembly worker threads (default: all cores)")
    p.set_defaults(_defaults=defaults)


def resolve_config(args) -> RunConfig:
    """Built-in defaults < configuration file < explicit flags."""
    base = args._defaults
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return replace(base, **values).validate()


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    log.info("wrote %s", path)


def _progress(rep):
    log.info("level %d h=%.4f dt=%.3g grad=%.4e p=%.4e (%.1fs)", rep.level, rep.h, rep.dt,
             rep.err_grad, rep.err_p, rep.extra.get("seconds", 0.0))


def cmd_converge(cfg: RunConfig):
    reports = convergence_study(cfg, _progress)
    _write(cfg.out_path, reports_to_csv(reports))
    return reports


def cmd_compare(cfg: RunConfig):
    pm, lm = compare_configs(cfg)
    rep_pm = convergence_study(pm, _progress)
    rep_lm = convergence_study(lm, _progress)
    text = reports_to_csv(rep_pm, [("method", "penalty")])
    text += "".join(reports_to_csv(rep_lm, [("method", "lagrange")]).splitlines(True)[1:])
    _write(cfg.out_path, text)
    return rep_pm, rep_lm


def cmd_geomcheck(cfg: RunConfig):
    refs = list(range(cfg.base_refine, cfg.base_refine + cfg.levels))
    rows = geometry_study(cfg.surface, cfg.k_g, refs, cfg.quad_degree)
    _write(cfg.out_path, geometry_csv(rows))
    return rows


def cmd_infsup(cfg: RunConfig):
    rows = infsup_study(cfg)
    _write(cfg.out_path, infsup_csv(rows))
    return rows


def cmd_export_vtk(cfg: RunConfig, step=0, problem_name=None):
    from .geometry import make_surface
    from .mesh import build_mesh
    from .problems import ForcingMode, make_problem
    from .solver import Formulation, TimeConfig, build_spaces, unsteady_solve
    from .vtk import write_vtk

    name = problem_name or cfg.surface
    problem = make_problem(name, cfg.mu, ForcingMode(cfg.forcing_mode))
    surface = problem.surface if name != "zero" else make_surface(cfg.surface)
    mesh = build_mesh(surface, cfg.base_refine, cfg.k_g)
    penalty = Formulation(cfg.formulation) == Formulation.PENALTY
    spaces = build_spaces(mesh, cfg.k_u, cfg.k_pr, cfg.k_lambda, with_lambda=not penalty)
    V = spaces.velocity
    if step == 0:
        from .fespace import interpolate

        u = interpolate(V, lambda p: problem.velocity(p, 0.0))
        fields_ = {"velocity": (V, u), "pressure": None, "lambda": None}
    else:
        tc = TimeConfig(dt=cfg.dt0, t_end=step * cfg.dt0, mu=cfg.mu, formulation=cfg.formulation,
                        inertia=cfg.inertia, initial_condition=cfg.initial_condition,
                        tau_alpha=cfg.tau_alpha, normal_mode=cfg.normal_mode,
                        zeroth_order=cfg.zeroth_order, qdeg=cfg.quad_degree)
        traj = unsteady_solve(spaces, problem, tc)
        fields_ = {
            "velocity": (V, traj.velocity[step]),
            "pressure": (spaces.pressure, traj.pressure[step - 1]),
            "lambda": None if traj.lam is None else (spaces.lam, traj.lam[step - 1]),
        }
    write_vtk(cfg.out_path, mesh, fields_, title=f"{name} step {step}")
    return cfg.out_path


def build_parser():
    parser = argparse.ArgumentParser(prog="surfns", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("converge", help="convergence study, one CSV row per level")
    # two refinements of the varying surface give h = 0.71, the closest to h0 = 0.66
    _add_run_flags(p, RunConfig(base_refine=2, out_path="converge.csv"))

    p = sub.add_parser("compare", help="penalty vs Lagrange multiplier on the sphere")
    # the last pair of four levels from h = 0.62 is in the asymptotic range
    _add_run_flags(p, RunConfig(surface="sphere", levels=4, out_path="compare.csv"))

    p = sub.add_parser("geomcheck", help="geometric error rates of the curved meshes")
    _add_run_flags(p, RunConfig(surface="sphere", k_g=2, levels=3, out_path="geomcheck.csv"))

    p = sub.add_parser("infsup", help="discrete inf-sup constants across refinements")
    _add_run_flags(p, RunConfig(surface="sphere", k_g=2, out_path="infsup.csv"))

    p = sub.add_parser("export-vtk", help="write fields at one time step as legacy VTK")
    _add_run_flags(p, RunConfig(surface="sphere", k_g=2, base_refine=2, out_path="fields.vtk"))
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--problem", choices=["sphere", "varying", "zero"],
                   help="problem to export (default: the surface's built-in problem)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ValueError, OSError) as exc:
        parser.error(str(exc))
    assembly.set_threads(cfg.threads)
    np.random.seed(cfg.seed)
    log.debug("config %s", asdict(cfg))
    try:
        if args.command == "converge":
            cmd_converge(cfg)
        elif args.command == "compare":
            cmd_compare(cfg)
        elif args.command == "geomcheck":
            cmd_geomcheck(cfg)
        elif args.command == "infsup":
            cmd_infsup(cfg)
        elif args.command == "export-vtk":
            cmd_export_vtk(cfg, args.step, args.problem)
    except SolverError as exc:
        print(f"surfns: solver failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
