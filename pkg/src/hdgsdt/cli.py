"""Command line entry point: ``hdgsdt {convergence,simulate,mesh-info,check}``.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 failed
check, 5 file system error, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from hdgsdt.config import RunConfig, build_problem, load_config
from hdgsdt.linalg import SolverError
from hdgsdt.mesh import MeshError, build_structured_mesh
from hdgsdt.problem import ConfigurationError

log = logging.getLogger("hdgsdt")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK, EXIT_IO = 0, 1, 2, 3, 4, 5

PRESETS = {
    "full": {"n": "80", "dt": "0.001", "T": "15", "snapshots": "dt, 3, 6, 9, 12, 15"},
    "desk": {"n": "40", "dt": "0.002", "T": "3", "snapshots": "dt, 1, 2, 3"},
}

# flag -> config key
_FLAG_KEYS = {
    "example": "example", "n": "n", "k_f": "k_f", "k_c": "k_c", "scheme": "scheme", "dt": "dt", "T": "T",
    "output": "output", "kappa": "kappa", "mu": "mu", "meshes": "meshes", "snapshots": "snapshots",
    "progress_every": "progress_every",
}


class CheckFailed(RuntimeError):
    pass


def _add_config_args(p: argparse.ArgumentParser, meshes: bool = False, snapshots: bool = False):
    p.add_argument("--config", type=Path, help="key = value file (section prefixes optional)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("--example", choices=["example1", "example2", "example3", "custom"])
    p.add_argument("--n", help="mesh subdivisions per side (even)")
    p.add_argument("--k-f", dest="k_f", help="flow polynomial degree")
    p.add_argument("--k-c", dest="k_c", help="concentration degree (default k_f - 1)")
    p.add_argument("--scheme", choices=["BE", "BDF3"])
    p.add_argument("--dt", help="time step (default: example schedule)")
    p.add_argument("--T", dest="T", help="final time")
    p.add_argument("--kappa", help="permeability of the manufactured examples")
    p.add_argument("--mu", help="constant viscosity")
    p.add_argument("--output", help="output directory (relative paths resolve under $HDGSDT_OUTPUT_ROOT)")
    p.add_argument("--progress-every", dest="progress_every", help="log every N steps")
    p.add_argument("--no-condense", action="store_true", help="solve the unreduced system")
    if meshes:
        p.add_argument("--meshes", help="refinement chain, e.g. 4,8,16")
    if snapshots:
        p.add_argument("--snapshots", help="snapshot times; 'dt' means the first step")
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="plume run scale: 'full' (h=1/80, T=15) or 'desk' (h=1/40, T=3)")


def config_from_args(args) -> RunConfig:
    overrides = {}
    preset = getattr(args, "preset", None)
    if preset:
        overrides.update(PRESETS[preset])
    for flag, key in _FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "no_condense", False):
        overrides["static_condensation"] = "false"
    for item in args.set:
        if "=" not in item:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    return load_config(args.config, overrides)


# ---------------------------------------------------------------------------
# subcommands


def cmd_convergence(args) -> int:
    from hdgsdt.verification import convergence_study
    cfg = config_from_args(args)
    if cfg.example not in ("example1", "example2"):
        raise ConfigurationError("convergence studies need a manufactured example (example1 or example2)")
    out = cfg.output_dir()
    cfg.write_echo(out)
    prob, exact = build_problem(cfg)
    dt_rule = (lambda n: cfg.dt) if "dt" in cfg.explicit else None
    study = convergence_study(cfg.example, cfg.k_f, cfg.meshes, cfg.kappa, cfg.mu, cfg.scheme, cfg.T,
                              progress=log.info, condense=cfg.static_condensation,
                              setup=(exact, prob), dt_rule=dt_rule)
    name = f"convergence_{cfg.example}_kf{cfg.k_f}_kappa{cfg.kappa:g}"
    if cfg.example == "example1":
        name += f"_mu{cfg.mu:g}"
    path = out / f"{name}.csv"
    path.write_text(study.to_csv({"beta_s": prob.beta_s, "beta_tr": prob.beta_tr,
                                  "dt": "explicit %r" % cfg.dt if dt_rule else "0.1 h^k_f / (k_f + 1)"}))
    print(study.format_table())
    for w in study.warnings:
        print(f"warning: {w}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from hdgsdt.timeloop import Simulation, TimeScheme, concentration_range, element_means
    from hdgsdt.vtk import write_permeability, write_snapshot
    cfg = config_from_args(args)
    out = cfg.output_dir()
    cfg.write_echo(out)
    prob, exact = build_problem(cfg)
    mesh = build_structured_mesh(cfg.n)
    sim = Simulation(mesh, prob, TimeScheme(cfg.scheme, cfg.dt, cfg.T),
                     check_conservation=cfg.conservation_report, condense=cfg.static_condensation)
    samples = cfg.vtk_samples
    write_permeability(out / "permeability.vtk", mesh, prob, samples or 4)
    written = []

    def on_snapshot(step, t, flow, conc):
        path = write_snapshot(out / f"snapshot_{step:06d}.vtk", sim, flow, conc, samples, title=f"t={t!r}")
        lo, hi = concentration_range(sim, conc)
        means = element_means(conc)
        written.append(path)
        print(f"snapshot step={step} t={t:.6g} c_range=[{lo:.4f}, {hi:.4f}] "
              f"c_mean_range=[{means.min():.4f}, {means.max():.4f}] -> {path.name}")

    logf = (out / "conservation.log").open("w")
    logf.write("# step t max_div_stokes max_mass_residual max_jump max_interface_mismatch scale\n")

    def on_step(step, flow, conc, rep):
        if rep is not None:
            logf.write(f"{step} {flow.t!r} {rep.max_div_stokes:.6e} {rep.max_mass_residual:.6e} "
                       f"{rep.max_jump:.6e} {rep.max_interface_mismatch:.6e} {rep.scale:.6e}\n")

    t0 = time.perf_counter()
    try:
        res = sim.run(cfg.snapshot_times(), cfg.progress_every, on_step=on_step, on_snapshot=on_snapshot)
    finally:
        logf.close()
    print(f"{res.steps} steps in {time.perf_counter() - t0:.1f}s; {len(written)} snapshots in {out}")
    if exact is not None:
        from hdgsdt.verification import compute_errors
        e = compute_errors(sim, res.flow, res.conc, exact, res.flow.t)
        print(f"errors at t={res.flow.t:.6g}: u_s={e.err_u_s:.3e} p_s={e.err_p_s:.3e} u_d={e.err_u_d:.3e} "
              f"p_d={e.err_p_d:.3e} c={e.err_c:.3e}")
    return EXIT_OK


def cmd_mesh_info(args) -> int:
    from hdgsdt.fem import FlowDofMap, TransportDofMap
    cfg = config_from_args(args)
    mesh = build_structured_mesh(cfg.n)
    for key, val in mesh.summary().items():
        print(f"{key:>18}: {val}")
    fd = FlowDofMap(mesh, cfg.k_f, cfg.mean_constraint)
    td = TransportDofMap(mesh, cfg.k_c)
    print(f"{'flow dofs':>18}: {fd.ndofs} (k_f={cfg.k_f})")
    print(f"{'transport dofs':>18}: {td.ndofs} (k_c={cfg.k_c})")
    return EXIT_OK


def cmd_check(args) -> int:
    from hdgsdt.checks import run_all
    results = run_all(progress=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise CheckFailed(", ".join(r.name for r in failed))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdgsdt", description="Coupled free-flow / porous-flow transport solver")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v progress, -vv debug")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("convergence", help="manufactured-solution refinement study (CSV + table)")
    _add_config_args(p, meshes=True)
    p.set_defaults(func=cmd_convergence)
    p = sub.add_parser("simulate", help="time-dependent run with VTK snapshots")
    _add_config_args(p, snapshots=True)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("mesh-info", help="mesh statistics and unknown counts")
    _add_config_args(p)
    p.set_defaults(func=cmd_mesh_info)
    p = sub.add_parser("check", help="run the invariant suite")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, MeshError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except OSError as exc:
        print(f"file system error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
