"""Command-line front end: ``impheat {assemble,eigs,simulate,control,stabilize,analyze}``."""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (
    check_frequency_inequality,
    check_gaussian_monotonicity,
    check_log_convexity,
    fit_localized,
    fit_observability,
)
from .config import RunConfig, parse_config
from .control import ControlProblem, eigenmode_controls, fit_cost_constant, hum_impulse_control
from .errors import ImpheatError, InsufficientDataError, NumericalError
from .evolution import diagnostics, run_impulsive, step_cn, write_trajectory_csv
from .mesh import build_mesh
from .operators import WeightFunction, assemble, control_map, write_coo
from .serialize import write_json
from .spectral import eigensolve, random_state, weyl_fit, write_eigenvalues_csv, write_eigenvectors_csv
from .stabilization import certify, make_constants, make_schedule, run_closed_loop

log = logging.getLogger("impheat")

COMMANDS = ("assemble", "eigs", "simulate", "control", "stabilize", "analyze")


def _setup(cfg: RunConfig):
    op = assemble(build_mesh(cfg.domain))
    basis = eigensolve(op, cfg.eigen_count, cfg.eigen_method)
    return op, basis


def _initial(cfg: RunConfig, basis, rng):
    if cfg.initial.startswith("mode:"):
        return basis.mode(int(cfg.initial[5:]))
    return random_state(basis, rng, cfg.profile)


def cmd_assemble(cfg: RunConfig, out: Path) -> dict:
    mesh = build_mesh(cfg.domain)
    op = assemble(mesh)
    write_coo(out / "mass.txt", op.M)
    write_coo(out / "stiffness.txt", op.K)
    ones = op.ones()
    report = {
        "mesh": mesh.to_dict(),
        "mass_total": float(ones @ (op.M @ ones)),
        "kernel_residual": float(np.linalg.norm(op.K @ ones)),
        "nnz_mass": int(op.M.nnz),
        "nnz_stiffness": int(op.K.nnz),
    }
    write_json(out / "report.json", report)
    return report


def cmd_eigs(cfg: RunConfig, out: Path) -> dict:
    op, basis = _setup(cfg)
    write_eigenvalues_csv(out / "eigenvalues.csv", basis)
    if cfg.write_vectors:
        write_eigenvectors_csv(out / "eigenvectors.csv", basis)
    report = {"count": basis.count, "lambda_min": float(basis.eigenvalues[0]), "lambda_max": basis.lambda_max}
    try:
        fit = weyl_fit(basis)
        report["weyl"] = {"constant": fit.constant, "exponent": fit.exponent, "r2": fit.r2, "points": fit.points}
    except InsufficientDataError as exc:
        report["weyl"] = {"error": str(exc)}
    write_json(out / "report.json", report)
    return report


def cmd_simulate(cfg: RunConfig, out: Path) -> dict:
    op, basis = _setup(cfg)
    rng = np.random.default_rng(cfg.seed)
    u0 = _initial(cfg, basis, rng)
    times = np.linspace(0.0, cfg.T, cfg.simulate_samples)
    if cfg.integrator == "spectral":
        traj = run_impulsive(basis, op, u0, [], cfg.T, sample_times=times)
    else:
        from .evolution import Trajectory

        traj, u, t = Trajectory(), u0.copy(), 0.0
        for s in times:
            if s > t:
                u = step_cn(op, u, s - t, cfg.cn_substeps)
            traj.record(s, u)
            t = s
    records = diagnostics(traj, op)
    write_trajectory_csv(out / "trajectory.csv", records)
    report = {
        "integrator": cfg.integrator,
        "initial": cfg.initial,
        "norm0": records[0].norm,
        "norm_final": records[-1].norm,
        "mass0": records[0].mass,
        "mass_final": records[-1].mass,
    }
    write_json(out / "report.json", report)
    return report


def cmd_control(cfg: RunConfig, out: Path) -> dict:
    op, basis = _setup(cfg)
    rng = np.random.default_rng(cfg.seed)
    y0 = _initial(cfg, basis, rng)
    tau = cfg.tau if cfg.tau is not None else 0.5 * cfg.T
    prob = ControlProblem(
        t_a=0.0, tau=tau, t_b=cfg.T, y0=y0, omega=cfg.omega, eps=cfg.eps,
        cg_tol=cfg.cg_tol, cg_max_iter=cfg.cg_max_iter, max_tuning_rounds=cfg.max_tuning_rounds,
    )
    cmap = control_map(op, cfg.omega)
    h, rep = hum_impulse_control(op, basis, prob, cmap=cmap)
    np.savetxt(
        out / "control.csv", np.column_stack([cmap.nodes, op.mesh.nodes[cmap.nodes], h]),
        delimiter=",", fmt="%.17g", comments="",
        header="# impheat control v1\nnode," + ",".join(f"x{d}" for d in range(op.mesh.dim)) + ",h",
    )
    report = {"t_a": 0.0, "tau": tau, "t_b": cfg.T, "eps": cfg.eps, **rep.to_dict()}
    write_json(out / "report.json", report)
    return report


def _constants(cfg: RunConfig, op, basis, cmap):
    """Manual constants, or the fixed point seeded by a C3 fitted on stage 0."""
    notes = {}
    C3 = cfg.C3
    if C3 is None:
        pilot_consts = make_constants(cfg.T, 1.0, "manual", b=cfg.b, eta=cfg.eta, n=cfg.domain.dim)
        pilot = make_schedule(pilot_consts, basis, 1, cfg.target_mode)
        bundle = eigenmode_controls(op, basis, pilot.stages[0], cmap, cfg.cg_tol, cfg.cg_max_iter)
        C3 = fit_cost_constant([bundle], pilot.stages, cfg.eta, cfg.b)
        notes["C3_source"] = "fitted on stage 0"
    else:
        notes["C3_source"] = "config"
    if cfg.constants_mode == "fixed_point":
        try:
            return make_constants(cfg.T, C3, "fixed_point", n=cfg.domain.dim), notes
        except NumericalError as exc:
            notes["fixed_point_fallback"] = str(exc)
    return make_constants(cfg.T, C3, "manual", b=cfg.b, eta=cfg.eta, n=cfg.domain.dim), notes


def cmd_stabilize(cfg: RunConfig, out: Path) -> dict:
    op, basis = _setup(cfg)
    cmap = control_map(op, cfg.omega)
    consts, notes = _constants(cfg, op, basis, cmap)
    sched = make_schedule(consts, basis, cfg.max_stages, cfg.target_mode)
    rng = np.random.default_rng(cfg.seed)
    psi0 = _initial(cfg, basis, rng)
    traj, rep = run_closed_loop(op, basis, sched, psi0, cmap, cg_tol=cfg.cg_tol, cg_max_iter=cfg.cg_max_iter)
    write_trajectory_csv(out / "trajectory.csv", diagnostics(traj, op))
    report = {"constants": consts.to_dict(), "constants_notes": notes, "schedule": sched.to_dict(), **rep.to_dict()}
    write_json(out / "report.json", report)
    try:
        cert = certify(rep, consts).to_dict()
    except InsufficientDataError as exc:
        cert = {"error": str(exc), "passed": False}
    write_json(out / "certificate.json", cert)
    return report


def cmd_analyze(cfg: RunConfig, out: Path) -> dict:
    op, basis = _setup(cfg)
    T = cfg.analysis_T
    fit = fit_observability(op, basis, cfg.omega, T, cfg.samples, cfg.beta_grid, cfg.seed, cfg.profile)
    loc = fit_localized(op, basis, cfg.omega0, cfg.ball, T, cfg.samples, cfg.beta_grid, cfg.seed, cfg.profile)
    rng = np.random.default_rng(cfg.seed)
    u0 = random_state(basis, rng, cfg.profile)
    triples = [tuple(sorted(rng.uniform(1e-3, T, 3))) for _ in range(100)]
    triples = [t for t in triples if t[0] < t[2]]
    slacks = check_log_convexity(basis, u0, triples)
    w = WeightFunction.gaussian(cfg.ball.center, cfg.gaussian_h, T)
    mono = check_gaussian_monotonicity(op, basis, u0, w, np.linspace(0.0, T, cfg.gaussian_times))
    freq = check_frequency_inequality(op, basis, u0, np.linspace(0.0, T, 21))
    np.savetxt(
        out / "samples.csv", np.column_stack([np.arange(fit.samples), fit.initial, fit.lhs, fit.observed, loc.lhs]),
        delimiter=",", fmt="%.17g", comments="",
        header="# impheat samples v1\nsample,norm0,norm_T,observed_T,localized_T",
    )
    report = {
        "observability": {**fit.to_dict(), "violations": fit.violations()},
        "localized": {**loc.to_dict(), "ball": cfg.ball.to_dict(), "violations": loc.violations()},
        "log_convexity": {"triples": len(slacks), "max_slack": max(s.slack for s in slacks)},
        "gaussian_monotonicity": mono.to_dict(),
        "frequency": freq.to_dict(),
    }
    write_json(out / "fit.json", report)
    return report


HANDLERS = {
    "assemble": cmd_assemble,
    "eigs": cmd_eigs,
    "simulate": cmd_simulate,
    "control": cmd_control,
    "stabilize": cmd_stabilize,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="impheat", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="INI or .json config file")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--out", type=Path, help="output directory (overrides run.out)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="section.key=value, repeatable")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = args.out
    started = time.perf_counter()
    try:
        cfg = parse_config(args.config, args.override, seed=args.seed, out=out)
        out = cfg.out
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved.ini").write_text(cfg.to_ini())
        log.info("running %s into %s", args.command, out)
        HANDLERS[args.command](cfg, out)
    except ImpheatError as exc:
        err = {"command": args.command, "error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "residual", None) is not None:
            err["residual"] = exc.residual
        target = Path(out) if out is not None else Path(".")
        try:
            target.mkdir(parents=True, exist_ok=True)
            write_json(target / "error.json", err)
        except OSError:
            pass
        print(f"impheat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    write_json(
        out / "manifest.json",
        {
            "command": args.command,
            "config_sha256": cfg.digest(),
            "seed": cfg.seed,
            "wall_time_s": time.perf_counter() - started,
            "versions": {
                "impheat": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
        },
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
