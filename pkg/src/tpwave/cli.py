"""Command-line runner: ``run``, ``sweep``, ``oracle-check`` and ``version``.

Exit codes: 0 converged, 2 iteration cap, 3 instability, 4 stagnation,
64 configuration error, 1 failed oracle check.  ``TPWAVE_THREADS`` caps the
BLAS/OpenMP thread pools.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import error_norms, traveling_wave_1d
from .config import ConfigError, ScenarioConfig, build_setup, load_config
from .control import (ControlConfig, StagnationError, cg_solve, extract_harmonic,
                      periodic_trajectory, warm_start)
from .discrete_ops import check_dense_cap
from .evolution import InstabilityError
from .io import write_csv, write_json, write_snapshot
from .wavestate import FieldState, norm_h

log = logging.getLogger("tpwave")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_MAX_ITER, EXIT_INSTABILITY, EXIT_STAGNATION = 0, 1, 2, 3, 4
EXIT_CONFIG = 64
STATUS_CODES = {"converged": EXIT_OK, "max_iterations": EXIT_MAX_ITER,
                "instability": EXIT_INSTABILITY, "stagnation": EXIT_STAGNATION}
THREADS_ENV = "TPWAVE_THREADS"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Everything needed to reproduce and audit one run.

    ``timing`` is the only wall-clock dependent entry.
    """
    config_hash: str
    version: str
    config: dict
    records: list = field(default_factory=list)
    status: str = "running"
    exit_code: int | None = None
    final_F: float | None = None
    final_sqrt_rho_rel: float | None = None
    iterations: int = 0
    iterations_to_reduction: int | None = None
    reduction: float = 1e-5
    steps_per_period: int | None = None
    dofs: dict = field(default_factory=dict)
    failing_step: int | None = None
    error: str | None = None
    analytic: dict | None = None
    snapshots: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def append(self, rec):
        self.records.append({"iter": rec.iteration, "rho": rec.rho,
                             "sqrt_rho_rel": rec.sqrt_rho_rel,
                             "functional_F": rec.functional_F,
                             "period_solves": rec.period_solves})

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _analytic_errors(cfg: ScenarioConfig, setup, u0) -> dict | None:
    if cfg.output.analytic != "traveling_wave_1d":
        return None
    lay, w = setup.layout, setup.scenario.ctx.weights
    eps, mu = cfg.material.eps, cfg.material.mu
    c = 1.0 / math.sqrt(eps * mu)
    omega = setup.control.omega
    e, _ = traveling_wave_1d(lay.e_positions[:, 0], 0.0, omega, c, mu)
    _, h = traveling_wave_1d(lay.h_positions[:, 0], 0.0, omega, c, mu)
    norms = error_norms(np.concatenate([u0.e, u0.h]), np.concatenate([e, h]),
                        np.concatenate([w.w_e, w.w_h]))
    return {"kind": "traveling_wave_1d", "l2_rel": norms.l2_rel, "max_rel": norms.max_rel}


def execute_run(cfg: ScenarioConfig, output_dir=None) -> tuple[int, dict]:
    """Run one configuration end to end; returns (exit code, manifest dict)."""
    out = Path(output_dir if output_dir is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    man = RunManifest(cfg.config_hash, __version__, cfg.to_dict(), reduction=cfg.control.reduction)
    man.timing["started"] = _now()
    setup = build_setup(cfg)
    sc, ctl = setup.scenario, setup.control
    man.steps_per_period = ctl.steps_per_period
    man.dofs = {"e": setup.layout.e_dof_count, "h": setup.layout.h_dof_count,
                "constrained_e": int(sc.ctx.mask.sum())}
    hist = None
    u0 = None
    try:
        init = None
        if cfg.control.warm_start:
            init = warm_start(sc, ctl, cfg.control.warm_start, smooth=cfg.drive.ramp)
        u0, hist = cg_solve(sc, ctl, init, callback=man.append)
        man.status = hist.status
    except InstabilityError as exc:
        man.status, man.failing_step, man.error = "instability", exc.step, str(exc)
        hist = getattr(exc, "history", None)
    except StagnationError as exc:
        man.status, man.error = "stagnation", str(exc)
        hist = exc.history
    man.exit_code = STATUS_CODES[man.status]

    if hist is not None and hist.records:
        last = hist.records[-1]
        man.final_F, man.final_sqrt_rho_rel = last.functional_F, last.sqrt_rho_rel
        man.iterations = hist.iterations
        man.iterations_to_reduction = hist.iterations_to(cfg.control.reduction)
        write_csv(out / "convergence.csv", hist.csv_rows())

    if u0 is not None:
        vtk = "vtk" in cfg.output.formats
        snap = dict(config_hash=cfg.config_hash, vtk=vtk)
        man.snapshots.append(write_snapshot(u0, setup.layout, out / "snapshots", "u0",
                                            time=0.0, step=0, **snap)["data_file"])
        every = cfg.output.snapshot_every
        cadence = sorted(range(every, ctl.steps_per_period + 1, every)) if every else []
        extra = [0, ctl.steps_per_period // 4] if cfg.control.harmonic else []
        if cadence or extra:
            traj = periodic_trajectory(u0, sc, ctl, sorted(set(cadence + extra)))
            for k in cadence:
                meta = write_snapshot(traj.at(k), setup.layout, out / "snapshots", f"step_{k:06d}",
                                      time=ctl.timegrid.time(k), step=k, **snap)
                man.snapshots.append(meta["data_file"])
            if extra:
                amp = extract_harmonic(traj, ctl)
                for part, fn in (("re", np.real), ("im", np.imag)):
                    meta = write_snapshot(FieldState(fn(amp.e), fn(amp.h)), setup.layout,
                                          out / "snapshots", f"harmonic_{part}", time=0.0, **snap)
                    man.snapshots.append(meta["data_file"])
        man.analytic = _analytic_errors(cfg, setup, u0)

    man.timing.update(finished=_now(), wall_seconds=round(time.perf_counter() - t0, 6))
    write_json(out / "manifest.json", man.to_dict())
    log.info("run %s: %s after %d iterations", cfg.name, man.status, man.iterations)
    return man.exit_code, man.to_dict()


# sweep -------------------------------------------------------------------------------

def _level_job(args):
    cfg, out = args
    try:
        return execute_run(cfg, out)
    except Exception as exc:  # keep the remaining levels running
        return EXIT_CHECK_FAILED, {"status": "error", "error": repr(exc)}


def run_sweep(cfg: ScenarioConfig, levels: int, output_dir=None, jobs: int = 1) -> tuple[int, dict]:
    """Uniform refinement: spacing halved and steps doubled per level."""
    if levels < 2:
        raise ConfigError("levels", "a sweep needs at least 2 refinement levels")
    base = build_setup(cfg)
    cfg = replace(cfg, control=replace(cfg.control, steps_per_period=base.control.steps_per_period))
    root = Path(output_dir if output_dir is not None else cfg.output.directory)
    tasks = [(cfg.refined(k), root / f"level_{k}") for k in range(levels)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_level_job, tasks))
    else:
        results = [_level_job(t) for t in tasks]

    rows = []
    for k, ((lcfg, _), (code, man)) in enumerate(zip(tasks, results)):
        dofs = man.get("dofs", {})
        rows.append({"level": k, "cells": lcfg.grid.cells, "spacing": lcfg.grid.spacing,
                     "steps_per_period": lcfg.control.steps_per_period,
                     "dofs": dofs.get("e", 0) + dofs.get("h", 0), "status": man.get("status"),
                     "exit_code": code, "iterations": man.get("iterations"),
                     "iterations_to_reduction": man.get("iterations_to_reduction"),
                     "l2_error": (man.get("analytic") or {}).get("l2_rel")})
    errs = [r["l2_error"] for r in rows]
    orders = [math.log2(a / b) if a and b else None for a, b in zip(errs[:-1], errs[1:])]
    its = [r["iterations_to_reduction"] for r in rows]
    spread = (max(its) - min(its)) / min(its) if all(its) else None
    summary = {"config_hash": cfg.config_hash, "levels": rows, "observed_orders": orders,
               "reduction": cfg.control.reduction, "iteration_spread": spread}
    write_json(root / "summary.json", summary)
    codes = [c for c, _ in results if c]
    return (codes[0] if codes else EXIT_OK), summary


def format_summary(summary: dict) -> str:
    head = f"{'level':>5} {'dofs':>9} {'steps':>6} {'status':>14} {'iters':>6} {'to_red':>6} {'l2_err':>11}"
    lines = [head]
    for r in summary["levels"]:
        err = f"{r['l2_error']:.4e}" if r["l2_error"] is not None else "-"
        lines.append(f"{r['level']:>5} {r['dofs']:>9} {r['steps_per_period']:>6} {r['status']!s:>14} "
                     f"{r['iterations']!s:>6} {r['iterations_to_reduction']!s:>6} {err:>11}")
    orders = ", ".join("-" if o is None else f"{o:.3f}" for o in summary["observed_orders"])
    lines.append(f"observed orders: {orders}")
    if summary["iteration_spread"] is not None:
        lines.append(f"iteration spread (max-min)/min: {summary['iteration_spread']:.3f}")
    return "\n".join(lines)


# oracle check ------------------------------------------------------------------------

def oracle_check(cfg: ScenarioConfig) -> dict:
    from .oracle import (DenseGenerator, compare_cg_direct, duhamel_solve, scenario_forcing,
                         stepper_convergence, u_hat, verify_control_identities, expm_apply)
    setup = build_setup(cfg)
    sc, ctl = setup.scenario, setup.control
    if sc.has_absorbing:
        raise ConfigError("grid.faces", "oracle checks need conservative (pec/dirichlet) faces")
    try:
        n_free = check_dense_cap(sc.ctx)
    except ValueError as exc:
        raise ConfigError("grid.cells", f"{exc}") from None

    gen = DenseGenerator.from_scenario(sc)
    report = {"config_hash": cfg.config_hash, "free_dofs": n_free, "checks": {}}
    ident = verify_control_identities(gen, sc.period)
    report["identities"] = ident
    report["checks"]["control_identities"] = ident["pass"]

    steps = ctl.steps_per_period
    conv = stepper_convergence(sc, steps=(steps, 2 * steps, 4 * steps))
    report["stepper_vs_duhamel"] = conv
    tiny = max(conv["errors"]) <= 1e-13
    report["checks"]["stepper_second_order"] = bool(tiny or min(conv["orders"]) >= 1.8)

    forcing = scenario_forcing(sc, gen.assembly)
    uc = duhamel_solve(gen, FieldState.zeros(sc.layout), forcing, sc.period)
    composed = expm_apply(gen, -sc.period, uc) - uc
    direct = u_hat(gen, forcing, sc.period)
    w = sc.ctx.weights
    scale = norm_h(composed, w)
    uhat_rel = norm_h(direct - composed, w) / scale if scale > 0 else norm_h(direct, w)
    report["u_hat_identity"] = uhat_rel
    report["checks"]["u_hat_identity"] = bool(uhat_rel <= 1e-9)

    tight = ControlConfig(ctl.omega, steps, 1e-24, max_iterations=n_free)
    try:
        u0, hist = cg_solve(sc, tight)
        cmp = compare_cg_direct(sc, tight, u0)
        cmp.update(iterations=hist.iterations, status=hist.status)
        ok = cmp["relative_difference"] <= 1e-9 and hist.iterations <= n_free
    except StagnationError as exc:
        cmp, ok = {"status": "stagnation", "error": str(exc)}, False
    report["cg_vs_direct"] = cmp
    report["checks"]["cg_vs_direct"] = bool(ok)
    report["pass"] = all(report["checks"].values())
    return report


# entry point -------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tpwave", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log every CG iteration")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="solve one configuration")
    run.add_argument("--config", required=True)
    run.add_argument("--output-dir")
    run.add_argument("--tol", type=float, help="override control.tol (relative, on rho)")
    run.add_argument("--max-iters", type=int, help="override control.max_iter")
    sw = sub.add_parser("sweep", help="uniform refinement study")
    sw.add_argument("--config", required=True)
    sw.add_argument("--levels", type=int, required=True)
    sw.add_argument("--output-dir")
    sw.add_argument("--jobs", type=int, default=1, help="levels run in parallel processes")
    oc = sub.add_parser("oracle-check", help="dense spectral cross-checks on a tiny grid")
    oc.add_argument("--config", required=True)
    sub.add_parser("version", help="print the version")
    return ap


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "version":
        print(f"tpwave {__version__}")
        return EXIT_OK
    try:
        with _thread_limit():
            cfg = load_config(args.config)
            if args.command == "run":
                cfg = cfg.with_overrides(args.tol, args.max_iters, args.output_dir)
                code, man = execute_run(cfg)
                print(f"{man['status']}: {man['iterations']} iterations, "
                      f"sqrt(rho/rho0) = {man['final_sqrt_rho_rel']}")
                return code
            if args.command == "sweep":
                code, summary = run_sweep(cfg, args.levels, args.output_dir, args.jobs)
                print(format_summary(summary))
                return code
            report = oracle_check(cfg)
            print(json.dumps(report, indent=2, default=float))
            return EXIT_OK if report["pass"] else EXIT_CHECK_FAILED
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
