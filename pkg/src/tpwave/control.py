"""Exact controllability by least squares and conjugate gradients.

The control vector is the initial state u0 restricted to the free dofs.  The
periodicity defect ``u_T - u0`` is measured in the weighted norm; its
gradient is obtained by one forward and one adjoint period solve.  No
preconditioner is used: the control space carries the plain energy norm.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .evolution import (InstabilityError, Scenario, TimeGrid, Trajectory, period_map,
                        period_map_adjoint, smooth_ramp, solve_icp)
from .wavestate import FieldState, axpy, inner_h

log = logging.getLogger(__name__)


class StagnationError(RuntimeError):
    """The search direction fell into the kernel of the control operator."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class ControlConfig:
    omega: float
    steps_per_period: int
    rel_tolerance: float = 1e-10
    max_iterations: int = 500
    adjoint_variant: str = "forward"

    def __post_init__(self):
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise ValueError("omega must be positive")
        if not 0 < self.rel_tolerance < 1:
            raise ValueError("rel_tolerance must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.adjoint_variant not in ("forward", "backward"):
            raise ValueError("adjoint_variant must be 'forward' or 'backward'")

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    @property
    def timegrid(self) -> TimeGrid:
        return TimeGrid(self.period, self.steps_per_period)


@dataclass
class IterationRecord:
    iteration: int
    rho: float
    sqrt_rho_rel: float
    functional_F: float
    period_solves: int
    wall_seconds: float


CSV_COLUMNS = ("iter", "rho", "sqrt_rho_rel", "functional_F", "period_solves", "wall_seconds")


@dataclass
class CGHistory:
    records: list[IterationRecord] = field(default_factory=list)
    status: str = "running"
    rho0: float = 0.0

    def append(self, rec: IterationRecord):
        self.records.append(rec)

    @property
    def iterations(self) -> int:
        return self.records[-1].iteration if self.records else 0

    @property
    def functional(self) -> np.ndarray:
        return np.array([r.functional_F for r in self.records])

    @property
    def sqrt_rho_rel(self) -> np.ndarray:
        return np.array([r.sqrt_rho_rel for r in self.records])

    def iterations_to(self, reduction: float) -> int | None:
        """First iteration with sqrt(rho/rho0) <= reduction."""
        for r in self.records:
            if r.sqrt_rho_rel <= reduction:
                return r.iteration
        return None

    def csv_rows(self) -> list[str]:
        rows = [",".join(CSV_COLUMNS)]
        for r in self.records:
            rows.append(f"{r.iteration},{r.rho!r},{r.sqrt_rho_rel!r},{r.functional_F!r},"
                        f"{r.period_solves},{r.wall_seconds:.6f}")
        return rows


@dataclass
class CGWorkspace:
    u0: FieldState
    r: FieldState
    d: FieldState
    rho: float
    iteration: int = 0
    history: CGHistory = field(default_factory=CGHistory)


def _tg(config) -> TimeGrid:
    return config.timegrid if isinstance(config, ControlConfig) else config


def periodicity_defect(u0: FieldState, scenario: Scenario, config) -> tuple[FieldState, FieldState]:
    """(u_T - u0 on the control space, u_T)."""
    _, u_t = solve_icp(u0, scenario, _tg(config))
    return scenario.ctx.project(u_t - u0), u_t


def evaluate_functional(u0: FieldState, scenario: Scenario, config) -> float:
    """F(u0) = 1/2 ||u_T - u0||^2."""
    defect, _ = periodicity_defect(u0, scenario, config)
    return 0.5 * inner_h(defect, defect, scenario.ctx.weights)


def apply_CT(v: FieldState, scenario: Scenario, config) -> FieldState:
    """One homogeneous period minus the identity."""
    v = scenario.ctx.project(v)
    return period_map(v, scenario, _tg(config)) - v


def apply_CT_star(v: FieldState, scenario: Scenario, config, variant: str | None = None) -> FieldState:
    if variant is None:
        variant = config.adjoint_variant if isinstance(config, ControlConfig) else "forward"
    v = scenario.ctx.project(v)
    return period_map_adjoint(v, scenario, _tg(config), variant) - v


def compute_initial_residual(u0: FieldState, scenario: Scenario, config,
                             variant: str | None = None) -> tuple[FieldState, FieldState]:
    """r0 = C_T^*(u_T - u0): one ICP followed by one adjoint solve."""
    u0star, u_t = periodicity_defect(u0, scenario, config)
    return apply_CT_star(u0star, scenario, config, variant), u_t


def _loop_gradient(dn: FieldState, scenario: Scenario, config) -> tuple[FieldState, FieldState]:
    u0star = apply_CT(dn, scenario, config)
    return apply_CT_star(u0star, scenario, config), u0star


def compute_loop_gradient(dn: FieldState, scenario: Scenario, config) -> FieldState:
    """C_T^* C_T d via an HCP and an adjoint solve."""
    return _loop_gradient(dn, scenario, config)[0]


def warm_start(scenario: Scenario, config: ControlConfig, periods: int,
               smooth: bool = False) -> FieldState:
    """Plain forward evolution from rest over a number of periods."""
    u = FieldState.zeros(scenario.layout)
    tg = config.timegrid
    ramped = scenario.with_ramp(smooth_ramp(tg.period)) if smooth else scenario
    for k in range(periods):
        sc = ramped if k == 0 else scenario
        _, u = solve_icp(u, sc, tg)
    return u


def cg_solve(scenario: Scenario, config: ControlConfig, u0_initial: FieldState | None = None,
             callback=None) -> tuple[FieldState, CGHistory]:
    """Conjugate gradients on the normal equation of the periodicity defect.

    Returns the control vector (constrained E dofs carry the imposed trace at
    t = 0) and the iteration history.  ``history.status`` is 'converged' or
    'max_iterations'.
    """
    ctx = scenario.ctx
    w = ctx.weights
    hist = CGHistory()
    t_start = time.perf_counter()
    solves = 0

    def record(it, rho, defect):
        f = 0.5 * inner_h(defect, defect, w)
        rel = math.sqrt(rho / hist.rho0) if hist.rho0 > 0 else 0.0
        rec = IterationRecord(it, rho, rel, f, solves, time.perf_counter() - t_start)
        hist.append(rec)
        log.info("iter %d rho %.6e rel %.3e F %.6e solves %d", it, rho, rel, f, solves)
        if callback is not None:
            callback(rec)

    u0 = ctx.project(u0_initial if u0_initial is not None else FieldState.zeros(scenario.layout))
    try:
        defect, u_t = periodicity_defect(u0, scenario, config)
        r = apply_CT_star(defect, scenario, config)
        solves += 2
        rho = inner_h(r, r, w)
        hist.rho0 = rho
        record(0, rho, defect)
        n = 0
        if rho == 0.0:
            hist.status = "converged"
            return _finish(u0, scenario), hist
        d = r
        rho_prev = rho
        while True:
            n += 1
            grad_d, c_d = _loop_gradient(d, scenario, config)
            solves += 2
            denom = inner_h(grad_d, d, w)
            if not denom > 1e-14 * rho_prev:
                hist.status = "stagnation"
                raise StagnationError(
                    f"search direction in control-operator kernel at iteration {n}", hist)
            alpha = -rho_prev / denom
            u0 = axpy(alpha, d, u0)
            r = axpy(alpha, grad_d, r)
            defect = axpy(alpha, c_d, defect)
            rho = inner_h(r, r, w)
            record(n, rho, defect)
            if rho <= config.rel_tolerance * hist.rho0:
                hist.status = "converged"
                break
            if n >= config.max_iterations:
                hist.status = "max_iterations"
                break
            beta = rho / rho_prev
            d = axpy(beta, d, r)
            rho_prev = rho
    except InstabilityError as exc:
        hist.status = "instability"
        exc.history = hist
        raise
    return _finish(u0, scenario), hist


def _finish(u0: FieldState, scenario: Scenario) -> FieldState:
    out = u0.copy()
    m = scenario.ctx.mask
    out.e[m] = scenario.boundary_values(0.0)[m]
    return out


def periodic_trajectory(u0: FieldState, scenario: Scenario, config: ControlConfig,
                        steps=None) -> Trajectory:
    tg = config.timegrid
    steps = range(tg.steps + 1) if steps is None else steps
    traj, _ = solve_icp(u0, scenario, tg, record=steps)
    return traj


def extract_harmonic(trajectory: Trajectory, config: ControlConfig, t0_step: int = 0) -> FieldState:
    """u_hat = u(t0) + i u(t0 + T/4) for u(t) = Re(u_hat exp(-i omega t)).

    Phase-referenced to t = 0, i.e. the result is multiplied by exp(i omega t0).
    """
    n = config.steps_per_period
    if n % 4:
        raise ValueError("steps_per_period must be divisible by 4 for harmonic extraction")
    a = trajectory.at(t0_step)
    b = trajectory.at(t0_step + n // 4)
    phase = np.exp(1j * config.omega * trajectory.timegrid.time(t0_step))
    return FieldState((a.e + 1j * b.e) * phase, (a.h + 1j * b.h) * phase)
