"""Explicit leapfrog integration of the forward and adjoint Cauchy problems.

The state handed in and out is the *synchronized* pair (E^n, H^n).  Inside a
run H lives at half-integer levels: a half kick to H^{1/2}, then n
E-drift / H-kick steps, and a final half kick back to H^n.  This is the
velocity-Verlet form of leapfrog; it is second order against exp(T S) on
synchronized states and keeps the period map exactly linear.

Absorbing faces add a damping rate ``sigma`` on their tangential E dofs,
integrated with the centred (trapezoidal) factor so the staggered energy is
non-increasing.  The adjoint sweep is the exact transpose, in the weighted
inner product, of the discrete period map: the same operations in reverse
with the generator negated and the damping applied transposed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .discrete_ops import GeneratorContext
from .wavestate import (DofLayout, FieldState, GridSpec, MaterialField, Tag,
                        face_names, inner_h, parse_face)

# any |field| beyond this is treated as a blow-up of the explicit scheme
BLOWUP_LEVEL = 1e150
CHECK_EVERY = 16


class InstabilityError(RuntimeError):
    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite or exploding field at step {step}")


@dataclass(frozen=True)
class TimeGrid:
    period: float
    steps: int

    def __post_init__(self):
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ValueError(f"period must be positive and finite, got {self.period}")
        if self.steps < 2:
            raise ValueError("need at least 2 steps per period")

    @property
    def dt(self) -> float:
        return self.period / self.steps

    def time(self, k: float) -> float:
        return self.period * k / self.steps

    @classmethod
    def for_omega(cls, omega: float, steps: int) -> "TimeGrid":
        if not omega > 0:
            raise ValueError("omega must be positive")
        return cls(2 * math.pi / omega, steps)


def cfl_max_dt(grid: GridSpec, material: MaterialField, cfl_factor: float = 0.9) -> float:
    return cfl_factor * min(grid.spacing) / (material.c_max * math.sqrt(grid.dimension))


def stable_steps(period: float, max_dt: float, multiple: int = 4) -> int:
    """Smallest multiple of ``multiple`` steps with dt <= max_dt."""
    n = math.ceil(period / max_dt - 1e-9)
    return max(multiple, multiple * math.ceil(n / multiple))


# boundary conditions ---------------------------------------------------------

@dataclass(frozen=True)
class PEC:
    """Homogeneous tangential trace."""


@dataclass(frozen=True)
class DirichletTrace:
    """Imposed tangential trace lambda(t) = Re(profile * exp(-i omega t))."""
    profile: Callable | None = None


@dataclass(frozen=True)
class FirstOrderABC:
    """sqrt(eps) E + sqrt(mu) xi.H = 0 (acoustics) / sqrt(eps) xi x E + sqrt(mu) H = 0."""


@dataclass(frozen=True)
class Obstacle:
    """Scatterer region; E dofs whose cells lie in it are constrained."""
    shape: str                      # "box" or "ball"
    lower: tuple = ()
    upper: tuple = ()
    center: tuple = ()
    radius: float = 0.0
    bc: PEC | DirichletTrace = field(default_factory=PEC)

    def contains(self, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        if self.shape == "box":
            lo, hi = np.asarray(self.lower), np.asarray(self.upper)
            return np.all((x >= lo - tol) & (x <= hi + tol), axis=1)
        if self.shape == "ball":
            return np.linalg.norm(x - np.asarray(self.center), axis=1) <= self.radius + tol
        raise ValueError(f"unknown obstacle shape {self.shape!r}")


def _cells_inside(layout: DofLayout, region: Obstacle) -> np.ndarray:
    """E dofs whose every vertex is inside the region."""
    pos, out = layout.e_positions, np.ones(layout.e_dof_count, dtype=bool)
    h = np.asarray(layout.grid.spacing)
    for fam in layout.e_families:
        sl = fam.slice()
        if not fam.dirs:
            out[sl] = region.contains(pos[sl])
            continue
        step = np.zeros(layout.grid.dimension)
        step[fam.dirs[0]] = 0.5 * h[fam.dirs[0]]
        out[sl] = region.contains(pos[sl] - step) & region.contains(pos[sl] + step)
    return out


def surface_dofs(ctx: GeneratorContext) -> np.ndarray:
    """Constrained E dofs coupled through d to at least one free E dof."""
    inc = abs(ctx.derivative.matrix).tocsr()
    touches_free = (inc @ ctx.free.astype(float)) > 0
    coupled = (inc.T @ touches_free.astype(float)) > 0
    return ctx.mask & coupled


# scenario --------------------------------------------------------------------

@dataclass
class Scenario:
    """Everything defining one inhomogeneous Cauchy problem on a fixed grid."""
    ctx: GeneratorContext
    omega: float
    damping: np.ndarray
    lambda_hat: np.ndarray
    f_hat: FieldState | None = None
    boundary_fn: Callable[[float], np.ndarray] | None = None
    source_fn: Callable[[float], FieldState] | None = None
    ramp: Callable[[float], float] | None = None
    faces: dict = field(default_factory=dict)

    @property
    def layout(self) -> DofLayout:
        return self.ctx.layout

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    @property
    def has_absorbing(self) -> bool:
        return bool(np.any(self.damping > 0))

    @property
    def is_homogeneous(self) -> bool:
        return (self.boundary_fn is None and self.source_fn is None and self.f_hat is None
                and not np.any(self.lambda_hat))

    def boundary_values(self, t: float) -> np.ndarray:
        """Imposed E values at time t (only constrained entries are used)."""
        if self.boundary_fn is not None:
            vals = np.asarray(self.boundary_fn(t), dtype=float)
        else:
            vals = np.real(self.lambda_hat * np.exp(-1j * self.omega * t))
        return vals * self.ramp(t) if self.ramp is not None else vals

    def source(self, t: float) -> FieldState | None:
        if self.source_fn is not None:
            f = self.source_fn(t)
        elif self.f_hat is not None:
            z = np.exp(-1j * self.omega * t)
            f = FieldState(np.real(self.f_hat.e * z), np.real(self.f_hat.h * z))
        else:
            return None
        return f * self.ramp(t) if self.ramp is not None else f

    def homogeneous(self) -> "Scenario":
        return replace(self, lambda_hat=np.zeros_like(self.lambda_hat), f_hat=None,
                       boundary_fn=None, source_fn=None, ramp=None)

    def with_ramp(self, ramp) -> "Scenario":
        return replace(self, ramp=ramp)


def build_scenario(grid: GridSpec, material: MaterialField, faces: dict,
                   omega: float, obstacles: Iterable[Obstacle] = (),
                   f_hat: FieldState | None = None,
                   wave_speed: np.ndarray | None = None) -> Scenario:
    """Assemble mask, damping and boundary amplitudes from per-face conditions.

    ``faces`` maps face names ('x-', 'x+', ...) to PEC / DirichletTrace /
    FirstOrderABC; missing faces default to PEC.
    """
    layout = DofLayout(grid)
    material.check(layout)
    faces = {k: faces.get(k, PEC()) for k in face_names(grid.dimension)}
    unknown = set(faces) - set(face_names(grid.dimension))
    if unknown:
        raise ValueError(f"unknown faces {sorted(unknown)}")
    for name, bc in faces.items():
        is_abc = isinstance(bc, FirstOrderABC)
        if is_abc != (grid.boundary_tags[name] is Tag.ARTIFICIAL):
            raise ValueError(f"face {name}: absorbing conditions go exactly on "
                             f"artificial faces (tag is {grid.boundary_tags[name].value})")
    if not omega > 0:
        raise ValueError("omega must be positive")

    mask = np.zeros(layout.e_dof_count, dtype=bool)
    dirichlet = []
    for name, bc in faces.items():
        if isinstance(bc, (PEC, DirichletTrace)):
            on = layout.on_face(name)
            mask |= on
            if isinstance(bc, DirichletTrace) and bc.profile is not None:
                dirichlet.append((on, bc.profile))
    obstacles = list(obstacles)
    for ob in obstacles:
        mask |= _cells_inside(layout, ob)
    ctx = GeneratorContext(layout, material, mask)

    speed = material.wave_speed_e(layout) if wave_speed is None else wave_speed
    damping = np.zeros(layout.e_dof_count)
    for name, bc in faces.items():
        if isinstance(bc, FirstOrderABC):
            axis, _ = parse_face(name)
            damping += np.where(layout.on_face(name), 2.0 * speed / grid.spacing[axis], 0.0)
    damping[mask] = 0.0

    lam = np.zeros(layout.e_dof_count, dtype=complex)
    surf = surface_dofs(ctx)
    for ob in obstacles:
        if isinstance(ob.bc, DirichletTrace) and ob.bc.profile is not None:
            dirichlet.append((surf & _cells_inside(layout, ob), ob.bc.profile))
    pos, tang = layout.e_positions, layout.e_directions()
    for sel, profile in dirichlet:
        idx = np.flatnonzero(sel)
        lam[idx] = profile(pos[idx], tang[idx], omega, speed[idx])
    return Scenario(ctx, float(omega), damping, lam, f_hat=f_hat, faces=faces)


def smooth_ramp(duration: float) -> Callable[[float], float]:
    """C2 start-up multiplier rising from 0 to 1 over ``duration``."""
    def ramp(t):
        s = min(max(t / duration, 0.0), 1.0)
        return s ** 3 * (10 - 15 * s + 6 * s * s)
    return ramp


# stepping --------------------------------------------------------------------

def _coefficients(damping: np.ndarray, dt: float):
    half = 0.5 * dt * damping
    return (1 - half) / (1 + half), dt / (1 + half)


def _check(step, *arrays):
    for a in arrays:
        m = np.max(np.abs(a)) if a.size else 0.0
        if not (m < BLOWUP_LEVEL):
            raise InstabilityError(step)


@dataclass
class Trajectory:
    """Synchronized states recorded at selected step indices."""
    timegrid: TimeGrid
    states: dict[int, FieldState] = field(default_factory=dict)

    def at(self, step: int) -> FieldState:
        return self.states[step]

    @property
    def steps(self) -> list[int]:
        return sorted(self.states)


def _forward(u0: FieldState, sc: Scenario, tg: TimeGrid, with_data: bool,
             record: Iterable[int] = ()) -> tuple[FieldState, Trajectory]:
    ctx = sc.ctx
    u0.check(ctx.layout)
    ge, gh = ctx.grad_e, ctx.grad_h
    mask = ctx.mask
    dt, n = tg.dt, tg.steps
    a, b = _coefficients(sc.damping, dt)
    record = set(record)
    traj = Trajectory(tg)
    with_data = with_data and not sc.is_homogeneous

    def src(t):
        return sc.source(t) if with_data else None

    e = u0.e.astype(float, copy=True)
    h = u0.h.astype(float, copy=True)
    e[mask] = sc.boundary_values(0.0)[mask] if with_data else 0.0
    rate = ge @ e
    f = src(0.0)
    if f is not None:
        rate += f.h
    if 0 in record:
        traj.states[0] = FieldState(e.copy(), h.copy())
    h += 0.5 * dt * rate
    for k in range(n):
        f = src(tg.time(k + 0.5))
        erate = gh @ h
        if f is not None:
            erate += f.e
        e = a * e + b * erate
        if with_data:
            e[mask] = sc.boundary_values(tg.time(k + 1))[mask]
        else:
            e[mask] = 0.0
        rate = ge @ e
        f = src(tg.time(k + 1))
        if f is not None:
            rate += f.h
        h += 0.5 * dt * rate
        if k + 1 in record:
            traj.states[k + 1] = FieldState(e.copy(), h.copy())
        if k < n - 1:
            h += 0.5 * dt * rate
        if (k + 1) % CHECK_EVERY == 0 or k == n - 1:
            _check(k + 1, e, h)
    return FieldState(e, h), traj


def _adjoint_sweep(v: FieldState, sc: Scenario, tg: TimeGrid,
                   record: Iterable[int] = ()) -> tuple[FieldState, dict[int, FieldState]]:
    """Apply the weighted-inner-product transpose of the homogeneous period map.

    Returned snapshots are keyed by sweep index k (k adjoint steps applied).
    """
    ctx = sc.ctx
    v.check(ctx.layout)
    ge, gh = ctx.grad_e, ctx.grad_h
    mask = ctx.mask
    dt, n = tg.dt, tg.steps
    a, b = _coefficients(sc.damping, dt)
    record = set(record)
    snaps = {}

    e = v.e.astype(float, copy=True)
    h = v.h.astype(float, copy=True)
    if 0 in record:
        snaps[0] = FieldState(np.where(mask, 0.0, e), h.copy())
    e -= 0.5 * dt * (gh @ h)
    for k in range(n):
        e[mask] = 0.0
        h -= ge @ (b * e)
        e *= a
        r = gh @ h
        e -= 0.5 * dt * r
        if k + 1 in record:
            snaps[k + 1] = FieldState(np.where(mask, 0.0, e), h.copy())
        if k < n - 1:
            e -= 0.5 * dt * r
        if (k + 1) % CHECK_EVERY == 0 or k == n - 1:
            _check(k + 1, e, h)
    e[mask] = 0.0
    return FieldState(e, h), snaps


def solve_icp(u0: FieldState, scenario: Scenario, timegrid: TimeGrid,
              record: Iterable[int] = ()) -> tuple[Trajectory, FieldState]:
    """Inhomogeneous problem: sources, imposed traces and absorbing faces."""
    u_t, traj = _forward(u0, scenario, timegrid, True, record)
    return traj, u_t


def solve_hcp(u0: FieldState, scenario: Scenario, timegrid: TimeGrid) -> FieldState:
    """Homogeneous problem: no sources, zero imposed traces, same face types."""
    return _forward(u0, scenario, timegrid, False)[0]


def solve_hacp_plus(u0star: FieldState, scenario: Scenario, timegrid: TimeGrid) -> FieldState:
    """Forward-in-time adjoint problem; returns u^{*,+}(T)."""
    return _adjoint_sweep(u0star, scenario, timegrid)[0]


def solve_hacp_minus(uTstar: FieldState, scenario: Scenario, timegrid: TimeGrid,
                     record: Iterable[int] = ()) -> tuple[FieldState, dict[float, FieldState]]:
    """Backward-in-time adjoint problem from data at t = T; returns u^{*,-}(0).

    Marching from t_n = T down to t_0 = 0 with the original generator and
    step -dt is, operation for operation, the transposed sweep; snapshots are
    keyed by physical time.
    """
    n = timegrid.steps
    wanted = {n - k for k in record}
    u_0, snaps = _adjoint_sweep(uTstar, scenario, timegrid, wanted)
    return u_0, {timegrid.time(n - k): s for k, s in snaps.items()}


def period_map(u0: FieldState, scenario: Scenario, timegrid: TimeGrid) -> FieldState:
    return solve_hcp(u0, scenario, timegrid)


def period_map_adjoint(v: FieldState, scenario: Scenario, timegrid: TimeGrid,
                       variant: str = "forward") -> FieldState:
    if variant == "forward":
        return solve_hacp_plus(v, scenario, timegrid)
    if variant == "backward":
        return solve_hacp_minus(v, scenario, timegrid)[0]
    raise ValueError(f"unknown adjoint variant {variant!r}")


# staggered energy -------------------------------------------------------------

@dataclass
class LeapfrogState:
    """E at an integer level, H at the following half level."""
    e: np.ndarray
    h_half: np.ndarray
    step: int
    dt: float

    @classmethod
    def from_synchronized(cls, u: FieldState, ctx: GeneratorContext, dt: float,
                          step: int = 0) -> "LeapfrogState":
        return cls(u.e.copy(), u.h + 0.5 * dt * (ctx.grad_e @ u.e), step, dt)

    def h_previous(self, ctx: GeneratorContext) -> np.ndarray:
        return self.h_half - self.dt * (ctx.grad_e @ self.e)


def conserved_energy(state: LeapfrogState, ctx: GeneratorContext) -> float:
    """<eps E^n, E^n> + <mu H^{n-1/2}, H^{n+1/2}>, measure weighted."""
    w = ctx.weights
    return float(np.sum(w.w_e * state.e * state.e)
                 + np.sum(w.w_h * state.h_previous(ctx) * state.h_half))


def energy_of(u: FieldState, ctx: GeneratorContext, dt: float) -> float:
    return conserved_energy(LeapfrogState.from_synchronized(u, ctx, dt), ctx)


def h_norm(u: FieldState, ctx: GeneratorContext) -> float:
    return math.sqrt(max(inner_h(u, u, ctx.weights), 0.0))
