"""Scenario factories shared by the test modules."""
import math

from tpwave.analytic import constant_profile, plane_wave_profile
from tpwave.evolution import (DirichletTrace, FirstOrderABC, Obstacle, TimeGrid, build_scenario,
                              cfl_max_dt, stable_steps)
from tpwave.wavestate import DofLayout, FieldState, GridSpec, MaterialField, face_names

OMEGA = 2 * math.pi / 3
SYSTEMS = [(1, "acoustic"), (2, "acoustic"), (2, "maxwell2d_te"), (3, "maxwell3d")]
BOUNDARY_KINDS = ["pec", "dirichlet", "abc", "obstacle"]

# filled by conftest with every CG history of the session
CG_HISTORIES = []
# acceptance criterion number -> (passed, detail); printed at the end of the session
ACCEPTANCE = {}
ACCEPTANCE_COUNT = 10


def make_grid(dim, system, cells=6, length=1.0, artificial=(), origin=None):
    tags = {f: "artificial" for f in artificial}
    return GridSpec(dim, system, (cells,) * dim, (length / cells,) * dim,
                    origin=origin, boundary_tags=tags)


def driven_profile(system):
    if system == "acoustic":
        return constant_profile(1j)
    # tangential part of a y-polarised plane wave; nonzero on the x- face edges
    return plane_wave_profile(1.0, (1.0, 0.0, 0.0), polarization=(0.0, 1.0, 0.0))


def make_scenario(dim, system, cells=6, kind="pec", omega=OMEGA, length=1.0):
    """kind: 'pec', 'dirichlet' (driven x- face), 'abc' (driven x-, absorbing x+),
    'obstacle' (driven box obstacle, absorbing on every face)."""
    artificial, faces, obstacles = (), {}, []
    if kind == "dirichlet":
        faces["x-"] = DirichletTrace(driven_profile(system))
    elif kind == "abc":
        artificial = ("x+",)
        faces = {"x-": DirichletTrace(driven_profile(system)), "x+": FirstOrderABC()}
    elif kind == "obstacle":
        artificial = tuple(face_names(dim))
        faces = {f: FirstOrderABC() for f in artificial}
        lo, hi = 0.3 * length, 0.7 * length
        obstacles = [Obstacle("box", lower=(lo,) * dim, upper=(hi,) * dim,
                              bc=DirichletTrace(driven_profile(system)))]
    elif kind != "pec":
        raise ValueError(kind)
    grid = make_grid(dim, system, cells, length, artificial)
    mat = MaterialField.uniform(DofLayout(grid))
    return build_scenario(grid, mat, faces, omega, obstacles)


def stable_grid(scenario, factor=0.9, multiple=4):
    dt = cfl_max_dt(scenario.layout.grid, scenario.ctx.material, factor)
    return TimeGrid(scenario.period, stable_steps(scenario.period, dt, multiple))


def random_control(scenario, rng):
    return scenario.ctx.project(FieldState.random(scenario.layout, rng))


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)
