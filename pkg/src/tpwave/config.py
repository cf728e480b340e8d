"""YAML scenario configuration: schema validation, defaults, and assembly.

A config has five sections (grid, material, drive, control, output).  Parsing
fills every default, so ``parse(serialize(parse(x))) == parse(x)``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import analytic
from .control import ControlConfig
from .evolution import (PEC, DirichletTrace, FirstOrderABC, Obstacle, Scenario, TimeGrid,
                        build_scenario, cfl_max_dt, stable_steps)
from .wavestate import DofLayout, FieldState, GridSpec, MaterialField, System, face_names


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path or "<root>"
        super().__init__(f"{self.path}: {message}")


class _Loader(yaml.SafeLoader):
    pass


# accept 1e-10 style floats (YAML 1.1 wants a dot in the mantissa)
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+][0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_schema(name: str = "config") -> dict:
    text = resources.files("tpwave").joinpath(f"schemas/{name}.schema.json").read_text()
    return json.loads(text)


def bundled_config(name: str) -> Path:
    return Path(str(resources.files("tpwave").joinpath(f"configs/{name}")))


def _json_path(err: jsonschema.ValidationError) -> str:
    out = ""
    for p in err.absolute_path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


@dataclass
class GridSection:
    dimension: int
    system: str
    cells: list
    spacing: list
    origin: list
    faces: dict
    obstacles: list


@dataclass
class MaterialSection:
    eps: float = 1.0
    mu: float = 1.0
    regions: list = field(default_factory=list)


@dataclass
class DriveSection:
    omega: float | None = None
    period: float | None = None
    source: dict = field(default_factory=lambda: {"kind": "none"})
    ramp: bool = False

    @property
    def angular_frequency(self) -> float:
        return self.omega if self.omega is not None else 2 * math.pi / self.period


@dataclass
class ControlSection:
    steps_per_period: int | str = "auto"
    cfl_factor: float = 0.9
    tol: float = 1e-10
    max_iter: int = 500
    adjoint_variant: str = "forward"
    warm_start: int = 0
    harmonic: bool = False
    reduction: float = 1e-5


@dataclass
class OutputSection:
    directory: str = "runs/out"
    snapshot_every: int = 0
    formats: list = field(default_factory=lambda: ["raw"])
    analytic: str = "none"


@dataclass
class ScenarioConfig:
    name: str
    grid: GridSection
    material: MaterialSection
    drive: DriveSection
    control: ControlSection
    output: OutputSection

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drive"] = {k: v for k, v in d["drive"].items() if v is not None}
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, tol=None, max_iter=None, directory=None) -> "ScenarioConfig":
        ctl = self.control
        if tol is not None:
            ctl = replace(ctl, tol=float(tol))
        if max_iter is not None:
            ctl = replace(ctl, max_iter=int(max_iter))
        out = self.output if directory is None else replace(self.output, directory=str(directory))
        cfg = replace(self, control=ctl, output=out)
        return parse_config(cfg.to_dict())

    def refined(self, level: int) -> "ScenarioConfig":
        """Spacing halved and steps doubled ``level`` times."""
        f = 2 ** level
        g = replace(self.grid, cells=[n * f for n in self.grid.cells],
                    spacing=[h / f for h in self.grid.spacing])
        ctl = self.control
        if ctl.steps_per_period != "auto":
            ctl = replace(ctl, steps_per_period=ctl.steps_per_period * f)
        return replace(self, grid=g, control=ctl)


def _complex(v) -> complex:
    return complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)


def parse_config(raw: dict) -> ScenarioConfig:
    """Validate against the schema, fill defaults and run semantic checks."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a mapping")
    validator = jsonschema.Draft202012Validator(load_schema("config"))
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigError(_json_path(err), err.message)
    raw = copy.deepcopy(raw)

    g = raw["grid"]
    dim = g["dimension"]
    for key in ("cells", "spacing", "origin"):
        if key in g and len(g[key]) != dim:
            raise ConfigError(f"grid.{key}", f"needs {dim} entries")
    cells = [int(n) for n in g["cells"]]
    spacing = [float(h) for h in g.get("spacing", [1.0 / n for n in cells])]
    origin = [float(o) for o in g.get("origin", [0.0] * dim)]
    names = face_names(dim)
    faces = {}
    for name, spec in g.get("faces", {}).items():
        if name not in names:
            raise ConfigError(f"grid.faces.{name}", f"not a face of a {dim}D box")
        faces[name] = _normalize_face(spec)
    for name in names:
        faces.setdefault(name, _normalize_face({"type": "pec"}))
    obstacles = []
    for i, ob in enumerate(g.get("obstacles", [])):
        _check_region(ob, dim, f"grid.obstacles[{i}]")
        ob = dict(ob)
        ob["bc"] = _normalize_face(ob.get("bc", {"type": "pec"}))
        if ob["bc"]["type"] == "abc":
            raise ConfigError(f"grid.obstacles[{i}].bc.type", "obstacles take pec or dirichlet")
        obstacles.append(ob)
    try:
        System(g["system"])
        GridSpec(dim, g["system"], cells, spacing, origin,
                 {k: v["tag"] for k, v in faces.items()})
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None
    grid = GridSection(dim, g["system"], cells, spacing, origin, faces, obstacles)

    m = raw.get("material", {})
    material = MaterialSection(float(m.get("eps", 1.0)), float(m.get("mu", 1.0)),
                               [dict(r) for r in m.get("regions", [])])
    for key in ("eps", "mu"):
        if not getattr(material, key) > 0:
            raise ConfigError(f"material.{key}", "material coefficients must be positive")
    for i, r in enumerate(material.regions):
        _check_region(r, dim, f"material.regions[{i}]")
        for key in ("eps", "mu"):
            if key in r and not r[key] > 0:
                raise ConfigError(f"material.regions[{i}].{key}",
                                  "material coefficients must be positive")

    d = raw["drive"]
    if ("omega" in d) == ("period" in d):
        raise ConfigError("drive", "give exactly one of omega or period")
    drive = DriveSection(d.get("omega"), d.get("period"),
                         dict(d.get("source", {"kind": "none"})), bool(d.get("ramp", False)))
    if drive.source["kind"] == "gaussian":
        if g["system"] != "acoustic":
            raise ConfigError("drive.source.kind", "gaussian sources drive acoustic systems only")
        for key in ("center", "width"):
            if key not in drive.source:
                raise ConfigError(f"drive.source.{key}", "required for gaussian sources")

    control = ControlSection(**raw.get("control", {}))
    if control.harmonic and control.steps_per_period != "auto" and control.steps_per_period % 4:
        raise ConfigError("control.steps_per_period",
                          "must be divisible by 4 when harmonic extraction is requested")

    o = raw.get("output", {})
    name = raw.get("name", "run")
    output = OutputSection(o.get("directory", f"runs/{name}"), int(o.get("snapshot_every", 0)),
                           list(o.get("formats", ["raw"])), o.get("analytic", "none"))
    if output.analytic == "traveling_wave_1d" and (dim != 1 or g["system"] != "acoustic"):
        raise ConfigError("output.analytic", "traveling_wave_1d needs a 1D acoustic grid")
    return ScenarioConfig(name, grid, material, drive, control, output)


def _normalize_face(spec: dict) -> dict:
    kind = spec["type"]
    out = {"type": kind, "tag": spec.get("tag", "artificial" if kind == "abc" else "scatterer")}
    if kind == "dirichlet":
        out["profile"] = dict(spec.get("profile", {"kind": "zero"}))
    return out


def _check_region(r: dict, dim: int, path: str):
    if r["shape"] == "box":
        for key in ("lower", "upper"):
            if len(r.get(key, ())) != dim:
                raise ConfigError(f"{path}.{key}", f"box needs {dim} coordinates")
    else:
        if len(r.get("center", ())) != dim:
            raise ConfigError(f"{path}.center", f"ball needs {dim} coordinates")
        if "radius" not in r:
            raise ConfigError(f"{path}.radius", "ball needs a radius")


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = yaml.load(path.read_text(), Loader=_Loader)
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("", f"YAML syntax error in {path}: {exc}") from None
    return parse_config(raw)


# assembly ----------------------------------------------------------------------

def make_profile(spec: dict):
    kind = spec["kind"]
    if kind == "zero":
        return analytic.zero_profile()
    if kind == "constant":
        return analytic.constant_profile(_complex(spec.get("value", 1.0)))
    if kind == "plane_wave":
        return analytic.plane_wave_profile(_complex(spec.get("amplitude", 1.0)),
                                           spec.get("direction", (1.0, 0.0, 0.0)),
                                           spec.get("polarization"))
    if kind == "outgoing_dipole":
        return analytic.outgoing_dipole_profile(_complex(spec.get("scale", 1.0)))
    raise ConfigError("profile.kind", f"unknown profile {kind!r}")


def _face_bc(spec: dict):
    if spec["type"] == "pec":
        return PEC()
    if spec["type"] == "abc":
        return FirstOrderABC()
    return DirichletTrace(make_profile(spec["profile"]))


def _region(spec: dict, bc=None) -> Obstacle:
    kw = dict(shape=spec["shape"], lower=tuple(spec.get("lower", ())),
              upper=tuple(spec.get("upper", ())), center=tuple(spec.get("center", ())),
              radius=float(spec.get("radius", 0.0)))
    return Obstacle(bc=bc if bc is not None else PEC(), **kw)


@dataclass
class RunSetup:
    config: ScenarioConfig
    grid: GridSpec
    material: MaterialField
    scenario: Scenario
    control: ControlConfig

    @property
    def layout(self) -> DofLayout:
        return self.scenario.layout

    @property
    def timegrid(self) -> TimeGrid:
        return self.control.timegrid


def build_grid(cfg: ScenarioConfig) -> GridSpec:
    g = cfg.grid
    return GridSpec(g.dimension, g.system, tuple(g.cells), tuple(g.spacing), tuple(g.origin),
                    {k: v["tag"] for k, v in g.faces.items()})


def build_material(cfg: ScenarioConfig, layout: DofLayout) -> MaterialField:
    eps = np.full(layout.e_dof_count, cfg.material.eps)
    mu = np.full(layout.h_dof_count, cfg.material.mu)
    for spec in cfg.material.regions:
        reg = _region(spec)
        if "eps" in spec:
            eps[reg.contains(layout.e_positions)] = spec["eps"]
        if "mu" in spec:
            mu[reg.contains(layout.h_positions)] = spec["mu"]
    try:
        return MaterialField(eps, mu)
    except ValueError as exc:
        raise ConfigError("material", str(exc)) from None


def _gaussian_source(spec: dict, layout: DofLayout) -> FieldState:
    c = np.asarray(spec["center"], dtype=float)
    r2 = np.sum((layout.e_positions - c) ** 2, axis=1)
    e = _complex(spec.get("amplitude", 1.0)) * np.exp(-r2 / spec["width"] ** 2)
    return FieldState(e, np.zeros(layout.h_dof_count, dtype=complex))


def build_setup(cfg: ScenarioConfig) -> RunSetup:
    grid = build_grid(cfg)
    layout = DofLayout(grid)
    material = build_material(cfg, layout)
    omega = cfg.drive.angular_frequency
    faces = {k: _face_bc(v) for k, v in cfg.grid.faces.items()}
    obstacles = [_region(o, _face_bc(o["bc"])) for o in cfg.grid.obstacles]
    f_hat = _gaussian_source(cfg.drive.source, layout) if cfg.drive.source["kind"] == "gaussian" else None
    try:
        scenario = build_scenario(grid, material, faces, omega, obstacles, f_hat=f_hat)
    except ValueError as exc:
        raise ConfigError("grid.faces", str(exc)) from None
    period = 2 * math.pi / omega
    steps = cfg.control.steps_per_period
    if steps == "auto":
        steps = stable_steps(period, cfl_max_dt(grid, material, cfg.control.cfl_factor))
    try:
        control = ControlConfig(omega, int(steps), cfg.control.tol, cfg.control.max_iter,
                                cfg.control.adjoint_variant)
    except ValueError as exc:
        raise ConfigError("control", str(exc)) from None
    return RunSetup(cfg, grid, material, scenario, control)
