"""Grids, staggered field storage, materials and the weighted state algebra.

Degrees of freedom live on the cells of a structured cubical complex.  A
``q``-cell family is identified by the (ordered) tuple of axes it spans; a
0-form lives on nodes ``()``, a 1-form on edges ``(0,)``, ``(1,)``, ... and so
on.  Values stored per dof are field *components* (cochain value divided by
the primal cell measure), so the discrete L2 pairing is a diagonal quadrature:
value * control volume.

Storage order is family-major, and inside each family C order over the
family array shape (last axis fastest).  Snapshots serialize in this order.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

AXIS_NAMES = "xyz"


class LayoutError(ValueError):
    """Arrays do not conform to the expected dof layout."""


class System(str, enum.Enum):
    ACOUSTIC = "acoustic"          # q = 0, Dirichlet case, any dimension
    MAXWELL_2D_TE = "maxwell2d_te"  # q = 1, N = 2
    MAXWELL_3D = "maxwell3d"        # q = 1, N = 3

    @property
    def form_degree(self) -> int:
        return 0 if self is System.ACOUSTIC else 1


class Tag(str, enum.Enum):
    SCATTERER = "scatterer"
    ARTIFICIAL = "artificial"


def face_names(dimension: int) -> list[str]:
    return [f"{AXIS_NAMES[a]}{s}" for a in range(dimension) for s in "-+"]


def parse_face(name: str) -> tuple[int, int]:
    """'y+' -> (1, +1)."""
    if len(name) != 2 or name[0] not in AXIS_NAMES or name[1] not in "-+":
        raise ValueError(f"bad face name {name!r}")
    return AXIS_NAMES.index(name[0]), (1 if name[1] == "+" else -1)


@dataclass(frozen=True)
class GridSpec:
    dimension: int
    system: System
    cells: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...] | None = None
    boundary_tags: dict[str, Tag] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "system", System(self.system))
        object.__setattr__(self, "cells", tuple(int(n) for n in self.cells))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        origin = (0.0,) * self.dimension if self.origin is None else self.origin
        object.__setattr__(self, "origin", tuple(float(o) for o in origin))
        tags = {k: Tag(v) for k, v in self.boundary_tags.items()}
        for k in face_names(self.dimension):
            tags.setdefault(k, Tag.SCATTERER)
        object.__setattr__(self, "boundary_tags", tags)

        if self.dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if self.system is System.MAXWELL_2D_TE and self.dimension != 2:
            raise ValueError("maxwell2d_te requires dimension 2")
        if self.system is System.MAXWELL_3D and self.dimension != 3:
            raise ValueError("maxwell3d requires dimension 3")
        for name, seq in (("cells", self.cells), ("spacing", self.spacing),
                          ("origin", self.origin)):
            if len(seq) != self.dimension:
                raise ValueError(f"{name} must have {self.dimension} entries")
        if any(n < 2 for n in self.cells):
            raise ValueError("every axis needs at least 2 cells")
        if any(not h > 0 for h in self.spacing):
            raise ValueError("spacings must be positive")
        if set(tags) != set(face_names(self.dimension)):
            raise ValueError(f"unknown faces in boundary_tags: "
                             f"{sorted(set(tags) - set(face_names(self.dimension)))}")

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(n * h for n, h in zip(self.cells, self.spacing))

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.dimension, self.system,
                        tuple(n * factor for n in self.cells),
                        tuple(h / factor for h in self.spacing),
                        self.origin, dict(self.boundary_tags))


def _e_h_families(dimension: int, q: int):
    axes = range(dimension)
    if q == 0:
        e = [()]
        h = [(a,) for a in axes]
    elif dimension == 2:
        e = [(0,), (1,)]
        h = [(0, 1)]
    else:
        e = [(0,), (1,), (2,)]
        # cyclic orientation so that the three face families read as x, y, z
        h = [(1, 2), (2, 0), (0, 1)]
    return e, h


@dataclass(frozen=True)
class Family:
    """One family of ``q``-cells spanning the axes in ``dirs``."""
    dirs: tuple[int, ...]
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def name(self) -> str:
        return "".join(AXIS_NAMES[a] for a in self.dirs) or "node"

    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


def _families(grid: GridSpec, dir_list) -> list[Family]:
    out, off = [], 0
    for dirs in dir_list:
        shape = tuple(n if a in dirs else n + 1 for a, n in enumerate(grid.cells))
        out.append(Family(tuple(dirs), shape, off))
        off += out[-1].size
    return out


class DofLayout:
    """Staggered placement of E (q-form) and H ((q+1)-form) dofs on a grid."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        e_dirs, h_dirs = _e_h_families(grid.dimension, grid.system.form_degree)
        self.e_families = _families(grid, e_dirs)
        self.h_families = _families(grid, h_dirs)
        self.e_dof_count = sum(f.size for f in self.e_families)
        self.h_dof_count = sum(f.size for f in self.h_families)

    def __eq__(self, other):
        return isinstance(other, DofLayout) and other.grid == self.grid

    def __hash__(self):
        return hash(self.grid)

    # placement -------------------------------------------------------------
    def _index_grids(self, fam: Family) -> list[np.ndarray]:
        idx = np.indices(fam.shape).reshape(self.grid.dimension, -1)
        return list(idx)

    def _positions(self, families) -> np.ndarray:
        g = self.grid
        blocks = []
        for fam in families:
            idx = self._index_grids(fam)
            cols = []
            for a in range(g.dimension):
                shift = 0.5 if a in fam.dirs else 0.0
                cols.append(g.origin[a] + (idx[a] + shift) * g.spacing[a])
            blocks.append(np.stack(cols, axis=1))
        return np.concatenate(blocks, axis=0)

    def _measures(self, families) -> np.ndarray:
        """Control volume of each dof: primal cell measure times dual measure."""
        g = self.grid
        blocks = []
        for fam in families:
            idx = self._index_grids(fam)
            w = np.ones(fam.size)
            for a in range(g.dimension):
                h = g.spacing[a]
                if a in fam.dirs:
                    w *= h
                else:
                    on_bdry = (idx[a] == 0) | (idx[a] == g.cells[a])
                    w *= np.where(on_bdry, 0.5 * h, h)
            blocks.append(w)
        return np.concatenate(blocks)

    @cached_property
    def e_positions(self) -> np.ndarray:
        return self._positions(self.e_families)

    @cached_property
    def h_positions(self) -> np.ndarray:
        return self._positions(self.h_families)

    @cached_property
    def e_measure(self) -> np.ndarray:
        return self._measures(self.e_families)

    @cached_property
    def h_measure(self) -> np.ndarray:
        return self._measures(self.h_families)

    @cached_property
    def e_family_index(self) -> np.ndarray:
        return np.concatenate([np.full(f.size, i) for i, f in enumerate(self.e_families)])

    @cached_property
    def h_family_index(self) -> np.ndarray:
        return np.concatenate([np.full(f.size, i) for i, f in enumerate(self.h_families)])

    def e_directions(self) -> np.ndarray:
        """Unit tangent per E dof (edges); ones for node dofs."""
        if self.grid.system.form_degree == 0:
            return np.ones((self.e_dof_count, 1))
        t = np.zeros((self.e_dof_count, self.grid.dimension))
        for fam in self.e_families:
            t[fam.slice(), fam.dirs[0]] = 1.0
        return t

    def on_face(self, face: str, families=None) -> np.ndarray:
        """Boolean mask of dofs whose cell lies inside the boundary face."""
        axis, side = parse_face(face)
        families = self.e_families if families is None else families
        out = []
        for fam in families:
            if axis in fam.dirs:
                out.append(np.zeros(fam.size, dtype=bool))
                continue
            idx = self._index_grids(fam)[axis]
            target = 0 if side < 0 else self.grid.cells[axis]
            out.append(idx == target)
        return np.concatenate(out)

    def descriptor(self) -> dict:
        """JSON-friendly description of the storage order."""
        def fams(fs):
            return [{"name": f.name, "dirs": list(f.dirs), "shape": list(f.shape),
                     "offset": f.offset} for f in fs]
        return {"order": "family-major, C order within family",
                "e_families": fams(self.e_families), "h_families": fams(self.h_families),
                "e_dof_count": self.e_dof_count, "h_dof_count": self.h_dof_count}


@dataclass
class FieldState:
    """A pair u = (E, H) of dof arrays."""
    e: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.e = np.asarray(self.e)
        self.h = np.asarray(self.h)

    @classmethod
    def zeros(cls, layout: DofLayout, dtype=float) -> "FieldState":
        return cls(np.zeros(layout.e_dof_count, dtype), np.zeros(layout.h_dof_count, dtype))

    @classmethod
    def random(cls, layout: DofLayout, rng: np.random.Generator) -> "FieldState":
        return cls(rng.standard_normal(layout.e_dof_count),
                   rng.standard_normal(layout.h_dof_count))

    def copy(self) -> "FieldState":
        return FieldState(self.e.copy(), self.h.copy())

    def check(self, layout: DofLayout) -> "FieldState":
        if self.e.shape != (layout.e_dof_count,) or self.h.shape != (layout.h_dof_count,):
            raise LayoutError(f"state shapes {self.e.shape}/{self.h.shape} do not match "
                              f"layout ({layout.e_dof_count},)/({layout.h_dof_count},)")
        return self

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.e).all() and np.isfinite(self.h).all())

    def __add__(self, other):
        _conform(self, other)
        return FieldState(self.e + other.e, self.h + other.h)

    def __sub__(self, other):
        _conform(self, other)
        return FieldState(self.e - other.e, self.h - other.h)

    def __neg__(self):
        return FieldState(-self.e, -self.h)

    def __mul__(self, alpha):
        return FieldState(alpha * self.e, alpha * self.h)

    __rmul__ = __mul__

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.e, self.h])

    @classmethod
    def from_vector(cls, vec: np.ndarray, layout: DofLayout) -> "FieldState":
        vec = np.asarray(vec)
        if vec.shape != (layout.e_dof_count + layout.h_dof_count,):
            raise LayoutError("vector length does not match layout")
        return cls(vec[:layout.e_dof_count].copy(), vec[layout.e_dof_count:].copy())


def _conform(u: FieldState, v: FieldState):
    if u.e.shape != v.e.shape or u.h.shape != v.h.shape:
        raise LayoutError(f"layout mismatch: {u.e.shape}/{u.h.shape} vs {v.e.shape}/{v.h.shape}")


@dataclass
class MaterialField:
    eps: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        if not (np.all(np.isfinite(self.eps)) and np.all(np.isfinite(self.mu))):
            raise ValueError("material coefficients must be finite")
        if self.eps.size and self.eps.min() <= 0 or self.mu.size and self.mu.min() <= 0:
            raise ValueError("material coefficients must be uniformly positive")

    @classmethod
    def uniform(cls, layout: DofLayout, eps: float = 1.0, mu: float = 1.0) -> "MaterialField":
        return cls(np.full(layout.e_dof_count, float(eps)), np.full(layout.h_dof_count, float(mu)))

    def check(self, layout: DofLayout) -> "MaterialField":
        if self.eps.shape != (layout.e_dof_count,) or self.mu.shape != (layout.h_dof_count,):
            raise LayoutError("material arrays do not match layout")
        return self

    def wave_speed_e(self, layout: DofLayout) -> np.ndarray:
        """Wave speed 1/sqrt(eps mu) at E dofs, using the mean mu of adjacent H dofs."""
        return 1.0 / np.sqrt(self.eps * _mean_mu_at_e(self, layout))

    @property
    def c_max(self) -> float:
        return float(1.0 / np.sqrt(self.eps.min() * self.mu.min()))


def _mean_mu_at_e(mat: MaterialField, layout: DofLayout) -> np.ndarray:
    # nearest H dof by position is enough for the piecewise-constant media this
    # package builds; uniform media give the exact value.
    if np.ptp(mat.mu) == 0:
        return np.full(layout.e_dof_count, mat.mu[0])
    from scipy.spatial import cKDTree
    tree = cKDTree(layout.h_positions)
    _, j = tree.query(layout.e_positions)
    return mat.mu[j]


@dataclass
class InnerProductWeights:
    w_e: np.ndarray
    w_h: np.ndarray

    @classmethod
    def from_material(cls, material: MaterialField, layout: DofLayout) -> "InnerProductWeights":
        material.check(layout)
        return cls(material.eps * layout.e_measure, material.mu * layout.h_measure)


def inner_h(u: FieldState, v: FieldState, w: InnerProductWeights) -> float:
    """Weighted inner product sum w_e u.e v.e + sum w_h u.h v.h."""
    _conform(u, v)
    if u.e.shape != w.w_e.shape or u.h.shape != w.w_h.shape:
        raise LayoutError("state does not match the weights' layout")
    # np.sum uses pairwise summation with a fixed order: reproducible results
    return float(np.sum(w.w_e * u.e * v.e) + np.sum(w.w_h * u.h * v.h))


def norm_h(u: FieldState, w: InnerProductWeights) -> float:
    return float(np.sqrt(max(inner_h(u, u, w), 0.0)))


def axpy(alpha: float, x: FieldState, y: FieldState) -> FieldState:
    """Return alpha * x + y."""
    _conform(x, y)
    return FieldState(alpha * x.e + y.e, alpha * x.h + y.h)

