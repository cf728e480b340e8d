"""Discrete exterior derivative, co-derivative and the wave generator.

``d`` is the coboundary of the cubical complex rescaled to component values;
``delta`` is *defined* as minus its measure-weighted transpose, so that

    <d E, H> + <E, delta H> = 0        (unweighted control-volume pairings)

holds to round-off for every E and H.  The generator is
``A(E, H) = (eps^-1 delta H, mu^-1 d E)``; for acoustics this reads
``(eps^-1 div H, mu^-1 grad E)``, for Maxwell ``(-eps^-1 curl H, mu^-1 curl E)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .wavestate import (DofLayout, FieldState, InnerProductWeights, LayoutError,
                        MaterialField, System)

DENSE_DOF_CAP = 4096


def _perm_sign(seq: tuple[int, ...], target: tuple[int, ...]) -> int:
    perm = [target.index(s) for s in seq]
    sign = 1
    for i in range(len(perm)):
        for j in range(i + 1, len(perm)):
            if perm[i] > perm[j]:
                sign = -sign
    return sign


@dataclass(frozen=True)
class DiscreteDerivative:
    """Sparse map from E dofs (q-forms) to H dofs ((q+1)-forms)."""
    matrix: sp.csr_matrix
    system: System

    @classmethod
    def build(cls, layout: DofLayout) -> "DiscreteDerivative":
        grid = layout.grid
        rows, cols, vals = [], [], []
        by_set = {frozenset(f.dirs): f for f in layout.e_families}
        for hf in layout.h_families:
            idx = np.indices(hf.shape).reshape(grid.dimension, -1)
            hrow = hf.offset + np.arange(hf.size)
            for j, axis in enumerate(hf.dirs):
                face_dirs = tuple(a for a in hf.dirs if a != axis)
                ef = by_set[frozenset(face_dirs)]
                sign = (-1) ** j * _perm_sign(face_dirs, ef.dirs)
                coef = sign / grid.spacing[axis]
                lower = ef.offset + np.ravel_multi_index(tuple(idx), ef.shape)
                upper_idx = idx.copy()
                upper_idx[axis] += 1
                upper = ef.offset + np.ravel_multi_index(tuple(upper_idx), ef.shape)
                rows += [hrow, hrow]
                cols += [upper, lower]
                vals += [np.full(hf.size, coef), np.full(hf.size, -coef)]
        mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(layout.h_dof_count, layout.e_dof_count))
        return cls(mat, grid.system)


@dataclass
class GeneratorContext:
    """Everything needed to apply the generator on one grid."""
    layout: DofLayout
    material: MaterialField
    mask: np.ndarray = None  # True where the E dof's tangential trace is imposed
    derivative: DiscreteDerivative = field(default=None, repr=False)

    def __post_init__(self):
        self.material.check(self.layout)
        if self.mask is None:
            self.mask = np.zeros(self.layout.e_dof_count, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.layout.e_dof_count,):
            raise LayoutError("mask must have one entry per E dof")
        if self.derivative is None:
            self.derivative = DiscreteDerivative.build(self.layout)

    @property
    def free(self) -> np.ndarray:
        return ~self.mask

    @cached_property
    def weights(self) -> InnerProductWeights:
        return InnerProductWeights.from_material(self.material, self.layout)

    @cached_property
    def delta_matrix(self) -> sp.csr_matrix:
        d = self.derivative.matrix
        inv_we = sp.diags(1.0 / self.layout.e_measure)
        return (-(inv_we @ d.T @ sp.diags(self.layout.h_measure))).tocsr()

    @cached_property
    def grad_e(self) -> sp.csr_matrix:
        """mu^-1 d, the H-rate produced by E."""
        return (sp.diags(1.0 / self.material.mu) @ self.derivative.matrix).tocsr()

    @cached_property
    def grad_h(self) -> sp.csr_matrix:
        """eps^-1 delta, the E-rate produced by H."""
        return (sp.diags(1.0 / self.material.eps) @ self.delta_matrix).tocsr()

    def project(self, u: FieldState) -> FieldState:
        """Zero the constrained E dofs (projection onto the control space)."""
        return FieldState(np.where(self.mask, 0.0, u.e), u.h.copy())


def apply_d(e: np.ndarray, ctx: GeneratorContext) -> np.ndarray:
    e = np.asarray(e)
    if e.shape != (ctx.layout.e_dof_count,):
        raise LayoutError("E array does not match layout")
    return ctx.derivative.matrix @ e


def apply_delta(h: np.ndarray, ctx: GeneratorContext) -> np.ndarray:
    h = np.asarray(h)
    if h.shape != (ctx.layout.h_dof_count,):
        raise LayoutError("H array does not match layout")
    return ctx.delta_matrix @ h


def apply_generator(u: FieldState, ctx: GeneratorContext, project: bool = True) -> FieldState:
    """A u = (eps^-1 delta H, mu^-1 d E), E-part restricted to free dofs."""
    u.check(ctx.layout)
    e_rate = ctx.grad_h @ u.h
    if project:
        e_rate = np.where(ctx.mask, 0.0, e_rate)
    return FieldState(e_rate, ctx.grad_e @ u.e)


@dataclass
class DenseAssembly:
    """Dense generator restricted to the free dofs (free E first, then all H)."""
    matrix: np.ndarray
    e_free: np.ndarray       # indices of free E dofs
    weights: np.ndarray      # Lambda-weighted control volume per free dof
    layout: DofLayout

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_e(self) -> int:
        return self.e_free.size

    def restrict(self, u: FieldState) -> np.ndarray:
        return np.concatenate([u.e[self.e_free], u.h])

    def extend(self, vec: np.ndarray) -> FieldState:
        e = np.zeros(self.layout.e_dof_count, dtype=vec.dtype)
        e[self.e_free] = vec[:self.n_e]
        return FieldState(e, vec[self.n_e:].copy())

    def symmetrized(self) -> np.ndarray:
        b = np.sqrt(self.weights)
        return (b[:, None] * self.matrix) / b[None, :]


def check_dense_cap(ctx: GeneratorContext, cap: int = DENSE_DOF_CAP) -> int:
    n = int(ctx.free.sum()) + ctx.layout.h_dof_count
    if n > cap:
        raise ValueError(f"{n} free dofs exceed the dense cap of {cap}; shrink the grid")
    return n


def assemble_dense(ctx: GeneratorContext, cap: int = DENSE_DOF_CAP) -> DenseAssembly:
    check_dense_cap(ctx, cap)
    e_free = np.flatnonzero(ctx.free)
    ne, nh = e_free.size, ctx.layout.h_dof_count
    s = np.zeros((ne + nh, ne + nh))
    s[:ne, ne:] = ctx.grad_h[e_free].toarray()
    s[ne:, :ne] = ctx.grad_e[:, e_free].toarray()
    w = np.concatenate([ctx.weights.w_e[e_free], ctx.weights.w_h])
    return DenseAssembly(s, e_free, w, ctx.layout)
