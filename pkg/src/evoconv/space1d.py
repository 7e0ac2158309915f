"""Staggered 1D operators on (0,1) and space-time fields.

The derivative pair is mimetic: the Dirichlet derivative acts on values
at interior nodes (boundary zeros are built into the stencil) and maps
to cell midpoints; the maximal derivative is minus its transpose, so the
assembled 2x2 block operator is skew-adjoint by construction, not by
approximation.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .timeaxis import TimeGrid

__all__ = [
    "SpaceGrid",
    "BlockOperatorA",
    "BlockSpace",
    "Field",
    "assemble_block_A",
    "resolvent_A",
    "project_out_mean",
    "field_inner",
    "field_norm",
]


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform staggered grid: N cells, h = 1/N.

    The u-block lives on the N-1 interior nodes (Dirichlet boundary
    values are implicit zeros), the v-block on the N cell midpoints.
    """

    cells: int

    def __post_init__(self):
        if self.cells < 4:
            raise ValueError(f"need at least 4 cells, got {self.cells}")

    @property
    def h(self):
        return 1.0 / self.cells

    @property
    def node_count(self):
        return self.cells - 1

    @property
    def edge_count(self):
        return self.cells

    @property
    def interior_nodes(self):
        return np.arange(1, self.cells) * self.h

    @property
    def midpoints(self):
        return (np.arange(self.cells) + 0.5) * self.h


class BlockOperatorA:
    """Skew-adjoint block [[0, d1_max], [d1_dirichlet, 0]].

    d1_dirichlet maps interior-node values to cells, d1_max maps cell
    values back to interior nodes; d1_max = -d1_dirichlet^T exactly.
    """

    def __init__(self, grid: SpaceGrid):
        self.grid = grid
        n = grid.cells
        h = grid.h
        ddir = sp.lil_matrix((n, n - 1))
        for j in range(n):
            if j < n - 1:
                ddir[j, j] = 1.0 / h
            if j > 0:
                ddir[j, j - 1] = -1.0 / h
        self.d1_dirichlet = ddir.tocsr()
        self.d1_max = (-self.d1_dirichlet.T).tocsr()
        self._resolvent_cache = {}
        self._lock = threading.Lock()

    @property
    def matrix(self):
        n_nodes = self.grid.node_count
        n_cells = self.grid.edge_count
        return sp.bmat(
            [
                [sp.csr_matrix((n_nodes, n_nodes)), self.d1_max],
                [self.d1_dirichlet, sp.csr_matrix((n_cells, n_cells))],
            ],
            format="csr",
        )

    def apply(self, u_nodes, v_cells):
        return self.d1_max @ v_cells, self.d1_dirichlet @ u_nodes

    def apply_flat(self, w):
        # w stacks (nodes, cells) along the last axis
        n = self.grid.node_count
        out = np.empty_like(np.asarray(w, dtype=complex))
        out[..., :n] = (self.d1_max @ w[..., n:].T).T
        out[..., n:] = (self.d1_dirichlet @ w[..., :n].T).T
        return out

    def resolvent(self, lam, rhs):
        """Solve (A + lam) w = rhs for Re(lam) > 0; factorizations are cached."""
        if not np.real(lam) > 0:
            raise ValueError(f"resolvent requires Re(lambda) > 0, got {lam}")
        key = complex(lam)
        with self._lock:
            lu = self._resolvent_cache.get(key)
            if lu is None:
                total = self.grid.node_count + self.grid.edge_count
                mat = (self.matrix + key * sp.identity(total)).tocsc()
                try:
                    lu = spla.splu(mat)
                except RuntimeError as exc:  # pragma: no cover - defensive
                    raise RuntimeError(f"singular factorization for lambda={lam}: {exc}")
                self._resolvent_cache[key] = lu
        rhs = np.asarray(rhs, dtype=complex)
        if rhs.ndim == 1:
            return lu.solve(rhs)
        return lu.solve(rhs.T).T


def assemble_block_A(grid: SpaceGrid) -> BlockOperatorA:
    return BlockOperatorA(grid)


def resolvent_A(a: BlockOperatorA, lam, rhs):
    return a.resolvent(lam, rhs)


def project_out_mean(values, axis=-1):
    """Subtract the discrete mean; orthogonal projection onto the range
    of the Dirichlet derivative (mean-zero subspace) in 1D."""
    values = np.asarray(values, dtype=complex)
    return values - values.mean(axis=axis, keepdims=True)


class BlockSpace:
    """Spatial sample layout of a field: named blocks with coordinates
    and a uniform quadrature weight per block."""

    def __init__(self, names, coords, weights):
        self.names = tuple(names)
        self.coords = tuple(np.asarray(c, dtype=float) for c in coords)
        self.weights = tuple(float(w) for w in weights)
        self.sizes = tuple(len(c) for c in self.coords)
        self.total = sum(self.sizes)
        offs = np.concatenate([[0], np.cumsum(self.sizes)])
        self.slices = tuple(slice(int(offs[i]), int(offs[i + 1])) for i in range(len(self.sizes)))
        self.sample_weights = np.concatenate(
            [np.full(n, w) for n, w in zip(self.sizes, self.weights)]
        )

    @classmethod
    def staggered(cls, grid: SpaceGrid):
        return cls(("nodes", "cells"), (grid.interior_nodes, grid.midpoints), (grid.h, grid.h))

    @classmethod
    def batch(cls, coords, weight=None, name="batch"):
        coords = np.asarray(coords, dtype=float)
        if weight is None:
            weight = 1.0 / len(coords)
        return cls((name,), (coords,), (weight,))

    @classmethod
    def point(cls):
        return cls(("point",), (np.array([0.0]),), (1.0,))

    @property
    def n_blocks(self):
        return len(self.names)

    def matches(self, other):
        return (
            self.names == other.names
            and self.sizes == other.sizes
            and all(np.allclose(a, b) for a, b in zip(self.coords, other.coords))
        )

    def __repr__(self):
        parts = ", ".join(f"{n}[{s}]" for n, s in zip(self.names, self.sizes))
        return f"BlockSpace({parts})"


@dataclass
class Field:
    """Space-time array (steps x spatial samples) over a block layout."""

    grid: TimeGrid
    space: BlockSpace
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        if data.shape != (self.grid.steps, self.space.total):
            raise ValueError(
                f"field shape {data.shape} does not match "
                f"(steps, samples) = ({self.grid.steps}, {self.space.total})"
            )
        self.data = data

    @classmethod
    def zeros(cls, grid, space):
        return cls(grid, space, np.zeros((grid.steps, space.total), dtype=complex))

    @classmethod
    def from_blocks(cls, grid, space, blocks):
        out = cls.zeros(grid, space)
        for i, b in enumerate(blocks):
            if b is not None:
                out.data[:, space.slices[i]] = b
        return out

    def block(self, i):
        return self.data[:, self.space.slices[i]]

    @property
    def block_u(self):
        return self.block(0)

    @property
    def block_v(self):
        return self.block(1)

    def copy(self):
        return Field(self.grid, self.space, self.data.copy())

    def norm(self):
        return field_norm(self)


def field_inner(a: Field, b: Field) -> complex:
    """Weighted space-time inner product sum_k w_k sum_i sw_i a conj(b)."""
    if a.grid != b.grid or not a.space.matches(b.space):
        raise ValueError("fields live on different grids")
    w = a.grid.step_weights
    sw = a.space.sample_weights
    return complex(np.einsum("k,i,ki->", w, sw, a.data * np.conj(b.data)))


def field_norm(a: Field) -> float:
    return math.sqrt(max(field_inner(a, a).real, 0.0))
