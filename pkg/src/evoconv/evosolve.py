"""Causal forward-elimination solver for (d0 M + A) u = f.

With the backward-difference derivative and a causal material law the
full space-time matrix is block lower triangular in time, so the solve
reduces to one spatial system per step: the instantaneous coefficient
of the law goes on the diagonal, all memory (cumulative sums,
convolutions, delays) moves to the right-hand side.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import matlaw, timeaxis
from .matlaw import MaterialLaw, d_to_matrix, estimate_positivity, law_operator_norm
from .space1d import BlockOperatorA, Field, field_norm

__all__ = [
    "Problem",
    "SolveReport",
    "SolverError",
    "solve",
    "lattice_norm",
    "continuity_bound",
    "verify_continuity_estimate",
]

_PIVOT_FLOOR = 1e-13


class SolverError(RuntimeError):
    pass


@dataclass
class Problem:
    """Data of (d0 M + A) u = f.

    A may be a BlockOperatorA, a scalar, per-block matrices, a full
    (samples x samples) matrix, or None for the pure time equation.
    """

    M: MaterialLaw
    A: object
    f: Field


@dataclass
class SolveReport:
    u: Field
    residual_norm: float
    lattice_norm: float
    bound_rhs: float
    elapsed: float
    f_norm: float
    m_norm: float
    c_estimate: float

    @property
    def nu(self):
        return self.u.grid.nu


class _SpatialPart:
    """Uniform interface over the admissible shapes of A."""

    def __init__(self, a, space):
        self.space = space
        if a is None:
            a = 0.0
        if isinstance(a, BlockOperatorA):
            expected = (a.grid.node_count, a.grid.edge_count)
            if space.sizes != expected:
                raise ValueError(
                    f"field blocks {space.sizes} do not match operator layout {expected}"
                )
            self.kind = "sparse"
            self.matrix = a.matrix
        elif sp.issparse(a):
            if a.shape != (space.total, space.total):
                raise ValueError(f"operator shape {a.shape} != ({space.total}, {space.total})")
            self.kind = "sparse"
            self.matrix = a.tocsr()
        elif np.isscalar(a):
            self.kind = "scalar"
            self.scalar = complex(a)
            self.matrix = None
        elif isinstance(a, (list, tuple)):
            mats = [d_to_matrix(m, space.sizes[i]) for i, m in enumerate(a)]
            self.kind = "dense"
            self.matrix = scipy.linalg.block_diag(*mats)
        else:
            a = np.asarray(a, dtype=complex)
            if a.shape != (space.total, space.total):
                raise ValueError(f"operator shape {a.shape} != ({space.total}, {space.total})")
            self.kind = "dense"
            self.matrix = a

    @property
    def is_diagonal(self):
        return self.kind == "scalar"

    def apply_data(self, data):
        if self.kind == "scalar":
            return self.scalar * data
        if self.kind == "sparse":
            return (self.matrix @ data.T).T
        return data @ self.matrix.T

    def add_to(self, diag_matrix_or_vec):
        """Return step matrix diag + A in the cheapest representation."""
        if self.kind == "scalar":
            if np.ndim(diag_matrix_or_vec) <= 1:
                return diag_matrix_or_vec + self.scalar, "diag"
            return diag_matrix_or_vec + self.scalar * np.eye(self.space.total), "dense"
        if self.kind == "sparse":
            if np.ndim(diag_matrix_or_vec) <= 1:
                diag = np.broadcast_to(diag_matrix_or_vec, (self.space.total,)).astype(complex)
                return (self.matrix + sp.diags(diag)).tocsc(), "sparse"
            return self.matrix.toarray() + diag_matrix_or_vec, "dense"
        if np.ndim(diag_matrix_or_vec) <= 1:
            return self.matrix + np.diag(
                np.broadcast_to(diag_matrix_or_vec, (self.space.total,)).astype(complex)
            ), "dense"
        return self.matrix + diag_matrix_or_vec, "dense"


def _expand_diag(diag_blocks, space):
    """Stepper diagonal -> flat vector, or dense matrix if any block is dense."""
    if any(np.ndim(d) == 2 for d in diag_blocks):
        mats = [d_to_matrix(d, space.sizes[i]) for i, d in enumerate(diag_blocks)]
        return scipy.linalg.block_diag(*mats)
    parts = [
        np.broadcast_to(np.asarray(d, dtype=complex), (space.sizes[i],))
        for i, d in enumerate(diag_blocks)
    ]
    return np.concatenate(parts)


class _StepSolver:
    def __init__(self, mat, kind, k):
        self.kind = kind
        if kind == "diag":
            if np.min(np.abs(mat)) <= _PIVOT_FLOOR:
                raise SolverError(
                    f"singular step matrix at step {k}: min pivot {np.min(np.abs(mat)):.3e}"
                )
            self.diag = mat
        elif kind == "sparse":
            try:
                self.lu = spla.splu(mat.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"singular step matrix at step {k}: {exc}") from exc
            piv = np.min(np.abs(self.lu.U.diagonal()))
            if piv <= _PIVOT_FLOOR:
                raise SolverError(f"singular step matrix at step {k}: min pivot {piv:.3e}")
        else:
            lu, piv = scipy.linalg.lu_factor(mat)
            small = np.min(np.abs(np.diag(lu)))
            if not np.isfinite(small) or small <= _PIVOT_FLOOR:
                raise SolverError(f"singular step matrix at step {k}: min pivot {small:.3e}")
            self.lu = (lu, piv)

    def __call__(self, rhs):
        if self.kind == "diag":
            return rhs / self.diag
        if self.kind == "sparse":
            return self.lu.solve(rhs)
        return scipy.linalg.lu_solve(self.lu, rhs)


def solve(problem: Problem, *, c=None, m_norm=None, with_bound=True,
          positivity_probe=True, seed=0) -> SolveReport:
    """Solve (d0 M + A) u = f by block forward elimination in time."""
    t0 = time.perf_counter()
    f = problem.f
    grid, space = f.grid, f.space
    law = problem.M
    if not law.causal:
        raise SolverError("material law has a non-causal history kind")
    stepper = law.make_stepper(grid, space)
    a_part = _SpatialPart(problem.A, space)

    if positivity_probe:
        _probe_positivity(law, grid, space, seed=seed)

    dt = grid.dt
    u = np.empty((grid.steps, space.total), dtype=complex)
    m_prev = np.zeros(space.total, dtype=complex)
    cached_solver = None
    reuse = not law.time_dependent
    for k in range(grid.steps):
        if cached_solver is None or not reuse:
            diag = _expand_diag(stepper.diag(k), space)
            mat, kind = a_part.add_to(diag / dt)
            cached_solver = _StepSolver(mat, kind, k)
        hist = stepper.history(k)
        rhs = f.data[k] - (hist - m_prev) / dt
        u[k] = cached_solver(rhs)
        m_prev = stepper.advance(k, u[k])

    u_field = Field(grid, space, u)
    residual = (
        timeaxis.d0_values(law.apply_data(u, grid), dt) + a_part.apply_data(u) - f.data
    )
    residual_norm = field_norm(Field(grid, space, residual))
    f_norm = field_norm(f)

    lat = lattice_norm(u_field, problem.A)

    bound = float("nan")
    if with_bound:
        if m_norm is None:
            m_norm = law_operator_norm(law, grid, space, tol=1e-7, seed=seed)
        if c is None:
            if grid.steps * space.total <= 4096:
                c = estimate_positivity(law, grid, space, seed=seed).c_estimate
            else:
                warnings.warn(
                    "no positivity constant supplied and grid too large to "
                    "estimate one; continuity bound not computed"
                )
        if c is not None and c > 0:
            bound = continuity_bound(grid.nu, m_norm, c) * f_norm

    return SolveReport(
        u=u_field,
        residual_norm=residual_norm,
        lattice_norm=lat,
        bound_rhs=bound,
        elapsed=time.perf_counter() - t0,
        f_norm=f_norm,
        m_norm=float(m_norm) if m_norm is not None else float("nan"),
        c_estimate=float(c) if c is not None else float("nan"),
    )


def _probe_positivity(law, grid, space, probes=6, seed=0):
    """Cheap random-quotient probe of the positivity condition."""
    rng = np.random.default_rng(seed)
    sw = space.sample_weights
    worst = np.inf
    for _ in range(probes):
        a = grid.horizon * rng.uniform(0.3, 1.1)
        mask = (grid.times < a)[:, None]
        data = rng.standard_normal((grid.steps, space.total)) + 1j * rng.standard_normal(
            (grid.steps, space.total)
        )
        trunc = np.where(mask, data, 0.0)
        num = np.einsum(
            "k,i,ki->",
            grid.step_weights,
            sw,
            timeaxis.d0_values(law.apply_data(data, grid), grid.dt) * np.conj(trunc),
        ).real
        den = np.einsum("k,i,ki->", grid.step_weights, sw, data * np.conj(trunc)).real
        if den > 1e-14:
            worst = min(worst, num / den)
    if worst <= 0:
        warnings.warn(
            f"positivity probe found a nonpositive quotient ({worst:.3e}); "
            "the problem may be ill-posed, proceeding on solver pivots"
        )
    elif worst <= 0.01 * grid.nu:
        warnings.warn(
            f"positivity is marginal (probe quotient {worst:.3e}); proceeding"
        )


def lattice_norm(u: Field, a) -> float:
    """Graph norm |d0^{-1} (A + 1) u| in the weighted metric."""
    a_part = _SpatialPart(a, u.space)
    z = a_part.apply_data(u.data) + u.data
    integ = timeaxis.d0_inverse_values(z, u.grid.dt)
    return field_norm(Field(u.grid, u.space, integ))


def continuity_bound(nu, m_norm, c):
    """Constant (1/nu + |M|/c + 1/(c nu)) of the a-priori estimate."""
    return 1.0 / nu + m_norm / c + 1.0 / (c * nu)


def verify_continuity_estimate(report: SolveReport, m_norm=None, c=None, slack=0.05):
    """Check |u|_{-1,1} <= (1/nu + |M|/c + 1/(c nu)) |f| with slack."""
    m_norm = report.m_norm if m_norm is None else m_norm
    c = report.c_estimate if c is None else c
    bound = continuity_bound(report.nu, m_norm, c) * report.f_norm
    if report.f_norm == 0.0:
        return report.lattice_norm <= 1e-12
    return report.lattice_norm <= bound * (1.0 + slack)
