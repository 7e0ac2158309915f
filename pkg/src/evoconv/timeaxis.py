"""Exponentially weighted time axis.

Signals live on a uniform causal grid t_k = k*dt, k = 0..K-1, and are
implicitly zero for t < 0.  The inner product carries the exponential
weight exp(-2*nu*t), which makes the backward-difference derivative d0
boundedly invertible: its inverse is the plain cumulative sum, an exact
inverse pair by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TimeGrid",
    "TimeSignal",
    "SpectralSignal",
    "GridMismatchError",
    "OperatorNormError",
    "weighted_inner_product",
    "weighted_norm",
    "apply_d0",
    "apply_d0_inverse",
    "fourier_laplace",
    "inverse_fourier_laplace",
    "apply_spectral_symbol",
    "truncate_before",
    "time_shift",
    "operator_norm",
    "d0_inverse_norm_exact",
]


class GridMismatchError(ValueError):
    pass


class OperatorNormError(RuntimeError):
    """Power iteration did not converge; carries the last estimate."""

    def __init__(self, message, last_estimate):
        super().__init__(message)
        self.last_estimate = last_estimate


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, (K-1)*dt] carrying the weight nu."""

    nu: float
    dt: float
    steps: int

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.steps < 2:
            raise ValueError(f"need at least 2 steps, got {self.steps}")

    @property
    def times(self):
        return np.arange(self.steps) * self.dt

    @property
    def horizon(self):
        return (self.steps - 1) * self.dt

    @property
    def step_weights(self):
        """Quadrature weights exp(-2*nu*t_k)*dt of the weighted norm."""
        return np.exp(-2.0 * self.nu * self.times) * self.dt


@dataclass(frozen=True)
class TimeSignal:
    """Complex signal on a TimeGrid; values may be (K,) or (K, m)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape[0] != self.grid.steps:
            raise ValueError(
                f"signal length {values.shape[0]} does not match grid steps {self.grid.steps}"
            )
        object.__setattr__(self, "values", values)

    def norm(self):
        return weighted_norm(self)


@dataclass(frozen=True)
class SpectralSignal:
    """Discrete Fourier-Laplace image of a TimeSignal."""

    grid: TimeGrid
    coefficients: np.ndarray

    @property
    def frequencies(self):
        """Angular frequencies xi_m matching the coefficient layout."""
        return 2.0 * np.pi * np.fft.fftfreq(self.grid.steps, d=self.grid.dt)


def _check_same_grid(u, v):
    if u.grid != v.grid:
        raise GridMismatchError(f"grids differ: {u.grid} vs {v.grid}")


def weighted_inner_product(u: TimeSignal, v: TimeSignal) -> complex:
    """<u, v>_nu = sum_k u_k conj(v_k) exp(-2 nu t_k) dt (summed over components)."""
    _check_same_grid(u, v)
    w = u.grid.step_weights
    prod = u.values * np.conj(v.values)
    if prod.ndim > 1:
        prod = prod.sum(axis=tuple(range(1, prod.ndim)))
    return complex(np.sum(prod * w))


def weighted_norm(u: TimeSignal) -> float:
    return math.sqrt(max(weighted_inner_product(u, u).real, 0.0))


def d0_values(values, dt):
    """Backward difference with zero history: (u_k - u_{k-1})/dt, u_{-1} = 0."""
    out = np.empty_like(values)
    out[0] = values[0] / dt
    out[1:] = (values[1:] - values[:-1]) / dt
    return out


def d0_inverse_values(values, dt):
    """Causal cumulative sum dt * sum_{j<=k} f_j; exact inverse of d0_values."""
    return np.cumsum(values, axis=0) * dt


def d0_adjoint_values(values, grid):
    """Adjoint of d0 in the weighted inner product."""
    r = math.exp(-2.0 * grid.nu * grid.dt)
    out = np.array(values, dtype=complex, copy=True)
    out[:-1] -= r * values[1:]
    return out / grid.dt


def d0_inverse_adjoint_values(values, grid):
    """Adjoint of the cumulative sum: weighted reverse cumulative sum."""
    q = np.exp(-2.0 * grid.nu * grid.times)
    if values.ndim > 1:
        q = q.reshape((-1,) + (1,) * (values.ndim - 1))
    tail = np.cumsum((q * values)[::-1], axis=0)[::-1]
    return grid.dt * tail / q


def apply_d0(u: TimeSignal) -> TimeSignal:
    return TimeSignal(u.grid, d0_values(u.values, u.grid.dt))


def apply_d0_inverse(f: TimeSignal) -> TimeSignal:
    return TimeSignal(f.grid, d0_inverse_values(f.values, f.grid.dt))


def d0_inverse_norm_exact(grid: TimeGrid) -> float:
    """Asymptotic weighted operator norm dt/(1 - exp(-nu*dt)) of the cumulative sum."""
    return grid.dt / (1.0 - math.exp(-grid.nu * grid.dt))


def fourier_laplace(u: TimeSignal) -> SpectralSignal:
    """Unitary DFT of the weighted signal exp(-nu t_k) u_k."""
    damped = u.values * _damping(u.grid, u.values.ndim)
    return SpectralSignal(u.grid, np.fft.fft(damped, axis=0, norm="ortho"))


def inverse_fourier_laplace(s: SpectralSignal) -> TimeSignal:
    damped = np.fft.ifft(s.coefficients, axis=0, norm="ortho")
    return TimeSignal(s.grid, damped / _damping(s.grid, damped.ndim))


def _damping(grid, ndim):
    d = np.exp(-grid.nu * grid.times)
    return d.reshape((-1,) + (1,) * (ndim - 1))


def spectral_symbol_points(grid: TimeGrid, pad_factor: int = 4):
    """Points z_m = 1/(i xi_m + nu) on which spectral multipliers are evaluated."""
    n = pad_factor * grid.steps
    xi = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.dt)
    return 1.0 / (1j * xi + grid.nu)


def apply_spectral_symbol(u, symbol, pad_factor: int = 4):
    """Apply the operator symbol(d0^{-1}) spectrally with zero padding.

    ``symbol`` is a callable evaluated on the points 1/(i*xi + nu).  The
    zero padding pushes the circular wrap-around below exp(-nu*T*(pad-1)).
    Accepts a TimeSignal or a raw (K, ...) array plus grid.
    """
    if isinstance(u, TimeSignal):
        return TimeSignal(u.grid, apply_spectral_symbol_values(u.values, u.grid, symbol, pad_factor))
    raise TypeError("expected a TimeSignal")


def apply_spectral_symbol_values(values, grid, symbol, pad_factor=4):
    k = grid.steps
    n = pad_factor * k
    damped = np.zeros((n,) + values.shape[1:], dtype=complex)
    damped[:k] = values * _damping(grid, values.ndim)
    mult = np.asarray(symbol(spectral_symbol_points(grid, pad_factor)), dtype=complex)
    mult = mult.reshape((-1,) + (1,) * (values.ndim - 1))
    out = np.fft.ifft(mult * np.fft.fft(damped, axis=0), axis=0)[:k]
    return out / _damping(grid, values.ndim)


def spectral_impulse_response(grid: TimeGrid, symbol, pad_factor: int = 4):
    """Causal kernel h with symbol(d0^{-1}) u = sum_j h_{k-j} u_j.

    The acausal wrap-around part of the padded inverse transform is
    discarded, so convolution with h is exactly causal.
    """
    impulse = np.zeros(grid.steps)
    impulse[0] = 1.0
    return apply_spectral_symbol_values(impulse, grid, symbol, pad_factor)


def truncate_before(u: TimeSignal, a: float) -> TimeSignal:
    """Zero all entries with t_k >= a (spectral projection onto the past of a)."""
    keep = u.grid.times < a
    mask = keep.reshape((-1,) + (1,) * (u.values.ndim - 1))
    return TimeSignal(u.grid, np.where(mask, u.values, 0.0))


def shift_steps(grid: TimeGrid, h: float) -> int:
    ratio = h / grid.dt
    steps = round(ratio)
    if abs(ratio - steps) > 1e-9 * max(1.0, abs(ratio)):
        lo, hi = math.floor(ratio) * grid.dt, math.ceil(ratio) * grid.dt
        raise ValueError(
            f"shift h={h} is not an integer multiple of dt={grid.dt}; "
            f"nearest admissible values are {lo:.12g} and {hi:.12g}"
        )
    return steps


def time_shift(u: TimeSignal, h: float) -> TimeSignal:
    """tau_h u = u(. + h) with zero fill; h must be grid aligned.

    Negative h delays the signal (causal direction).
    """
    ell = shift_steps(u.grid, h)
    out = np.zeros_like(u.values)
    if ell >= 0:
        if ell < u.grid.steps:
            out[: u.grid.steps - ell] = u.values[ell:]
    else:
        out[-ell:] = u.values[: u.grid.steps + ell]
    return TimeSignal(u.grid, out)


def _flat_weights(grid, shape):
    w = grid.step_weights
    extra = int(np.prod(shape[1:], dtype=int)) if len(shape) > 1 else 1
    return np.repeat(w, extra)


def power_iteration_norm(apply_fn, adjoint_fn, shape, weights_flat, tol=1e-8,
                         max_iter=10000, seed=0):
    """Largest singular value via power iteration on adjoint o apply.

    ``weights_flat`` defines the inner product used for the Rayleigh
    quotient; apply/adjoint already act with respect to that metric.
    """
    rng = np.random.default_rng(seed)
    size = int(np.prod(shape, dtype=int))
    v = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    v = v.reshape(shape)

    def wdot(a, b):
        return np.sum(weights_flat * (a.ravel() * np.conj(b.ravel())))

    v = v / math.sqrt(abs(wdot(v, v)))
    lam_old = None
    for _ in range(max_iter):
        z = adjoint_fn(apply_fn(v))
        lam = wdot(z, v).real
        nz = math.sqrt(abs(wdot(z, z)))
        if nz == 0.0:
            return 0.0
        v = z / nz
        if lam_old is not None and abs(lam - lam_old) <= tol * max(abs(lam), 1e-300):
            return math.sqrt(max(lam, 0.0))
        lam_old = lam
    raise OperatorNormError(
        f"power iteration did not converge within {max_iter} iterations",
        math.sqrt(max(lam_old, 0.0)),
    )


_DENSE_ASSEMBLY_CAP = 2048


def operator_norm(op, grid: TimeGrid, adjoint=None, tol=1e-8, max_iter=10000, seed=0):
    """Weighted operator norm of a linear map on signals over ``grid``.

    ``op`` maps TimeSignal -> TimeSignal (or value arrays of one signal).
    Without an explicit weighted adjoint the matrix is assembled first,
    which is only allowed on grids with at most 2048 steps.
    """
    apply_vals = _as_value_op(op, grid)
    if adjoint is not None:
        adj_vals = _as_value_op(adjoint, grid)
    else:
        if grid.steps > _DENSE_ASSEMBLY_CAP:
            raise ValueError(
                "no adjoint given and grid too large to assemble the matrix; "
                "pass adjoint= for grids beyond 2048 steps"
            )
        mat = np.empty((grid.steps, grid.steps), dtype=complex)
        basis = np.zeros(grid.steps, dtype=complex)
        for j in range(grid.steps):
            basis[j] = 1.0
            mat[:, j] = apply_vals(basis)
            basis[j] = 0.0
        w = grid.step_weights

        def adj_vals(v):
            return (mat.conj().T @ (w * v)) / w

    weights = _flat_weights(grid, (grid.steps,))
    return power_iteration_norm(apply_vals, adj_vals, (grid.steps,), weights,
                                tol=tol, max_iter=max_iter, seed=seed)


def _as_value_op(op, grid):
    """Adapt a callable on TimeSignals or on raw value arrays to arrays."""

    def call(values):
        try:
            out = op(values)
        except (TypeError, AttributeError):
            out = op(TimeSignal(grid, values))
        if isinstance(out, TimeSignal):
            out = out.values
        return np.asarray(out, dtype=complex)

    return call
