"""Material-law algebra: bounded space-time coefficient operators.

A law acts on fields (steps x samples).  The algebra is closed under
sums, products (composition), scaling and the memory primitives: the
causal cumulative sum, causal convolutions, and spectral functions of
the inverse time derivative.  Every kind knows three things: how to
apply itself, how to apply its adjoint in the weighted inner product,
and how to expose itself to the causal time-stepping solver through a
stepper (instantaneous coefficient + history).

Product([A, B]) composes right-to-left: B is applied first.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.signal
import scipy.sparse.linalg as spla

from . import timeaxis
from .space1d import BlockSpace, Field
from .timeaxis import TimeGrid, power_iteration_norm

__all__ = [
    "MaterialLaw",
    "SpaceMul",
    "Oscillated",
    "SpaceOperator",
    "TimeMul",
    "SpaceTimeMul",
    "TimeConvolution",
    "Hardy",
    "D0Inverse",
    "Sum",
    "Product",
    "Scaled",
    "BlockDiag",
    "CustomLaw",
    "NeumannInverse",
    "PositivityReport",
    "CausalityReport",
    "identity",
    "space_mul",
    "oscillated",
    "time_shift_law",
    "indicator",
    "fractional_part",
    "apply",
    "commutator_with_d0",
    "check_causality",
    "estimate_positivity",
    "neumann_inverse",
    "weak_limit_coefficient",
    "law_operator_norm",
    "commutator_operator_norm",
    "load_kernel_file",
    "ContractionError",
    "PositivityIterationError",
    "NotSteppableError",
]


class ContractionError(RuntimeError):
    pass


class NotSteppableError(TypeError):
    pass


class PositivityIterationError(RuntimeError):
    def __init__(self, message, partial_report):
        super().__init__(message)
        self.partial_report = partial_report


# ---------------------------------------------------------------------------
# diagonal-coefficient algebra: scalar | vector | matrix per block


def d_apply(d, x):
    if np.ndim(d) == 2:
        return d @ x
    return d * x


def d_mul(a, b, size):
    if np.ndim(a) == 2 or np.ndim(b) == 2:
        return d_to_matrix(a, size) @ d_to_matrix(b, size)
    return a * b


def d_add(a, b, size):
    if np.ndim(a) == 2 or np.ndim(b) == 2:
        return d_to_matrix(a, size) + d_to_matrix(b, size)
    return a + b


def d_to_matrix(d, size):
    if np.ndim(d) == 2:
        return np.asarray(d, dtype=complex)
    if np.ndim(d) == 1:
        return np.diag(np.asarray(d, dtype=complex))
    return complex(d) * np.eye(size, dtype=complex)


# ---------------------------------------------------------------------------


class Stepper:
    """Causal per-step view of a law: (M u)_k = diag(k) u_k + history(k)."""

    def diag(self, k):
        raise NotImplementedError

    def history(self, k):
        raise NotImplementedError

    def advance(self, k, x_k):
        raise NotImplementedError


class MaterialLaw:
    causal = True
    time_dependent = False

    def apply(self, field: Field) -> Field:
        if field.grid.steps != field.data.shape[0]:
            raise ValueError("corrupt field")
        return Field(field.grid, field.space, self.apply_data(field.data, field.grid))

    def adjoint_apply(self, field: Field) -> Field:
        return Field(field.grid, field.space, self.adjoint_data(field.data, field.grid))

    def apply_data(self, data, grid):
        raise NotImplementedError

    def adjoint_data(self, data, grid):
        raise NotImplementedError

    def make_stepper(self, grid, space) -> Stepper:
        raise NotSteppableError(f"{type(self).__name__} cannot be time-stepped")

    def __add__(self, other):
        return Sum([self, other])

    def __rmul__(self, c):
        return Scaled(c, self)


class _ZeroHistory(Stepper):
    def __init__(self, law, grid, space):
        self.law = law
        self.grid = grid
        self.space = space

    def history(self, k):
        return np.zeros(self.space.total, dtype=complex)

    def advance(self, k, x_k):
        return self._mul(k, x_k)


class SpaceMul(MaterialLaw):
    """Pointwise multiplication by per-block functions of x."""

    def __init__(self, space: BlockSpace, values):
        self.space = space
        self.block_values = _resolve_block_values(space, values)
        self.full = np.concatenate(
            [np.broadcast_to(v, (n,)) for v, n in zip(self.block_values, space.sizes)]
        ).astype(complex)

    def apply_data(self, data, grid):
        return data * self.full[None, :]

    def adjoint_data(self, data, grid):
        return data * np.conj(self.full)[None, :]

    def make_stepper(self, grid, space):
        law = self

        class S(_ZeroHistory):
            def diag(self, k):
                return [law.block_values[i] for i in range(space.n_blocks)]

            def _mul(self, k, x_k):
                return law.full * x_k

        return S(self, grid, space)


class Oscillated(SpaceMul):
    """x -> g({n x}) sampled on the block coordinates."""

    def __init__(self, space, g, n, blocks=None):
        self.base = g
        self.n = int(n)
        values = []
        for i in range(space.n_blocks):
            if blocks is not None and i not in blocks:
                values.append(1.0)
            else:
                values.append(np.asarray(g(fractional_part(self.n * space.coords[i])), dtype=complex))
        super().__init__(space, values)


class SpaceOperator(MaterialLaw):
    """Blockwise dense spatial operators (matrix per block)."""

    def __init__(self, space: BlockSpace, mats):
        self.space = space
        self.mats = []
        for i, m in enumerate(mats):
            size = space.sizes[i]
            if m is None:
                m = 0.0
            self.mats.append(d_to_matrix(m, size) if np.ndim(m) == 2 else m)

    def apply_data(self, data, grid):
        out = np.empty_like(np.asarray(data, dtype=complex))
        for i, sl in enumerate(self.space.slices):
            m = self.mats[i]
            out[:, sl] = data[:, sl] @ m.T if np.ndim(m) == 2 else data[:, sl] * m
        return out

    def adjoint_data(self, data, grid):
        out = np.empty_like(np.asarray(data, dtype=complex))
        for i, sl in enumerate(self.space.slices):
            m = self.mats[i]
            out[:, sl] = data[:, sl] @ np.conj(m) if np.ndim(m) == 2 else data[:, sl] * np.conj(m)
        return out

    def make_stepper(self, grid, space):
        law = self

        class S(_ZeroHistory):
            def diag(self, k):
                return list(law.mats)

            def _mul(self, k, x_k):
                out = np.empty_like(x_k)
                for i, sl in enumerate(space.slices):
                    m = law.mats[i]
                    out[sl] = m @ x_k[sl] if np.ndim(m) == 2 else m * x_k[sl]
                return out

        return S(self, grid, space)


class TimeMul(MaterialLaw):
    """Multiplication by kappa(t); kappa is a vectorized callable."""

    time_dependent = True

    def __init__(self, kappa):
        self.kappa = kappa

    def _values(self, grid):
        v = np.asarray(self.kappa(grid.times), dtype=complex)
        return np.broadcast_to(v, (grid.steps,))

    def apply_data(self, data, grid):
        return data * self._values(grid)[:, None]

    def adjoint_data(self, data, grid):
        return data * np.conj(self._values(grid))[:, None]

    def make_stepper(self, grid, space):
        vals = self._values(grid)

        class S(Stepper):
            def diag(self, k):
                return [vals[k]] * space.n_blocks

            def history(self, k):
                return np.zeros(space.total, dtype=complex)

            def advance(self, k, x_k):
                return vals[k] * x_k

        return S()


class SpaceTimeMul(MaterialLaw):
    """Multiplication by g(t, x); g must broadcast over arrays."""

    time_dependent = True

    def __init__(self, space: BlockSpace, g):
        self.space = space
        self.g = g
        self.x_full = np.concatenate(space.coords)

    def _table(self, grid):
        return np.asarray(self.g(grid.times[:, None], self.x_full[None, :]), dtype=complex)

    def apply_data(self, data, grid):
        return data * self._table(grid)

    def adjoint_data(self, data, grid):
        return data * np.conj(self._table(grid))

    def make_stepper(self, grid, space):
        tab = self._table(grid)

        class S(Stepper):
            def diag(self, k):
                return [tab[k, sl] for sl in space.slices]

            def history(self, k):
                return np.zeros(space.total, dtype=complex)

            def advance(self, k, x_k):
                return tab[k] * x_k

        return S()


class _ToeplitzLaw(MaterialLaw):
    """Causal convolution (M u)_k = sum_{j<=k} h_{k-j} u_j along time."""

    def _kernel(self, grid):
        raise NotImplementedError

    def apply_data(self, data, grid):
        h = self._kernel(grid)
        out = scipy.signal.fftconvolve(data, h[:, None], axes=0)[: grid.steps]
        return np.ascontiguousarray(out)

    def adjoint_data(self, data, grid):
        h = self._kernel(grid)
        q = np.exp(-2.0 * grid.nu * grid.times)[:, None]
        damped = data * q
        corr = scipy.signal.fftconvolve(damped, np.conj(h[::-1])[:, None], axes=0)
        return np.ascontiguousarray(corr[grid.steps - 1 :]) / q

    def make_stepper(self, grid, space):
        h = self._kernel(grid)

        class S(Stepper):
            def __init__(self):
                self.inputs = np.zeros((grid.steps, space.total), dtype=complex)

            def diag(self, k):
                return [h[0]] * space.n_blocks

            def history(self, k):
                if k == 0:
                    return np.zeros(space.total, dtype=complex)
                return h[1 : k + 1][::-1] @ self.inputs[:k]

            def advance(self, k, x_k):
                self.inputs[k] = x_k
                return h[: k + 1][::-1] @ self.inputs[: k + 1]

        return S()


class TimeConvolution(_ToeplitzLaw):
    """Causal discrete convolution (kappa * u)_k = dt sum_{j<=k} kappa_{k-j} u_j."""

    def __init__(self, kernel):
        # kernel: TimeSignal (values on t >= 0) bound to the working grid
        self.kernel = kernel

    def _kernel(self, grid):
        if kernel_grid := getattr(self.kernel, "grid", None):
            if kernel_grid != grid:
                raise ValueError("convolution kernel lives on a different grid")
            vals = self.kernel.values
        else:
            vals = np.asarray(self.kernel, dtype=complex)
        return vals * grid.dt

    def weighted_l1(self, grid):
        """Young bound dt * sum |kappa_j| exp(-nu t_j) on the operator norm."""
        vals = self._kernel(grid)
        return float(np.sum(np.abs(vals) * np.exp(-grid.nu * grid.times)))


class Hardy(_ToeplitzLaw):
    """Spectral function M(d0^{-1}) of the inverse time derivative.

    ``symbol`` is evaluated on the points 1/(i xi + nu); ``radius`` is
    the disc parameter of the symbol, which must exceed 1/(2 nu).  The
    canonical action is the causal convolution with the impulse
    response of the padded spectral multiplier, so causality is exact.
    """

    def __init__(self, symbol, radius, pad_factor=4):
        self.symbol = symbol
        self.radius = float(radius)
        self.pad_factor = int(pad_factor)
        self._cache = {}
        self._lock = threading.Lock()

    def _kernel(self, grid):
        if not self.radius > 0.5 / grid.nu:
            raise ValueError(
                f"Hardy law needs radius > 1/(2 nu) = {0.5 / grid.nu}, got {self.radius}"
            )
        key = (grid.nu, grid.dt, grid.steps, self.pad_factor)
        with self._lock:
            h = self._cache.get(key)
            if h is None:
                h = timeaxis.spectral_impulse_response(grid, self.symbol, self.pad_factor)
                self._cache[key] = h
        return h


class D0Inverse(MaterialLaw):
    """The causal inverse time derivative (cumulative sum)."""

    def apply_data(self, data, grid):
        return np.cumsum(data, axis=0) * grid.dt

    def adjoint_data(self, data, grid):
        return timeaxis.d0_inverse_adjoint_values(data, grid)

    def make_stepper(self, grid, space):
        dt = grid.dt

        class S(Stepper):
            def __init__(self):
                self.acc = np.zeros(space.total, dtype=complex)

            def diag(self, k):
                return [dt] * space.n_blocks

            def history(self, k):
                return self.acc.copy()

            def advance(self, k, x_k):
                self.acc = self.acc + dt * x_k
                return self.acc.copy()

        return S()


class Sum(MaterialLaw):
    def __init__(self, terms):
        self.terms = list(terms)

    @property
    def causal(self):
        return all(t.causal for t in self.terms)

    @property
    def time_dependent(self):
        return any(t.time_dependent for t in self.terms)

    def apply_data(self, data, grid):
        out = self.terms[0].apply_data(data, grid)
        for t in self.terms[1:]:
            out = out + t.apply_data(data, grid)
        return out

    def adjoint_data(self, data, grid):
        out = self.terms[0].adjoint_data(data, grid)
        for t in self.terms[1:]:
            out = out + t.adjoint_data(data, grid)
        return out

    def make_stepper(self, grid, space):
        subs = [t.make_stepper(grid, space) for t in self.terms]
        const = not self.time_dependent

        class S(Stepper):
            def __init__(self):
                self._cache = None

            def diag(self, k):
                if const and self._cache is not None:
                    return self._cache
                diags = [s.diag(k) for s in subs]
                out = diags[0]
                for d in diags[1:]:
                    out = [d_add(a, b, space.sizes[i]) for i, (a, b) in enumerate(zip(out, d))]
                if const:
                    self._cache = out
                return out

            def history(self, k):
                return sum(s.history(k) for s in subs)

            def advance(self, k, x_k):
                return sum(s.advance(k, x_k) for s in subs)

        return S()


class Product(MaterialLaw):
    """Composition; Product([A, B]) u = A (B u)."""

    def __init__(self, factors):
        self.factors = list(factors)

    @property
    def causal(self):
        return all(t.causal for t in self.factors)

    @property
    def time_dependent(self):
        return any(t.time_dependent for t in self.factors)

    def apply_data(self, data, grid):
        out = data
        for law in reversed(self.factors):
            out = law.apply_data(out, grid)
        return out

    def adjoint_data(self, data, grid):
        out = data
        for law in self.factors:
            out = law.adjoint_data(out, grid)
        return out

    def make_stepper(self, grid, space):
        subs = [t.make_stepper(grid, space) for t in self.factors]
        consts = [not t.time_dependent for t in self.factors]
        all_const = all(consts)

        class S(Stepper):
            def __init__(self):
                self._cache = None
                self._factor_cache = [None] * len(subs)

            def _factor_diag(self, i, k):
                if consts[i]:
                    if self._factor_cache[i] is None:
                        self._factor_cache[i] = subs[i].diag(k)
                    return self._factor_cache[i]
                return subs[i].diag(k)

            def diag(self, k):
                if all_const and self._cache is not None:
                    return self._cache
                out = self._factor_diag(len(subs) - 1, k)
                for i in range(len(subs) - 2, -1, -1):
                    d = self._factor_diag(i, k)
                    out = [d_mul(d[b], out[b], space.sizes[b]) for b in range(space.n_blocks)]
                if all_const:
                    self._cache = out
                return out

            def history(self, k):
                # (A B u)_k = dA (dB u_k + hB) + hA with dX the diagonal,
                # hX the history of each factor at step k
                hist = subs[-1].history(k)
                for i in range(len(subs) - 2, -1, -1):
                    d = self._factor_diag(i, k)
                    parts = [
                        d_apply(d[b], hist[space.slices[b]]) for b in range(space.n_blocks)
                    ]
                    hist = np.concatenate(parts) + subs[i].history(k)
                return hist

            def advance(self, k, x_k):
                out = x_k
                for s in reversed(subs):
                    out = s.advance(k, out)
                return out

        return S()


class Scaled(MaterialLaw):
    def __init__(self, factor, law):
        self.factor = complex(factor)
        self.law = law

    @property
    def causal(self):
        return self.law.causal

    @property
    def time_dependent(self):
        return self.law.time_dependent

    def apply_data(self, data, grid):
        return self.factor * self.law.apply_data(data, grid)

    def adjoint_data(self, data, grid):
        return np.conj(self.factor) * self.law.adjoint_data(data, grid)

    def make_stepper(self, grid, space):
        sub = self.law.make_stepper(grid, space)
        c = self.factor
        const = not self.time_dependent

        class S(Stepper):
            def __init__(self):
                self._cache = None

            def diag(self, k):
                if const and self._cache is not None:
                    return self._cache
                out = [c * d for d in sub.diag(k)]
                if const:
                    self._cache = out
                return out

            def history(self, k):
                return c * sub.history(k)

            def advance(self, k, x_k):
                return c * sub.advance(k, x_k)

        return S()


class BlockDiag(MaterialLaw):
    """Embed per-block laws (None means the zero operator on that block).

    Each sub-law is built over the single-block space of its slot.
    """

    def __init__(self, space: BlockSpace, laws):
        self.space = space
        self.laws = list(laws)
        self.sub_spaces = [
            BlockSpace((space.names[i],), (space.coords[i],), (space.weights[i],))
            for i in range(space.n_blocks)
        ]

    @property
    def causal(self):
        return all(l.causal for l in self.laws if l is not None)

    @property
    def time_dependent(self):
        return any(l.time_dependent for l in self.laws if l is not None)

    def apply_data(self, data, grid):
        out = np.zeros_like(np.asarray(data, dtype=complex))
        for i, law in enumerate(self.laws):
            if law is not None:
                sl = self.space.slices[i]
                out[:, sl] = law.apply_data(data[:, sl], grid)
        return out

    def adjoint_data(self, data, grid):
        out = np.zeros_like(np.asarray(data, dtype=complex))
        for i, law in enumerate(self.laws):
            if law is not None:
                sl = self.space.slices[i]
                out[:, sl] = law.adjoint_data(data[:, sl], grid)
        return out

    def make_stepper(self, grid, space):
        subs = [
            law.make_stepper(grid, self.sub_spaces[i]) if law is not None else None
            for i, law in enumerate(self.laws)
        ]

        const = not self.time_dependent

        class S(Stepper):
            def __init__(self):
                self._cache = None

            def diag(self, k):
                if const and self._cache is not None:
                    return self._cache
                out = [
                    (subs[i].diag(k)[0] if subs[i] is not None else 0.0)
                    for i in range(space.n_blocks)
                ]
                if const:
                    self._cache = out
                return out

            def history(self, k):
                out = np.zeros(space.total, dtype=complex)
                for i, s in enumerate(subs):
                    if s is not None:
                        out[space.slices[i]] = s.history(k)
                return out

            def advance(self, k, x_k):
                out = np.zeros(space.total, dtype=complex)
                for i, s in enumerate(subs):
                    if s is not None:
                        out[space.slices[i]] = s.advance(k, x_k[space.slices[i]])
                return out

        return S()


class CustomLaw(MaterialLaw):
    """Wrap raw callables as a law (test support; not steppable)."""

    def __init__(self, apply_fn, adjoint_fn=None, causal=False):
        self._apply = apply_fn
        self._adjoint = adjoint_fn
        self.causal = causal

    def apply_data(self, data, grid):
        return self._apply(data, grid)

    def adjoint_data(self, data, grid):
        if self._adjoint is None:
            raise NotImplementedError("custom law has no adjoint")
        return self._adjoint(data, grid)


# ---------------------------------------------------------------------------
# constructors and coefficient helpers

_BREAK_EPS = 1e-9


def fractional_part(y):
    """{y} with breakpoints snapped at 1e-9 resolution."""
    return np.mod(np.asarray(y, dtype=float) + _BREAK_EPS, 1.0)


def indicator(intervals, inside=1.0, outside=0.0):
    """Half-open indicator of a union of intervals [a, b).

    Sample points are nudged by 1e-9 so values landing exactly on a
    breakpoint (up to float rounding) are classified into [a, b).
    """
    ivs = [(float(a), float(b)) for a, b in intervals]

    def g(x):
        x = np.asarray(x, dtype=float) + _BREAK_EPS
        hit = np.zeros_like(x, dtype=bool)
        for a, b in ivs:
            hit |= (x >= a) & (x < b)
        return np.where(hit, inside, outside)

    return g


def identity(space: BlockSpace) -> SpaceMul:
    return SpaceMul(space, 1.0)


def space_mul(space: BlockSpace, values) -> SpaceMul:
    return SpaceMul(space, values)


def oscillated(space: BlockSpace, g, n: int, blocks=None) -> Oscillated:
    return Oscillated(space, g, n, blocks=blocks)


def time_shift_law(grid: TimeGrid, delay: float) -> TimeConvolution:
    """The causal delay tau_{-delay} as convolution with a discrete impulse."""
    ell = timeaxis.shift_steps(grid, delay)
    if ell < 0:
        raise ValueError("delay must be nonnegative for a causal shift")
    kernel = np.zeros(grid.steps)
    kernel[ell] = 1.0 / grid.dt
    return TimeConvolution(timeaxis.TimeSignal(grid, kernel))


def _resolve_block_values(space, values):
    if np.isscalar(values) or callable(values):
        values = [values] * space.n_blocks
    if len(values) != space.n_blocks:
        raise ValueError(f"need {space.n_blocks} block coefficients, got {len(values)}")
    out = []
    for i, v in enumerate(values):
        if callable(v):
            out.append(np.asarray(v(space.coords[i]), dtype=complex))
        elif np.isscalar(v):
            out.append(complex(v))
        else:
            v = np.asarray(v, dtype=complex)
            if v.shape != (space.sizes[i],):
                raise ValueError(f"block {i} coefficient shape {v.shape} != ({space.sizes[i]},)")
            out.append(v)
    return out


def apply(law: MaterialLaw, w: Field) -> Field:
    return law.apply(w)


# ---------------------------------------------------------------------------
# diagnostics


def commutator_with_d0(law: MaterialLaw, w: Field) -> Field:
    """M(d0 w) - d0(M w) on the grid."""
    dt = w.grid.dt
    d0w = timeaxis.d0_values(w.data, dt)
    first = law.apply_data(d0w, w.grid)
    second = timeaxis.d0_values(law.apply_data(w.data, w.grid), dt)
    return Field(w.grid, w.space, first - second)


@dataclass
class CausalityReport:
    passed: bool
    worst_leakage: float
    tolerance: float = 1e-11


def check_causality(law, grid, space, trials=8, a_values=None, seed=0):
    """Feed signals supported on t >= a and measure output leakage into t < a."""
    rng = np.random.default_rng(seed)
    if a_values is None:
        t_max = grid.horizon
        a_values = [0.25 * t_max, 0.5 * t_max, 0.75 * t_max]
    worst = 0.0
    for _ in range(trials):
        for a in a_values:
            data = rng.standard_normal((grid.steps, space.total)) + 1j * rng.standard_normal(
                (grid.steps, space.total)
            )
            data[grid.times < a] = 0.0
            f = Field(grid, space, data)
            out = law.apply(f)
            leak_data = np.where((grid.times < a)[:, None], out.data, 0.0)
            leak = Field(grid, space, leak_data).norm()
            denom = f.norm()
            if denom > 0:
                worst = max(worst, leak / denom)
    return CausalityReport(passed=worst <= 1e-11, worst_leakage=worst)


@dataclass
class PositivityReport:
    c_estimate: float
    a_samples: tuple
    min_quotient: float


_POSITIVITY_DENSE_CAP = 2048


def estimate_positivity(law, grid, space, a_values=None, probes=20, seed=0):
    """Smallest eigenvalue of the symmetric part of u -> 1_{<a} d0 M u.

    By causality the truncated quadratic form only sees the truncated
    part of u, so the estimate restricts to signals supported on t < a;
    the eigenvalue comes from a Lanczos iteration on the Hermitian part.
    """
    if a_values is None:
        t_max = grid.horizon
        a_values = (0.25 * t_max, 0.5 * t_max, t_max + grid.dt)
    rng = np.random.default_rng(seed)
    sw = space.sample_weights

    def composed(data):
        return timeaxis.d0_values(law.apply_data(data, grid), grid.dt)

    def composed_adj(data):
        return law.adjoint_data(timeaxis.d0_adjoint_values(data, grid), grid)

    c_vals = []
    for a in a_values:
        ka = int(np.sum(grid.times < a))
        if ka == 0:
            continue
        dim = ka * space.total
        scale = np.sqrt(np.outer(grid.step_weights[:ka], sw))

        def tilde_matvec(vec):
            # truncated composed operator in coordinates with flat metric
            u = np.zeros((grid.steps, space.total), dtype=complex)
            u[:ka] = vec.reshape(ka, space.total) / scale
            return (composed(u)[:ka] * scale).ravel()

        def herm_matvec(vec):
            u = np.zeros((grid.steps, space.total), dtype=complex)
            u[:ka] = vec.reshape(ka, space.total) / scale
            tu = composed(u)[:ka]
            su = composed_adj(u)[:ka]
            return (0.5 * (tu + su) * scale).ravel()

        def dense_smallest():
            mat = np.empty((dim, dim), dtype=complex)
            basis = np.zeros(dim, dtype=complex)
            for j in range(dim):
                basis[j] = 1.0
                mat[:, j] = tilde_matvec(basis)
                basis[j] = 0.0
            return float(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0])

        if dim <= 8:
            c_vals.append(dense_smallest())
            continue
        op = spla.LinearOperator((dim, dim), matvec=herm_matvec, dtype=complex)
        try:
            vals = spla.eigsh(op, k=1, which="SA", return_eigenvectors=False,
                              maxiter=2000, tol=1e-7, ncv=min(dim - 1, 48))
            c_vals.append(float(vals[0]))
        except spla.ArpackNoConvergence as exc:
            if dim <= _POSITIVITY_DENSE_CAP:
                c_vals.append(dense_smallest())
            else:
                partial = PositivityReport(
                    c_estimate=float("nan"), a_samples=tuple(a_values),
                    min_quotient=float("nan"))
                raise PositivityIterationError(
                    f"eigenvalue iteration failed at truncation a={a}: {exc}", partial
                ) from exc

    min_quotient = math.inf
    for _ in range(probes):
        a = a_values[int(rng.integers(len(a_values)))]
        mask = (grid.times < a)[:, None]
        data = rng.standard_normal((grid.steps, space.total)) + 1j * rng.standard_normal(
            (grid.steps, space.total)
        )
        u = Field(grid, space, data)
        tu = Field(grid, space, np.where(mask, u.data, 0.0))
        num = np.einsum(
            "k,i,ki->", grid.step_weights, sw, composed(u.data) * np.conj(tu.data)
        ).real
        den = np.einsum("k,i,ki->", grid.step_weights, sw, u.data * np.conj(tu.data)).real
        if den > 1e-14:
            min_quotient = min(min_quotient, num / den)

    c_estimate = min(c_vals) if c_vals else float("nan")
    c_estimate = min(c_estimate, min_quotient)
    return PositivityReport(
        c_estimate=c_estimate, a_samples=tuple(a_values), min_quotient=min_quotient
    )


# ---------------------------------------------------------------------------
# Neumann series inverse


class NeumannInverse(MaterialLaw):
    """Truncated series for (B + A d0^{-1})^{-1} with measured contraction."""

    def __init__(self, expansion, order, contraction, tail_bound):
        self.expansion = expansion
        self.order = int(order)
        self.contraction = float(contraction)
        self.tail_bound = float(tail_bound)

    @property
    def causal(self):
        return self.expansion.causal

    @property
    def time_dependent(self):
        return self.expansion.time_dependent

    def apply_data(self, data, grid):
        return self.expansion.apply_data(data, grid)

    def adjoint_data(self, data, grid):
        return self.expansion.adjoint_data(data, grid)

    def make_stepper(self, grid, space):
        return self.expansion.make_stepper(grid, space)


def spatial_matrix_blocks(law, space):
    """Assemble a memoryless spatial law into per-block dense matrices."""
    if isinstance(law, (SpaceMul, SpaceOperator)):
        source = law.block_values if isinstance(law, SpaceMul) else law.mats
        return [d_to_matrix(source[i], space.sizes[i]) for i in range(space.n_blocks)]
    if isinstance(law, Scaled):
        return [law.factor * m for m in spatial_matrix_blocks(law.law, space)]
    if isinstance(law, Sum):
        mats = [spatial_matrix_blocks(t, space) for t in law.terms]
        return [sum(m[i] for m in mats) for i in range(space.n_blocks)]
    if isinstance(law, Product):
        mats = [spatial_matrix_blocks(t, space) for t in law.factors]
        out = mats[0]
        for m in mats[1:]:
            out = [out[i] @ m[i] for i in range(space.n_blocks)]
        return out
    raise NotSteppableError(f"{type(law).__name__} is not a memoryless spatial law")


def _split_memory_terms(law):
    """Flatten a Sum into (spatial terms, terms of the form A o d0^{-1})."""

    def flatten(l, factor=1.0):
        if isinstance(l, Sum):
            out = []
            for t in l.terms:
                out.extend(flatten(t, factor))
            return out
        if isinstance(l, Scaled):
            return flatten(l.law, factor * l.factor)
        return [(factor, l)]

    spatial, memory = [], []
    for factor, term in flatten(law):
        if isinstance(term, D0Inverse):
            memory.append((factor, None))
        elif isinstance(term, Product) and any(isinstance(f, D0Inverse) for f in term.factors):
            rest = [f for f in term.factors if not isinstance(f, D0Inverse)]
            if sum(isinstance(f, D0Inverse) for f in term.factors) != 1:
                raise ValueError("expected exactly one d0^{-1} factor per memory term")
            memory.append((factor, Product(rest) if rest else None))
        else:
            spatial.append((factor, term))
    return spatial, memory


def neumann_inverse(law, order, grid, space, norm_tol=1e-6, seed=0):
    """Invert M = B + A d0^{-1} by the truncated Neumann series.

    Returns a NeumannInverse law equal to
    sum_{l=0..order} (-(B^{-1} A d0^{-1}))^l B^{-1}, carrying the
    measured contraction factor q and the tail bound q^{order+1}/(1-q).
    """
    spatial_terms, memory_terms = _split_memory_terms(law)
    if not spatial_terms:
        raise ValueError("no invertible memoryless part found")
    b_mats = [np.zeros((n, n), dtype=complex) for n in space.sizes]
    for factor, term in spatial_terms:
        mats = spatial_matrix_blocks(term, space)
        b_mats = [b + factor * m for b, m in zip(b_mats, mats)]
    a_mats = [np.zeros((n, n), dtype=complex) for n in space.sizes]
    for factor, term in memory_terms:
        mats = (
            spatial_matrix_blocks(term, space)
            if term is not None
            else [np.eye(n, dtype=complex) for n in space.sizes]
        )
        a_mats = [a + factor * m for a, m in zip(a_mats, mats)]

    b_inv = [np.linalg.inv(b) for b in b_mats]
    b_inv_law = SpaceOperator(space, b_inv)
    a_law = SpaceOperator(space, a_mats)
    step = Product([b_inv_law, a_law, D0Inverse()])

    q = law_operator_norm(step, grid, space, tol=norm_tol, seed=seed)
    if q >= 1.0:
        raise ContractionError(
            f"Neumann series does not contract: measured q = {q:.4f} >= 1; "
            "increase the weight nu"
        )
    tail = q ** (order + 1) / (1.0 - q)

    terms = [b_inv_law]
    power = None
    for ell in range(1, order + 1):
        power = step if power is None else Product([step, power])
        terms.append(Scaled((-1.0) ** ell, Product([power, b_inv_law])))
    return NeumannInverse(Sum(terms), order, q, tail)


# ---------------------------------------------------------------------------
# weak limits and norms


def weak_limit_coefficient(g, breakpoints=None):
    """Average of a 1-periodic coefficient over its period.

    Composite quadrature with explicit breakpoint handling; for
    piecewise-smooth g the absolute error is below 1e-10.
    """
    pts = None
    if breakpoints is not None:
        pts = sorted(p for p in breakpoints if 0.0 < p < 1.0)

    def point_value(x):
        return complex(np.ravel(np.asarray(g(np.asarray([x], dtype=float))))[0])

    def integrate(f):
        val, _ = scipy.integrate.quad(f, 0.0, 1.0, points=pts, limit=200, epsabs=1e-12)
        return val

    re = integrate(lambda x: point_value(x).real)
    im = integrate(lambda x: point_value(x).imag)
    if abs(im) < 1e-13:
        return re
    return complex(re, im)


def commutator_operator_norm(law, grid, space, tol=1e-6, max_iter=10000, seed=0):
    """Weighted operator norm of w -> M(d0 w) - d0(M w)."""

    def fwd(data):
        return law.apply_data(timeaxis.d0_values(data, grid.dt), grid) - timeaxis.d0_values(
            law.apply_data(data, grid), grid.dt
        )

    def adj(data):
        return timeaxis.d0_adjoint_values(
            law.adjoint_data(data, grid), grid
        ) - law.adjoint_data(timeaxis.d0_adjoint_values(data, grid), grid)

    comm = CustomLaw(lambda d, g: fwd(d), lambda d, g: adj(d), causal=law.causal)
    return law_operator_norm(comm, grid, space, tol=tol, max_iter=max_iter, seed=seed)


def law_operator_norm(law, grid, space, tol=1e-8, max_iter=10000, seed=0):
    """Weighted operator norm of a law on fields over (grid, space)."""
    weights = np.repeat(grid.step_weights, space.total) * np.tile(
        space.sample_weights, grid.steps
    )
    shape = (grid.steps, space.total)
    return power_iteration_norm(
        lambda v: law.apply_data(v, grid),
        lambda v: law.adjoint_data(v, grid),
        shape,
        weights,
        tol=tol,
        max_iter=max_iter,
        seed=seed,
    )


def load_kernel_file(path, grid):
    """Load a two-column (t, value) text file and resample it to the grid."""
    raw = np.loadtxt(path)
    if raw.ndim != 2 or raw.shape[1] < 2:
        raise ValueError(f"kernel file {path} must have two columns (t, value)")
    t, v = raw[:, 0], raw[:, 1]
    vals = np.interp(grid.times, t, v, left=0.0, right=0.0)
    return timeaxis.TimeSignal(grid, vals)
