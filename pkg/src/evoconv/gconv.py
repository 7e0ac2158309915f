"""Experiment drivers measuring weak convergence of solution ladders.

Weak convergence is operationalized as decay of pairings against a
fixed finite set of smooth test functions: oscillating-coefficient
averaging shows up exactly in low-frequency pairings, at rate O(1/n).
The limit solution is always computed by solving the analytically
averaged system, never by extrapolating the ladder.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sparse

from . import matlaw
from .evosolve import Problem, continuity_bound, solve
from .matlaw import (
    D0Inverse,
    Product,
    Scaled,
    SpaceMul,
    SpaceOperator,
    BlockDiag,
    Sum,
    TimeConvolution,
    TimeMul,
    commutator_operator_norm,
    estimate_positivity,
    fractional_part,
    identity,
    indicator,
    law_operator_norm,
    neumann_inverse,
    space_mul,
    time_shift_law,
    weak_limit_coefficient,
)
from .space1d import BlockSpace, Field, SpaceGrid, assemble_block_A, field_inner, field_norm
from .timeaxis import TimeGrid, TimeSignal, d0_values

__all__ = [
    "TestFunctionSet",
    "ConvergenceReport",
    "experiment_mixed_type",
    "experiment_mixed_type_convolution",
    "experiment_mixed_type_timedep",
    "counterexample_commutator",
    "counterexample_compactness",
    "experiment_kelvin_voigt",
    "experiment_wave_1d",
    "experiment_singular_perturbation",
    "check_weak_strong_principle",
    "experiment_weak_strong",
]

# verdict thresholds: margins of at least 2x over observed desk-scale noise
DECAY_FACTOR = 4.0
MIN_RATE = 0.8
SEPARATION_FACTOR = 3.0
THRESHOLDS = {
    "decay_factor": DECAY_FACTOR,
    "min_rate": MIN_RATE,
    "separation_factor": SEPARATION_FACTOR,
}

# two-phase 1/2 profile and the four mixed-system indicator coefficients
TWO_PHASE = indicator([(0.0, 0.5)], inside=1.0, outside=2.0)
MIXED_TD_U = indicator([(0.0, 0.25), (0.5, 0.75)])
MIXED_TD_V = indicator([(0.0, 0.25), (0.75, 1.0)])
MIXED_INST_U = indicator([(0.25, 0.5), (0.75, 1.0)])
MIXED_INST_V = indicator([(0.25, 0.5), (0.5, 0.75)])


def bump(x, center, width):
    """Smooth compactly supported bump on (center-width, center+width)."""
    x = np.asarray(x, dtype=float)
    s = (x - center) / width
    out = np.zeros_like(x)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _thread_count():
    env = os.environ.get("EVOCONV_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _solve_many(problems, kwargs_list=None, **kw):
    if kwargs_list is None:
        kwargs_list = [kw] * len(problems)
    workers = _thread_count()
    if workers <= 1 or len(problems) <= 1:
        return [solve(p, **kws) for p, kws in zip(problems, kwargs_list)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda pk: solve(pk[0], **pk[1]), zip(problems, kwargs_list)))


@dataclass
class TestFunctionSet:
    """Fixed smooth bumps and low tensor modes, unit weighted norm each."""

    functions: list

    @classmethod
    def build(cls, grid, space, count=8):
        t = grid.times
        horizon = grid.horizon
        n_blocks = space.n_blocks
        bump_params = [(0.38, 0.2), (0.62, 0.28), (0.5, 0.24), (0.72, 0.18)]
        mode_params = [(1, 1), (2, 1), (1, 3), (3, 2)]
        funcs = []
        for j in range(count):
            block = j % n_blocks
            x = space.coords[block]
            singleton = len(x) == 1
            if j < count // 2:
                c, w = bump_params[j % len(bump_params)]
                profile_t = bump(t, c * horizon, w * horizon)
                profile_x = np.ones(1) if singleton else bump(x, 0.4 + 0.05 * j, 0.3)
            else:
                q, p = mode_params[j % len(mode_params)]
                profile_t = np.sin(q * np.pi * t / horizon)
                profile_x = np.ones(1) if singleton else np.sin(p * np.pi * x)
            f = Field.zeros(grid, space)
            f.block(block)[:] = np.outer(profile_t, profile_x)
            norm = field_norm(f)
            if norm == 0:
                raise ValueError("degenerate test function")
            f.data /= norm
            funcs.append(f)
        return cls(funcs)

    def __iter__(self):
        return iter(self.functions)

    def __len__(self):
        return len(self.functions)

    def pairings(self, u: Field):
        return np.array([field_inner(u, phi) for phi in self.functions])


def pairing_error_matrix(ladder, limit, testset):
    """|<u_n - u_limit, phi_j>| for every ladder member and test function."""
    ref = testset.pairings(limit)
    rows = []
    for u in ladder:
        rows.append(np.abs(testset.pairings(u) - ref))
    return np.array(rows)


def fitted_rate(n_values, errors):
    """Least-squares slope of log(max_j error) against log(n)."""
    errs = np.maximum(np.asarray(errors, dtype=float), 1e-300)
    return float(-np.polyfit(np.log(np.asarray(n_values, float)), np.log(errs), 1)[0])


def lsq_multiplier(u: Field, ref: Field, testset) -> complex:
    """Least-squares scalar m with <u, phi> ~ m <ref, phi> over the test set."""
    pu = testset.pairings(u)
    pr = testset.pairings(ref)
    return complex(np.sum(pu * np.conj(pr)) / np.sum(np.abs(pr) ** 2))


@dataclass
class ConvergenceReport:
    experiment: str
    params: dict
    n_values: list
    pairing_errors: np.ndarray
    fitted_rate: float
    limit_description: str
    verdict: str
    oracle_values: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=lambda: dict(THRESHOLDS))
    elapsed: float = 0.0

    def max_errors(self):
        return self.pairing_errors.max(axis=1)

    def to_json_dict(self):
        return _jsonable(
            {
                "name": self.experiment,
                "params": self.params,
                "n_values": list(self.n_values),
                "pairing_errors": self.pairing_errors,
                "fitted_rate": self.fitted_rate,
                "limit_description": self.limit_description,
                "verdict": self.verdict,
                "oracle_values": self.oracle_values,
                "thresholds": self.thresholds,
                "extras": self.extras,
            }
        )

    def csv_rows(self):
        """One row per (n, test function): pairing error and oracle gap."""
        gaps = self.extras.get("oracle_gaps", {})
        rows = []
        for i, n in enumerate(self.n_values):
            gap = gaps.get(n, gaps.get(str(n), ""))
            for j in range(self.pairing_errors.shape[1]):
                rows.append(
                    (
                        self.experiment,
                        n,
                        j,
                        _fmt(self.pairing_errors[i, j]),
                        _fmt(gap) if gap != "" else "",
                    )
                )
        return rows

    def summary(self):
        lines = [
            f"experiment: {self.experiment}",
            f"verdict: {self.verdict}",
            f"fitted rate: {self.fitted_rate:.4f}",
            f"limit: {self.limit_description}",
            f"ladder: {list(self.n_values)}",
            "max pairing error per ladder step: "
            + ", ".join(f"{e:.3e}" for e in self.max_errors()),
        ]
        for key, val in sorted(self.oracle_values.items()):
            lines.append(f"oracle {key}: {val}")
        for key, val in sorted(self.extras.items()):
            if key == "oracle_gaps":
                continue
            lines.append(f"{key}: {_short(val)}")
        lines.append(f"elapsed: {self.elapsed:.2f} s")
        return "\n".join(lines)


def _fmt(x):
    if isinstance(x, complex):
        return format(x.real, ".17g") + ("+" if x.imag >= 0 else "") + format(x.imag, ".17g") + "j"
    return format(float(x), ".17g")


def _short(val):
    if isinstance(val, float):
        return f"{val:.6g}"
    if isinstance(val, (list, tuple)) and val and isinstance(val[0], float):
        return "[" + ", ".join(f"{v:.4g}" for v in val) + "]"
    return str(val)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _verdict_confirms(errors_max, rate):
    decayed = errors_max[-1] <= errors_max[0] / DECAY_FACTOR
    return "confirms" if (decayed and rate >= MIN_RATE) else "inconclusive"


def _oscillated_blocks(space, profiles, n):
    """Per-block coefficients g_b({n x}) sampled on the block coordinates."""
    vals = []
    for i, g in enumerate(profiles):
        if g is None:
            vals.append(1.0)
        else:
            vals.append(np.asarray(g(fractional_part(n * space.coords[i])), dtype=complex))
    return SpaceMul(space, vals)


# ---------------------------------------------------------------------------
# mixed-type system and its two coefficient variants


def _mixed_law(space, n, kernel=None, timefun=None):
    """The two-phase block law, oscillated at rate n (n=0 means averaged)."""
    if n == 0:
        bp = [0.25, 0.5, 0.75]
        td = SpaceMul(
            space,
            [
                weak_limit_coefficient(MIXED_TD_U, breakpoints=bp),
                weak_limit_coefficient(MIXED_TD_V, breakpoints=bp),
            ],
        )
        inst = SpaceMul(
            space,
            [
                weak_limit_coefficient(MIXED_INST_U, breakpoints=bp),
                weak_limit_coefficient(MIXED_INST_V, breakpoints=bp),
            ],
        )
    else:
        td = _oscillated_blocks(space, [MIXED_TD_U, MIXED_TD_V], n)
        inst = _oscillated_blocks(space, [MIXED_INST_U, MIXED_INST_V], n)
    if timefun is not None:
        td = Product([TimeMul(timefun), td])
    law = Sum([td, Product([D0Inverse(), inst])])
    if kernel is not None:
        law = Product([Sum([identity(space), TimeConvolution(kernel)]), law])
    return law


def _mixed_forcing(grid, space):
    f = Field.zeros(grid, space)
    horizon = grid.horizon
    f.block_u[:] = np.outer(
        bump(grid.times, 0.32 * horizon, 0.24 * horizon), bump(space.coords[0], 0.45, 0.35)
    )
    return f


def _probe_constants(make_law, grid, nu, n_probe, seed=0):
    """Positivity constant and law norm on a coarsened probe grid.

    The probe keeps the horizon and the weight of the working grid but
    uses 64 steps and the smallest aligned spatial grid, where the
    truncated eigenvalue problem is affordable; the constants enter the
    a-priori bound, whose slack absorbs the coarsening.
    """
    probe_grid = TimeGrid(nu, grid.horizon / 48, 48)
    cells = max(16, 4 * n_probe)
    probe_space = BlockSpace.staggered(SpaceGrid(cells))
    law = make_law(probe_space, probe_grid)
    rep = estimate_positivity(law, probe_grid, probe_space, probes=10, seed=seed)
    m = law_operator_norm(law, probe_grid, probe_space, tol=1e-6, seed=seed)
    return rep.c_estimate, m


def _run_mixed_type(name, n_values, cells, steps, dt, nu, kernel_fn=None,
                    timefun_pair=None, seed=0):
    t0 = time.perf_counter()
    n_values = list(n_values)
    if cells % (4 * max(n_values)) != 0:
        raise ValueError(
            f"cells={cells} must be a multiple of 4*max(n)={4 * max(n_values)} "
            "to align oscillation breakpoints with the grid"
        )
    grid = TimeGrid(nu, dt, steps)
    sg = SpaceGrid(cells)
    space = BlockSpace.staggered(sg)
    a_op = assemble_block_A(sg)
    f = _mixed_forcing(grid, space)
    testset = TestFunctionSet.build(grid, space)

    def law_for(n, target_space, target_grid):
        kern = None
        if kernel_fn is not None:
            kern = TimeSignal(target_grid, kernel_fn(n, target_grid.times))
        tf = None
        if timefun_pair is not None:
            tf = timefun_pair(n)
        return _mixed_law(target_space, n, kernel=kern, timefun=tf)

    c_probe, m_probe = _probe_constants(
        lambda sp, pg: law_for(min(n_values), sp, pg), grid, nu, min(n_values), seed=seed
    )
    _, m_limit = _probe_constants(
        lambda sp, pg: law_for(0, sp, pg), grid, nu, min(n_values), seed=seed
    )
    problems = [Problem(law_for(n, space, grid), a_op, f) for n in n_values]
    limit_problem = Problem(law_for(0, space, grid), a_op, f)
    kwargs = [dict(c=c_probe, m_norm=m_probe, positivity_probe=False)] * len(problems)
    kwargs.append(dict(c=c_probe, m_norm=m_limit, positivity_probe=False))
    reports = _solve_many(problems + [limit_problem], kwargs_list=kwargs)
    limit_rep = reports[-1]
    ladder = [r.u for r in reports[:-1]]

    errors = pairing_error_matrix(ladder, limit_rep.u, testset)
    maxerr = errors.max(axis=1)
    rate = fitted_rate(n_values, maxerr)
    verdict = _verdict_confirms(maxerr, rate)

    bp = [0.25, 0.5, 0.75]
    oracle = {
        "limit_coefficient_td_u": weak_limit_coefficient(MIXED_TD_U, breakpoints=bp),
        "limit_coefficient_td_v": weak_limit_coefficient(MIXED_TD_V, breakpoints=bp),
        "limit_coefficient_inst_u": weak_limit_coefficient(MIXED_INST_U, breakpoints=bp),
        "limit_coefficient_inst_v": weak_limit_coefficient(MIXED_INST_V, breakpoints=bp),
    }
    extras = {
        "c_estimate": float(c_probe),
        "residuals": [float(r.residual_norm) for r in reports],
        "lattice_norms": [float(r.lattice_norm) for r in reports],
        "bound_rhs": [float(r.bound_rhs) for r in reports],
        "max_errors": [float(e) for e in maxerr],
    }
    if kernel_fn is not None:
        base = TimeSignal(grid, kernel_fn(0, grid.times))
        extras["kernel_gap_young_bound"] = [
            TimeConvolution(
                TimeSignal(grid, kernel_fn(n, grid.times) - base.values)
            ).weighted_l1(grid)
            for n in n_values
        ]
    if timefun_pair is not None:
        probe_grid = TimeGrid(nu, grid.horizon / 128, 128)
        probe_space = BlockSpace.point()
        extras["timefun_commutator_norms"] = [
            float(commutator_operator_norm(TimeMul(timefun_pair(n)), probe_grid, probe_space))
            for n in n_values
        ]
        u_fix = Field(probe_grid, probe_space,
                      bump(probe_grid.times, 0.4 * probe_grid.horizon,
                           0.3 * probe_grid.horizon)[:, None].astype(complex))
        limit_tf = timefun_pair(0)
        extras["timefun_strong_gaps"] = [
            float(field_norm(Field(probe_grid, probe_space,
                                   TimeMul(timefun_pair(n)).apply(u_fix).data
                                   - TimeMul(limit_tf).apply(u_fix).data)))
            for n in n_values
        ]

    return ConvergenceReport(
        experiment=name,
        params={"cells": cells, "steps": steps, "dt": dt, "nu": nu, "seed": seed},
        n_values=n_values,
        pairing_errors=errors,
        fitted_rate=rate,
        limit_description="averaged two-phase coefficients (1/2 per block)",
        verdict=verdict,
        oracle_values=oracle,
        extras=extras,
        elapsed=time.perf_counter() - t0,
    )


def experiment_mixed_type(n_values=(4, 8, 16, 32), cells=128, steps=512, dt=5e-3,
                          nu=1.0, seed=0):
    """Oscillating indicator coefficients against the averaged limit system."""
    return _run_mixed_type("mixed_type", n_values, cells, steps, dt, nu, seed=seed)


def experiment_mixed_type_convolution(n_values=(4, 8, 16, 32), cells=128, steps=512,
                                      dt=5e-3, nu=1.0, kernel=None, seed=0):
    """Oscillating coefficients wrapped by norm-convergent convolutions (1 + k_n*).

    k_n = (1 + 1/n) k with k(t) = exp(-t) by default; ``kernel`` may be a
    TimeSignal-compatible array of k samples on the working grid.
    """

    def kernel_fn(n, times):
        base = np.exp(-times) if kernel is None else np.asarray(kernel, dtype=float)[: len(times)]
        scale = 1.0 if n == 0 else 1.0 + 1.0 / n
        return scale * base

    return _run_mixed_type(
        "mixed_type_convolution", n_values, cells, steps, dt, nu, kernel_fn=kernel_fn,
        seed=seed,
    )


def experiment_mixed_type_timedep(n_values=(4, 8, 16, 32), cells=128, steps=512,
                                  dt=5e-3, nu=1.0, seed=0):
    """Oscillating coefficients modulated by strongly convergent Lipschitz N_n(t)."""

    def timefun_pair(n):
        fade = 1.0 if n == 0 else 1.0 - 1.0 / n

        def n_fun(t):
            return 1.0 + 0.5 * np.arctan(t) / np.pi * fade

        return n_fun

    # admissible band 1/c >= N_n >= c for c = 0.8
    c_band = 0.8
    t_check = np.linspace(0.0, steps * dt, 64)
    for n in list(n_values) + [0]:
        vals = timefun_pair(n)(t_check)
        if np.min(vals) < c_band or np.max(vals) > 1.0 / c_band:
            raise ValueError("time modulation leaves the admissible band")
    return _run_mixed_type(
        "mixed_type_timedep", n_values, cells, steps, dt, nu, timefun_pair=timefun_pair,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# counterexamples


def counterexample_commutator(n_values=(8, 16, 32, 64, 128), dt=1e-3, steps=4000,
                              nu=1.0, seed=0):
    """Memoryless scalar equation (sin(n t) + 2 + 1) u_n = f.

    The weak limit of u_n is the period mean of 1/(sin+3) times f; the
    naive averaged equation predicts f/3 instead, and the weak limit of
    (sin(n t)+2) u_n is not (mean of the coefficient) times (weak lim u).
    The violated hypothesis is the commutator norm, which grows like n.
    """
    t0 = time.perf_counter()
    n_values = list(n_values)
    grid = TimeGrid(nu, dt, steps)
    space = BlockSpace.point()
    f = Field(grid, space,
              bump(grid.times, 0.45 * grid.horizon, 0.3 * grid.horizon)[:, None].astype(complex))
    testset = TestFunctionSet.build(grid, space)

    mean_u = weak_limit_coefficient(lambda x: 1.0 / (np.sin(2 * np.pi * x) + 3.0))
    mean_coeff = weak_limit_coefficient(lambda x: np.sin(2 * np.pi * x) + 2.0)
    true_nu_mult = weak_limit_coefficient(
        lambda x: (np.sin(2 * np.pi * x) + 2.0) / (np.sin(2 * np.pi * x) + 3.0)
    )
    naive_u = 1.0 / (mean_coeff + 1.0)
    naive_nu_mult = mean_coeff * mean_u

    ladder, nu_ladder, mults_u, mults_nu = [], [], [], []
    for n in n_values:
        coeff = np.sin(n * grid.times) + 3.0
        u = Field(grid, space, f.data / coeff[:, None])
        ladder.append(u)
        nu_u = Field(grid, space, (coeff[:, None] - 1.0) * u.data)
        nu_ladder.append(nu_u)
        mults_u.append(lsq_multiplier(u, f, testset))
        mults_nu.append(lsq_multiplier(nu_u, f, testset))

    limit_u = Field(grid, space, mean_u * f.data)
    errors = pairing_error_matrix(ladder, limit_u, testset)
    rate = fitted_rate(n_values, errors.max(axis=1))

    probe_grid = TimeGrid(nu, dt, 1024)
    comm_norms = [
        float(commutator_operator_norm(TimeMul(lambda t, n=n: np.sin(n * t) + 2.0),
                                       probe_grid, space))
        for n in n_values
    ]
    comm_slope = float(np.polyfit(np.log(n_values), np.log(comm_norms), 1)[0])

    m_u = mults_u[-1].real
    m_nu = mults_nu[-1].real
    dev_u = abs(m_u - mean_u)
    dev_nu = abs(m_nu - true_nu_mult)
    ok_u = dev_u <= 0.02 * mean_u and abs(m_u - naive_u) >= 5.0 * max(dev_u, 1e-12)
    ok_nu = dev_nu <= 0.02 * true_nu_mult and abs(m_nu - naive_nu_mult) >= 10.0 * max(
        dev_nu, 1e-12
    )
    verdict = "refutes" if (ok_u and ok_nu and comm_slope >= 0.9) else "inconclusive"

    return ConvergenceReport(
        experiment="commutator_counterexample",
        params={"steps": steps, "dt": dt, "nu": nu, "seed": seed},
        n_values=n_values,
        pairing_errors=errors,
        fitted_rate=rate,
        limit_description="weak limit multiplier = period mean of 1/(sin+3)",
        verdict=verdict,
        oracle_values={
            "mean_inverse_coefficient": mean_u,
            "mean_coefficient": mean_coeff,
            "true_product_multiplier": true_nu_mult,
            "naive_solution_multiplier": naive_u,
            "naive_product_multiplier": naive_nu_mult,
        },
        extras={
            "measured_multiplier": [complex(m) for m in mults_u],
            "measured_product_multiplier": [complex(m) for m in mults_nu],
            "commutator_norms": comm_norms,
            "commutator_growth_slope": comm_slope,
            "oracle_gaps": {n: abs(mults_u[i] - mean_u) for i, n in enumerate(n_values)},
        },
        elapsed=time.perf_counter() - t0,
    )


def counterexample_compactness(n_values=(8, 16, 32, 64), dt=5e-3, steps=512, nu=1.0,
                               batch=256, seed=0):
    """(a(n x) + i) u_n = f on a pointwise spatial batch; no compactness.

    The solutions converge weakly to (mean of (a+i)^{-1}) f, which is not
    the solution of the averaged equation (3/2 + i) u = f.
    """
    t0 = time.perf_counter()
    n_values = list(n_values)
    if batch % (2 * max(n_values)) != 0:
        raise ValueError(
            f"batch={batch} must be a multiple of 2*max(n)={2 * max(n_values)}"
        )
    grid = TimeGrid(nu, dt, steps)
    x = (np.arange(batch) + 0.5) / batch
    space = BlockSpace.batch(x)
    f = Field(grid, space, np.outer(
        bump(grid.times, 0.45 * grid.horizon, 0.3 * grid.horizon), np.ones(batch)
    ).astype(complex))
    testset = TestFunctionSet.build(grid, space)

    true_mult = weak_limit_coefficient(lambda t: 1.0 / (TWO_PHASE(t) + 1j), breakpoints=[0.5])
    naive_mult = 1.0 / (1.5 + 1j)

    ladder, mults = [], []
    for n in n_values:
        coeff = TWO_PHASE(fractional_part(n * x)).astype(complex)
        law = Product([D0Inverse(), SpaceMul(space, [coeff])])
        rep = solve(Problem(law, 1j, f), with_bound=False, positivity_probe=False)
        ladder.append(rep.u)
        mults.append(lsq_multiplier(rep.u, f, testset))

    limit_u = Field(grid, space, true_mult * f.data)
    errors = pairing_error_matrix(ladder, limit_u, testset)
    rate = fitted_rate(n_values, errors.max(axis=1))

    m = mults[-1]
    dist_true = abs(m - true_mult)
    dist_naive = abs(m - naive_mult)
    verdict = (
        "refutes"
        if dist_naive >= SEPARATION_FACTOR * max(dist_true, 1e-12)
        else "inconclusive"
    )

    return ConvergenceReport(
        experiment="compactness_counterexample",
        params={"steps": steps, "dt": dt, "nu": nu, "batch": batch, "seed": seed},
        n_values=n_values,
        pairing_errors=errors,
        fitted_rate=rate,
        limit_description="weak limit multiplier = mean of (a+i)^{-1} = (9-7i)/20",
        verdict=verdict,
        oracle_values={
            "resolvent_mean": true_mult,
            "resolvent_mean_inverse": 1.0 / true_mult,
            "naive_multiplier": naive_mult,
            "analytic_gap": abs(true_mult - naive_mult),
        },
        extras={
            "measured_multiplier": [complex(v) for v in mults],
            "distance_to_true": dist_true,
            "distance_to_naive": dist_naive,
            "oracle_gaps": {n: abs(mults[i] - true_mult) for i, n in enumerate(n_values)},
        },
        elapsed=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# Kelvin-Voigt reduction


def _mean_zero_projector(m):
    return np.eye(m) - np.full((m, m), 1.0 / m)


def _kv_flux_law(space, b_vec, a_const, order, grid):
    """(P (B + A d0^{-1}) P)^{-1} on the cell block, identity off the range."""
    qspace = BlockSpace((space.names[1],), (space.coords[1],), (space.weights[1],))
    m = space.sizes[1]
    proj = _mean_zero_projector(m)
    b_tilde = proj @ np.diag(np.asarray(b_vec, dtype=complex)) @ proj + (np.eye(m) - proj)
    terms = [SpaceOperator(qspace, [b_tilde])]
    if a_const != 0.0:
        pap = a_const * proj
        terms.append(Product([SpaceOperator(qspace, [pap]), D0Inverse()]))
    inv = neumann_inverse(Sum(terms), order, grid, qspace)
    return BlockDiag(space, [None, inv]), inv


def experiment_kelvin_voigt(n_values=(8, 16, 32, 64), cells=256, steps=512, dt=5e-3,
                            nu=1.0, order=6, rho_preset="one", b_preset="twophase",
                            a_const=0.0, seed=0):
    """First-order reduction with projected flux coefficient.

    Default ladder: A_n = 0, B_n = two-phase b({n x}); the limit flux
    coefficient on the range block is the harmonic mean of b.  A memory
    term (a_const != 0) is supported for constant b, where the ladder is
    degenerate and the report carries the series contraction data.
    """
    t0 = time.perf_counter()
    n_values = list(n_values)
    if cells % (4 * max(n_values)) != 0:
        raise ValueError(f"cells={cells} must be a multiple of 4*max(n)")
    if a_const != 0.0 and b_preset != "const":
        raise ValueError("memory term requires a constant elastic coefficient")
    grid = TimeGrid(nu, dt, steps)
    sg = SpaceGrid(cells)
    space = BlockSpace.staggered(sg)
    a_block = assemble_block_A(sg)
    minus_a = (-a_block.matrix).tocsr()

    f = Field.zeros(grid, space)
    f.block_u[:] = np.outer(
        bump(grid.times, 0.32 * grid.horizon, 0.24 * grid.horizon),
        bump(space.coords[0], 0.45, 0.35),
    )
    testset = TestFunctionSet.build(grid, space)
    mean_rho = weak_limit_coefficient(TWO_PHASE, breakpoints=[0.5])
    inv_mean = weak_limit_coefficient(lambda x: 1.0 / TWO_PHASE(x), breakpoints=[0.5])

    def rho_vec(n, sp):
        if rho_preset == "one":
            return np.ones(sp.sizes[0], dtype=complex)
        if n == 0:
            return np.full(sp.sizes[0], mean_rho, dtype=complex)
        return TWO_PHASE(fractional_part(n * sp.coords[0])).astype(complex)

    series_info = {}

    def make_law(n, sp, pg):
        rho = SpaceMul(sp, [rho_vec(n, sp), 0.0])
        m = sp.sizes[1]
        if b_preset == "const":
            vec = np.full(m, 2.0, dtype=complex)
            flux, inv = _kv_flux_law(sp, vec, a_const, order, pg)
            series_info[n] = {"q": inv.contraction, "tail_bound": inv.tail_bound}
        elif n == 0:
            proj = _mean_zero_projector(m)
            w_mat = inv_mean * proj + (np.eye(m) - proj)
            flux = BlockDiag(sp, [None, SpaceOperator(
                BlockSpace((sp.names[1],), (sp.coords[1],), (sp.weights[1],)), [w_mat])])
        else:
            vec = TWO_PHASE(fractional_part(n * sp.coords[1])).astype(complex)
            flux, inv = _kv_flux_law(sp, vec, a_const, order, pg)
            series_info[n] = {"q": inv.contraction, "tail_bound": inv.tail_bound}
        return Sum([rho, Product([D0Inverse(), flux])])

    c_probe, m_probe = _probe_constants(
        lambda sp, pg: make_law(min(n_values), sp, pg), grid, nu, min(n_values), seed=seed
    )
    _, m_limit = _probe_constants(
        lambda sp, pg: make_law(0, sp, pg), grid, nu, min(n_values), seed=seed
    )

    problems = [Problem(make_law(n, space, grid), minus_a, f) for n in n_values]
    limit_problem = Problem(make_law(0, space, grid), minus_a, f)
    kwargs = [dict(c=c_probe, m_norm=m_probe, positivity_probe=False)] * len(problems)
    kwargs.append(dict(c=c_probe, m_norm=m_limit, positivity_probe=False))
    reports = _solve_many(problems + [limit_problem], kwargs_list=kwargs)
    limit_rep = reports[-1]
    ladder = [r.u for r in reports[:-1]]

    errors = pairing_error_matrix(ladder, limit_rep.u, testset)
    maxerr = errors.max(axis=1)
    rate = fitted_rate(n_values, maxerr)

    # measured flux coefficient: q_n paired against grad of the limit velocity
    grad_limit = Field.zeros(grid, space)
    grad_limit.block_v[:] = (a_block.d1_dirichlet @ limit_rep.u.block_u.T).T
    q_funcs = TestFunctionSet(
        [phi for j, phi in enumerate(testset) if j % space.n_blocks == 1]
    )
    measured_flux = lsq_multiplier(ladder[-1], grad_limit, q_funcs).real
    harmonic = 2.0 if b_preset == "const" else 1.0 / inv_mean

    degenerate = b_preset == "const"
    if degenerate:
        # constant sequence: the ladder equals the limit, no decay to fit
        verdict = "confirms" if maxerr[-1] <= 1e-9 * field_norm(limit_rep.u) else "inconclusive"
    else:
        verdict = _verdict_confirms(maxerr, rate)
        if a_const == 0.0 and abs(measured_flux - harmonic) > 0.02 * harmonic:
            verdict = "inconclusive"

    return ConvergenceReport(
        experiment="kelvin_voigt",
        params={
            "cells": cells, "steps": steps, "dt": dt, "nu": nu, "order": order,
            "rho": rho_preset, "b": b_preset, "a_const": a_const, "seed": seed,
        },
        n_values=n_values,
        pairing_errors=errors,
        fitted_rate=rate,
        limit_description="flux coefficient = harmonic mean of the two-phase profile",
        verdict=verdict,
        oracle_values={
            "harmonic_mean": harmonic,
            "inverse_mean": 0.5 if b_preset == "const" else inv_mean,
        },
        extras={
            "measured_flux": measured_flux,
            "c_estimate": float(c_probe),
            "series": {str(k): v for k, v in series_info.items()},
            "residuals": [float(r.residual_norm) for r in reports],
            "lattice_norms": [float(r.lattice_norm) for r in reports],
            "bound_rhs": [float(r.bound_rhs) for r in reports],
            "oracle_gaps": {n: abs(measured_flux - harmonic) if n == n_values[-1] else ""
                            for n in n_values},
        },
        elapsed=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# wave system on the interval


def experiment_wave_1d(n_values=(4, 8, 16, 32), cells=128, steps=512, dt=5e-3,
                       nu=1.0, seed=0):
    """First-order wave ladder diag(1, m({n x})); limit diag(1, mean m)."""
    t0 = time.perf_counter()
    n_values = list(n_values)
    if cells % (4 * max(n_values)) != 0:
        raise ValueError(f"cells={cells} must be a multiple of 4*max(n)")
    grid = TimeGrid(nu, dt, steps)
    sg = SpaceGrid(cells)
    space = BlockSpace.staggered(sg)
    a_op = assemble_block_A(sg)
    f = _mixed_forcing(grid, space)
    testset = TestFunctionSet.build(grid, space)

    mean_m = weak_limit_coefficient(TWO_PHASE, breakpoints=[0.5])

    def make_law(n):
        if n == 0:
            return SpaceMul(space, [1.0, mean_m])
        return SpaceMul(
            space, [1.0, TWO_PHASE(fractional_part(n * space.coords[1])).astype(complex)]
        )

    c_probe, m_probe = _probe_constants(
        lambda sp, pg: SpaceMul(
            sp, [1.0, TWO_PHASE(fractional_part(4 * sp.coords[1])).astype(complex)]
        ),
        grid, nu, min(n_values), seed=seed,
    )
    problems = [Problem(make_law(n), a_op, f) for n in n_values]
    kwargs = [dict(c=c_probe, m_norm=m_probe, positivity_probe=False)] * (len(problems) + 1)
    reports = _solve_many(problems + [Problem(make_law(0), a_op, f)], kwargs_list=kwargs)
    limit_rep = reports[-1]
    ladder = [r.u for r in reports[:-1]]

    errors = pairing_error_matrix(ladder, limit_rep.u, testset)
    maxerr = errors.max(axis=1)
    rate = fitted_rate(n_values, maxerr)

    # effective flux: v_n against -d0^{-1} grad u_limit
    ref = Field.zeros(grid, space)
    grad_u = (a_op.d1_dirichlet @ limit_rep.u.block_u.T).T
    ref.block_v[:] = -np.cumsum(grad_u, axis=0) * grid.dt
    q_funcs = TestFunctionSet([phi for j, phi in enumerate(testset) if j % 2 == 1])
    measured_flux = lsq_multiplier(ladder[-1], ref, q_funcs).real

    verdict = _verdict_confirms(maxerr, rate)
    return ConvergenceReport(
        experiment="wave_1d",
        params={"cells": cells, "steps": steps, "dt": dt, "nu": nu, "seed": seed},
        n_values=n_values,
        pairing_errors=errors,
        fitted_rate=rate,
        limit_description="limit diag(1, mean m); effective flux = 1/mean m",
        verdict=verdict,
        oracle_values={
            "mean_coefficient": mean_m,
            "effective_flux": 1.0 / mean_m,
        },
        extras={
            "measured_flux": measured_flux,
            "c_estimate": float(c_probe),
            "residuals": [float(r.residual_norm) for r in reports],
            "lattice_norms": [float(r.lattice_norm) for r in reports],
            "bound_rhs": [float(r.bound_rhs) for r in reports],
        },
        elapsed=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# singular perturbation


def experiment_singular_perturbation(eps_values=(0.2, 0.1, 0.05, 0.025), cells=64,
                                     steps=1024, dt=2.5e-3, nu=2.0, lam=1.0, seed=0):
    """Parabolic/elliptic mix with a vanishing time scale and delayed memory."""
    t0 = time.perf_counter()
    eps_values = list(eps_values)
    grid = TimeGrid(nu, dt, steps)
    for eps in eps_values:
        ratio = eps / dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"eps={eps} is not aligned to dt={dt}")
    sg = SpaceGrid(cells)
    nodes = sg.interior_nodes
    space = BlockSpace(("nodes",), (nodes,), (sg.h,))
    a_bl = assemble_block_A(sg)
    stiff = (a_bl.d1_dirichlet.T @ a_bl.d1_dirichlet).tocsr()
    lam1 = (2.0 / sg.h * math.sin(math.pi * sg.h / 2.0)) ** 2
    if not 0 < lam < lam1:
        raise ValueError(f"lam={lam} outside (0, lambda_1={lam1:.4f})")
    a_mat = (stiff - lam * sparse.identity(space.total)).tocsr()

    region_p = indicator([(0.0, 0.5)])
    region_e = indicator([(0.5, 1.0)])

    def phi(t):
        return np.clip(t, 0.0, 1.0)

    def one_minus_phi(t):
        return 1.0 - np.clip(t, 0.0, 1.0)

    def make_law(eps):
        memory = [
            Scaled(lam, D0Inverse()),
        ]
        if eps == 0.0:
            memory.append(
                Product([D0Inverse(), SpaceMul(space, [region_e]), TimeMul(one_minus_phi)])
            )
            return Sum(memory)
        memory.append(
            Product([
                D0Inverse(),
                SpaceMul(space, [region_e]),
                TimeMul(one_minus_phi),
                time_shift_law(grid, eps),
            ])
        )
        memory.append(Scaled(eps, Product([TimeMul(phi), SpaceMul(space, [region_p])])))
        return Sum(memory)

    f = Field(grid, space, np.outer(
        bump(grid.times, 0.35 * grid.horizon, 0.25 * grid.horizon), bump(nodes, 0.5, 0.4)
    ).astype(complex))
    testset = TestFunctionSet.build(grid, space)

    problems = [Problem(make_law(eps), a_mat, f) for eps in eps_values]
    reports = _solve_many(problems + [Problem(make_law(0.0), a_mat, f)],
                          with_bound=False, positivity_probe=False)
    limit_rep = reports[-1]
    ladder = [r.u for r in reports[:-1]]

    errors = pairing_error_matrix(ladder, limit_rep.u, testset)
    maxerr = errors.max(axis=1)
    monotone = all(a > b for a, b in zip(maxerr, maxerr[1:]))

    gaps = [
        law_operator_norm(Sum([make_law(eps), Scaled(-1.0, make_law(0.0))]), grid, space,
                          tol=1e-6, seed=seed)
        for eps in eps_values
    ]
    slope = float(np.polyfit(np.log(eps_values), np.log(gaps), 1)[0])
    verdict = "confirms" if (monotone and slope >= 0.9) else "inconclusive"

    return ConvergenceReport(
        experiment="singular_perturbation",
        params={"cells": cells, "steps": steps, "dt": dt, "nu": nu, "lam": lam,
                "seed": seed},
        n_values=eps_values,
        pairing_errors=errors,
        fitted_rate=slope,
        limit_description="elliptic-type limit without time scale or delay",
        verdict=verdict,
        oracle_values={
            "lambda_1": lam1,
            "lambda_1_analytic": math.pi**2,
        },
        extras={
            "operator_norm_gaps": [float(gp) for gp in gaps],
            "gap_slope": slope,
            "monotone_pairing_decay": monotone,
            "residuals": [float(r.residual_norm) for r in reports],
        },
        elapsed=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# weak-strong principle


def check_weak_strong_principle(n_values=(4, 8, 16, 32, 64), steps=256, dt=0.01,
                                nu=1.0, batch=256, tol=0.02, seed=0):
    """Pairs of (law ladder, field ladder): product of weak limits.

    Returns (passed, report): the oscillating-coefficient case with a
    fixed smooth field must converge below ``tol``; the constructed
    time-resonance (field oscillating at the law's own rate, no uniform
    derivative bound) must stay above it and is flagged.
    """
    t0 = time.perf_counter()
    n_values = list(n_values)
    if batch % (4 * max(n_values)) != 0:
        raise ValueError(f"batch={batch} must be a multiple of 4*max(n)")
    grid = TimeGrid(nu, dt, steps)
    x = (np.arange(batch) + 0.5) / batch
    space = BlockSpace.batch(x)
    testset = TestFunctionSet.build(grid, space)

    v = Field(grid, space, np.outer(
        bump(grid.times, 0.4 * grid.horizon, 0.3 * grid.horizon), bump(x, 0.5, 0.4)
    ).astype(complex))
    mean_g = weak_limit_coefficient(TWO_PHASE, breakpoints=[0.5])
    limit_pass = Field(grid, space, mean_g * v.data)

    pass_gaps = []
    for n in n_values:
        m_n = SpaceMul(space, [TWO_PHASE(fractional_part(n * x)).astype(complex)])
        prod = m_n.apply(v)
        gap = max(
            abs(field_inner(Field(grid, space, prod.data - limit_pass.data), phi))
            for phi in testset
        )
        pass_gaps.append(gap / max(field_norm(prod), 1e-300))
    passed_case = pass_gaps[-1] <= tol

    # resonance violation: field oscillates at the law's own rate in time
    viol_gaps, h1_surrogates = [], []
    base = np.outer(bump(grid.times, 0.4 * grid.horizon, 0.3 * grid.horizon),
                    bump(x, 0.5, 0.4))
    for n in n_values:
        mod = (1.0 + np.sin(n * grid.times))[:, None]
        v_n = Field(grid, space, (base * mod).astype(complex))
        m_n = TimeMul(lambda t, n=n: 2.0 + np.sin(n * t))
        prod = m_n.apply(v_n)
        # weak limits: v_n -> base, M_n -> 2; product candidate 2*base
        cand = Field(grid, space, 2.0 * base.astype(complex))
        gap = max(
            abs(field_inner(Field(grid, space, prod.data - cand.data), phi))
            for phi in testset
        )
        viol_gaps.append(gap / max(field_norm(prod), 1e-300))
        h1_surrogates.append(
            field_norm(Field(grid, space, d0_values(v_n.data, dt)))
            / max(field_norm(v_n), 1e-300)
        )
    violation_flagged = viol_gaps[-1] > 5 * tol
    hypothesis_violated = h1_surrogates[-1] > 3 * h1_surrogates[0]

    resonance_mean = weak_limit_coefficient(
        lambda s: (2.0 + np.sin(2 * np.pi * s)) * (1.0 + np.sin(2 * np.pi * s))
    )
    passed = passed_case and violation_flagged and hypothesis_violated
    report = ConvergenceReport(
        experiment="weak_strong",
        params={"steps": steps, "dt": dt, "nu": nu, "batch": batch, "tol": tol,
                "seed": seed},
        n_values=n_values,
        pairing_errors=np.array([pass_gaps]).T,
        fitted_rate=fitted_rate(n_values, pass_gaps),
        limit_description="product of weak limits under causal + derivative bounds",
        verdict="confirms" if passed else "inconclusive",
        oracle_values={
            "coefficient_mean": mean_g,
            "resonance_product_mean": resonance_mean,
            "product_of_means": 2.0,
        },
        extras={
            "pass_gaps": [float(gp) for gp in pass_gaps],
            "violation_gaps": [float(gp) for gp in viol_gaps],
            "derivative_surrogates": [float(h) for h in h1_surrogates],
            "hypothesis_violated_in_resonance_case": bool(hypothesis_violated),
        },
        elapsed=time.perf_counter() - t0,
    )
    return passed, report


def experiment_weak_strong(**kw):
    _, report = check_weak_strong_principle(**kw)
    return report
