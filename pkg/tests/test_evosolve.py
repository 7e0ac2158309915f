import numpy as np
import pytest

from evoconv.evosolve import (
    Problem,
    SolverError,
    continuity_bound,
    lattice_norm,
    solve,
    verify_continuity_estimate,
)
from evoconv.matlaw import (
    CustomLaw,
    D0Inverse,
    Product,
    Sum,
    estimate_positivity,
    identity,
    indicator,
    law_operator_norm,
    space_mul,
)
from evoconv.space1d import (
    BlockSpace,
    Field,
    SpaceGrid,
    assemble_block_A,
    field_norm,
    resolvent_A,
)
from evoconv.timeaxis import TimeGrid, d0_values, d0_inverse_norm_exact


def bump(t, center, width):
    s = (t - center) / width
    out = np.zeros_like(t)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def mixed_type_law(space):
    m0 = space_mul(
        space,
        [
            indicator([(0.0, 0.25), (0.5, 0.75)]),
            indicator([(0.0, 0.25), (0.75, 1.0)]),
        ],
    )
    m1 = space_mul(
        space,
        [
            indicator([(0.25, 0.5), (0.75, 1.0)]),
            indicator([(0.25, 0.5), (0.5, 0.75)]),
        ],
    )
    return Sum([m0, Product([D0Inverse(), m1])])


def mixed_type_problem(n_cells=16, steps=128, dt=0.02, nu=1.0, seed=0):
    grid = TimeGrid(nu, dt, steps)
    sg = SpaceGrid(n_cells)
    space = BlockSpace.staggered(sg)
    a = assemble_block_A(sg)
    f = Field.zeros(grid, space)
    f.block_u[:] = np.outer(bump(grid.times, 0.8, 0.6), bump(space.coords[0], 0.45, 0.35))
    return Problem(mixed_type_law(space), a, f), grid, space


def test_pure_integration():
    grid = TimeGrid(1.0, 0.01, 200)
    space = BlockSpace.point()
    f = Field(grid, space, np.ones((200, 1), dtype=complex))
    rep = solve(Problem(identity(space), None, f), with_bound=False)
    # backward-difference integration of 1 gives t_k + dt exactly
    assert np.allclose(rep.u.data[:, 0], grid.times + grid.dt, atol=1e-13)


def test_scalar_ode_oracle():
    errs = {}
    for dt in (0.01, 0.005):
        grid = TimeGrid(1.0, dt, int(4.0 / dt))
        space = BlockSpace.point()
        f = Field(grid, space, np.ones((grid.steps, 1), dtype=complex))
        rep = solve(Problem(identity(space), 1.0, f), with_bound=False)
        exact = 1.0 - np.exp(-grid.times)
        errs[dt] = np.max(np.abs(rep.u.data[:, 0] - exact))
        assert errs[dt] <= 2 * dt
        assert rep.residual_norm <= 1e-10 * rep.f_norm
    assert errs[0.01] / errs[0.005] == pytest.approx(2.0, rel=0.15)


def test_mixed_type_solve_residual_causality_and_bound():
    problem, grid, space = mixed_type_problem()
    c = estimate_positivity(problem.M, grid, space, probes=8).c_estimate
    rep = solve(problem, c=c)
    assert rep.residual_norm <= 1e-10 * rep.f_norm
    assert verify_continuity_estimate(rep)
    assert rep.lattice_norm <= rep.bound_rhs * 1.05

    # causality: delayed forcing produces exactly delayed support
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = rng.uniform(0.5, 1.5)
        data = rng.standard_normal((grid.steps, space.total))
        data[grid.times < a] = 0.0
        fd = Field(grid, space, data.astype(complex))
        rd = solve(Problem(problem.M, problem.A, fd), with_bound=False)
        leak = np.where((grid.times < a)[:, None], rd.u.data, 0.0)
        assert field_norm(Field(grid, space, leak)) <= 1e-11 * field_norm(fd)


def test_solve_linearity():
    problem, grid, space = mixed_type_problem()
    rng = np.random.default_rng(1)
    f1 = Field(grid, space, rng.standard_normal((grid.steps, space.total)).astype(complex))
    f2 = Field(grid, space, rng.standard_normal((grid.steps, space.total)).astype(complex))
    a, b = 0.7, -1.3
    u1 = solve(Problem(problem.M, problem.A, f1), with_bound=False).u
    u2 = solve(Problem(problem.M, problem.A, f2), with_bound=False).u
    combo = Field(grid, space, a * f1.data + b * f2.data)
    u12 = solve(Problem(problem.M, problem.A, combo), with_bound=False).u
    gap = field_norm(Field(grid, space, u12.data - a * u1.data - b * u2.data))
    assert gap <= 1e-10 * field_norm(u12)


def test_grid_refinement_first_order_time_second_order_space():
    # spatial order: constant smooth coefficients, same dt, coarse vs fine grid
    errs = {}
    steps, dt = 96, 0.02
    for n in (16, 32):
        grid = TimeGrid(1.0, dt, steps)
        sg = SpaceGrid(n)
        space = BlockSpace.staggered(sg)
        law = Sum([space_mul(space, 0.5), Product([D0Inverse(), space_mul(space, 0.5)])])
        f = Field.zeros(grid, space)
        f.block_u[:] = np.outer(
            bump(grid.times, 0.8, 0.6), np.sin(np.pi * space.coords[0])
        )
        rep = solve(Problem(law, assemble_block_A(sg), f), with_bound=False)
        errs[n] = rep
    fine_n = 128
    grid = TimeGrid(1.0, dt, steps)
    sgf = SpaceGrid(fine_n)
    spf = BlockSpace.staggered(sgf)
    lawf = Sum([space_mul(spf, 0.5), Product([D0Inverse(), space_mul(spf, 0.5)])])
    ff = Field.zeros(grid, spf)
    ff.block_u[:] = np.outer(bump(grid.times, 0.8, 0.6), np.sin(np.pi * spf.coords[0]))
    fine = solve(Problem(lawf, assemble_block_A(sgf), ff), with_bound=False)

    def node_error(rep, n):
        stride = fine_n // n
        shared_fine = fine.u.block_u[:, stride - 1 :: stride]
        # interior nodes i/n, i=1..n-1 coincide with fine nodes at stride i
        shared_fine = fine.u.block_u[:, np.arange(1, n) * stride - 1]
        return np.max(np.abs(rep.u.block_u - shared_fine))

    e16 = node_error(errs[16], 16)
    e32 = node_error(errs[32], 32)
    assert e16 / e32 == pytest.approx(4.0, rel=0.5)


def test_lattice_norm_definitions():
    grid = TimeGrid(1.0, 0.02, 96)
    sg = SpaceGrid(12)
    space = BlockSpace.staggered(sg)
    a = assemble_block_A(sg)
    zero = Field.zeros(grid, space)
    assert lattice_norm(zero, a) == 0.0

    # u with (A+1)u = d0 w  ->  |u|_{-1,1} = |w|
    rng = np.random.default_rng(2)
    w = Field(grid, space, rng.standard_normal((grid.steps, space.total)).astype(complex))
    dw = d0_values(w.data, grid.dt)
    u = Field(grid, space, resolvent_A(a, 1.0, dw))
    assert lattice_norm(u, a) == pytest.approx(field_norm(w), rel=1e-9)

    # generic bound through the inverse-derivative norm
    u2 = Field(grid, space, rng.standard_normal((grid.steps, space.total)).astype(complex))
    z = Field(grid, space, a.apply_flat(u2.data) + u2.data)
    assert lattice_norm(u2, a) <= d0_inverse_norm_exact(grid) * field_norm(z) * (1 + 1e-9)


def test_continuity_estimate_scalar_case():
    grid = TimeGrid(1.0, 0.01, 300)
    space = BlockSpace.point()
    f = Field(grid, space, bump(grid.times, 1.2, 0.8)[:, None].astype(complex))
    rep = solve(Problem(identity(space), 1.0, f))
    # nu = 1, |M| = 1, c ~ 1: bound ~ 3 |f|
    assert rep.bound_rhs == pytest.approx(3.0 * rep.f_norm, rel=0.05)
    assert verify_continuity_estimate(rep)
    zero = Field.zeros(grid, space)
    zrep = solve(Problem(identity(space), 1.0, zero), with_bound=False)
    assert zrep.lattice_norm == 0.0 and zrep.f_norm == 0.0


def test_continuity_estimate_mixed_type_random_bumps():
    problem, grid, space = mixed_type_problem()
    c = estimate_positivity(problem.M, grid, space, probes=8).c_estimate
    m_norm = law_operator_norm(problem.M, grid, space, tol=1e-7)
    rng = np.random.default_rng(3)
    for _ in range(10):
        center = rng.uniform(0.5, 1.5)
        width = rng.uniform(0.3, 0.6)
        f = Field.zeros(grid, space)
        f.block_u[:] = np.outer(
            bump(grid.times, center, width), bump(space.coords[0], 0.5, 0.4)
        )
        f.block_v[:] = 0.3 * np.outer(
            bump(grid.times, center + 0.2, width), bump(space.coords[1], 0.6, 0.3)
        )
        rep = solve(Problem(problem.M, problem.A, f), c=c, m_norm=m_norm)
        assert verify_continuity_estimate(rep)


def test_singular_step_matrix_reports_step_and_pivot():
    grid = TimeGrid(1.0, 0.1, 8)
    space = BlockSpace.point()
    f = Field(grid, space, np.ones((8, 1), dtype=complex))
    with pytest.warns(UserWarning):
        with pytest.raises(SolverError, match="step 0"):
            solve(Problem(space_mul(space, 0.0), None, f), with_bound=False)


def test_non_causal_law_rejected():
    grid = TimeGrid(1.0, 0.1, 8)
    space = BlockSpace.point()
    f = Field(grid, space, np.ones((8, 1), dtype=complex))
    law = CustomLaw(lambda data, g: data, causal=False)
    with pytest.raises(SolverError, match="non-causal"):
        solve(Problem(law, None, f), with_bound=False)
