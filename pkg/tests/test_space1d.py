import numpy as np
import pytest

from evoconv.space1d import (
    BlockSpace,
    Field,
    SpaceGrid,
    assemble_block_A,
    field_inner,
    field_norm,
    project_out_mean,
    resolvent_A,
)
from evoconv.timeaxis import TimeGrid


def test_grid_validation():
    with pytest.raises(ValueError):
        SpaceGrid(3)
    g = SpaceGrid(8)
    assert g.h * g.cells == 1.0
    assert g.node_count == 7 and g.edge_count == 8


def test_d1_max_kills_constants():
    a = assemble_block_A(SpaceGrid(16))
    const_cells = np.ones(16)
    assert np.all(a.d1_max @ const_cells == 0.0)


def test_d1_dirichlet_matches_analytic_derivative():
    errs = []
    for n in (64, 128):
        g = SpaceGrid(n)
        a = assemble_block_A(g)
        u = np.sin(np.pi * g.interior_nodes)
        du = a.d1_dirichlet @ u
        errs.append(np.max(np.abs(du - np.pi * np.cos(np.pi * g.midpoints))))
    assert errs[0] <= 5e-4
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_exact_skew_adjointness():
    g = SpaceGrid(32)
    a = assemble_block_A(g)
    assert np.max(np.abs((a.d1_dirichlet + a.d1_max.T).toarray())) <= 1e-14
    mat = a.matrix.toarray()
    rng = np.random.default_rng(0)
    total = g.node_count + g.edge_count
    for _ in range(20):
        w = rng.standard_normal(total) + 1j * rng.standard_normal(total)
        z = rng.standard_normal(total) + 1j * rng.standard_normal(total)
        s = np.vdot(z, mat @ w) + np.vdot(mat @ z, w)
        assert abs(s) <= 1e-13 * np.linalg.norm(w) * np.linalg.norm(z)


def test_resolvent_inverse_pair():
    g = SpaceGrid(24)
    a = assemble_block_A(g)
    total = g.node_count + g.edge_count
    assert np.all(resolvent_A(a, 1.0, np.zeros(total)) == 0.0)
    rng = np.random.default_rng(2)
    w = rng.standard_normal(total) + 1j * rng.standard_normal(total)
    rhs = a.matrix @ w + w
    got = resolvent_A(a, 1.0, rhs)
    assert np.linalg.norm(got - w) <= 1e-11 * np.linalg.norm(w)
    with pytest.raises(ValueError):
        resolvent_A(a, -0.5, rhs)


def test_rayleigh_quotients_purely_imaginary():
    g = SpaceGrid(20)
    a = assemble_block_A(g)
    mat = a.matrix.toarray()
    rng = np.random.default_rng(4)
    total = g.node_count + g.edge_count
    for _ in range(50):
        w = rng.standard_normal(total) + 1j * rng.standard_normal(total)
        q = np.vdot(w, mat @ w)
        assert abs(q.real) <= 1e-12 * np.vdot(w, w).real


def test_spectrum_against_analytic_eigenvalues():
    # eigenvalues of the block operator are +-i (2/h) sin(k pi h / 2) ~ +-i k pi,
    # plus one zero mode (constants in the cell block)
    n = 64
    g = SpaceGrid(n)
    a = assemble_block_A(g)
    mat = a.matrix.toarray()
    eigs = np.linalg.eigvals(mat)
    assert np.max(np.abs(eigs.real)) <= 1e-12
    mu = np.sort(np.abs(eigs.imag))
    assert mu[0] <= 1e-12  # zero mode
    discrete = mu[1::2]  # positive/negative pairs
    for k in range(1, 9):
        assert discrete[k - 1] == pytest.approx(k * np.pi, rel=2.7e-2)

    # compactness surrogate: singular values of (A+1)^{-1} decay like 1/k
    total = g.node_count + g.edge_count
    inv = np.linalg.inv(mat + np.eye(total))
    sv = np.sort(np.linalg.svd(inv, compute_uv=False))[::-1]
    expected = np.sort(1.0 / np.sqrt(1.0 + mu**2))[::-1]
    assert np.allclose(sv, expected, rtol=1e-10)
    # eigenvalues pair up as +-i mu_k, so sv index k corresponds to mu_{k/2}
    ks = np.arange(2, len(sv) // 2)
    ratios = sv[ks] * (ks * np.pi)
    assert np.all(ratios > 1.2) and np.all(ratios < 2.5)


def test_project_out_mean():
    rng = np.random.default_rng(6)
    v = rng.standard_normal(40) + 1j * rng.standard_normal(40)
    assert np.max(np.abs(project_out_mean(np.full(40, 3.7)))) == 0.0
    w = v - v.mean()
    assert np.allclose(project_out_mean(w), w, atol=1e-15)
    once = project_out_mean(v)
    assert np.allclose(project_out_mean(once), once, atol=1e-15)


def test_dirichlet_range_is_mean_free():
    g = SpaceGrid(48)
    a = assemble_block_A(g)
    rng = np.random.default_rng(8)
    u = rng.standard_normal(g.node_count) + 1j * rng.standard_normal(g.node_count)
    du = a.d1_dirichlet @ u
    assert np.allclose(project_out_mean(du), du, atol=1e-13 * np.linalg.norm(u))


def test_field_layout_and_norm():
    tg = TimeGrid(1.0, 0.05, 40)
    sg = SpaceGrid(8)
    space = BlockSpace.staggered(sg)
    assert space.sizes == (7, 8)
    f = Field.zeros(tg, space)
    assert field_norm(f) == 0.0
    f.block_u[:] = 1.0
    g = Field.zeros(tg, space)
    g.block_v[:] = 1.0
    assert abs(field_inner(f, g)) == 0.0
    with pytest.raises(ValueError):
        Field(tg, space, np.zeros((40, 3)))
    # norm splits over blocks: u-block carries (N-1) h mass per step
    expected = np.sqrt(np.sum(tg.step_weights) * 7 * sg.h)
    assert field_norm(f) == pytest.approx(expected, rel=1e-12)
