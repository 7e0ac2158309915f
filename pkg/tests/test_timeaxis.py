import math

import numpy as np
import pytest

from evoconv.timeaxis import (
    TimeGrid,
    TimeSignal,
    GridMismatchError,
    apply_d0,
    apply_d0_inverse,
    apply_spectral_symbol,
    d0_inverse_adjoint_values,
    d0_inverse_norm_exact,
    fourier_laplace,
    inverse_fourier_laplace,
    operator_norm,
    time_shift,
    truncate_before,
    weighted_inner_product,
    weighted_norm,
)


def bump(t, center, width):
    s = (t - center) / width
    out = np.zeros_like(t)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def test_inner_product_zero():
    g = TimeGrid(nu=1.0, dt=0.1, steps=16)
    z = TimeSignal(g, np.zeros(16))
    assert weighted_inner_product(z, z) == 0.0


def test_inner_product_weights_cancel():
    g = TimeGrid(nu=0.7, dt=0.05, steps=64)
    u = TimeSignal(g, np.exp(g.nu * g.times))
    assert weighted_inner_product(u, u).real == pytest.approx(64 * 0.05, rel=1e-13)


def test_inner_product_geometric_sum():
    # left-rectangle sum of exp(-2 t): exact geometric value, continuum within 1%
    g = TimeGrid(nu=1.0, dt=0.01, steps=1000)
    u = TimeSignal(g, np.ones(1000))
    got = weighted_inner_product(u, u).real
    r = math.exp(-2 * g.nu * g.dt)
    geometric = g.dt * (1 - r**1000) / (1 - r)
    assert got == pytest.approx(geometric, rel=1e-12)
    continuum = (1 - math.exp(-20.0)) / 2
    assert abs(got - continuum) <= 0.01 * got


def test_inner_product_grid_mismatch():
    u = TimeSignal(TimeGrid(1.0, 0.1, 8), np.ones(8))
    v = TimeSignal(TimeGrid(1.0, 0.2, 8), np.ones(8))
    with pytest.raises(GridMismatchError):
        weighted_inner_product(u, v)


def test_inner_product_sesquilinear():
    g = TimeGrid(nu=2.0, dt=0.02, steps=128)
    rng = np.random.default_rng(3)
    u = TimeSignal(g, rng.standard_normal(128) + 1j * rng.standard_normal(128))
    v = TimeSignal(g, rng.standard_normal(128) + 1j * rng.standard_normal(128))
    a = 0.3 - 1.7j
    left = weighted_inner_product(TimeSignal(g, a * u.values), v)
    assert left == pytest.approx(a * weighted_inner_product(u, v), rel=1e-12)
    right = weighted_inner_product(u, TimeSignal(g, a * v.values))
    assert right == pytest.approx(np.conj(a) * weighted_inner_product(u, v), rel=1e-12)
    assert weighted_inner_product(u, u).real >= 0


def test_d0_of_zero_and_ramp():
    g = TimeGrid(1.0, 0.25, 32)
    assert np.all(apply_d0(TimeSignal(g, np.zeros(32))).values == 0)
    ramp = apply_d0(TimeSignal(g, g.times))
    assert ramp.values[0] == 0.0
    assert np.allclose(ramp.values[1:], 1.0, rtol=1e-13)


def test_d0_inverse_pair_exact():
    g = TimeGrid(1.5, 0.01, 300)
    rng = np.random.default_rng(11)
    f = TimeSignal(g, rng.standard_normal(300) + 1j * rng.standard_normal(300))
    back = apply_d0(apply_d0_inverse(f))
    assert np.max(np.abs(back.values - f.values)) <= 1e-13 * np.max(np.abs(f.values))
    forth = apply_d0_inverse(apply_d0(f))
    assert np.max(np.abs(forth.values - f.values)) <= 1e-13 * np.max(np.abs(f.values))


def test_d0_inverse_cumsum_of_ones():
    g = TimeGrid(1.0, 0.5, 10)
    out = apply_d0_inverse(TimeSignal(g, np.ones(10)))
    assert np.allclose(out.values, (np.arange(10) + 1) * 0.5, rtol=1e-14)


def test_d0_inverse_causal():
    g = TimeGrid(1.0, 0.05, 200)
    rng = np.random.default_rng(5)
    vals = rng.standard_normal(200)
    vals[g.times < 3.0] = 0.0
    out = apply_d0_inverse(TimeSignal(g, vals))
    assert np.all(out.values[g.times < 3.0] == 0.0)


def test_d0_inverse_norm_small_grid_svd_oracle():
    # dense singular-value oracle on K <= 64
    nu, dt, K = 1.0, 0.2, 64
    g = TimeGrid(nu, dt, K)
    mat = np.tril(np.ones((K, K))) * dt
    w = np.exp(-2 * nu * g.times)
    sv = np.linalg.svd((np.sqrt(w)[:, None] * mat) / np.sqrt(w)[None, :], compute_uv=False)
    measured = operator_norm(apply_d0_inverse, g)
    assert measured == pytest.approx(sv[0], rel=1e-6)
    # closed form dominates the finite section and tends to 1/nu from above
    cf = d0_inverse_norm_exact(g)
    assert measured <= cf * (1 + 1e-9)
    assert cf >= 1.0 / nu
    assert d0_inverse_norm_exact(TimeGrid(nu, dt / 8, K)) < cf


def test_d0_inverse_norm_closed_form_large_grid():
    g = TimeGrid(1.0, 0.01, 8192)
    measured = operator_norm(
        apply_d0_inverse,
        g,
        adjoint=lambda v: d0_inverse_adjoint_values(np.asarray(v, complex), g),
    )
    assert measured == pytest.approx(d0_inverse_norm_exact(g), abs=1e-3)
    assert measured >= 1.0 / g.nu


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0, 4.0])
@pytest.mark.parametrize("dt", [1e-2, 1e-3])
def test_d0_inverse_norm_bound(nu, dt):
    K = 1024
    g = TimeGrid(nu, dt, K)
    measured = operator_norm(
        apply_d0_inverse,
        g,
        adjoint=lambda v: d0_inverse_adjoint_values(np.asarray(v, complex), g),
    )
    assert measured <= 1.0 / nu + nu * math.e * dt


def test_fourier_laplace_roundtrip():
    g = TimeGrid(1.0, 0.02, 200)  # nu*T = 4, amplification stays harmless
    assert np.all(fourier_laplace(TimeSignal(g, np.zeros(200))).coefficients == 0)
    rng = np.random.default_rng(7)
    u = TimeSignal(g, rng.standard_normal(200) + 1j * rng.standard_normal(200))
    back = inverse_fourier_laplace(fourier_laplace(u))
    rel = np.linalg.norm(back.values - u.values) / np.linalg.norm(u.values)
    assert rel <= 1e-12


def test_spectral_d0_inverse_matches_cumsum():
    g = TimeGrid(1.0, 1e-3, 2000)
    u = TimeSignal(g, bump(g.times, 0.8, 0.35))
    spectral = apply_spectral_symbol(u, lambda z: z, pad_factor=4)
    direct = apply_d0_inverse(u)
    err = weighted_norm(TimeSignal(g, spectral.values - direct.values))
    assert err <= 1e-2 * weighted_norm(direct)


def test_truncate_before():
    g = TimeGrid(1.0, 0.1, 50)
    rng = np.random.default_rng(1)
    u = TimeSignal(g, rng.standard_normal(50) + 1j * rng.standard_normal(50))
    assert np.all(truncate_before(u, 0.0).values == 0)
    assert np.all(truncate_before(u, -1.0).values == 0)
    assert np.all(truncate_before(u, g.horizon + 1).values == u.values)
    t2 = truncate_before(truncate_before(u, 2.0), 2.0)
    assert np.all(t2.values == truncate_before(u, 2.0).values)
    v = TimeSignal(g, rng.standard_normal(50) + 1j * rng.standard_normal(50))
    lhs = weighted_inner_product(truncate_before(u, 2.0), v)
    rhs = weighted_inner_product(u, truncate_before(v, 2.0))
    assert abs(lhs - rhs) <= 1e-14 * weighted_norm(u) * weighted_norm(v)


def test_time_shift_identity_and_impulse():
    g = TimeGrid(1.0, 0.1, 20)
    imp = np.zeros(20)
    imp[0] = 1.0
    u = TimeSignal(g, imp)
    assert np.all(time_shift(u, 0.0).values == u.values)
    delayed = time_shift(u, -g.dt)
    assert delayed.values[1] == 1.0 and np.sum(np.abs(delayed.values)) == 1.0


def test_time_shift_alignment_error():
    g = TimeGrid(1.0, 0.1, 20)
    u = TimeSignal(g, np.zeros(20))
    with pytest.raises(ValueError, match="nearest admissible"):
        time_shift(u, 0.13)


def test_time_shift_converges_on_bump():
    g = TimeGrid(1.0, 0.01, 400)
    u = TimeSignal(g, bump(g.times, 2.0, 1.0))
    errs = [
        weighted_norm(TimeSignal(g, time_shift(u, -eps).values - u.values))
        for eps in (8 * g.dt, 4 * g.dt, 2 * g.dt, g.dt)
    ]
    assert all(a > b for a, b in zip(errs, errs[1:]))


def test_operator_norm_identity():
    g = TimeGrid(1.0, 0.05, 128)
    assert operator_norm(lambda v: v, g) == pytest.approx(1.0, abs=1e-6)


def test_operator_norm_nonconvergence_carries_estimate():
    from evoconv.timeaxis import OperatorNormError

    g = TimeGrid(1.0, 0.05, 64)
    try:
        operator_norm(apply_d0_inverse, g, max_iter=2)
    except OperatorNormError as exc:
        assert exc.last_estimate > 0
    else:  # pragma: no cover
        pytest.fail("expected non-convergence")


def test_convolution_norm_decays_with_nu_young_bound():
    K, dt = 256, 0.05
    kernel = np.exp(-np.arange(K) * dt)

    def conv(values):
        out = np.convolve(values, kernel)[:K] * dt
        return out

    norms = []
    for nu in (1.0, 2.0, 4.0, 8.0):
        g = TimeGrid(nu, dt, K)
        measured = operator_norm(conv, g)
        young = dt * np.sum(np.abs(kernel) * np.exp(-nu * g.times))
        assert measured <= young * (1 + 1e-9)
        norms.append(measured)
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_positivity_of_d0_with_truncation():
    # Re<d0 u, 1_{<a} u> >= nu' <u, 1_{<a} u> with nu' = (1-exp(-2 nu dt))/(2 dt);
    # the deficit nu - nu' vanishes linearly in dt
    rng = np.random.default_rng(9)
    deficits = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        nu = 1.0
        K = int(2.0 / dt)
        g = TimeGrid(nu, dt, K)
        nu_prime = (1 - math.exp(-2 * nu * dt)) / (2 * dt)
        worst = np.inf
        for _ in range(20):
            u = TimeSignal(g, rng.standard_normal(K) + 1j * rng.standard_normal(K))
            a = rng.uniform(0.2, 2.2)
            tu = truncate_before(u, a)
            num = weighted_inner_product(apply_d0(u), tu).real
            den = weighted_inner_product(u, tu).real
            if den > 1e-12:
                worst = min(worst, num / den)
        assert worst >= nu_prime * (1 - 1e-10)
        deficits.append(nu - nu_prime)
    assert deficits[0] / deficits[1] == pytest.approx(2.0, rel=0.05)
    assert deficits[1] / deficits[2] == pytest.approx(2.0, rel=0.05)
