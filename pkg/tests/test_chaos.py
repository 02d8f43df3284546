import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from conftest import spec_from_fractions
from levelcurves.chaos import (
    _norm_expansion_poly_exact,
    asymptotic_variance_constants,
    chaos_projection_quadrature,
    chaos_projections_quadrature,
    chaos_table,
    first_chaos_projection,
    higher_chaos_tail_estimate,
    level_hermite_coeff,
    norm_expansion_poly,
    norm_hermite_coeff,
    sample_power_spectrum,
    second_chaos_sample_spectrum,
    second_chaos_hermite_form,
    second_chaos_variance_exact,
    second_chaos_weight,
)
from levelcurves.geometry import boundary_functional
from levelcurves.special import gaussian_density
from levelcurves.spectrum import MultipoleEntry, classify_regime, make_spectrum
from levelcurves.synthesis import HarmonicBasis, TimeGrid, build_icosphere, \
    sample_time_processes

LONG_SPEC = None


def setup_module():
    global LONG_SPEC
    LONG_SPEC = spec_from_fractions({0: (0.3, 0.9, None), 1: (0.45, 0.3, None),
                                     3: (0.25, 0.8, None)})


# ----------------------------------------------------------------------
# Expansion coefficients
# ----------------------------------------------------------------------

def test_norm_expansion_poly_values():
    assert norm_expansion_poly(0, 123.4) == 1.0
    assert norm_expansion_poly(1, 0.25) == pytest.approx(0.5, abs=1e-15)
    # high-precision oracle: exact rational evaluation
    exact = _norm_expansion_poly_exact(2, Fraction(1, 4))
    assert exact == Fraction(-1, 8)
    assert norm_expansion_poly(2, 0.25) == pytest.approx(float(exact), rel=1e-14)
    for order in range(8):
        exact = float(_norm_expansion_poly_exact(order, Fraction(1, 4)))
        assert norm_expansion_poly(order, 0.25) == pytest.approx(exact, rel=1e-12)


def test_norm_hermite_coeff_exact_values():
    assert norm_hermite_coeff(0, 0) == math.sqrt(math.pi / 2)
    assert norm_hermite_coeff(2, 0) == 0.5 * math.sqrt(math.pi / 2)
    assert norm_hermite_coeff(1, 2) == 0.0
    assert norm_hermite_coeff(3, 3) == 0.0
    for n in range(0, 7, 2):
        for m in range(0, 7, 2):
            assert norm_hermite_coeff(n, m) == norm_hermite_coeff(m, n)


def test_norm_hermite_coeff_monte_carlo_oracle():
    rng = np.random.default_rng(515)
    g = rng.standard_normal((10**6, 2))
    norms = np.hypot(g[:, 0], g[:, 1])
    se = norms.std(ddof=1) / 1000.0
    assert abs(norms.mean() - math.sqrt(math.pi / 2)) < 4 * se


def test_chaos_table_weights():
    u = 0.8
    s1 = 1.7
    table = chaos_table(u, 4, sigma1=s1)
    phi = gaussian_density(u)
    expected_200 = s1 * math.sqrt(math.pi / 2) * phi * (u * u - 1) / 2.0
    assert table.weight(2, 0, 0) == pytest.approx(expected_200, rel=1e-14)
    expected_222 = s1 * 0.5 * math.sqrt(math.pi / 2) * phi / 2.0
    assert table.weight(2, 2, 2) == pytest.approx(expected_222, rel=1e-14)
    # odd alpha arguments vanish
    for q in range(5):
        for m in range(q + 1):
            for k in range(m + 1):
                if k % 2 or (m - k) % 2:
                    assert table.weight(q, m, k) == 0.0
    assert level_hermite_coeff(2, u) == pytest.approx(phi * (u * u - 1),
                                                      rel=1e-14)
    with pytest.raises(ValueError):
        chaos_table(0.0, 13)


# ----------------------------------------------------------------------
# Sample power spectrum
# ----------------------------------------------------------------------

def test_sample_power_spectrum_mean_and_monopole():
    grid = TimeGrid(0.5, 41)
    reps = 400
    means = []
    for s in np.random.SeedSequence(31).spawn(reps):
        ens = sample_time_processes(LONG_SPEC, grid, s)
        means.append(sample_power_spectrum(ens, 1).values.mean())
    means = np.asarray(means)
    se = means.std(ddof=1) / math.sqrt(reps)
    assert abs(means.mean() - LONG_SPEC.entry(1).c0) < 4 * se

    ens = sample_time_processes(LONG_SPEC, grid, 77)
    path = sample_power_spectrum(ens, 0)
    assert np.allclose(path.values, ens.path(0, 0) ** 2)
    assert np.all(path.values >= 0)
    with pytest.raises(ValueError):
        sample_power_spectrum(ens, 2)


def test_sample_power_spectrum_equals_multipole_energy(mesh5):
    # (2l+1) Chat_l(t) = integral of Z_l^2 over the sphere
    basis = HarmonicBasis(mesh5, LONG_SPEC.ells)
    grid = TimeGrid(0.5, 3)
    ens = sample_time_processes(LONG_SPEC, grid, 99)
    from levelcurves.synthesis import synthesize_multipole_slice

    for ell in (1, 3):
        path = sample_power_spectrum(ens, ell)
        for k in range(grid.n_steps):
            sl = synthesize_multipole_slice(ens, basis, ell, k,
                                            with_gradient=False)
            quad = float(mesh5.vertex_weights @ sl.values**2)
            assert quad == pytest.approx((2 * ell + 1) * path.values[k],
                                         rel=1e-3)


# ----------------------------------------------------------------------
# Closed-form projections
# ----------------------------------------------------------------------

def test_first_chaos_zero_at_zero_level_and_linearity():
    grid = TimeGrid(0.25, 81)
    ens = sample_time_processes(LONG_SPEC, grid, 5)
    assert first_chaos_projection(ens, 0.0) == 0.0
    doubled = replace(ens, coeffs=2.0 * ens.coeffs)
    assert first_chaos_projection(doubled, 0.7) == pytest.approx(
        2.0 * first_chaos_projection(ens, 0.7), rel=1e-14)
    mono = make_spectrum([MultipoleEntry(2, 1.0, 0.5)], require_monopole=False)
    ens2 = sample_time_processes(mono, grid, 5)
    with pytest.raises(ValueError):
        first_chaos_projection(ens2, 0.5)


def test_first_chaos_variance_matches_closed_form():
    # exact finite-horizon variance: (sigma1 sqrt(2) pi u phi(u))^2 *
    # double time integral of C_0, via quadrature
    from scipy import integrate

    spec = spec_from_fractions({0: (0.5, 0.4, None), 2: (0.5, 0.8, None)})
    grid = TimeGrid(0.25, 401)
    T = grid.horizon
    u = 1.0
    reps = 1500
    vals = np.array([
        first_chaos_projection(sample_time_processes(spec, grid, s), u)
        for s in np.random.SeedSequence(2027).spawn(reps)
    ])
    e0 = spec.entry(0)
    inner = 2 * integrate.quad(
        lambda tau: (T - tau) * e0.c0 * (1 + tau) ** (-e0.beta), 0, T,
        limit=400)[0]
    k = math.sqrt(spec.sigma1_sq) * math.sqrt(2.0) * math.pi * u \
        * gaussian_density(u)
    expected = k * k * inner
    assert vals.var(ddof=1) == pytest.approx(expected, rel=0.15)
    assert abs(vals.mean()) < 4 * vals.std(ddof=1) / math.sqrt(reps)


def test_second_chaos_spectral_equals_hermite_form():
    grid = TimeGrid(0.25, 201)
    for seed in (1, 2, 3):
        ens = sample_time_processes(LONG_SPEC, grid, seed)
        for u in (0.0, 0.5, 1.3):
            a = second_chaos_sample_spectrum(ens, u)
            b = second_chaos_hermite_form(ens, u)
            assert a == pytest.approx(b, rel=1e-10)


def test_second_chaos_monochromatic_reduction():
    # single multipole: the projection collapses to
    # sqrt(lambda/2) (1/2) sqrt(pi/2) u^2 phi(u) int int H_2(Z_ell)
    ell = 2
    mono = make_spectrum([MultipoleEntry(ell, 1.0, 0.3)], require_monopole=False)
    grid = TimeGrid(0.25, 201)
    ens = sample_time_processes(mono, grid, 9)
    u = 0.85
    rows = ens.rows_for(ell)
    e = mono.entry(ell)
    ahat_sq = ens.coeffs[rows] ** 2 / e.c0
    sphere_h2 = (4 * math.pi / (2 * ell + 1)) * (ahat_sq - 1.0).sum(axis=0)
    time_int = np.trapezoid(sphere_h2, dx=grid.dt)
    lam = ell * (ell + 1)
    expected = math.sqrt(lam / 2.0) * 0.5 * math.sqrt(math.pi / 2) \
        * u * u * gaussian_density(u) * (2 * ell + 1) * e.c0 / (4 * math.pi) \
        * time_int
    assert second_chaos_sample_spectrum(ens, u) == pytest.approx(expected,
                                                                 rel=1e-10)


def test_second_chaos_weight_structure():
    # weight is affine in u^2 with unit slope, and vanishes exactly at the
    # cancellation level
    spec = spec_from_fractions({0: (0.35, 1.0, 2.2), 1: (0.5, 0.2, None),
                                4: (0.15, 0.9, None)})
    for ell in (0, 1, 4):
        w0 = second_chaos_weight(spec, ell, 0.0)
        for u in (0.3, 0.9, 1.7):
            assert second_chaos_weight(spec, ell, u) - u * u == pytest.approx(
                w0, rel=1e-12)
    rep = classify_regime(spec)
    u_star = rep.berry_levels[1]
    assert second_chaos_weight(spec, rep.ell_star, u_star) == pytest.approx(
        0.0, abs=1e-14)


def test_perfect_correlation_with_sample_spectrum_monochromatic():
    mono = make_spectrum([MultipoleEntry(2, 1.0, 0.25)], require_monopole=False)
    grid = TimeGrid(0.25, 401)
    u = 0.6
    xs, ys = [], []
    for s in np.random.SeedSequence(41).spawn(60):
        ens = sample_time_processes(mono, grid, s)
        xs.append(second_chaos_sample_spectrum(ens, u))
        ys.append(sample_power_spectrum(ens, 2).centered_integral)
    corr = np.corrcoef(xs, ys)[0, 1]
    assert abs(abs(corr) - 1.0) < 1e-10


# ----------------------------------------------------------------------
# Quadrature projections
# ----------------------------------------------------------------------

def test_quadrature_q1_matches_closed_form(mesh5):
    basis = HarmonicBasis(mesh5, LONG_SPEC.ells)
    grid = TimeGrid(0.5, 11)
    ens = sample_time_processes(LONG_SPEC, grid, 21)
    for u in (0.4, 1.1):
        quad = chaos_projection_quadrature(ens, basis, u, 1)
        closed = first_chaos_projection(ens, u)
        assert quad == pytest.approx(closed, abs=1e-8 * max(1, abs(closed)))


def test_quadrature_q2_matches_spectral(mesh5):
    basis = HarmonicBasis(mesh5, LONG_SPEC.ells)
    grid = TimeGrid(0.5, 11)
    u = 0.5
    quads, specs = [], []
    for s in np.random.SeedSequence(22).spawn(10):
        ens = sample_time_processes(LONG_SPEC, grid, s)
        quads.append(chaos_projection_quadrature(ens, basis, u, 2))
        specs.append(second_chaos_sample_spectrum(ens, u))
    quads = np.asarray(quads)
    specs = np.asarray(specs)
    rms = math.sqrt(np.mean((quads - specs) ** 2) / np.mean(specs**2))
    assert rms < 0.01


def test_higher_projections_are_centered(mesh3):
    basis = HarmonicBasis(mesh3, LONG_SPEC.ells)
    grid = TimeGrid(0.5, 11)
    reps = 300
    vals = {3: [], 4: []}
    for s in np.random.SeedSequence(23).spawn(reps):
        ens = sample_time_processes(LONG_SPEC, grid, s)
        proj = chaos_projections_quadrature(ens, basis, 0.5, [3, 4])
        vals[3].append(proj[3])
        vals[4].append(proj[4])
    for q in (3, 4):
        arr = np.asarray(vals[q])
        se = arr.std(ddof=1) / math.sqrt(reps)
        assert abs(arr.mean()) < 4 * se


def test_chaos_orthogonality_and_expansion_consistency(mesh3):
    basis = HarmonicBasis(mesh3, LONG_SPEC.ells)
    grid = TimeGrid(0.5, 101)
    u = 0.5
    reps = 500
    projs = np.empty((reps, 4))
    totals = np.empty(reps)
    for i, s in enumerate(np.random.SeedSequence(24).spawn(reps)):
        ens = sample_time_processes(LONG_SPEC, grid, s)
        proj = chaos_projections_quadrature(ens, basis, u, [1, 2, 3, 4])
        projs[i] = [proj[q] for q in (1, 2, 3, 4)]
        totals[i] = boundary_functional(ens, basis, u).centered
    # pairwise orthogonality: empirical correlations within 4 SE of zero
    for a in range(4):
        for b in range(a + 1, 4):
            r = np.corrcoef(projs[:, a], projs[:, b])[0, 1]
            assert abs(r) < 4 / math.sqrt(reps)
    # variance decomposition: Var(total) - sum_q Var(proj_q) - Var(resid)
    # collects only cross terms, centered at zero under orthogonality;
    # bootstrap its standard error
    resid = totals - projs.sum(axis=1)

    def identity_residual(idx):
        t = totals[idx]
        p = projs[idx]
        r = resid[idx]
        return t.var(ddof=1) - p.var(axis=0, ddof=1).sum() - r.var(ddof=1)

    observed = identity_residual(np.arange(reps))
    rng = np.random.default_rng(7)
    boots = np.array([
        identity_residual(rng.integers(0, reps, size=reps))
        for _ in range(300)
    ])
    assert abs(observed) < 4 * boots.std(ddof=1)


# ----------------------------------------------------------------------
# Variance formulas
# ----------------------------------------------------------------------

def test_exact_variance_matches_prop_constants_at_large_horizon():
    spec = spec_from_fractions({0: (0.35, 1.0, 2.2), 1: (0.5, 0.2, None),
                                4: (0.15, 0.9, None)})
    u = 0.4
    consts = asymptotic_variance_constants(spec, u)
    assert consts.long_constant is not None
    T = 1e4
    ratio = second_chaos_variance_exact(spec, u, T) \
        / (T ** 1.6 * consts.long_constant)
    assert ratio == pytest.approx(1.0, abs=0.05)


def test_asymptotic_constants_cancellation_structure():
    spec = spec_from_fractions({0: (0.35, 1.0, 2.2), 1: (0.5, 0.2, None),
                                4: (0.15, 0.9, None)})
    rep = classify_regime(spec)
    u_star = rep.berry_levels[1]
    assert asymptotic_variance_constants(spec, u_star).long_constant \
        == pytest.approx(0.0, abs=1e-20)
    # two slowest multipoles: no level cancels both weights
    twin = spec_from_fractions({0: (0.35, 1.0, 2.2), 1: (0.3, 0.2, None),
                                2: (0.35, 0.2, None)})
    for u in np.linspace(0, 2, 21):
        assert asymptotic_variance_constants(twin, u).long_constant > 0.0


def test_asymptotic_constants_regimes():
    short = spec_from_fractions({0: (0.5, 1.0, 2.0), 2: (0.5, 0.8, None)})
    consts = asymptotic_variance_constants(short, 0.5)
    assert consts.short_constant is not None and consts.long_constant is None
    boundary = spec_from_fractions({0: (0.5, 0.5, None), 1: (0.5, 0.3, None)})
    consts_b = asymptotic_variance_constants(boundary, 0.5)
    assert consts_b.long_constant is None and consts_b.short_constant is None


def test_second_chaos_variance_monte_carlo_small_scale():
    # compressed version of the acceptance run: 600 replicates, T = 120
    spec = spec_from_fractions({0: (0.12, 0.9, None), 2: (0.40, 0.2, None),
                                4: (0.48, 0.7, None)})
    grid = TimeGrid(0.25, 481)
    u = 0.5
    reps = 600
    vals = np.array([
        second_chaos_sample_spectrum(sample_time_processes(spec, grid, s), u)
        for s in np.random.SeedSequence(2025).spawn(reps)
    ])
    expected = second_chaos_variance_exact(spec, u, grid.horizon)
    assert vals.var(ddof=1) == pytest.approx(expected, rel=0.2)


# ----------------------------------------------------------------------
# Higher-order tail
# ----------------------------------------------------------------------

@pytest.mark.slow
def test_higher_chaos_tail_estimate_long_memory(mesh3):
    spec = spec_from_fractions({0: (0.26, 1.0, 2.2), 1: (0.65, 0.2, None),
                                5: (0.09, 0.9, None)})
    est = higher_chaos_tail_estimate(
        spec, mesh3, 0.5, [250.0, 500.0, 1000.0, 2000.0],
        replicates=200, seed=314, dt=1.0)
    # growth exponent strictly below the leading 2 - 2 beta* = 1.6
    assert est.fitted_exponent < 1.5
    # tail share of the total variance decreasing in T
    assert est.tail_shares[-1] < est.tail_shares[0]


@pytest.mark.slow
def test_higher_chaos_tail_short_memory_is_linear(mesh3):
    spec = spec_from_fractions({0: (0.4, 1.0, 2.0), 2: (0.35, 1.0, 2.5),
                                3: (0.25, 1.0, 3.0)})
    est = higher_chaos_tail_estimate(
        spec, mesh3, 0.5, [250.0, 500.0, 1000.0, 2000.0],
        replicates=150, seed=217, dt=1.0)
    # Var(tail)/T bounded: fitted growth exponent close to linear
    assert est.fitted_exponent < 1.3
