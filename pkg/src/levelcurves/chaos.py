"""Hermite/Wiener-chaos machinery for the boundary-length functional.

The centered, time-integrated level-curve length expands into orthogonal
chaos components

    C_T(u)[q] = sigma1 * sum over 0 <= k <= m <= q of
        alpha_(k, m-k) beta_(q-m)(u) / (k! (m-k)! (q-m)!)
        * int_0^T int_S2 H_(q-m)(Z) H_k(g1) H_(m-k)(g2) dx dt,

where g1, g2 are the frame gradients normalized by sigma1, beta_q(u) =
phi(u) H_q(u) are the Hermite coefficients of the level indicator, and the
alpha table carries the Hermite expansion of the Euclidean norm in the
plane (alpha vanishes unless both indices are even).

Two independent routes to the q = 2 component are provided: the
closed-form in terms of the sample power spectrum (no mesh), and the full
sphere-time quadrature of the triple-Hermite integrand (mesh); their
agreement is the strongest correctness lever in the package.

Variance formulas.  The exact second-chaos variance follows from the
sample-spectrum form and Cov(a^2(t), a^2(s)) = 2 C(t-s)^2:

    Var(C_T(u)[2]) = (sigma1^2 pi / 4) phi(u)^2
        * sum_ell (2 ell + 1) w_ell(u)^2 * int_[0,T]^2 C_ell(t-s)^2 dt ds,

with w_ell(u) = (u^2 - 1) + lambda_ell / (2 sigma1^2).  (The multiplicity
enters linearly: each multipole contributes 2 ell + 1 independent
coefficient paths of weight C_ell(0), and the spherical Legendre-square
integral cancels one 2 ell + 1 factor.)  Monte Carlo ensembles reproduce
this constant; see the regression tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import partial

import numpy as np

from . import mcstats
from .special import gaussian_density, hermite_rows
from .spectrum import (
    BOUNDARY,
    LONG_MEMORY,
    SHORT_MEMORY,
    classify_regime,
    double_time_integral_csq,
    integrated_sq_cov,
    sigma1_sq,
)
from .synthesis import HarmonicBasis, TimeGrid, sample_time_processes

__all__ = [
    "norm_expansion_poly",
    "norm_hermite_coeff",
    "level_hermite_coeff",
    "ChaosTable",
    "chaos_table",
    "SamplePowerSpectrumPath",
    "sample_power_spectrum",
    "first_chaos_projection",
    "second_chaos_sample_spectrum",
    "second_chaos_hermite_form",
    "chaos_projection_quadrature",
    "chaos_projections_quadrature",
    "second_chaos_weight",
    "second_chaos_variance_exact",
    "VarianceConstants",
    "asymptotic_variance_constants",
    "TailEstimate",
    "higher_chaos_tail_estimate",
]


# ----------------------------------------------------------------------
# Expansion coefficients
# ----------------------------------------------------------------------

def _norm_expansion_poly_exact(order, x):
    """p_N(x) with exact rational arithmetic (x a Fraction)."""
    total = Fraction(0)
    sign_n = (-1) ** order
    for j in range(order + 1):
        coeff = Fraction(
            math.comb(order, j) * math.factorial(2 * j + 1),
            math.factorial(j) ** 2,
        )
        total += (-1) ** j * sign_n * coeff * x**j
    return total


def norm_expansion_poly(order, x):
    """Polynomial p_N(x) = sum_j (-1)^j (-1)^N binom(N, j)
    (2j+1)!/(j!)^2 x^j entering the norm expansion coefficients."""
    order = int(order)
    if order < 0:
        raise ValueError("order must be >= 0")
    total = 0.0
    sign_n = (-1) ** order
    for j in range(order + 1):
        coeff = math.comb(order, j) * math.factorial(2 * j + 1) \
            / math.factorial(j) ** 2
        total += (-1) ** j * sign_n * coeff * float(x) ** j
    return total


def norm_hermite_coeff(n, m):
    """Hermite coefficient alpha_(n, m) of the planar norm ||.||; zero
    unless both indices are even, and for n = 2a, m = 2b

        alpha = sqrt(pi/2) (2a)!(2b)!/(a! b!) 2^-(a+b) p_(a+b)(1/4).

    The rational factor is accumulated exactly, so small coefficients such
    as alpha_(0,0) = sqrt(pi/2) and alpha_(2,0) = sqrt(pi/2)/2 are exact to
    the last bit.
    """
    n = int(n)
    m = int(m)
    if n < 0 or m < 0:
        raise ValueError("indices must be >= 0")
    if n % 2 or m % 2:
        return 0.0
    a, b = n // 2, m // 2
    ratio = Fraction(math.factorial(2 * a) * math.factorial(2 * b),
                     math.factorial(a) * math.factorial(b) * 2 ** (a + b))
    exact = ratio * _norm_expansion_poly_exact(a + b, Fraction(1, 4))
    return math.sqrt(math.pi / 2.0) * float(exact)


def level_hermite_coeff(order, u):
    """Hermite coefficient beta_q(u) = phi(u) H_q(u) of the level
    indicator at threshold u."""
    h = hermite_rows(int(order), float(u))
    return gaussian_density(u) * float(h[int(order)])


@dataclass(frozen=True)
class ChaosTable:
    """Assembled expansion weights for chaos orders up to q_max.

    ``weights[q, m, k]`` is sigma1 * alpha_(k, m-k) beta_(q-m)(u) /
    (k! (m-k)! (q-m)!), valid for k <= m <= q, zero elsewhere (including
    every term where k or m - k is odd, by the alpha parity).
    """

    level: float
    q_max: int
    sigma1: float
    alpha: np.ndarray
    beta: np.ndarray
    weights: np.ndarray

    def weight(self, q, m, k):
        return float(self.weights[q, m, k])

    def terms(self, q):
        """Nonzero (m, k, weight) triples of order q."""
        out = []
        for m in range(q + 1):
            for k in range(m + 1):
                w = self.weights[q, m, k]
                if w != 0.0:
                    out.append((m, k, float(w)))
        return out


def chaos_table(u, q_max, sigma1=1.0):
    """Populate the alpha/beta tables and the per-(q, m, k) weights."""
    q_max = int(q_max)
    if not 0 <= q_max <= 12:
        raise ValueError("q_max must lie in [0, 12] (factorial growth)")
    alpha = np.zeros((q_max + 1, q_max + 1))
    for n in range(0, q_max + 1, 2):
        for m in range(0, q_max + 1, 2):
            alpha[n, m] = norm_hermite_coeff(n, m)
    beta = np.array([level_hermite_coeff(l, u) for l in range(q_max + 1)])
    weights = np.zeros((q_max + 1,) * 3)
    for q in range(q_max + 1):
        for m in range(q + 1):
            for k in range(m + 1):
                a = alpha[k, m - k]
                if a == 0.0:
                    continue
                denom = (math.factorial(k) * math.factorial(m - k)
                         * math.factorial(q - m))
                weights[q, m, k] = sigma1 * a * beta[q - m] / denom
    return ChaosTable(level=float(u), q_max=q_max, sigma1=float(sigma1),
                      alpha=alpha, beta=beta, weights=weights)


# ----------------------------------------------------------------------
# Sample power spectrum
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class SamplePowerSpectrumPath:
    """Per-step sample spectrum of one multipole,
    Chat_ell(t_k) = (1/(2 ell + 1)) sum_m a_(ell m)(t_k)^2, and the
    trapezoidal integral of Chat_ell - C_ell(0)."""

    ell: int
    values: np.ndarray
    centered_integral: float


def sample_power_spectrum(ensemble, ell):
    ell = int(ell)
    entry = ensemble.spectrum.entry(ell)
    if entry is None:
        raise ValueError(f"ell={ell} not present in the spectrum")
    rows = ensemble.rows_for(ell)
    values = (ensemble.coeffs[rows] ** 2).mean(axis=0)
    centered = float(np.trapezoid(values - entry.c0, dx=ensemble.grid.dt))
    values.flags.writeable = False
    return SamplePowerSpectrumPath(ell=ell, values=values,
                                   centered_integral=centered)


# ----------------------------------------------------------------------
# Closed-form chaos projections (coefficient paths only, no mesh)
# ----------------------------------------------------------------------

def second_chaos_weight(spectrum, ell, u):
    """Level weight w_ell(u) = (u^2 - 1) + lambda_ell / (2 sigma1^2) of a
    multipole in the second chaos; affine in u^2 with unit slope."""
    lam = ell * (ell + 1)
    return (u * u - 1.0) + lam / (2.0 * sigma1_sq(spectrum))


def first_chaos_projection(ensemble, u):
    """First chaos sigma1 sqrt(2) pi u phi(u) int_0^T a_00(t) dt; vanishes
    identically at u = 0."""
    spec = ensemble.spectrum
    if spec.entry(0) is None:
        raise ValueError("first chaos needs the ell = 0 multipole")
    a00 = ensemble.path(0, 0)
    integral = float(np.trapezoid(a00, dx=ensemble.grid.dt))
    s1 = math.sqrt(sigma1_sq(spec))
    return s1 * math.sqrt(2.0) * math.pi * u * gaussian_density(u) * integral


def second_chaos_sample_spectrum(ensemble, u):
    """Second chaos via the sample power spectrum:
    (sigma1/2) sqrt(pi/2) phi(u) sum_ell (2 ell + 1) w_ell(u)
    int (Chat_ell - C_ell(0)) dt."""
    spec = ensemble.spectrum
    s1 = math.sqrt(sigma1_sq(spec))
    total = 0.0
    for e in spec.entries:
        d_ell = sample_power_spectrum(ensemble, e.ell).centered_integral
        total += (2 * e.ell + 1) * second_chaos_weight(spec, e.ell, u) * d_ell
    return 0.5 * s1 * math.sqrt(math.pi / 2.0) * gaussian_density(u) * total


def second_chaos_hermite_form(ensemble, u):
    """Same projection grouped as the Hermite functional of the normalized
    multipole fields: (sigma1/2) sqrt(pi/2) phi(u)
    sum_ell (C_ell(0)(2 ell + 1)/(4 pi)) w_ell(u)
    int_0^T int_S2 H_2(Zhat_ell) dx dt, where the sphere integral is exact
    in the coefficients: int H_2(Zhat_ell) dx = (4 pi/(2 ell + 1))
    sum_m H_2(a_(ell m)/sqrt(C_ell(0)))."""
    spec = ensemble.spectrum
    s1 = math.sqrt(sigma1_sq(spec))
    dt = ensemble.grid.dt
    total = 0.0
    for e in spec.entries:
        rows = ensemble.rows_for(e.ell)
        ahat_sq = ensemble.coeffs[rows] ** 2 / e.c0
        sphere_integral = (4.0 * math.pi / (2 * e.ell + 1)) \
            * (ahat_sq - 1.0).sum(axis=0)
        time_integral = float(np.trapezoid(sphere_integral, dx=dt))
        total += (e.c0 * (2 * e.ell + 1) / (4.0 * math.pi)) \
            * second_chaos_weight(spec, e.ell, u) * time_integral
    return 0.5 * s1 * math.sqrt(math.pi / 2.0) * gaussian_density(u) * total


# ----------------------------------------------------------------------
# Quadrature projections (mesh route)
# ----------------------------------------------------------------------

def chaos_projections_quadrature(ensemble, mesh, u, orders, block_steps=None):
    """Sphere-time quadrature of the triple-Hermite integrands for several
    chaos orders in one sweep over time slices.

    Gradients are normalized by sigma1 before entering the Hermite
    products.  Returns {q: value}.
    """
    basis = mesh if isinstance(mesh, HarmonicBasis) \
        else HarmonicBasis(mesh, ensemble.spectrum.ells)
    orders = sorted(set(int(q) for q in orders))
    if not orders or orders[0] < 1:
        raise ValueError("chaos orders must be >= 1")
    q_max = orders[-1]
    spec = ensemble.spectrum
    s1 = math.sqrt(sigma1_sq(spec))
    table = chaos_table(u, q_max, sigma1=s1)
    grid = ensemble.grid
    n = grid.n_steps
    if block_steps is None:
        block_steps = max(1, int(2_000_000 / max(basis.mesh.n_vertices, 1)))
    w_quad = basis.mesh.vertex_weights
    d1, d2 = basis.dy

    per_step = {q: np.empty(n) for q in orders}
    for start in range(0, n, block_steps):
        stop = min(start + block_steps, n)
        a = ensemble.coeffs[:, start:stop]
        z = basis.y @ a
        g1 = (d1 @ a) / s1
        g2 = (d2 @ a) / s1
        hz = hermite_rows(q_max, z)
        h1 = hermite_rows(q_max, g1)
        h2 = hermite_rows(q_max, g2)
        for q in orders:
            acc = np.zeros(stop - start)
            for m, k, wgt in table.terms(q):
                integrand = hz[q - m] * h1[k] * h2[m - k]
                acc += wgt * (w_quad @ integrand)
            per_step[q][start:stop] = acc
    return {q: float(np.trapezoid(per_step[q], dx=grid.dt)) for q in orders}


def chaos_projection_quadrature(ensemble, mesh, u, q, block_steps=None):
    """Single-order quadrature projection (see the batched variant)."""
    return chaos_projections_quadrature(ensemble, mesh, u, [q], block_steps)[int(q)]


# ----------------------------------------------------------------------
# Variance formulas
# ----------------------------------------------------------------------

def second_chaos_variance_exact(spectrum, u, horizon):
    """Exact second-chaos variance at finite horizon (quadrature in the
    time-lag integral, closed form elsewhere)."""
    s1sq = sigma1_sq(spectrum)
    phi2 = gaussian_density(u) ** 2
    total = 0.0
    for e in spectrum.entries:
        w = second_chaos_weight(spectrum, e.ell, u)
        csq = double_time_integral_csq(spectrum, e.ell, horizon)
        total += (2 * e.ell + 1) * w * w * csq.numeric
    return s1sq * math.pi / 4.0 * phi2 * total


@dataclass(frozen=True)
class VarianceConstants:
    """Leading asymptotic variance constants of the second chaos.

    long_constant: lim Var(C_T(u)[2]) / T^(2 - 2 beta*) under long memory;
    short_constant: lim Var(C_T(u)[2]) / T under short memory.  Whichever
    does not apply to the spectrum's regime is None; in the boundary
    regime both are None.
    """

    regime: str
    long_constant: float | None
    short_constant: float | None


def asymptotic_variance_constants(spectrum, u):
    report = classify_regime(spectrum)
    s1sq = sigma1_sq(spectrum)
    phi2 = gaussian_density(u) ** 2
    pref = s1sq * math.pi / 4.0 * phi2
    long_c = None
    short_c = None
    if report.regime == LONG_MEMORY:
        total = 0.0
        for ell in report.i_star:
            e = spectrum.entry(ell)
            w = second_chaos_weight(spectrum, ell, u)
            total += (2 * ell + 1) * w * w * e.c0**2 \
                / ((1.0 - 2.0 * e.beta) * (1.0 - e.beta))
        long_c = pref * total
    elif report.regime == SHORT_MEMORY:
        total = 0.0
        for e in spectrum.entries:
            w = second_chaos_weight(spectrum, e.ell, u)
            total += (2 * e.ell + 1) * w * w * integrated_sq_cov(spectrum, e.ell)
        short_c = pref * total
    return VarianceConstants(regime=report.regime, long_constant=long_c,
                             short_constant=short_c)


# ----------------------------------------------------------------------
# Higher-order tail
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TailEstimate:
    """Empirical proxy for the q >= 3 chaos tail across a horizon ladder.

    ``tail_variances`` are Var(C_T(u) - C_T(u)[1] - C_T(u)[2]) per
    horizon; ``tail_shares`` divide by Var(C_T(u)).  The fitted growth
    exponent comes from a weighted log-log fit.
    """

    horizons: tuple
    tail_variances: tuple
    tail_ses: tuple
    tail_shares: tuple
    fitted_exponent: float
    exponent_se: float


def _tail_one_replicate(spectrum, basis, u, grid, seed):
    from .geometry import boundary_functional  # local import breaks a cycle

    ens = sample_time_processes(spectrum, grid, np.random.Generator(
        np.random.PCG64(seed)))
    c_t = boundary_functional(ens, basis, u).centered
    p1 = first_chaos_projection(ens, u)
    p2 = second_chaos_sample_spectrum(ens, u)
    return c_t, c_t - p1 - p2


def higher_chaos_tail_estimate(spectrum, mesh, u, horizons, replicates, seed,
                               dt=1.0, workers=1):
    """Monte Carlo tail study: full pipeline minus the two leading
    closed-form projections, over a ladder of horizons."""
    basis = mesh if isinstance(mesh, HarmonicBasis) \
        else HarmonicBasis(mesh, spectrum.ells)
    horizons = sorted(float(t) for t in horizons)
    master = np.random.SeedSequence(int(seed))
    ladder_seeds = master.spawn(len(horizons))
    tail_vars, tail_ses, shares = [], [], []
    for t_idx, horizon in enumerate(horizons):
        grid = TimeGrid.for_horizon(horizon, dt)
        one = partial(_tail_one_replicate, spectrum, basis, u, grid)
        rows = mcstats.replicate_map(one, ladder_seeds[t_idx], replicates,
                                     workers=workers)
        totals = np.array([r[0] for r in rows])
        tails = np.array([r[1] for r in rows])
        var, se = mcstats.variance_with_bootstrap_se(tails, seed=t_idx)
        tail_vars.append(var)
        tail_ses.append(se)
        shares.append(var / totals.var(ddof=1))
    fit = mcstats.fit_loglog(horizons, tail_vars, tail_ses)
    return TailEstimate(
        horizons=tuple(horizons),
        tail_variances=tuple(tail_vars),
        tail_ses=tuple(tail_ses),
        tail_shares=tuple(shares),
        fitted_exponent=fit.slope,
        exponent_se=fit.slope_se,
    )
