"""Limiting laws and Monte Carlo ensemble studies.

Rosenblatt sampling.  A standard Rosenblatt variable of parameter
beta in (0, 1/2) is realized as the normalized time average of the
rank-two Hermite functional of a unit-variance long-memory Gaussian path:

    X ~ lim  (sum_k H_2(xi(t_k)) dt) / sd,    Cov(xi(t), xi(s)) = (1 + |t-s|)^-beta,

where sd is the exact standard deviation of the discrete sum,
sd^2 = 2 dt^2 sum_(j,k) rho(t_j - t_k)^2, which converges to the familiar
T^(1-beta) * 2 / sqrt((1-beta)(1-2 beta)) scale.  Normalizing by the exact
finite-grid value keeps the sampler's unit-variance contract at every
admissible beta; asymptotically it coincides with the closed-form
constant.  Paths come from the same circulant-embedding machinery used
for field synthesis (the ring is oversampled by ``burn_factor`` for
numerical headroom), and every FFT draw yields two independent paths.

Composite references.  The long-memory limit of the standardized
boundary-length functional is the mixture

    sum over slowest multipoles of  C_ell(0) w_ell(u) / sqrt(v*)
        * V_(2 ell + 1)(1, ..., 1; beta*),

with v* = sum (2 ell + 1) C_ell(0)^2 w_ell(u)^2, which makes the mixture
exactly unit variance; V_N is a sum of N i.i.d. standard Rosenblatt
variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial

import numpy as np
from scipy import stats

from . import mcstats
from .chaos import (
    first_chaos_projection,
    second_chaos_sample_spectrum,
    second_chaos_weight,
)
from .geometry import boundary_functional
from .spectrum import BOUNDARY, LONG_MEMORY, SHORT_MEMORY, classify_regime
from .synthesis import HarmonicBasis, TimeGrid, build_icosphere, \
    sample_time_processes

__all__ = [
    "RosenblattSampler",
    "sample_rosenblatt",
    "sample_composite_rosenblatt",
    "rosenblatt_scale_constant",
    "v_star",
    "composite_reference_samples",
    "ScalingFit",
    "fit_variance_scaling",
    "DistributionReport",
    "limit_law_report",
    "BerryProfile",
    "berry_profile",
]


# ----------------------------------------------------------------------
# Rosenblatt sampling
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class RosenblattSampler:
    """Configuration of the time-average Rosenblatt sampler."""

    beta: float
    n_inner: int = 2**16
    burn_factor: int = 4

    def __post_init__(self):
        if not 0.0 < self.beta < 0.5:
            raise ValueError(
                f"Rosenblatt parameter must lie in (0, 1/2), got {self.beta}"
            )
        if self.n_inner < 16:
            raise ValueError("n_inner too small")
        if self.burn_factor < 2:
            raise ValueError("burn_factor must be >= 2 for a valid embedding")


def rosenblatt_scale_constant(beta):
    """Asymptotic normalizer sqrt((1-beta)(1-2 beta)/2) that maps the raw
    time average (1/T^(1-beta)) int_0^T H_2(xi) dt to unit variance; the
    exact finite-grid standard deviation used by the sampler converges to
    T^(1-beta) divided by this constant."""
    return math.sqrt((1.0 - beta) * (1.0 - 2.0 * beta) / 2.0)


def _rosenblatt_plan(sampler):
    """Embedding eigenvalues and the exact normalizer for one sampler."""
    n = sampler.n_inner
    m_len = sampler.burn_factor * n
    k = np.arange(m_len)
    ring_lag = np.minimum(k, m_len - k)
    rho_ring = (1.0 + ring_lag.astype(float)) ** (-sampler.beta)
    lam = np.fft.fft(rho_ring).real
    lam = np.clip(lam, 0.0, None)
    root = np.sqrt(lam / m_len)
    # exact variance of sum_k H_2(xi_k): 2 sum_h (n - |h|) rho(h)^2
    h = np.arange(1, n)
    rho = (1.0 + h.astype(float)) ** (-sampler.beta)
    var_sum = 2.0 * (n + 2.0 * ((n - h) * rho**2).sum())
    return root, m_len, math.sqrt(var_sum)


def sample_rosenblatt(sampler, count, seed):
    """``count`` independent standard (zero-mean, unit-variance)
    Rosenblatt draws.

    FFTs are batched for speed; each draw consumes a fixed contiguous run
    of the generator stream, so results do not depend on the batch size.
    """
    count = int(count)
    if count <= 0:
        return np.empty(0)
    root, m_len, sd = _rosenblatt_plan(sampler)
    rng = np.random.default_rng(seed)
    n = sampler.n_inner
    n_fft = (count + 1) // 2
    batch = max(1, min(n_fft, 64_000_000 // (32 * m_len)))
    out = np.empty(2 * n_fft)
    done = 0
    while done < n_fft:
        b = min(batch, n_fft - done)
        g = rng.standard_normal((b, 2, m_len))
        w = np.fft.fft(root * (g[:, 0, :] + 1j * g[:, 1, :]), axis=1)
        xi_re = w.real[:, :n]
        xi_im = w.imag[:, :n]
        out[2 * done:2 * (done + b):2] = \
            ((xi_re * xi_re).sum(axis=1) - n) / sd
        out[2 * done + 1:2 * (done + b) + 1:2] = \
            ((xi_im * xi_im).sum(axis=1) - n) / sd
        done += b
    return out[:count]


def sample_composite_rosenblatt(coeffs, beta, count, seed, n_inner=2**16,
                                burn_factor=4):
    """Weighted sum sum_k c_k X_k of independent standard Rosenblatt
    draws of common parameter beta."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.size < 1:
        raise ValueError("need at least one mixture coefficient")
    sampler = RosenblattSampler(beta=beta, n_inner=n_inner,
                                burn_factor=burn_factor)
    draws = sample_rosenblatt(sampler, count * coeffs.size, seed)
    return draws.reshape(coeffs.size, count).T @ coeffs


# ----------------------------------------------------------------------
# Composite reference for the long-memory limit
# ----------------------------------------------------------------------

def v_star(spectrum, u):
    """Normalizer of the long-memory limit mixture,
    sum over slowest multipoles of (2 ell + 1) C_ell(0)^2 w_ell(u)^2."""
    report = classify_regime(spectrum)
    total = 0.0
    for ell in report.i_star:
        e = spectrum.entry(ell)
        w = second_chaos_weight(spectrum, ell, u)
        total += (2 * ell + 1) * e.c0**2 * w * w
    return total


def composite_reference_samples(spectrum, u, count, seed, n_inner=2**16,
                                burn_factor=4):
    """Draws from the limit mixture of the standardized functional under
    long memory: unit variance by construction of v*."""
    report = classify_regime(spectrum)
    if report.regime != LONG_MEMORY:
        raise ValueError("the composite Rosenblatt reference applies to the "
                         "long-memory regime only")
    norm = math.sqrt(v_star(spectrum, u))
    sampler = RosenblattSampler(beta=report.beta_star, n_inner=n_inner,
                                burn_factor=burn_factor)
    rng_seeds = mcstats.replicate_seeds(seed, len(report.i_star))
    out = np.zeros(count)
    for ell, s in zip(report.i_star, rng_seeds):
        e = spectrum.entry(ell)
        w = second_chaos_weight(spectrum, ell, u)
        draws = sample_rosenblatt(sampler, count * (2 * ell + 1), s)
        block = draws.reshape(2 * ell + 1, count).sum(axis=0)
        out += (e.c0 * w / norm) * block
    return out


# ----------------------------------------------------------------------
# Pipeline replicate kernels (top level so they pickle for workers)
# ----------------------------------------------------------------------

def _chaos2_replicate(spectrum, grid, u, seed):
    ens = sample_time_processes(spectrum, grid, np.random.Generator(
        np.random.PCG64(seed)))
    return second_chaos_sample_spectrum(ens, u)


def _chaos1_replicate(spectrum, grid, u, seed):
    ens = sample_time_processes(spectrum, grid, np.random.Generator(
        np.random.PCG64(seed)))
    return first_chaos_projection(ens, u)


def _length_replicate(spectrum, basis, grid, u, seed):
    ens = sample_time_processes(spectrum, grid, np.random.Generator(
        np.random.PCG64(seed)))
    return boundary_functional(ens, basis, u).centered


def _functional_kernel(spectrum, u, grid, functional, mesh_level):
    if functional == "chaos2":
        return partial(_chaos2_replicate, spectrum, grid, u)
    if functional == "chaos1":
        return partial(_chaos1_replicate, spectrum, grid, u)
    if functional == "length":
        basis = HarmonicBasis(build_icosphere(mesh_level), spectrum.ells)
        return partial(_length_replicate, spectrum, basis, grid, u)
    raise ValueError(f"unknown functional {functional!r}")


# ----------------------------------------------------------------------
# Variance-scaling fits
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingFit:
    """Weighted log-log fit of ensemble variances against the horizon."""

    horizons: tuple
    variances: tuple
    variance_ses: tuple
    fitted_exponent: float
    exponent_se: float
    functional: str


def fit_variance_scaling(spectrum, u, horizons, replicates, seed,
                         functional="chaos2", mesh_level=3, dt=0.25,
                         n_boot=200, workers=1):
    """Ensemble variances of the chosen functional on a horizon ladder and
    the fitted power-law exponent.

    ``functional`` picks the replicate kernel: "chaos2" (sample-spectrum
    second chaos, no mesh), "chaos1" (first chaos, no mesh), or "length"
    (full synthesis -> isoline -> time-average pipeline).
    """
    horizons = sorted(float(t) for t in horizons)
    if len(horizons) < 4:
        raise ValueError("scaling fits need a ladder of at least 4 horizons")
    if any(b >= a for a, b in zip(horizons[1:], horizons[:-1])):
        raise ValueError("horizon ladder must be strictly increasing")
    master = np.random.SeedSequence(int(seed))
    ladder_seeds = master.spawn(len(horizons))
    variances, ses = [], []
    for t_idx, horizon in enumerate(horizons):
        grid = TimeGrid.for_horizon(horizon, dt)
        kernel = _functional_kernel(spectrum, u, grid, functional, mesh_level)
        vals = np.array(mcstats.replicate_map(kernel, ladder_seeds[t_idx],
                                              replicates, workers=workers))
        var, se = mcstats.variance_with_bootstrap_se(vals, n_boot=n_boot,
                                                     seed=t_idx)
        variances.append(var)
        ses.append(se)
    fit = mcstats.fit_loglog(horizons, variances, ses)
    return ScalingFit(
        horizons=tuple(horizons),
        variances=tuple(variances),
        variance_ses=tuple(ses),
        fitted_exponent=fit.slope,
        exponent_se=fit.slope_se,
        functional=functional,
    )


# ----------------------------------------------------------------------
# Limit-law tests
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class DistributionReport:
    """Kolmogorov-Smirnov comparison of the standardized functional
    against its regime's limit law.

    Samples are standardized by the ensemble's own mean and standard
    deviation (the empirical mean removes the small mesh-induced centering
    offset; in the continuum the functional is exactly centered).  Under
    long memory the report also carries the Gaussian power check: the same
    samples tested against N(0, 1), which should fail.
    """

    regime: str
    level: float
    horizon: float
    standardized: np.ndarray
    reference: np.ndarray | None
    ks_statistic: float
    ks_pvalue: float
    passed: bool
    alpha: float
    gaussian_ks_statistic: float | None = None
    gaussian_ks_pvalue: float | None = None
    gaussian_rejected: bool | None = None


def limit_law_report(spectrum, u, horizon, replicates, seed,
                     mesh_level=3, dt=1.0, alpha=0.01, reference_size=4000,
                     n_inner=2**16, workers=1):
    """Monte Carlo test of the limiting law of the standardized functional.

    Short memory: one-sample KS against N(0, 1).  Long memory: two-sample
    KS against the composite-Rosenblatt reference, plus the Gaussian power
    check.  The boundary regime has no stated limit and is refused.
    """
    report = classify_regime(spectrum)
    if report.regime == BOUNDARY:
        raise ValueError(
            "spectrum sits on the regime boundary (neither 2 beta* < "
            "min(beta0, 1) nor beta0 = 1 with all 2 beta > 1); no limit "
            "law is available"
        )
    grid = TimeGrid.for_horizon(horizon, dt)
    kernel = _functional_kernel(spectrum, u, grid, "length", mesh_level)
    master = np.random.SeedSequence(int(seed))
    pipe_seed, ref_seed = master.spawn(2)
    vals = np.array(mcstats.replicate_map(kernel, pipe_seed, replicates,
                                          workers=workers))
    standardized = (vals - vals.mean()) / vals.std(ddof=1)

    if report.regime == SHORT_MEMORY:
        ks = stats.kstest(standardized, "norm")
        return DistributionReport(
            regime=report.regime, level=float(u), horizon=grid.horizon,
            standardized=standardized, reference=None,
            ks_statistic=float(ks.statistic), ks_pvalue=float(ks.pvalue),
            passed=bool(ks.pvalue > alpha), alpha=alpha,
        )

    reference = composite_reference_samples(spectrum, u, reference_size,
                                            ref_seed, n_inner=n_inner)
    ks = stats.ks_2samp(standardized, reference)
    gauss = stats.kstest(standardized, "norm")
    return DistributionReport(
        regime=report.regime, level=float(u), horizon=grid.horizon,
        standardized=standardized, reference=reference,
        ks_statistic=float(ks.statistic), ks_pvalue=float(ks.pvalue),
        passed=bool(ks.pvalue > alpha), alpha=alpha,
        gaussian_ks_statistic=float(gauss.statistic),
        gaussian_ks_pvalue=float(gauss.pvalue),
        gaussian_rejected=bool(gauss.pvalue < alpha),
    )


# ----------------------------------------------------------------------
# Berry variance profile
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class BerryProfile:
    """Second-chaos variance across a grid of levels, with the predicted
    long-memory constants as overlay and the located minimum."""

    levels: tuple
    variances: tuple
    variance_ses: tuple
    predicted_constants: tuple
    min_level: float
    predicted_cancellation: float | None


def _berry_replicate(spectrum, grid, seed):
    from .chaos import sample_power_spectrum

    ens = sample_time_processes(spectrum, grid, np.random.Generator(
        np.random.PCG64(seed)))
    return [sample_power_spectrum(ens, e.ell).centered_integral
            for e in spectrum.entries]


def berry_profile(spectrum, u_grid, horizon, replicates, seed, dt=0.25,
                  workers=1):
    """Variance of the second chaos across levels.

    The centered sample-spectrum integrals are level-independent, so one
    ensemble serves the whole grid; only the level weights and the
    Gaussian density factor vary with u.
    """
    from .chaos import asymptotic_variance_constants
    from .special import gaussian_density
    from .spectrum import sigma1_sq

    u_grid = [float(u) for u in u_grid]
    grid = TimeGrid.for_horizon(horizon, dt)
    kernel = partial(_berry_replicate, spectrum, grid)
    rows = np.array(mcstats.replicate_map(kernel, seed, replicates,
                                          workers=workers))
    s1 = math.sqrt(sigma1_sq(spectrum))
    variances, ses, preds = [], [], []
    for u in u_grid:
        weights = np.array(
            [(2 * e.ell + 1) * second_chaos_weight(spectrum, e.ell, u)
             for e in spectrum.entries]
        )
        samples = 0.5 * s1 * math.sqrt(math.pi / 2.0) * gaussian_density(u) \
            * (rows @ weights)
        var, se = mcstats.variance_with_bootstrap_se(samples, seed=17)
        variances.append(var)
        ses.append(se)
        consts = asymptotic_variance_constants(spectrum, u)
        preds.append(consts.long_constant)
    report = classify_regime(spectrum)
    cancel = report.berry_levels[1] if report.berry_levels else None
    min_level = u_grid[int(np.argmin(variances))]
    return BerryProfile(
        levels=tuple(u_grid),
        variances=tuple(variances),
        variance_ses=tuple(ses),
        predicted_constants=tuple(preds),
        min_level=min_level,
        predicted_cancellation=cancel,
    )
