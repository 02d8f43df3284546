"""Small Monte Carlo statistics helpers shared by the study modules.

Replicate fan-out with derived per-replicate seeds (deterministic,
order-fixed reduction, optional process workers), bootstrap standard
errors for variances, and weighted log-log power-law fits.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

__all__ = [
    "replicate_seeds",
    "replicate_map",
    "variance_with_bootstrap_se",
    "LogLogFit",
    "fit_loglog",
]


def replicate_seeds(master_seed, count):
    """``count`` independent child SeedSequences of a master seed."""
    ss = master_seed if isinstance(master_seed, np.random.SeedSequence) \
        else np.random.SeedSequence(int(master_seed))
    return ss.spawn(count)


def _run_chunk(fn, seeds):
    return [fn(s) for s in seeds]


def replicate_map(fn, master_seed, count, workers=1):
    """Evaluate ``fn(seed_sequence)`` for ``count`` derived seeds.

    Results come back in replicate order regardless of completion order,
    so parallel and serial runs are bit-identical provided ``fn`` itself is
    deterministic in its seed.  ``fn`` must be picklable when workers > 1.
    """
    seeds = replicate_seeds(master_seed, count)
    if workers <= 1:
        return [fn(s) for s in seeds]
    chunk = max(1, math.ceil(count / (workers * 4)))
    chunks = [seeds[i:i + chunk] for i in range(0, count, chunk)]
    out = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, fn, c) for c in chunks]
        for fut in futures:  # submission order == replicate order
            out.extend(fut.result())
    return out


def variance_with_bootstrap_se(samples, n_boot=200, seed=0):
    """Unbiased sample variance and its bootstrap standard error."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2 or np.ptp(x) == 0.0:
        raise ValueError("variance estimate needs at least two distinct samples")
    var = float(x.var(ddof=1))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(n_boot, x.size))
    boots = x[idx].var(axis=1, ddof=1)
    return var, float(boots.std(ddof=1))


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    slope_se: float
    intercept: float


def fit_loglog(x, y, y_se):
    """Weighted least squares of log y on log x; ``y_se`` are standard
    errors of y, propagated to log scale as se/y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    y_se = np.asarray(y_se, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points to fit a slope")
    lx = np.log(x)
    ly = np.log(y)
    w = (y / y_se) ** 2
    xb = (w * lx).sum() / w.sum()
    yb = (w * ly).sum() / w.sum()
    sxx = (w * (lx - xb) ** 2).sum()
    slope = (w * (lx - xb) * (ly - yb)).sum() / sxx
    intercept = yb - slope * xb
    return LogLogFit(slope=float(slope), slope_se=float(1.0 / math.sqrt(sxx)),
                     intercept=float(intercept))
