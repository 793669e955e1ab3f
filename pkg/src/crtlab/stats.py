"""Empirical-distribution comparisons used throughout the acceptance suite.

Thresholds everywhere in this package are phrased as KS-statistic ceilings
at fixed sample sizes rather than p-values, so a fixed seed reproduces
every verdict bit for bit.
"""

from __future__ import annotations

from typing import Callable, Sequence, Tuple

import numpy as np

from .errors import InvalidParameterError
from .paths import spawn_rng

__all__ = ["as_sample", "ks_two_sample", "ks_vs_cdf", "ks_vs_discrete",
           "bootstrap_ci", "nonincreasing_up_to"]


def as_sample(x) -> np.ndarray:
    """Validate and sort a sample: finite reals, ascending."""
    a = np.sort(np.asarray(x, dtype=np.float64).ravel())
    if len(a) == 0:
        raise InvalidParameterError("empty sample")
    if not np.all(np.isfinite(a)):
        raise InvalidParameterError("sample contains non-finite values")
    return a


def ks_two_sample(a, b) -> float:
    """sup over the merged grid of |F_a - F_b|."""
    a = as_sample(a)
    b = as_sample(b)
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.abs(fa - fb).max())


def ks_vs_cdf(a, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """One-sample KS statistic against a continuous cdf callable.

    The cdf is probed on the sample points; it must be nondecreasing there
    with values in [0, 1].  For laws with atoms use ``ks_vs_discrete``,
    which accounts for the jumps on both sides.
    """
    a = as_sample(a)
    f = np.asarray(cdf(a), dtype=np.float64)
    if f.shape != a.shape:
        f = np.asarray([cdf(x) for x in a], dtype=np.float64)
    if np.any(np.diff(f) < -1e-12) or np.any(f < -1e-12) or np.any(f > 1 + 1e-12):
        raise InvalidParameterError("cdf is not nondecreasing into [0, 1] on the sample")
    n = len(a)
    hi = np.arange(1, n + 1) / n - f
    lo = f - np.arange(0, n) / n
    return float(max(hi.max(), lo.max(), 0.0))


def ks_vs_discrete(a, support, cum) -> float:
    """KS distance between a sample and an atomic law given as (support, cum).

    ``support`` lists the atoms ascending and ``cum`` their cumulative
    masses; both sides of every jump are compared.
    """
    a = as_sample(a)
    support = np.asarray(support, dtype=np.float64)
    cum = np.asarray(cum, dtype=np.float64)
    if support.ndim != 1 or support.shape != cum.shape or len(support) == 0:
        raise InvalidParameterError("support and cum must be matching 1-d arrays")
    if np.any(np.diff(support) <= 0) or np.any(np.diff(cum) < 0) or abs(cum[-1] - 1) > 1e-9:
        raise InvalidParameterError("need ascending support and a valid cumulative law")
    n = len(a)
    emp_right = np.searchsorted(a, support, side="right") / n
    emp_left = np.searchsorted(a, support, side="left") / n
    cum_left = np.concatenate([[0.0], cum[:-1]])
    return float(max(np.abs(emp_right - cum).max(), np.abs(emp_left - cum_left).max()))


def bootstrap_ci(a, statistic: Callable[[np.ndarray], float], replicas: int = 1000,
                 level: float = 0.95, seed: int = 0) -> Tuple[float, float]:
    """Percentile bootstrap interval for statistic(a); deterministic given seed."""
    a = as_sample(a)
    if replicas < 100:
        raise InvalidParameterError("use at least 100 bootstrap replicas")
    if not 0.0 < level < 1.0:
        raise InvalidParameterError("level must be in (0, 1)")
    rng = spawn_rng(seed)
    n = len(a)
    vals = np.empty(replicas)
    chunk = max(1, int(2e6 // max(n, 1)))
    done = 0
    while done < replicas:
        b = min(chunk, replicas - done)
        idx = rng.integers(0, n, size=(b, n))
        rows = a[idx]
        if statistic in (np.mean, np.median):  # fast path for the common cases
            vals[done: done + b] = statistic(rows, axis=1)
        else:
            vals[done: done + b] = [statistic(row) for row in rows]
        done += b
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(vals, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def nonincreasing_up_to(values: Sequence[float], inversions: int = 0) -> bool:
    """True when the sequence decreases with at most ``inversions`` upticks."""
    v = list(values)
    ups = sum(1 for i in range(1, len(v)) if v[i] > v[i - 1])
    return ups <= inversions
