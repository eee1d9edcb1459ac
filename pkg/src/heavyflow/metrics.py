"""Tail diagnostics: Hill estimator, KS distance, sample moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_TAIL_COUNT = 50


def hill_estimator(samples, k, tail="upper"):
    """Hill tail-index estimate from the top-k order statistics.

    Mean of log ratios of the k largest values to the (k+1)-th; estimates
    the index lambda of a lambda > 0 power tail.  The lower tail is
    estimated on the negated sample.  Rejects a non-positive (k+1)-th
    order statistic rather than shifting the data.
    """
    x = np.asarray(samples, dtype=float)
    if tail == "lower":
        x = -x
    elif tail != "upper":
        raise ValueError("tail must be 'upper' or 'lower'")
    n = len(x)
    if k < MIN_TAIL_COUNT:
        raise ValueError(f"k must be at least {MIN_TAIL_COUNT}")
    if k >= n:
        raise ValueError("k must be smaller than the sample count")
    top = np.partition(x, n - k - 1)[n - k - 1 :]
    top.sort()
    threshold = top[0]
    if threshold <= 0:
        raise ValueError(
            f"(k+1)-th order statistic is {threshold:.3g} <= 0; "
            "the Hill estimator needs a positive threshold (reduce k)"
        )
    return float(np.mean(np.log(top[1:] / threshold)))


def ks_distance(samples, cdf):
    """Kolmogorov-Smirnov sup distance between the ECDF and a CDF."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("samples must be nonempty")
    f = np.asarray(cdf(x), dtype=float)
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - f), np.max(f - (grid - 1.0 / n))))


def sample_kurtosis(x):
    """Plain (non-excess) kurtosis m4 / m2^2; Gaussian reference is 3."""
    x = np.asarray(x, dtype=float)
    c = x - x.mean()
    m2 = np.mean(c * c)
    return float(np.mean(c**4) / (m2 * m2))


@dataclass
class TailDiagnostics:
    hill_upper: float
    hill_lower: float
    k_used: int
    kurtosis: float


def tail_diagnostics(X, k_fraction=0.01, min_k=MIN_TAIL_COUNT):
    """Per-dimension two-sided Hill estimates and kurtosis."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    k = max(int(k_fraction * n), min_k)
    out = []
    for i in range(X.shape[1]):
        col = X[:, i]
        out.append(
            TailDiagnostics(
                hill_upper=hill_estimator(col, k, "upper"),
                hill_lower=hill_estimator(col, k, "lower"),
                k_used=k,
                kurtosis=sample_kurtosis(col),
            )
        )
    return out
