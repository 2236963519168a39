"""Monte Carlo error estimation helpers: batch means, ESS, count tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "Estimate",
    "batch_count",
    "batch_means",
    "batch_values",
    "effective_sample_size",
    "poisson_chisquare",
]


@dataclass(frozen=True)
class Estimate:
    """A Monte Carlo estimate with a batch-means standard error."""

    value: float
    stderr: float

    def z_against(self, target: float) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.value == target else np.inf
        return (self.value - target) / self.stderr


def batch_count(n: int) -> int:
    """Number of batches used for a series of length n (sqrt rule, clamped)."""
    return max(4, min(64, int(np.sqrt(n))))


def batch_values(x: np.ndarray, n_batches: int | None = None) -> np.ndarray:
    """Per-batch means of a series, dropping the remainder tail."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n_batches is None:
        n_batches = batch_count(n)
    n_batches = min(n_batches, n)
    size = n // n_batches
    if size == 0:
        return x.copy()
    return x[: n_batches * size].reshape(n_batches, size).mean(axis=1)


def batch_means(x: np.ndarray, n_batches: int | None = None) -> Estimate:
    """Mean of a (possibly autocorrelated) series with batch-means stderr."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("empty series")
    if x.size == 1:
        return Estimate(float(x[0]), 0.0)
    bm = batch_values(x, n_batches)
    if bm.size < 2 or np.all(bm == bm[0]):
        spread = float(np.std(bm, ddof=1)) if bm.size > 1 else 0.0
        return Estimate(float(np.mean(x)), spread / np.sqrt(bm.size) if bm.size > 1 else 0.0)
    return Estimate(float(np.mean(x)), float(np.std(bm, ddof=1) / np.sqrt(bm.size)))


def effective_sample_size(x: np.ndarray) -> float:
    """ESS of a series via the initial-positive-sequence truncation.

    The integrated autocorrelation time sums consecutive pairs of the
    autocorrelation function until a pair sum turns nonpositive.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var == 0.0:
        return float(n)
    m = 1
    while m < 2 * n:
        m *= 2
    fx = np.fft.rfft(x, n=m)
    acov = np.fft.irfft(fx * np.conj(fx), n=m)[:n].real / n
    rho = acov / var
    tau = 1.0
    k = 1
    while k + 1 < n:
        pair = rho[k] + rho[k + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        k += 2
    return float(n / max(tau, 1.0))


def poisson_chisquare(counts: np.ndarray, mean: float, min_expected: float = 5.0):
    """Chi-square goodness-of-fit of integer counts against Poisson(mean).

    Bins with expected mass below ``min_expected`` are merged into their
    neighbors.  Returns (statistic, p_value).
    """
    counts = np.asarray(counts, dtype=int)
    n = counts.size
    kmax = int(counts.max()) + 1
    upper = max(kmax, int(mean + 8 * np.sqrt(mean) + 8))
    probs = stats.poisson.pmf(np.arange(upper), mean)
    probs = np.append(probs, max(0.0, 1.0 - probs.sum()))
    observed = np.bincount(counts, minlength=probs.size).astype(float)[: probs.size]
    expected = probs * n

    obs_m, exp_m = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(observed, expected):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs_m.append(acc_o)
            exp_m.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and exp_m:
        obs_m[-1] += acc_o
        exp_m[-1] += acc_e
    obs_m = np.array(obs_m)
    exp_m = np.array(exp_m)
    exp_m *= obs_m.sum() / exp_m.sum()
    stat, pval = stats.chisquare(obs_m, exp_m)
    return float(stat), float(pval)
