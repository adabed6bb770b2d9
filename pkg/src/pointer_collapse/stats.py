"""Monte Carlo summaries: means with standard errors, outcome frequencies,
binomial z-scores and estimator-comparison chi-squares."""
from __future__ import annotations

import numpy as np
from scipy import stats as _st


def mean_se(x, axis=0):
    """Sample mean and standard error along ``axis`` (NaNs ignored)."""
    x = np.asarray(x, dtype=float)
    n = np.sum(np.isfinite(x), axis=axis)
    m = np.nanmean(x, axis=axis)
    sd = np.nanstd(x, axis=axis, ddof=1) if np.all(n > 1) else np.zeros_like(m)
    return m, sd / np.sqrt(np.maximum(n, 1))


def frequencies(outcomes, n_outcomes: int, weights=None):
    """Outcome frequencies and their covariance matrix.

    Unweighted: multinomial covariance. Weighted (self-normalised
    importance sampling): delta-method covariance
    ``sum_k w_k^2 (e_k - p)(e_k - p)^T / (sum w)^2``.
    """
    o = np.asarray(outcomes, dtype=np.int64)
    E = np.zeros((len(o), n_outcomes))
    E[np.arange(len(o)), o] = 1.0
    if weights is None:
        p = E.mean(axis=0)
        cov = (np.diag(p) - np.outer(p, p)) / len(o)
        return p, cov
    w = np.asarray(weights, dtype=float)
    sw = w.sum()
    p = w @ E / sw
    R = (E - p) * (w / sw)[:, None]
    return p, R.T @ R


def binomial_z(k: int, n: int, p0: float) -> float:
    return float((k / n - p0) / np.sqrt(p0 * (1.0 - p0) / n))


def binomial_band(p0: float, n: int, nsigma: float = 3.0) -> float:
    return float(nsigma * np.sqrt(p0 * (1.0 - p0) / n))


def gof_pvalue(counts, probs) -> float:
    """Pearson chi-square goodness of fit of counts against probabilities."""
    counts = np.asarray(counts, dtype=float)
    exp = np.asarray(probs, dtype=float) * counts.sum()
    return float(_st.chisquare(counts, exp).pvalue)


def wald_compare(p1, cov1, p2, cov2):
    """Wald chi-square for equality of two independent frequency vectors.

    The last category is dropped (frequencies sum to one). Returns
    (statistic, dof, p-value).
    """
    d = (np.asarray(p1) - np.asarray(p2))[:-1]
    S = (np.asarray(cov1) + np.asarray(cov2))[:-1, :-1]
    if d.size == 0:
        return 0.0, 0, 1.0
    stat = float(d @ np.linalg.pinv(S) @ d)
    dof = len(d)
    return stat, dof, float(_st.chi2.sf(stat, dof))


def is_monotone_within(mean, se, nse: float = 1.0) -> tuple[bool, float]:
    """Non-increasing up to excursions of at most ``nse`` standard errors.

    Each value is compared with the running minimum of everything before
    it, so a slow creep upwards is caught as well as a single jump.
    Returns (ok, worst excursion in units of the local standard error).
    """
    mean = np.asarray(mean, dtype=float)
    se = np.asarray(se, dtype=float)
    if len(mean) < 2:
        return True, 0.0
    floor = np.minimum.accumulate(mean)[:-1]
    rise = mean[1:] - floor
    worst = float(np.max(rise / np.maximum(se[1:], 1e-300)))
    return worst <= nse, worst
