"""Wald test of spillover heterogeneity, its power, and minimal sample size."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg

from .errors import PowerUndefinedError
from .estimation import FittedModel, lemma1_cov
from .model import DesignSpec
from .numerics import noncentral_chisq_cdf, solve_monotone_root


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float
    noncentrality_used: float | None = None


def contrast_matrix(H):
    """Rows map delta to (delta_h - delta_H) for h < H."""
    return np.hstack([np.eye(H - 1), -np.ones((H - 1, 1))])


def quadratic_form(delta, cov):
    """``d' [C cov C']^-1 d`` with ``d = C delta``."""
    C = contrast_matrix(len(delta))
    d = C @ np.asarray(delta, dtype=float)
    V = C @ cov @ C.T
    try:
        cho = linalg.cho_factor(V)
    except linalg.LinAlgError:
        raise linalg.LinAlgError("contrast covariance is singular") from None
    return float(d @ linalg.cho_solve(cho, d))


@lru_cache(maxsize=256)
def chisq_critical(df, alpha):
    """Upper ``alpha`` quantile of the central chi-square."""
    return solve_monotone_root(lambda x: noncentral_chisq_cdf(max(x, 0.0), df), 1.0 - alpha,
                               bracket=(0.0, 2.0 * df + 10.0), tol=1e-12)


def wald_test(fit: FittedModel) -> WaldResult:
    H = fit.H
    if H < 2:
        raise ValueError("heterogeneity test needs at least two subgroups")
    W = max(quadratic_form(fit.delta_hat, fit.cov_delta), 0.0)
    return WaldResult(statistic=W, df=H - 1, p_value=1.0 - noncentral_chisq_cdf(W, H - 1))


def wald_zero_test(fit: FittedModel) -> WaldResult:
    """Joint test that every spillover effect is zero (df = H)."""
    d = fit.delta_hat
    W = float(d @ linalg.solve(fit.cov_delta, d, assume_a="pos"))
    return WaldResult(statistic=W, df=fit.H, p_value=1.0 - noncentral_chisq_cdf(W, fit.H))


def wald_noncentrality(design: DesignSpec, K):
    return quadratic_form(design.delta, lemma1_cov(design, K))


def wald_power(design: DesignSpec, K) -> float:
    df = design.H - 1
    crit = chisq_critical(df, design.alpha)
    theta = wald_noncentrality(design, K)
    return 1.0 - noncentral_chisq_cdf(crit, df, theta)


def min_k_search(power, target, k_min=1, k_cap=10**8):
    """Smallest integer ``K >= k_min`` with ``power(K) >= target``.

    ``power`` must be nondecreasing in K. Brackets by doubling, then bisects.
    """
    lo = k_min
    if power(lo) >= target:
        return lo
    hi = max(2 * lo, lo + 1)
    while power(hi) < target:
        lo = hi
        hi *= 2
        if hi > k_cap:
            raise PowerUndefinedError(f"power {target:g} not reached for K up to {k_cap}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if power(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def wald_min_k(design: DesignSpec) -> int:
    d = np.asarray(design.delta)
    if np.all(d == d[-1]):
        raise PowerUndefinedError("power unattainable: all spillover effects are equal")
    return min_k_search(lambda K: wald_power(design, K), 1.0 - design.beta)
