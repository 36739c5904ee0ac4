"""Numerical kernel: normal and chi-square distributions, the one-factor
normal/chi-scale double integral, and a bracketing root finder.

The double integral

    I(c) = int_0^inf int_-inf^inf prod_j Phi((lam_j z + c_j u) / sqrt(1 - lam_j^2)) phi(z) gamma(u) dz du

is the probability that a one-factor multivariate t vector stays below the
thresholds ``c``. ``gamma`` is the density of sigma_hat / sigma when
``nu * sigma_hat^2 / sigma^2`` is chi-square with ``nu`` degrees of freedom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy import optimize, special, stats

from .errors import NoRootError

# Above this many degrees of freedom sigma_hat / sigma is treated as exactly 1.
NU_POINT_MASS = 1e7
_TAIL = 1e-12


@dataclass(frozen=True)
class QuadratureSpec:
    nodes_z: int = 64
    nodes_u: int = 64
    abs_tol: float = 1e-8

    def __post_init__(self):
        if self.nodes_z < 16 or self.nodes_u < 16:
            raise ValueError("quadrature needs at least 16 nodes per axis")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")


DEFAULT_QUADRATURE = QuadratureSpec()


@dataclass(frozen=True)
class ChiScaleDensity:
    """Density of sigma_hat / sigma with ``nu`` degrees of freedom."""

    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")

    def logpdf(self, u):
        u = np.asarray(u, dtype=float)
        nu = self.nu
        out = np.full(u.shape, -np.inf)
        pos = u > 0
        out[pos] = (
            0.5 * nu * math.log(nu)
            - special.gammaln(0.5 * nu)
            - (0.5 * nu - 1.0) * math.log(2.0)
            + (nu - 1.0) * np.log(u[pos])
            - 0.5 * nu * u[pos] ** 2
        )
        return out

    def pdf(self, u):
        return np.exp(self.logpdf(u))

    def ppf(self, q):
        # nu * U^2 ~ chi2(nu)
        return np.sqrt(special.chdtri(self.nu, 1.0 - np.asarray(q, dtype=float)) / self.nu)

    def cdf(self, u):
        u = np.asarray(u, dtype=float)
        return special.chdtr(self.nu, self.nu * np.clip(u, 0.0, None) ** 2)


def std_normal_cdf(x):
    """Standard normal cdf, accurate in the far tails."""
    return special.ndtr(x)


def noncentral_chisq_cdf(x, df, noncentrality=0.0):
    if int(df) != df or df < 1:
        raise ValueError(f"df must be a positive integer, got {df!r}")
    if noncentrality < 0:
        raise ValueError("noncentrality must be nonnegative")
    if x <= 0:
        return 0.0
    if noncentrality == 0:
        return float(stats.chi2.cdf(x, df))
    return float(stats.ncx2.cdf(x, df, noncentrality))


@lru_cache(maxsize=32)
def _hermite_rule(n):
    x, w = hermegauss(n)
    return x, w / math.sqrt(2.0 * math.pi)


@lru_cache(maxsize=32)
def _legendre_rule(n):
    return leggauss(n)


@lru_cache(maxsize=4096)
def _chi_scale_rule(nu, n, u_upper):
    """Nodes and weights for integrating against gamma(u) on (0, u_upper]."""
    if nu > NU_POINT_MASS:
        if u_upper >= 1.0:
            return np.array([1.0]), np.array([1.0])
        return np.array([1.0]), np.array([0.0])
    dens = ChiScaleDensity(nu)
    lo, hi = (float(v) for v in dens.ppf([_TAIL, 1.0 - _TAIL]))
    hi = min(hi, u_upper)
    if hi <= lo:
        return np.array([1.0]), np.array([0.0])
    x, w = _legendre_rule(n)
    half = 0.5 * (hi - lo)
    u = lo + half * (x + 1.0)
    return u, w * half * dens.pdf(u)


def integrate_phi_product(lambdas, thresholds, nu, spec=DEFAULT_QUADRATURE, u_upper=math.inf):
    """Evaluate the one-factor double integral.

    ``u_upper`` truncates the outer integral; the default integrates over the
    whole support of sigma_hat / sigma.
    """
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    thr = np.atleast_1d(np.asarray(thresholds, dtype=float))
    if lam.shape != thr.shape or lam.ndim != 1 or lam.size == 0:
        raise ValueError("lambdas and thresholds must be nonempty vectors of equal length")
    if np.any(np.abs(lam) >= 1.0):
        raise ValueError("every lambda must lie strictly inside (-1, 1)")
    if not nu > 0:
        raise ValueError("nu must be positive")
    if u_upper <= 0:
        return 0.0
    z, wz = _hermite_rule(spec.nodes_z)
    u, wu = _chi_scale_rule(float(nu), spec.nodes_u, float(u_upper))
    scale = 1.0 / np.sqrt(1.0 - lam**2)
    # axes: (u, z, j)
    arg = (lam[None, None, :] * z[None, :, None] + thr[None, None, :] * u[:, None, None]) * scale
    log_prod = special.log_ndtr(arg).sum(axis=2)
    inner = np.exp(log_prod) @ wz
    val = float(inner @ wu)
    return min(max(val, 0.0), 1.0)


def solve_monotone_root(f, target, bracket=(0.0, 1.0), tol=1e-6, max_expand=60):
    """Find x with f(x) == target for nondecreasing ``f``.

    The bracket is widened geometrically on whichever side fails to straddle
    the target; :class:`NoRootError` is raised once ``max_expand`` widenings
    have not produced a sign change.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not hi > lo:
        raise ValueError("bracket must satisfy lo < hi")
    g = lambda x: f(x) - target  # noqa: E731
    glo, ghi = g(lo), g(hi)
    width = hi - lo
    for _ in range(max_expand):
        if glo <= 0 <= ghi:
            break
        width *= 2.0
        if glo > 0:
            hi, ghi = lo, glo
            lo -= width
            glo = g(lo)
        else:
            lo, glo = hi, ghi
            hi += width
            ghi = g(hi)
    else:
        raise NoRootError(f"no root in range: target {target!r} not bracketed in [{lo:g}, {hi:g}]")
    if glo == 0:
        return lo
    if ghi == 0:
        return hi
    root = optimize.brentq(g, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(root)) > tol:
        raise NoRootError(f"root solver stalled: |f(x) - target| = {abs(g(root)):.3g} > {tol:g}")
    return root
