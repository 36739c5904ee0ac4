"""Multiple comparisons with the best (MCB) for subgroup spillover effects.

For each subgroup h the comparisons ``delta_hat_j - delta_hat_h`` (j != h),
studentized by ``sigma_hat``, follow a multivariate t whose correlation has
the one-factor form ``rho_ij = lambda_i lambda_j``. The per-subgroup critical
value ``c_h`` is the ``1 - alpha`` quantile of the maximum of that vector and
is obtained from a double integral instead of simulation.

Everything is computed for the "larger is better" direction; the "smaller is
better" direction is handled by flipping the sign of the estimates.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, stats

from .errors import NonFactorizableError, PowerUndefinedError
from .estimation import FittedModel, lemma1_cov
from .model import MAXIMIZE, MINIMIZE, DesignSpec, best_structure, check_direction
from .numerics import DEFAULT_QUADRATURE, integrate_phi_product, solve_monotone_root
from .wald import min_k_search

FACTOR_TOL = 1e-3
MC_DRAWS = 10**6


def _diff_cov(cov, h):
    """Covariance of (delta_hat_j - delta_hat_h) for j != h."""
    cov = np.asarray(cov, dtype=float)
    others = [j for j in range(cov.shape[0]) if j != h]
    sub = cov[np.ix_(others, others)]
    col = cov[others, h]
    return sub - col[:, None] - col[None, :] + cov[h, h]


def lambda_factorize(cov, h, tol=FACTOR_TOL):
    """One-factor loadings for the comparisons of subgroup ``h`` with the rest.

    Returns ``(lambdas, max_residual)``. A diagonal ``cov`` gives the closed form
    ``sqrt(v_h / (v_j + v_h))``; otherwise the off-diagonal of the comparison
    correlation matrix is fitted by least squares and
    :class:`NonFactorizableError` is raised when the worst residual exceeds
    ``tol``.
    """
    cov = np.asarray(cov, dtype=float)
    H = cov.shape[0]
    others = [j for j in range(H) if j != h]
    off = cov - np.diag(np.diag(cov))
    if not np.any(off):
        v = np.diag(cov)
        return np.sqrt(v[h] / (v[others] + v[h])), 0.0
    m = H - 1
    if m == 1:
        return np.zeros(1), 0.0
    D = _diff_cov(cov, h)
    sd = np.sqrt(np.diag(D))
    R = D / np.outer(sd, sd)
    iu = np.triu_indices(m, 1)
    target = R[iu]
    if m == 2:
        r = target[0]
        a = np.sqrt(abs(r))
        return np.array([a, np.sign(r) * a if r else 0.0]), 0.0
    start = np.sqrt(np.clip(np.abs(R - np.eye(m)).sum(axis=1) / (m - 1), 1e-6, 0.99))
    bound = 1.0 - 1e-9
    fit = optimize.least_squares(
        lambda lam: np.outer(lam, lam)[iu] - target, start, bounds=(-bound, bound), xtol=1e-14, ftol=1e-14
    )
    resid = float(np.max(np.abs(fit.fun)))
    if resid > tol:
        raise NonFactorizableError(f"non-factorizable correlation for subgroup {h + 1} (max residual {resid:.3g})")
    return fit.x, resid


@lru_cache(maxsize=4096)
def _critical_value_cached(lam, nu, alpha, spec):
    f = lambda c: integrate_phi_product(lam, (c,) * len(lam), nu, spec)  # noqa: E731
    return solve_monotone_root(f, 1.0 - alpha, bracket=(0.0, 4.0), tol=1e-9)


def critical_value(lambdas, nu, alpha, spec=DEFAULT_QUADRATURE):
    """Solve ``P(max_j t_j <= c) = 1 - alpha`` for the one-factor multivariate t."""
    if not 0 < alpha <= 0.5:
        raise ValueError("alpha must lie in (0, 0.5]")
    lam = tuple(float(round(x, 12)) for x in np.atleast_1d(lambdas))
    return _critical_value_cached(lam, float(nu), float(alpha), spec)


class _MaxDistribution:
    """Distribution of the max of the studentized comparisons for one subgroup."""

    def __init__(self, cov, h, nu, spec=DEFAULT_QUADRATURE, seed=0, draws=MC_DRAWS):
        self.nu = nu
        self.spec = spec
        self.lambdas = None
        self._sample = None
        try:
            self.lambdas, _ = lambda_factorize(cov, h)
        except NonFactorizableError:
            D = _diff_cov(cov, h)
            sd = np.sqrt(np.diag(D))
            self._sample = _simulate_max_t(D / np.outer(sd, sd), nu, draws, seed)

    def cdf(self, c):
        if self._sample is not None:
            return np.searchsorted(self._sample, c, side="right") / self._sample.size
        return integrate_phi_product(self.lambdas, np.full(self.lambdas.size, c), self.nu, self.spec)

    def quantile(self, alpha):
        if self._sample is not None:
            return float(np.quantile(self._sample, 1.0 - alpha))
        return critical_value(self.lambdas, self.nu, alpha, self.spec)


def _simulate_max_t(corr, nu, draws, seed):
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(corr)
    out = np.empty(draws)
    chunk = 200_000
    for start in range(0, draws, chunk):
        m = min(chunk, draws - start)
        z = rng.standard_normal((m, corr.shape[0])) @ L.T
        s = np.sqrt(rng.chisquare(nu, m) / nu) if nu <= 1e7 else 1.0
        out[start:start + m] = (z / np.atleast_1d(s)[:, None]).max(axis=1)
    out.sort()
    return out


def mc_critical_value(corr, nu, alpha, draws=MC_DRAWS, seed=0):
    """Empirical ``1 - alpha`` quantile of the max of a multivariate t."""
    return float(np.quantile(_simulate_max_t(np.asarray(corr, dtype=float), nu, draws, seed), 1.0 - alpha))


@dataclass(frozen=True)
class McbResult:
    critical_values: np.ndarray
    lambdas: tuple
    best_set: tuple  # 0-based
    lower: np.ndarray
    upper: np.ndarray
    t_stats: np.ndarray
    std_errors: np.ndarray  # of delta_hat_h - delta_hat_{comparator}
    comparators: np.ndarray  # best of the others for each h (0-based)
    overall_p: float
    pairwise_p: np.ndarray  # BH adjusted
    raw_p: np.ndarray
    direction: str
    alpha: float

    @property
    def sci(self):
        return np.column_stack([self.lower, self.upper])


def _setup(fit: FittedModel, spec, seed):
    cov = fit.cov_delta
    return [_MaxDistribution(cov, h, fit.dof, spec, seed=seed + h) for h in range(fit.H)]


def _diff_se(fit: FittedModel):
    H = fit.H
    se = np.zeros((H, H))
    for h in range(H):
        for j in range(H):
            if j != h:
                se[h, j] = np.sqrt(fit.diff_var(h, j))
    return se


def _oriented(fit: FittedModel, direction):
    check_direction(direction)
    return fit if direction == MAXIMIZE else fit.flipped()


def _best_of_others(d):
    """Index of the largest other estimate for each h; ties go to the last."""
    H = d.size
    comp = np.empty(H, dtype=int)
    for h in range(H):
        others = [j for j in range(H) if j != h]
        vals = d[others]
        comp[h] = others[len(others) - 1 - int(np.argmax(vals[::-1]))]
    return comp


def _overall_p(fit, dists, se, method):
    d = fit.delta_hat
    H = fit.H
    if method == "inversion":
        # smallest alpha at which some subgroup leaves the best set
        p = 1.0
        for h in range(H):
            stat = max((d[j] - d[h]) / se[h, j] for j in range(H) if j != h)
            p = min(p, 1.0 - dists[h].cdf(stat))
        return float(min(max(p, 0.0), 1.0))
    if method == "displayed":
        lam, thr = [], []
        comp = _best_of_others(d)
        for h in range(H):
            if dists[h].lambdas is None:
                raise NonFactorizableError("displayed overall p-value needs one-factor loadings")
            t_h = d[h] - d[comp[h]]
            k = 0
            for j in range(H):
                if j == h:
                    continue
                lam.append(dists[h].lambdas[k])
                thr.append(t_h / se[h, j])
                k += 1
        return 1.0 - integrate_phi_product(lam, thr, fit.dof)
    raise ValueError(f"unknown overall p-value method {method!r}")


def overall_p_value(fit: FittedModel, direction=MAXIMIZE, method="inversion",
                    spec=DEFAULT_QUADRATURE, seed=0) -> float:
    """Overall p-value for the null of no heterogeneity.

    ``method="inversion"`` (default) returns the smallest level at which the
    MCB procedure drops at least one subgroup from the best set, so
    ``p < alpha`` exactly when the estimated best set is a proper subset.
    ``method="displayed"`` evaluates
    ``1 - int int prod_{h, j != h} Phi((lambda z + s t_h / se_hj) / sqrt(1 - lambda^2))``
    with ``t_h = delta_hat_h - max_{j != h} delta_hat_j``.
    """
    f = _oriented(fit, direction)
    return _overall_p(f, _setup(f, spec, seed), _diff_se(f), method)


def bh_adjust(p):
    """Benjamini-Hochberg step-up adjusted p-values."""
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        return p
    return stats.false_discovery_control(p, method="bh")


def _raw_pairwise(fit, se):
    d = fit.delta_hat
    comp = _best_of_others(d)
    idx = np.arange(fit.H)
    t = d - d[comp]
    s = se[idx, comp]
    return stats.t.cdf(t / s, fit.dof), t, s, comp


def pairwise_p_values(fit: FittedModel, direction=MAXIMIZE):
    """BH-adjusted one-sided p-values of each subgroup against the best of the others."""
    f = _oriented(fit, direction)
    raw, *_ = _raw_pairwise(f, _diff_se(f))
    return bh_adjust(raw)


def mcb_test(fit: FittedModel, alpha=0.05, direction=None, spec=DEFAULT_QUADRATURE,
             seed=0, overall_method="inversion") -> McbResult:
    """Critical values, best set, constrained simultaneous intervals and p-values.

    Intervals are for ``delta_h - max_{j != h} delta_j`` when maximizing and for
    ``delta_h - min_{j != h} delta_j`` when minimizing.
    """
    direction = direction or fit.direction
    check_direction(direction)
    H = fit.H
    if H < 2:
        raise ValueError("MCB needs at least two subgroups")
    f = _oriented(fit, direction)
    dists = _setup(f, spec, seed)
    crit = np.array([dist.quantile(alpha) for dist in dists])
    se = _diff_se(f)
    d = f.delta_hat

    upper = np.empty(H)
    for h in range(H):
        upper[h] = max(0.0, min(d[h] - d[j] + crit[h] * se[h, j] for j in range(H) if j != h))
    S = [h for h in range(H) if upper[h] > 0]
    lower = np.empty(H)
    for h in range(H):
        vals = [d[h] - d[j] - crit[h] * se[h, j] for j in S if j != h]
        lower[h] = min(0.0, min(vals)) if vals else 0.0

    raw, t, s, comp = _raw_pairwise(f, se)
    overall = _overall_p(f, dists, se, overall_method)
    lambdas = tuple(None if dist.lambdas is None else np.asarray(dist.lambdas) for dist in dists)
    if direction == MINIMIZE:
        lower, upper, t = -upper, -lower, -t
    lower, upper = lower + 0.0, upper + 0.0  # no negative zeros
    return McbResult(
        critical_values=crit, lambdas=lambdas, best_set=tuple(S), lower=lower, upper=upper, t_stats=t,
        std_errors=s, comparators=comp, overall_p=overall, pairwise_p=bh_adjust(raw), raw_p=raw,
        direction=direction, alpha=alpha,
    )


# -- design-time power -----------------------------------------------------

# Half-width multiple of the critical value that a non-best comparison must fit
# inside its true gap for coverage to imply rejection.
NARROWNESS = 2.0


def mcb_power_terms(design: DesignSpec, K, spec=DEFAULT_QUADRATURE, narrowness=NARROWNESS):
    """Pieces of the power approximation at ``K`` networks.

    Returns a dict with ``joint`` (coverage of every comparison together with
    narrowness, one integral over the shared factor and sigma_hat), the two
    factors ``best`` and ``narrow`` of the product bound, and ``u_star``.
    """
    H = design.H
    st = best_structure(design.delta, design.direction)
    if not st.b1:
        raise PowerUndefinedError("power undefined under the global null: every subgroup is best")
    nu = K * design.n - 2 * H
    if nu < 1:
        return {"joint": 0.0, "best": 0.0, "narrow": 0.0, "u_star": 0.0}
    cov = lemma1_cov(design, K)
    sign = 1.0 if design.direction == MAXIMIZE else -1.0
    d = sign * np.asarray(design.delta)
    comp = _best_of_others(d)
    lam_h = np.empty(H)
    crit = np.empty(H)
    sd = np.empty(H)
    for h in range(H):
        lam, _ = lambda_factorize(cov, h)
        crit[h] = critical_value(lam, nu, design.alpha, spec)
        j = comp[h]
        lam_h[h] = lam[j if j < h else j - 1]
        sd[h] = np.sqrt(cov[h, h] + cov[j, j] - 2 * cov[h, j])
    b1 = list(st.b1)
    # one member of a tied best set is the reference for the others
    b0 = list(st.b0)[:-1]
    gaps = d[comp[b1]] - d[b1]
    u_star = float(np.min(gaps / (narrowness * crit[b1] * sd[b1])))
    narrow = integrate_phi_product(lam_h[b1], crit[b1], nu, spec, u_upper=u_star)
    best = integrate_phi_product(lam_h[b0], crit[b0], nu, spec) if b0 else 1.0
    both = b0 + b1
    joint = integrate_phi_product(lam_h[both], crit[both], nu, spec, u_upper=u_star)
    return {"joint": joint, "best": best, "narrow": narrow, "u_star": u_star}


POWER_FORMS = ("joint", "product")


def mcb_power(design: DesignSpec, K, spec=DEFAULT_QUADRATURE, narrowness=NARROWNESS, form="joint") -> float:
    """Approximate probability that MCB keeps every best subgroup and rejects every other.

    ``form="product"`` multiplies the coverage term for the best set by the
    coverage-and-narrowness term for the rest (a lower bound of ``"joint"``).
    """
    if form not in POWER_FORMS:
        raise ValueError(f"form must be one of {POWER_FORMS}")
    t = mcb_power_terms(design, K, spec, narrowness)
    return t["joint"] if form == "joint" else t["best"] * t["narrow"]


def mcb_min_k(design: DesignSpec, spec=DEFAULT_QUADRATURE, narrowness=NARROWNESS, form="joint"):
    """Minimal K reaching power ``1 - beta`` and the evaluated (K, power) curve."""
    if not best_structure(design.delta, design.direction).b1:
        raise PowerUndefinedError("power undefined under the global null: every subgroup is best")
    curve = {}

    def power(K):
        if K not in curve:
            curve[K] = mcb_power(design, K, spec, narrowness, form)
        return curve[K]

    k0 = max(1, -(-(2 * design.H + 1) // design.n))
    K = min_k_search(power, 1.0 - design.beta, k_min=k0)
    return K, sorted(curve.items())


def power_curve(design: DesignSpec, ks, test="mcb", spec=DEFAULT_QUADRATURE):
    from .wald import wald_power

    fn = (lambda K: mcb_power(design, K, spec)) if test == "mcb" else (lambda K: wald_power(design, K))
    return [(int(K), float(fn(int(K)))) for K in ks]
