import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from enrt.errors import NoRootError
from enrt.mcb import critical_value
from enrt.numerics import (ChiScaleDensity, QuadratureSpec, integrate_phi_product, noncentral_chisq_cdf,
                           solve_monotone_root, std_normal_cdf)


def poisson_mixture_ncx2_cdf(x, df, nc, terms=400):
    """Series oracle: sum_k Pois(k; nc/2) * chi2_{df+2k}(x)."""
    k = np.arange(terms)
    w = stats.poisson.pmf(k, nc / 2.0)
    return float(np.sum(w * stats.chi2.cdf(x, df + 2 * k)))


class TestDistributions:
    def test_normal_cdf_tails(self):
        assert std_normal_cdf(0.0) == 0.5
        assert std_normal_cdf(-37.0) > 0.0
        assert math.isclose(std_normal_cdf(-10.0), 7.619853024160527e-24, rel_tol=1e-10)

    @pytest.mark.parametrize("df,nc,x", [(1, 0.0, 3.84), (3, 2.5, 4.0), (5, 12.0, 20.0), (10, 0.3, 1.0)])
    def test_ncx2_matches_series(self, df, nc, x):
        assert noncentral_chisq_cdf(x, df, nc) == pytest.approx(poisson_mixture_ncx2_cdf(x, df, nc), abs=1e-9)

    def test_ncx2_monte_carlo(self):
        rng = np.random.default_rng(1)
        draws = 10**6
        df, nc, x = 3, 4.0, 6.5
        z = rng.standard_normal((draws, df))
        z[:, 0] += math.sqrt(nc)
        emp = np.mean((z**2).sum(axis=1) <= x)
        se = math.sqrt(emp * (1 - emp) / draws)
        assert abs(noncentral_chisq_cdf(x, df, nc) - emp) < 4 * se

    def test_ncx2_edges(self):
        assert noncentral_chisq_cdf(0.0, 2, 1.0) == 0.0
        assert noncentral_chisq_cdf(-1.0, 2) == 0.0
        with pytest.raises(ValueError):
            noncentral_chisq_cdf(1.0, 0)
        with pytest.raises(ValueError):
            noncentral_chisq_cdf(1.0, 2.5)
        with pytest.raises(ValueError):
            noncentral_chisq_cdf(1.0, 2, -1.0)

    @pytest.mark.parametrize("nu", [1.0, 4.0, 30.0, 412.0])
    def test_chi_scale_density(self, nu):
        dens = ChiScaleDensity(nu)
        from scipy import integrate

        total, _ = integrate.quad(dens.pdf, 0, np.inf)
        assert total == pytest.approx(1.0, abs=1e-8)
        q = dens.ppf(0.3)
        assert float(dens.cdf(q)) == pytest.approx(0.3, abs=1e-10)
        # nu * U^2 is chi-square(nu)
        assert float(dens.cdf(1.0)) == pytest.approx(stats.chi2.cdf(nu, nu), abs=1e-12)


class TestDoubleIntegral:
    @pytest.mark.parametrize("nu", [1e8, 1e6, 10.0, 3.0, 1.0])
    def test_single_term_is_t_cdf(self, nu):
        for c in (-1.0, 0.5, 1.7, 3.0):
            ref = stats.norm.cdf(c) if nu > 1e7 else stats.t.cdf(c, nu)
            assert integrate_phi_product([0.3], [c], nu) == pytest.approx(ref, abs=1e-7)

    def test_equicorrelated_normal_matches_mvn(self):
        lam = np.full(3, 1 / math.sqrt(2))
        c = 2.0
        cov = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
        ref = stats.multivariate_normal(mean=np.zeros(3), cov=cov).cdf(np.full(3, c))
        assert integrate_phi_product(lam, [c] * 3, 1e9) == pytest.approx(ref, abs=1e-5)

    def test_unequal_loadings_match_mvt(self):
        lam = np.array([0.2, 0.6, 0.85])
        thr = np.array([1.5, 2.0, 2.5])
        corr = np.outer(lam, lam)
        np.fill_diagonal(corr, 1.0)
        nu = 8
        ref = stats.multivariate_t(loc=np.zeros(3), shape=corr, df=nu, seed=3).cdf(thr, maxpts=2_000_000)
        assert integrate_phi_product(lam, thr, nu) == pytest.approx(ref, abs=2e-4)

    def test_truncation(self):
        full = integrate_phi_product([0.5, 0.5], [2.0, 2.0], 20.0)
        part = integrate_phi_product([0.5, 0.5], [2.0, 2.0], 20.0, u_upper=1.0)
        assert 0 < part < full
        assert integrate_phi_product([0.5], [2.0], 20.0, u_upper=0.0) == 0.0
        # point mass at u = 1 for huge nu
        assert integrate_phi_product([0.5], [2.0], 1e9, u_upper=0.99) == 0.0

    def test_rejects_bad_lambda(self):
        with pytest.raises(ValueError):
            integrate_phi_product([1.0], [1.0], 10)
        with pytest.raises(ValueError):
            integrate_phi_product([0.1, 0.2], [1.0], 10)
        with pytest.raises(ValueError):
            QuadratureSpec(nodes_z=4)

    @settings(max_examples=40, deadline=None)
    @given(
        lam=st.lists(st.floats(-0.95, 0.95), min_size=1, max_size=5),
        c=st.floats(-3, 4),
        bump=st.floats(0.01, 1.0),
        nu=st.sampled_from([2.0, 15.0, 200.0, 1e9]),
    )
    def test_monotone_in_threshold_and_bounded(self, lam, c, bump, nu):
        thr = [c] * len(lam)
        lo = integrate_phi_product(lam, thr, nu)
        hi = integrate_phi_product(lam, [c + bump] * len(lam), nu)
        assert 0.0 <= lo <= hi + 1e-10 <= 1.0 + 1e-10


class TestCriticalValues:
    @pytest.mark.parametrize("nu,alpha", [(1e8, 0.05), (1e6, 0.05), (10.0, 0.05), (3.0, 0.1), (1.0, 0.05)])
    def test_two_groups_reduce_to_quantiles(self, nu, alpha):
        ref = stats.norm.ppf(1 - alpha) if nu > 1e7 else stats.t.ppf(1 - alpha, nu)
        assert critical_value([1 / math.sqrt(2)], nu, alpha) == pytest.approx(ref, abs=1e-6)

    def test_equicorrelated_four_groups(self):
        c = critical_value(np.full(3, 1 / math.sqrt(2)), 1e9, 0.05)
        cov = np.full((3, 3), 0.5) + 0.5 * np.eye(3)
        assert stats.multivariate_normal(np.zeros(3), cov).cdf(np.full(3, c)) == pytest.approx(0.95, abs=1e-5)
        assert c > stats.norm.ppf(0.95)

    def test_more_comparisons_need_larger_value(self):
        cs = [critical_value(np.full(m, 1 / math.sqrt(2)), 100.0, 0.05) for m in (1, 2, 3, 5)]
        assert all(a < b for a, b in zip(cs, cs[1:]))


class TestRoot:
    def test_expands_bracket(self):
        root = solve_monotone_root(lambda x: x**3, 27.0, bracket=(0.0, 1.0))
        assert root == pytest.approx(3.0, abs=1e-9)
        root = solve_monotone_root(lambda x: x, -50.0, bracket=(0.0, 1.0))
        assert root == pytest.approx(-50.0)

    def test_no_root(self):
        with pytest.raises(NoRootError, match="no root in range"):
            solve_monotone_root(lambda x: 0.0, 1.0, max_expand=5)

    def test_bad_bracket(self):
        with pytest.raises(ValueError):
            solve_monotone_root(lambda x: x, 0.0, bracket=(1.0, 1.0))
