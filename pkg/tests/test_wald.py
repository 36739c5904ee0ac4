import numpy as np
import pytest
from scipy import stats

from enrt.errors import PowerUndefinedError
from enrt.estimation import FittedModel, fit_gee, lemma1_cov
from enrt.model import DesignSpec
from enrt.simulation import SimScenario, generate_dataset
from enrt.wald import (chisq_critical, contrast_matrix, min_k_search, quadratic_form, wald_min_k,
                       wald_noncentrality, wald_power, wald_test, wald_zero_test)


def test_contrast_matrix():
    C = contrast_matrix(3)
    np.testing.assert_array_equal(C, [[1, 0, -1], [0, 1, -1]])


def test_statistic_is_contrast_invariant():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    cov = A @ A.T + np.eye(4)
    d = rng.normal(size=4)
    # any full-rank set of contrasts gives the same quadratic form
    D = np.array([[1, -1, 0, 0], [0, 1, -1, 0], [0, 0, 1, -1]], dtype=float)
    ref = (D @ d) @ np.linalg.solve(D @ cov @ D.T, D @ d)
    assert quadratic_form(d, cov) == pytest.approx(ref, rel=1e-10)


def test_wald_test_and_zero_test():
    fit = FittedModel.from_summary([0.0, 0.3, 0.6], [0.1, 0.1, 0.2], dof=100)
    res = wald_test(fit)
    assert res.df == 2
    assert res.p_value == pytest.approx(stats.chi2.sf(res.statistic, 2), abs=1e-12)
    z = wald_zero_test(fit)
    assert z.df == 3
    assert z.statistic == pytest.approx(0 + 9 + 9)


def test_critical_value():
    assert chisq_critical(3, 0.05) == pytest.approx(stats.chi2.ppf(0.95, 3), abs=1e-8)


def test_power_is_alpha_under_null():
    design = DesignSpec.balanced((1.0, 1.0, 1.0), n=5, rho_y=0.2)
    assert wald_power(design, 100) == pytest.approx(0.05, abs=1e-10)


def test_power_increasing_and_noncentrality():
    design = DesignSpec.balanced((-0.5, -0.5, 0.0), n=5, rho_y=0.3)
    assert wald_noncentrality(design, 200) == pytest.approx(2 * wald_noncentrality(design, 100))
    pw = [wald_power(design, K) for K in (10, 50, 100, 400)]
    assert all(a < b for a, b in zip(pw, pw[1:]))
    worse = DesignSpec.balanced((-0.5, -0.5, 0.0), n=5, rho_y=0.3, sigma2=4.0)
    assert wald_power(worse, 100) < wald_power(design, 100)


def test_min_k_is_minimal():
    design = DesignSpec.balanced((-0.5, -0.5, -0.5, 0.0), n=5, rho_y=0.3)
    K = wald_min_k(design)
    assert wald_power(design, K) >= 0.9 > wald_power(design, K - 1)


def test_min_k_undefined():
    with pytest.raises(PowerUndefinedError, match="power unattainable"):
        wald_min_k(DesignSpec.balanced((0.2, 0.2), n=3, rho_y=0.1))


def test_min_k_search_cap():
    with pytest.raises(PowerUndefinedError):
        min_k_search(lambda K: 0.0, 0.9, k_cap=64)
    assert min_k_search(lambda K: K >= 37, 0.5) == 37


def test_power_agrees_with_simulation():
    # Monte Carlo rejection rate versus the noncentral chi-square prediction,
    # using the exchangeable variance that the fitted model targets (rho = 0).
    s = SimScenario(K=160, n=3, H=3, p=0.5, g=(1 / 3,) * 3, zeta=(0, 0, 0), delta=(0.0, 0.3, 0.6),
                    sigma_u2=0.0, sigma_e2=1.0, n_reps=100, master_seed=5)
    rej = np.mean([wald_test(fit_gee(generate_dataset(s, r), rho=0.0)).p_value < 0.05 for r in range(400)])
    design = DesignSpec.balanced(s.delta, n=3, rho_y=0.0)
    pred = wald_power(design, 160)
    assert abs(rej - pred) < 4 * np.sqrt(pred * (1 - pred) / 400) + 0.02
    assert np.diag(lemma1_cov(design, 160))[0] > 0
