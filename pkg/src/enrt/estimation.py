"""GEE fit of the subgroup-by-treatment mean model with an exchangeable
working correlation, plus the design-based covariance of the spillover
estimates used for power calculations.

The mean model for member i of network k whose index is in subgroup h is
``zeta_h + delta_h * G_k``; members of one network share a random effect so
``Var(Y_k) = sigma2 * ((1 - rho) I + rho J)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConvergenceError, EstimabilityError
from .model import DesignSpec, EgoDataset

log = logging.getLogger(__name__)

RHO_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class FittedModel:
    zeta: np.ndarray
    delta_hat: np.ndarray
    sigma2_hat: float
    rho_hat: float
    cov_theta: np.ndarray  # (2H x 2H), order zeta_1..zeta_H, delta_1..delta_H
    dof: int
    n_networks: int = 0
    cell_counts: np.ndarray | None = None  # H x 2, control / treated
    direction: str = "maximize"
    iterations: int = 0

    @property
    def H(self):
        return self.delta_hat.size

    @property
    def cov_delta(self):
        H = self.H
        return self.cov_theta[H:, H:]

    @property
    def cov_zeta(self):
        H = self.H
        return self.cov_theta[:H, :H]

    def diff_var(self, h, j):
        """Var(delta_hat_h - delta_hat_j), i.e. sigma_hat^2 * v_jh."""
        c = self.cov_delta
        return c[h, h] + c[j, j] - 2.0 * c[h, j]

    def v(self, h, j):
        return self.diff_var(h, j) / self.sigma2_hat

    @classmethod
    def from_summary(cls, delta_hat, std_errors, dof, zeta=None, zeta_std_errors=None,
                     sigma2_hat=1.0, rho_hat=0.0, direction="maximize"):
        """Build a fit from reported estimates and independent standard errors."""
        d = np.asarray(delta_hat, dtype=float)
        se = np.asarray(std_errors, dtype=float)
        H = d.size
        z = np.zeros(H) if zeta is None else np.asarray(zeta, dtype=float)
        zse = np.ones(H) if zeta_std_errors is None else np.asarray(zeta_std_errors, dtype=float)
        cov = np.diag(np.concatenate([zse**2, se**2]))
        return cls(zeta=z, delta_hat=d, sigma2_hat=float(sigma2_hat), rho_hat=float(rho_hat),
                   cov_theta=cov, dof=int(dof), direction=direction)

    def flipped(self):
        """The same fit with the sign of every spillover estimate reversed."""
        H = self.H
        sign = np.concatenate([np.ones(H), -np.ones(H)])
        return FittedModel(
            zeta=self.zeta, delta_hat=-self.delta_hat, sigma2_hat=self.sigma2_hat, rho_hat=self.rho_hat,
            cov_theta=self.cov_theta * np.outer(sign, sign), dof=self.dof, n_networks=self.n_networks,
            cell_counts=self.cell_counts, direction="minimize" if self.direction == "maximize" else "maximize",
            iterations=self.iterations,
        )


def _cell_sums(data: EgoDataset, rho):
    """Weighted sums per (subgroup, arm) cell under working correlation ``rho``.

    For an exchangeable block, ``j' V^-1 j = n / (1 + (n-1) rho)`` and
    ``j' V^-1 y = sum(y) / (1 + (n-1) rho)``.
    """
    a = data.arrays
    H = data.n_subgroups
    denom = 1.0 + (a.sizes - 1) * rho
    ysum = np.bincount(a.owner, weights=a.outcomes, minlength=a.n_networks)
    cell = a.subgroup * 2 + a.treated.astype(np.int64)
    A = np.bincount(cell, weights=a.sizes / denom, minlength=2 * H).reshape(H, 2)
    B = np.bincount(cell, weights=ysum / denom, minlength=2 * H).reshape(H, 2)
    return A, B


def _information(A):
    """``sum_k D_k' V_k^-1 D_k`` from per-cell weights."""
    H = A.shape[0]
    U = np.zeros((2 * H, 2 * H))
    idx = np.arange(H)
    U[idx, idx] = A[:, 0] + A[:, 1]
    U[idx, H + idx] = U[H + idx, idx] = A[:, 1]
    U[H + idx, H + idx] = A[:, 1]
    return U


def check_estimable(data: EgoDataset):
    counts = data.cell_counts()
    for h in range(data.n_subgroups):
        for arm, name in ((0, "control"), (1, "treated")):
            if counts[h, arm] == 0:
                raise EstimabilityError(f"no {name} networks in subgroup {h + 1}")


def gee_coefficients(data: EgoDataset, rho=0.0):
    """Solve the estimating equations at a fixed working correlation.

    Returns ``(theta, U)`` with ``theta = (zeta_1..zeta_H, delta_1..delta_H)``
    and ``U`` the information matrix.
    """
    check_estimable(data)
    A, B = _cell_sums(data, rho)
    U = _information(A)
    rhs = np.concatenate([B[:, 0] + B[:, 1], B[:, 1]])
    cho = linalg.cho_factor(U)
    return linalg.cho_solve(cho, rhs), U


def estimate_variance_components(resid_sum, resid_sumsq, sizes, n_params):
    """Moment estimators of total variance and within-network correlation.

    ``resid_sum`` and ``resid_sumsq`` hold the per-network sums of residuals and
    squared residuals. ``sigma2`` is the residual mean square on
    ``N - n_params`` degrees of freedom; ``rho`` averages the within-network
    cross-products over the available member pairs and is clamped to
    ``[0, 1 - 1e-6]``.
    """
    resid_sum = np.asarray(resid_sum, dtype=float)
    resid_sumsq = np.asarray(resid_sumsq, dtype=float)
    sizes = np.asarray(sizes)
    dof = int(sizes.sum()) - n_params
    if dof <= 0:
        raise EstimabilityError(f"no residual degrees of freedom ({sizes.sum()} members, {n_params} parameters)")
    sigma2 = float(resid_sumsq.sum()) / dof
    pairs = float((sizes * (sizes - 1)).sum())
    if pairs == 0:
        warnings.warn("every network has a single member; within-network correlation set to 0", stacklevel=2)
        return sigma2, 0.0
    if sigma2 <= 0:
        return sigma2, 0.0
    cross = float((resid_sum**2 - resid_sumsq).sum())
    rho = cross / pairs / sigma2
    return sigma2, float(min(max(rho, 0.0), RHO_MAX))


def _residual_sums(data, theta):
    a = data.arrays
    H = data.n_subgroups
    fitted = theta[a.subgroup] + theta[H + a.subgroup] * a.treated
    r = a.outcomes - fitted[a.owner]
    n = a.n_networks
    return np.bincount(a.owner, weights=r, minlength=n), np.bincount(a.owner, weights=r * r, minlength=n)


def fit_gee(data: EgoDataset, rho=None, tol=1e-8, max_iter=100) -> FittedModel:
    """Fit the model, alternating coefficient solves with moment updates.

    Pass ``rho`` to hold the working correlation fixed; only ``sigma2`` is then
    re-estimated.
    """
    check_estimable(data)
    H = data.n_subgroups
    a = data.arrays
    n_params = 2 * H
    if a.sizes.sum() <= n_params:
        raise EstimabilityError(f"{a.sizes.sum()} member outcomes cannot identify {n_params} mean parameters")

    cur_rho = 0.0 if rho is None else float(rho)
    theta, U = gee_coefficients(data, cur_rho)
    s1, s2 = _residual_sums(data, theta)
    sigma2, rho_new = estimate_variance_components(s1, s2, a.sizes, n_params)
    it = 0
    if rho is None:
        for it in range(1, max_iter + 1):
            theta_new, U = gee_coefficients(data, rho_new)
            s1, s2 = _residual_sums(data, theta_new)
            sigma2_new, rho_next = estimate_variance_components(s1, s2, a.sizes, n_params)
            change = max(np.max(np.abs(theta_new - theta)), abs(sigma2_new - sigma2), abs(rho_next - rho_new))
            theta, sigma2, cur_rho, rho_new = theta_new, sigma2_new, rho_new, rho_next
            if change < tol:
                break
        else:
            raise ConvergenceError(
                f"GEE iterations did not converge in {max_iter} steps",
                last_iterate={"theta": theta, "sigma2": sigma2, "rho": cur_rho},
            )
        log.debug("GEE converged after %d iterations (rho=%.6f)", it, cur_rho)
    cov = sigma2 * linalg.cho_solve(linalg.cho_factor(U), np.eye(2 * H))
    cov = 0.5 * (cov + cov.T)
    return FittedModel(
        zeta=theta[:H].copy(), delta_hat=theta[H:].copy(), sigma2_hat=float(sigma2), rho_hat=float(cur_rho),
        cov_theta=cov, dof=int(a.sizes.sum()) - n_params, n_networks=a.n_networks,
        cell_counts=data.cell_counts(), direction=data.direction, iterations=it,
    )


def lemma1_b_bar(n, rho):
    """Per-network information constant ``n / ((1 - rho)(1 + n rho))``."""
    return n / ((1.0 - rho) * (1.0 + n * rho))


def lemma1_cov(design: DesignSpec, K, g=None, sigma2=None, rho=None):
    """Design-based covariance of the spillover estimates for ``K`` networks.

    Diagonal with entries ``sigma2 / (K (1 - p) b_bar p g_h)``. ``g``, ``sigma2``
    and ``rho`` override the design values (e.g. with realized proportions).
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    g = np.asarray(design.g if g is None else g, dtype=float)
    s2 = design.sigma2 if sigma2 is None else sigma2
    r = design.rho_y if rho is None else rho
    b = lemma1_b_bar(design.n, r)
    return np.diag(s2 / (K * (1.0 - design.p) * b * design.p * g))
