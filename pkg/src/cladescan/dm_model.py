"""Dirichlet-multinomial estimation and the moment-based cross-group test.

The moment test here is the per-node engine reused by the tree model: given
G groups of count vectors over the same categories, it compares group mean
proportions through a weighted quadratic form whose null distribution is
chi-square with (K-1)(G-1) degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import digamma, gammaln

from .special_functions import chi2_sf

__all__ = [
    "CountTable",
    "DmParams",
    "DmFit",
    "MomTestResult",
    "dm_log_pmf",
    "mom_estimate",
    "mom_test",
    "dm_mle",
]

THETA_MAX = 1.0 - 1e-8


@dataclass
class CountTable:
    """Samples-by-categories integer count matrix with identifiers.

    Categories are OTUs for a full table, or the children of an internal
    node for aggregated per-node tables.
    """

    sample_ids: list[str]
    categories: list[str]
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2:
            raise ValueError("counts must be a 2-d matrix")
        n, k = self.counts.shape
        if n != len(self.sample_ids) or k != len(self.categories):
            raise ValueError("counts shape does not match identifiers")
        if n < 1 or k < 1:
            raise ValueError("count table must have at least one row and column")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        if not np.issubdtype(self.counts.dtype, np.integer):
            rounded = np.rint(self.counts)
            if not np.allclose(self.counts, rounded):
                raise ValueError("counts must be integers")
            self.counts = rounded.astype(np.int64)
        else:
            self.counts = self.counts.astype(np.int64)

    @property
    def n_samples(self) -> int:
        return self.counts.shape[0]

    @property
    def n_categories(self) -> int:
        return self.counts.shape[1]

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def grand_total(self) -> int:
        return int(self.counts.sum())

    def take_samples(self, idx) -> "CountTable":
        idx = np.asarray(idx)
        return CountTable([self.sample_ids[i] for i in idx],
                          list(self.categories), self.counts[idx])


@dataclass
class DmParams:
    """Dirichlet-multinomial parameters: mean proportions and dispersion."""

    pi: np.ndarray
    nu: float

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.pi.ndim != 1 or self.pi.size < 2:
            raise ValueError("pi must be a vector of length >= 2")
        if np.any(self.pi <= 0.0) or abs(self.pi.sum() - 1.0) > 1e-8:
            raise ValueError("pi must be positive and sum to 1")
        if not self.nu > 0.0:
            raise ValueError("nu must be positive")

    @property
    def theta(self) -> float:
        return 1.0 / (1.0 + self.nu)

    @property
    def alpha(self) -> np.ndarray:
        """Dirichlet concentration vector nu * pi."""
        return self.nu * self.pi


@dataclass
class DmFit:
    params: DmParams
    log_likelihood: float
    converged: bool
    boundary: bool = False
    n_iter: int = 0


@dataclass
class MomTestResult:
    statistic: float
    df: int
    p_value: float
    group_pi: list[np.ndarray]
    group_theta: list[float]
    pooled_pi: np.ndarray
    weights: np.ndarray
    dropped_categories: list[int] = field(default_factory=list)


def _log_multinomial_coef(total, x):
    return gammaln(total + 1.0) - gammaln(np.asarray(x) + 1.0).sum()


def dm_log_pmf(params: DmParams, sample) -> float:
    """Log probability of one count vector under the DM model."""
    x = np.asarray(sample, dtype=np.float64)
    if x.shape != params.pi.shape:
        raise ValueError(f"sample has {x.size} categories, expected {params.pi.size}")
    total = x.sum()
    if total == 0:
        return 0.0
    alpha = params.alpha
    value = (_log_multinomial_coef(total, x)
             + gammaln(params.nu) - gammaln(total + params.nu)
             + (gammaln(x + alpha) - gammaln(alpha)).sum())
    return float(value)


def _usable_rows(table: CountTable) -> np.ndarray:
    return table.row_totals > 0


def mom_estimate(table: CountTable):
    """Method-of-moments estimates (pi_hat, theta_hat) from one group.

    Rows with zero total carry no information and are dropped.  theta_hat is
    clamped to [0, 1 - 1e-8]: the raw moment ratio can fall outside the
    parameter range on under- or extremely over-dispersed data.
    """
    if table.n_categories < 2:
        raise ValueError("mom_estimate requires at least 2 categories")
    keep = _usable_rows(table)
    counts = table.counts[keep].astype(np.float64)
    n = counts.shape[0]
    if n < 2:
        raise ValueError("mom_estimate requires at least 2 samples with positive totals")
    row_tot = counts.sum(axis=1)
    grand = row_tot.sum()
    if row_tot.max() <= 1:
        raise ValueError("mom_estimate undefined when every sample total is <= 1")
    pi_hat = counts.sum(axis=0) / grand
    pij = counts / row_tot[:, None]
    s_j = (row_tot[:, None] * (pij - pi_hat) ** 2).sum(axis=0) / (n - 1)
    g_j = (row_tot[:, None] * pij * (1.0 - pij)).sum(axis=0) / (row_tot - 1.0).sum()
    n_c = (grand - (row_tot ** 2).sum() / grand) / (n - 1)
    denom = (s_j + (n_c - 1.0) * g_j).sum()
    if denom == 0.0:
        theta_raw = 0.0
    else:
        theta_raw = (s_j - g_j).sum() / denom
    theta_hat = min(max(theta_raw, 0.0), THETA_MAX)
    return pi_hat, theta_hat


def _group_weight_denominator(theta, counts):
    """C(theta, N..) = theta * (sum N_i^2 - N..) + N.. over usable rows."""
    row_tot = counts.sum(axis=1)
    grand = row_tot.sum()
    return theta * ((row_tot.astype(np.float64) ** 2).sum() - grand) + grand


def mom_test(groups: list[CountTable]) -> MomTestResult:
    """Moment-based test of equal mean proportions across G >= 2 groups.

    Categories with zero pooled proportion make the quadratic form undefined;
    they are dropped and the degrees of freedom reduced, with the dropped
    indices recorded in the result.
    """
    if len(groups) < 2:
        raise ValueError("mom_test requires at least 2 groups")
    cats = groups[0].categories
    for g in groups[1:]:
        if list(g.categories) != list(cats):
            raise ValueError("groups must share identical categories")
    n_groups = len(groups)
    k = len(cats)

    group_pi, group_theta, inv_c = [], [], []
    for g in groups:
        pi_g, theta_g = mom_estimate(g)
        counts = g.counts[_usable_rows(g)].astype(np.float64)
        grand = counts.sum()
        c_g = _group_weight_denominator(theta_g, counts)
        group_pi.append(pi_g)
        group_theta.append(theta_g)
        inv_c.append(grand ** 2 / c_g)
    inv_c = np.asarray(inv_c)
    weights = inv_c / inv_c.sum()
    pooled = sum(w * pi for w, pi in zip(weights, group_pi))

    keep = pooled > 0.0
    dropped = [int(j) for j in np.nonzero(~keep)[0]]
    k_eff = int(keep.sum())
    if k_eff < 2:
        df = max((k - 1) * (n_groups - 1), 1)
        return MomTestResult(0.0, df, 1.0, group_pi, group_theta, pooled,
                             weights, dropped)

    stat = 0.0
    for scale, pi_g in zip(inv_c, group_pi):
        resid = pi_g[keep] - pooled[keep]
        stat += scale * float((resid ** 2 / pooled[keep]).sum())
    df = (k_eff - 1) * (n_groups - 1)
    p_value = chi2_sf(df, max(stat, 0.0))
    return MomTestResult(float(stat), df, float(p_value), group_pi,
                         group_theta, pooled, weights, dropped)


def dm_mle(table: CountTable, init: DmParams | None = None) -> DmFit:
    """Maximum-likelihood DM fit by quasi-Newton iteration.

    Optimizes over log concentrations beta = log(nu * pi), an unconstrained
    reparametrization of (log nu, logit pi).  The analytic gradient uses
    digamma functions.  Returns the best iterate with converged=False when
    the gradient tolerance is not reached within 500 iterations, and flags
    boundary solutions (nu effectively 0 or infinite).
    """
    if table.n_categories < 2:
        raise ValueError("dm_mle requires at least 2 categories")
    keep = _usable_rows(table)
    counts = table.counts[keep].astype(np.float64)
    if counts.shape[0] == 0:
        raise ValueError("dm_mle requires at least one sample with positive total")
    row_tot = counts.sum(axis=1)
    const = sum(_log_multinomial_coef(t, x) for t, x in zip(row_tot, counts))

    if init is None:
        try:
            pi0, theta0 = mom_estimate(table)
            theta0 = min(max(theta0, 1e-4), 1.0 - 1e-4)
            nu0 = (1.0 - theta0) / theta0
            pi0 = np.maximum(pi0, 1e-8)
            pi0 = pi0 / pi0.sum()
        except ValueError:
            pi0 = np.full(table.n_categories, 1.0 / table.n_categories)
            nu0 = 1.0
        init = DmParams(pi0, nu0)

    def neg_loglik_grad(beta):
        alpha = np.exp(beta)
        nu = alpha.sum()
        ll = (gammaln(nu) - gammaln(row_tot + nu)).sum()
        ll += (gammaln(counts + alpha) - gammaln(alpha)).sum()
        dnu = (digamma(nu) - digamma(row_tot + nu)).sum()
        dalpha = dnu + (digamma(counts + alpha) - digamma(alpha)).sum(axis=0)
        return -ll, -dalpha * alpha

    beta0 = np.log(init.alpha)
    res = minimize(neg_loglik_grad, beta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-8})
    beta = res.x
    value = -res.fun
    init_value = -neg_loglik_grad(beta0)[0]
    if value < init_value:
        beta, value = beta0, init_value

    alpha = np.exp(beta)
    nu = float(alpha.sum())
    pi = alpha / nu
    boundary = bool(nu > 1e10 or nu < 1e-8 or counts.shape[0] < 2)
    grad_norm = float(np.max(np.abs(neg_loglik_grad(beta)[1])))
    converged = bool(res.success and grad_norm < 1e-6 and not boundary)
    params = DmParams(np.maximum(pi, 1e-300), min(nu, 1e12))
    return DmFit(params, float(value + const), converged, boundary,
                 int(res.nit))
