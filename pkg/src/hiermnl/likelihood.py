"""Category probabilities, multinomial log-likelihood, priors and posterior.

All densities are computed in log space.  The multinomial normalizing
coefficient is omitted from the log-likelihood (it carries no parameters,
so it cancels from posterior ratios and from deviance differences); the
normal prior constants are kept so deviance-based comparisons across
models share a scale.
"""

from __future__ import annotations

import math

import numpy as np

from .design import ParameterLayout, PriorConfig
from .errors import ContractError

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def probabilities(eta: np.ndarray) -> np.ndarray:
    """Softmax of per-category log-odds, stable under max-subtraction.

    The entry for the reference category is expected to be 0, but any
    constant shift of ``eta`` leaves the result unchanged.
    """
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise ContractError("log-odds must be finite")
    shifted = eta - eta.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def _log_softmax(eta: np.ndarray) -> np.ndarray:
    shifted = eta - eta.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def eta_matrix(layout: ParameterLayout, theta: np.ndarray) -> np.ndarray:
    """Log-odds for every table row, shape (rows, categories)."""
    coefs, raneffs, _ = layout.unpack(theta)
    design = layout.design
    n_rows = design.n_rows
    n_cat = len(layout.categories)
    eta = np.zeros((n_rows, n_cat))
    nonref = [j for j in range(n_cat) if j != layout.categories.reference]
    for j1, j in enumerate(nonref):
        per_row = coefs[j1, design.week_idx, :]  # (rows, cols) gather
        eta[:, j] = np.einsum("rc,rc->r", design.x, per_row)
        if layout.spec.random_intercept:
            if layout.spec.raneff_by_category:
                eta[:, j] += raneffs[design.subj_idx, j1]
            else:
                eta[:, j] += raneffs[design.subj_idx]
    return eta


def row_log_likelihoods(layout: ParameterLayout, eta: np.ndarray) -> np.ndarray:
    """Per-row count log-likelihood sum_j y_j log pi_j given log-odds."""
    logpi = _log_softmax(eta)
    counts = layout.design.counts
    # 0 * -inf would poison the sum; zero-count cells contribute nothing.
    terms = np.where(counts > 0, counts * logpi, 0.0)
    return terms.sum(axis=1)


def log_likelihood(layout: ParameterLayout, theta: np.ndarray, table=None) -> float:
    """Multinomial log-likelihood of the whole table (normalizer omitted)."""
    if table is not None and table is not layout.table:
        raise ContractError("table does not match the layout's table")
    theta = layout.validate_state(theta)
    if layout.design.n_rows == 0:
        return 0.0
    return float(row_log_likelihoods(layout, eta_matrix(layout, theta)).sum())


def _normal_logpdf_sum(values: np.ndarray, mean: float, variance: float) -> float:
    dev = np.asarray(values, dtype=float) - mean
    n = dev.size
    return float(-n * (_HALF_LOG_2PI + 0.5 * math.log(variance))
                 - (dev * dev).sum() / (2.0 * variance))


def _half_normal_logpdf(value: float, variance: float) -> float:
    if value <= 0.0:
        return -math.inf
    return (math.log(2.0) - _HALF_LOG_2PI - 0.5 * math.log(variance)
            - value * value / (2.0 * variance))


def log_prior(layout: ParameterLayout, theta: np.ndarray,
              priors: PriorConfig) -> float:
    """Sum of independent normal log-densities over all parameters.

    Fixed coefficients are N(coef_mean, coef_scale); random intercepts are
    N(0, raneff_scale), or N(0, sd^2) with sd ~ half-normal(raneff_scale)
    when the hierarchical variance is enabled.  Constants are included.
    """
    coefs, raneffs, sd = layout.unpack(theta)
    total = _normal_logpdf_sum(coefs, priors.coef_mean, priors.coef_scale)
    if layout.raneff_count:
        if layout.has_raneff_sd:
            if sd <= 0.0:
                return -math.inf
            total += _normal_logpdf_sum(raneffs, 0.0, sd * sd)
            total += _half_normal_logpdf(sd, priors.raneff_scale)
        else:
            total += _normal_logpdf_sum(raneffs, 0.0, priors.raneff_scale)
    return total


def log_posterior(layout: ParameterLayout, theta: np.ndarray,
                  table=None, priors: PriorConfig | None = None) -> float:
    priors = priors if priors is not None else layout.spec.priors
    return log_likelihood(layout, theta, table) + log_prior(layout, theta, priors)


def log_likelihood_grad(layout: ParameterLayout, theta: np.ndarray) -> np.ndarray:
    """Analytic gradient of the log-likelihood in flat layout order."""
    theta = layout.validate_state(theta)
    grad = np.zeros(layout.total_dim)
    design = layout.design
    if design.n_rows == 0:
        return grad
    eta = eta_matrix(layout, theta)
    pi = probabilities(eta)
    n_cat = len(layout.categories)
    nonref = [j for j in range(n_cat) if j != layout.categories.reference]
    resid = design.counts[:, nonref] - design.totals[:, None] * pi[:, nonref]
    n_weeks = layout.n_weeks_eff
    coef_grad = np.zeros((layout.n_cats_nonref, n_weeks, layout.n_cols))
    for j1 in range(layout.n_cats_nonref):
        weighted = design.x * resid[:, j1][:, None]
        for c in range(layout.n_cols):
            coef_grad[j1, :, c] = np.bincount(
                design.week_idx, weights=weighted[:, c], minlength=n_weeks)
    grad[:layout.n_fixed] = coef_grad.reshape(-1)
    if layout.raneff_count:
        n_subj = layout.table.n_subjects
        if layout.spec.raneff_by_category:
            per = np.stack([
                np.bincount(design.subj_idx, weights=resid[:, j1], minlength=n_subj)
                for j1 in range(layout.n_cats_nonref)
            ], axis=1)
            grad[layout.n_fixed:layout.n_fixed + layout.raneff_count] = per.reshape(-1)
        else:
            grad[layout.n_fixed:layout.n_fixed + layout.raneff_count] = np.bincount(
                design.subj_idx, weights=resid.sum(axis=1), minlength=n_subj)
    return grad


def log_prior_grad(layout: ParameterLayout, theta: np.ndarray,
                   priors: PriorConfig) -> np.ndarray:
    coefs, raneffs, sd = layout.unpack(theta)
    grad = np.zeros(layout.total_dim)
    grad[:layout.n_fixed] = (
        -(coefs.reshape(-1) - priors.coef_mean) / priors.coef_scale)
    if layout.raneff_count:
        flat_u = np.asarray(raneffs).reshape(-1)
        variance = sd * sd if layout.has_raneff_sd else priors.raneff_scale
        grad[layout.n_fixed:layout.n_fixed + layout.raneff_count] = -flat_u / variance
        if layout.has_raneff_sd:
            # d/dsd of sum_i logN(u_i; 0, sd^2) plus the half-normal term.
            grad[-1] = ((flat_u * flat_u).sum() / sd**3
                        - flat_u.size / sd
                        - sd / priors.raneff_scale)
    return grad


def log_posterior_grad(layout: ParameterLayout, theta: np.ndarray,
                       priors: PriorConfig | None = None) -> np.ndarray:
    priors = priors if priors is not None else layout.spec.priors
    return log_likelihood_grad(layout, theta) + log_prior_grad(layout, theta, priors)
