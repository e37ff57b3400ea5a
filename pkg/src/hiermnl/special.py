"""Regularized incomplete gamma functions and the chi-square upper tail.

Implemented in-package so tail probabilities carry no dependency beyond the
standard library.  The lower function P(a, x) is computed by its power
series for x < a + 1 and the upper function Q(a, x) by a continued fraction
(modified Lentz) otherwise; the two are complementary, so each is evaluated
only in the region where it converges fast.  Double-precision accuracy is
roughly 1e-14 relative over the ranges used here.
"""

from __future__ import annotations

import math

from .errors import ContractError

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 500


def _gamma_p_series(a: float, x: float) -> float:
    # P(a,x) = x^a e^-x / Gamma(a) * sum_n x^n / (a (a+1) ... (a+n))
    term = 1.0 / a
    total = term
    denom = a
    for _ in range(_MAX_ITER):
        denom += 1.0
        term *= x / denom
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    log_prefix = a * math.log(x) - x - math.lgamma(a)
    return total * math.exp(log_prefix)


def _gamma_q_contfrac(a: float, x: float) -> float:
    # Q(a,x) = x^a e^-x / Gamma(a) * 1/(x+1-a- 1(1-a)/(x+3-a- ...)) via Lentz.
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b if b != 0.0 else 1.0 / _TINY
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    log_prefix = a * math.log(x) - x - math.lgamma(a)
    return h * math.exp(log_prefix)


def regularized_gamma_p(a: float, x: float) -> float:
    """Lower regularized incomplete gamma P(a, x) for a > 0, x >= 0."""
    if a <= 0.0 or not math.isfinite(a):
        raise ContractError(f"shape parameter must be positive, got {a}")
    if not math.isfinite(x) or x < 0.0:
        raise ContractError(f"argument must be finite and non-negative, got {x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return min(_gamma_p_series(a, x), 1.0)
    return max(1.0 - _gamma_q_contfrac(a, x), 0.0)


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0.0 or not math.isfinite(a):
        raise ContractError(f"shape parameter must be positive, got {a}")
    if not math.isfinite(x) or x < 0.0:
        raise ContractError(f"argument must be finite and non-negative, got {x}")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return max(1.0 - _gamma_p_series(a, x), 0.0)
    return min(_gamma_q_contfrac(a, x), 1.0)


def chi2_sf(statistic: float, df: int) -> float:
    """Upper tail P(X > statistic) for a chi-square variable with df degrees."""
    if df < 1:
        raise ContractError(f"degrees of freedom must be >= 1, got {df}")
    if statistic < 0.0:
        raise ContractError(f"statistic must be non-negative, got {statistic}")
    return regularized_gamma_q(0.5 * df, 0.5 * statistic)
