"""Bundled chi-square quantile via the regularized incomplete gamma function.

Series and continued-fraction evaluation follow the classical Numerical
Recipes scheme; the quantile is found by safeguarded Newton iteration inside
a bisection bracket, to absolute tolerance 1e-10.  Keeping this in-tree means
the command-line tool needs no stats dependency.
"""

import math

__all__ = ["gammainc_lower", "chi2_cdf", "chi2_pdf", "chi2_quantile"]

_EPS = 1e-15
_MAX_ITER = 500
_TINY = 1e-300


def _gser(a: float, x: float) -> float:
    # series representation, converges fast for x < a + 1
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))

def _gcf(a: float, x: float) -> float:
    # modified Lentz continued fraction for the upper tail, x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
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
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0.0:
        raise ValueError("shape parameter a must be positive")
    if x < 0.0:
        raise ValueError("x must be nonnegative")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gser(a, x)
    return 1.0 - _gcf(a, x)


def chi2_cdf(x: float, k: int) -> float:
    """CDF of the chi-square distribution with k degrees of freedom."""
    if k < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if x <= 0.0:
        return 0.0
    return gammainc_lower(0.5 * k, 0.5 * x)


def chi2_pdf(x: float, k: int) -> float:
    """Density of the chi-square distribution with k degrees of freedom."""
    if k < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if x <= 0.0:
        return 0.0
    half = 0.5 * k
    logpdf = (half - 1.0) * math.log(x) - 0.5 * x - half * math.log(2.0) \
        - math.lgamma(half)
    return math.exp(logpdf)


def chi2_quantile(p: float, k: int, tol: float = 1e-10) -> float:
    """p-quantile of the chi-square distribution with k degrees of freedom.

    Safeguarded Newton within a bisection bracket; absolute tolerance
    ``tol`` on the abscissa.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if k < 1:
        raise ValueError("degrees of freedom must be >= 1")
    lo, hi = 0.0, float(k) + 10.0 * math.sqrt(2.0 * k) + 10.0
    while chi2_cdf(hi, k) < p:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("quantile bracketing failed")
    x = float(k) * (1.0 - 2.0 / (9.0 * k)) ** 3 if p < 0.5 else float(k)
    x = min(max(x, lo + tol), hi - tol)
    for _ in range(200):
        f = chi2_cdf(x, k) - p
        if f > 0.0:
            hi = x
        else:
            lo = x
        df = chi2_pdf(x, k)
        step_ok = df > 0.0
        if step_ok:
            x_new = x - f / df
            step_ok = lo < x_new < hi
        if not step_ok:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol:
            return x_new
        x = x_new
    return x
