"""Regularized incomplete gamma functions and chi-squared quantiles."""

from __future__ import annotations

import math
from statistics import NormalDist

from .errors import ConfigError

_EPS = 1e-16
_TINY = 1e-300
_MAXITER = 10_000


def _gamma_series(a: float, x: float) -> float:
    # P(a, x) by its power series; converges quickly for x < a + 1
    term = total = 1.0 / a
    ap = a
    for _ in range(_MAXITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_contfrac(a: float, x: float) -> float:
    # Q(a, x) by modified Lentz evaluation of the continued fraction; x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAXITER):
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
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma ``P(a, x)``."""
    if a <= 0 or x < 0:
        raise ConfigError(f"gammainc_lower needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_contfrac(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma ``Q(a, x) = 1 - P(a, x)``."""
    if a <= 0 or x < 0:
        raise ConfigError(f"gammainc_upper needs a > 0 and x >= 0, got a={a}, x={x}")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_contfrac(a, x)


def chi2_cdf(c: float, dof: int) -> float:
    return gammainc_lower(dof / 2.0, c / 2.0)


def chi2_sf(c: float, dof: int) -> float:
    return gammainc_upper(dof / 2.0, c / 2.0)


def _log_density(a: float, x: float) -> float:
    return -x + (a - 1.0) * math.log(x) - math.lgamma(a)


def _solve(dof: int, prob: float, upper: bool) -> float:
    a = dof / 2.0
    # residual is increasing in x whichever tail is matched
    if upper:
        def resid(x):
            return prob - gammainc_upper(a, x)
    else:
        def resid(x):
            return gammainc_lower(a, x) - prob

    # Wilson-Hilferty starting point
    z = NormalDist().inv_cdf(1.0 - prob if upper else prob)
    k = float(dof)
    x = 0.5 * k * max(1.0 - 2.0 / (9.0 * k) + z * math.sqrt(2.0 / (9.0 * k)), 1e-3) ** 3

    lo, hi = 0.0, max(x, 1.0)
    while resid(hi) < 0:
        lo, hi = hi, 2.0 * hi
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(500):
        f = resid(x)
        if f == 0:
            return x
        if f < 0:
            lo = x
        else:
            hi = x
        step = f / math.exp(_log_density(a, x))
        nx = x - step
        if not lo < nx < hi:
            nx = 0.5 * (lo + hi)
        if abs(nx - x) <= 1e-15 * abs(nx) or hi - lo <= 1e-15 * hi:
            return nx
        x = nx
    return x


def _check(dof, prob, name):
    if int(dof) != dof or dof < 1:
        raise ConfigError(f"degrees of freedom must be an integer >= 1, got {dof}")
    if not 0.0 < prob < 1.0:
        raise ConfigError(f"{name} must lie in (0, 1), got {prob}")


def chi2_quantile(dof: int, q: float) -> float:
    """Value ``c`` with ``P(chi2_dof <= c) = q``.

    For ``q > 1/2`` the equivalent upper-tail equation is solved so that
    quantiles far in the tail keep full relative accuracy.
    """
    _check(dof, q, "q")
    if q > 0.5:
        return 2.0 * _solve(int(dof), 1.0 - q, upper=True)
    return 2.0 * _solve(int(dof), q, upper=False)


def chi2_isf(dof: int, p: float) -> float:
    """Upper-tail quantile: ``c`` with ``P(chi2_dof > c) = p``."""
    _check(dof, p, "p")
    if p < 0.5:
        return 2.0 * _solve(int(dof), p, upper=True)
    return 2.0 * _solve(int(dof), 1.0 - p, upper=False)
