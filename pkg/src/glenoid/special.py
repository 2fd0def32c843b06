"""Regularized incomplete beta and the F / Student-t distributions built on it.

The incomplete beta uses the continued-fraction expansion evaluated with the
modified Lentz method; quantiles are found by bisection on the CDF.
"""

import math

MACHEP = 2.220446049250313e-16
TINY = 1e-300
MAX_CF_ITER = 500
QUANTILE_TOL = 1e-10
MAX_BISECT_ITER = 2000


def _betacf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < TINY:
        d = TINY
    d = 1.0 / d
    h = d
    for m in range(1, MAX_CF_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < TINY:
            d = TINY
        c = 1.0 + aa / c
        if abs(c) < TINY:
            c = TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 4 * MACHEP:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a, b, x):
    """Regularized incomplete beta function ``I_x(a, b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc requires a > 0 and b > 0")
    if x < 0 or x > 1:
        raise ValueError("betainc requires 0 <= x <= 1")
    if x == 0 or x == 1:
        return float(x)
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_cdf(x, d1, d2):
    """CDF of the F distribution with ``(d1, d2)`` degrees of freedom."""
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return betainc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))


def f_ppf(q, d1, d2, tol=QUANTILE_TOL):
    """Quantile of the F distribution by bisection on :func:`f_cdf`."""
    if not 0 < q < 1:
        raise ValueError("quantile level must lie in (0, 1)")
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    lo, hi = 0.0, 1.0
    while f_cdf(hi, d1, d2) < q:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ArithmeticError("F quantile bracket overflow")
    # relative tolerance so that small quantiles keep their significant digits
    for _ in range(MAX_BISECT_ITER):
        if hi - lo <= tol * hi:
            break
        mid = 0.5 * (lo + hi)
        if f_cdf(mid, d1, d2) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def t_sf_two_sided(t, df):
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t."""
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    if math.isinf(t):
        return 0.0
    return betainc(0.5 * df, 0.5, df / (df + t * t))


def t_ppf_upper(alpha_two_sided, df):
    """Critical value ``t`` with ``P(|T| >= t) = alpha_two_sided``."""
    # T^2 ~ F(1, df)
    return math.sqrt(f_ppf(1.0 - alpha_two_sided, 1.0, df))
