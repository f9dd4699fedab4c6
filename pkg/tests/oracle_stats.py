"""Independent numerical routes to the chi-square survival function (1 dof).

Used to validate the production closed form.  Route one integrates the
density directly with composite Simpson; route two evaluates the regularized
upper incomplete gamma Q(1/2, x/2) with the classic series / continued
fraction split.  Neither shares code with the implementation under test.
"""
from __future__ import annotations

import math


def chi2_sf_by_integration(x0: float, tail: float = 250.0, steps: int = 200_000) -> float:
    """Survival P(X >= x0) by Simpson integration of the chi-square(1) density."""
    if x0 <= 0:
        return 1.0

    def density(x: float) -> float:
        return math.exp(-x / 2.0) / math.sqrt(2.0 * math.pi * x)

    a, b = x0, x0 + tail
    if steps % 2 == 1:
        steps += 1
    h = (b - a) / steps
    total = density(a) + density(b)
    for i in range(1, steps):
        total += density(a + i * h) * (4 if i % 2 == 1 else 2)
    return total * h / 3.0


def _lower_gamma_series(a: float, x: float, eps: float = 1e-16, max_iter: int = 500) -> float:
    """Regularized lower incomplete gamma by power series (x < a + 1)."""
    if x <= 0:
        return 0.0
    term = 1.0 / a
    total = term
    denominator = a
    for _ in range(max_iter):
        denominator += 1.0
        term *= x / denominator
        total += term
        if abs(term) < abs(total) * eps:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_gamma_cf(a: float, x: float, eps: float = 1e-16, max_iter: int = 500) -> float:
    """Regularized upper incomplete gamma by Lentz continued fraction (x >= a + 1)."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def chi2_sf_by_gamma(x0: float) -> float:
    """Survival P(X >= x0) as the regularized upper incomplete gamma Q(1/2, x0/2)."""
    if x0 <= 0:
        return 1.0
    a, x = 0.5, x0 / 2.0
    if x < a + 1.0:
        return 1.0 - _lower_gamma_series(a, x)
    return _upper_gamma_cf(a, x)
