"""Special functions used by the priors, the densities and the bound integrals.

`trigamma` and `trigamma_half_step_difference` shift the argument with the
recurrence Ψ'(x) = Ψ'(x+1) + 1/x² until it reaches the switchover, then sum
the asymptotic series

    Ψ'(x) ~ 1/x + 1/(2x²) + Σ_k B_2k / x^(2k+1).

`log_gamma` and the regularized lower incomplete gamma wrap `scipy.special`
with the domain checks the rest of the package relies on.
"""

from __future__ import annotations

import math

from pydantic import BaseModel, PositiveFloat, PositiveInt
from scipy import special

from tjeffreys.errors import DomainError
from tjeffreys.utils import LOGGER, NUMERICS


_SETTINGS = NUMERICS["specfun"]

# (power of 1/x, coefficient) of the trigamma asymptotic series
_TRIGAMMA_SERIES = (
    (1, 1.0),
    (2, 0.5),
    (3, 1.0 / 6.0),
    (5, -1.0 / 30.0),
    (7, 1.0 / 42.0),
    (9, -1.0 / 30.0),
    (11, 5.0 / 66.0),
    (13, -691.0 / 2730.0),
    (15, 7.0 / 6.0),
)


class Accuracy(BaseModel):
    """Accuracy target of the series based special functions."""

    abs_tol: PositiveFloat = _SETTINGS["abs_tol"]
    max_terms: PositiveInt = _SETTINGS["max_terms"]


DEFAULT_ACCURACY = Accuracy()


def _check_positive(name: str, x: float) -> float:
    x = float(x)
    if not math.isfinite(x) or x <= 0:
        msg = f"{name} requires a finite positive argument, got {x}"
        LOGGER.error(msg)
        raise DomainError(msg)
    return x


def log_gamma(x: float) -> float:
    """ln Γ(x) for finite x > 0."""
    x = _check_positive("log_gamma", x)
    return float(special.gammaln(x))


def _shift_count(x: float, switchover: float, accuracy: Accuracy) -> int:
    shifts = max(0, math.ceil(switchover - x))
    if shifts > accuracy.max_terms:
        msg = f"trigamma needs {shifts} recurrence shifts, more than max_terms={accuracy.max_terms}"
        LOGGER.error(msg)
        raise DomainError(msg)
    return shifts


def _trigamma_series(x: float) -> float:
    # summed smallest term first
    return math.fsum(c / x**k for k, c in reversed(_TRIGAMMA_SERIES))


def trigamma(x: float, accuracy: Accuracy = DEFAULT_ACCURACY) -> float:
    """Ψ'(x), the second derivative of ln Γ, for x > 0."""
    x = _check_positive("trigamma", x)
    switchover = _SETTINGS["trigamma_switchover"]
    shifts = _shift_count(x, switchover, accuracy)
    terms = [1.0 / (x + k) ** 2 for k in range(shifts)]
    terms.append(_trigamma_series(x + shifts))
    return math.fsum(terms)


def trigamma_half_step_difference(x: float, accuracy: Accuracy = DEFAULT_ACCURACY) -> float:
    """Ψ'(x) − Ψ'(x + ½) without cancellation between the two trigammas.

    Every recurrence term and every series term is differenced analytically,
    so the result keeps full relative accuracy when x is large.
    """
    x = _check_positive("trigamma_half_step_difference", x)
    switchover = _SETTINGS["trigamma_switchover"]
    shifts = _shift_count(x, switchover, accuracy)

    terms = []
    for k in range(shifts):
        # 1/u² − 1/(u+½)² = (u + ¼) / (u² (u+½)²)
        u = x + k
        terms.append((u + 0.25) / (u * u * (u + 0.5) ** 2))

    u = x + shifts
    z = u + 0.5
    log_ratio = math.log1p(0.5 / u)
    for k, c in reversed(_TRIGAMMA_SERIES):
        # u^-k − z^-k = expm1(k log(z/u)) / z^k
        terms.append(c * math.expm1(k * log_ratio) / z**k)
    return math.fsum(terms)


def lower_incomplete_gamma_regularized(s: float, x: float) -> float:
    """P(s, x) = γ(s, x) / Γ(s) for s > 0 and x ≥ 0, clamped to [0, 1]."""
    s = _check_positive("lower_incomplete_gamma_regularized (s)", s)
    x = float(x)
    if math.isnan(x) or x < 0:
        msg = f"lower_incomplete_gamma_regularized requires x >= 0, got {x}"
        LOGGER.error(msg)
        raise DomainError(msg)
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return min(1.0, max(0.0, float(special.gammainc(s, x))))


def upper_incomplete_gamma_regularized(s: float, x: float) -> float:
    """Q(s, x) = 1 − P(s, x), evaluated directly for accuracy when P is near 1."""
    s = _check_positive("upper_incomplete_gamma_regularized (s)", s)
    x = float(x)
    if math.isnan(x) or x < 0:
        msg = f"upper_incomplete_gamma_regularized requires x >= 0, got {x}"
        LOGGER.error(msg)
        raise DomainError(msg)
    if x == 0:
        return 1.0
    if math.isinf(x):
        return 0.0
    return min(1.0, max(0.0, float(special.gammaincc(s, x))))
