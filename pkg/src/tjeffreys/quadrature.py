"""Quadrature on finite and half-infinite ranges.

Two independent schemes are offered so results can be cross-checked:
`adaptive` (QUADPACK adaptive Gauss-Kronrod subdivision through
`scipy.integrate.quad`) and `tanh_sinh` (double exponential rule with step
halving). Half-infinite ranges are split at `split` and the tail is mapped
onto (0, 1/split] with u = 1/x.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Literal

from scipy.integrate import IntegrationWarning, quad

from tjeffreys.errors import DivergenceError
from tjeffreys.utils import LOGGER, NUMERICS

Method = Literal["adaptive", "tanh-sinh"]

_PI_OVER_2 = math.pi / 2.0
_T_MAX = 4.0


def adaptive(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    limit: int = NUMERICS["priors"]["quad_limit"],
) -> tuple[float, float]:
    """Adaptive Gauss-Kronrod integration of `f` over [a, b].

    Returns:
        tuple: (value, absolute error estimate)

    Raises:
        DivergenceError: QUADPACK reports a failure or the value is not finite.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            value, abserr = quad(f, a, b, epsabs=0.0, epsrel=tol, limit=limit)
        except IntegrationWarning as err:
            msg = f"Adaptive quadrature on [{a}, {b}] did not stabilize: {err}"
            LOGGER.warning(msg)
            raise DivergenceError(msg) from err
    if not (math.isfinite(value) and math.isfinite(abserr)):
        msg = f"Adaptive quadrature on [{a}, {b}] returned {value} +/- {abserr}"
        LOGGER.warning(msg)
        raise DivergenceError(msg)
    return value, abserr


def _tanh_sinh_node(t: float, a: float, b: float) -> tuple[float, float]:
    """Abscissa and weight at t, abscissa measured from the nearer endpoint."""
    half = 0.5 * (b - a)
    s = _PI_OVER_2 * math.sinh(t)
    # 1 - tanh(|s|) = 2 / (exp(2|s|) + 1)
    d = half * 2.0 / (math.exp(2.0 * abs(s)) + 1.0)
    x = b - d if t > 0 else a + d
    if t == 0:
        x = a + half
    w = half * _PI_OVER_2 * math.cosh(t) / math.cosh(s) ** 2
    return x, w


def tanh_sinh(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float = 1e-10,
    max_levels: int = NUMERICS["priors"]["tanh_sinh_levels"],
) -> float:
    """Tanh-sinh integration of `f` over a finite [a, b].

    Endpoint singularities are allowed, the rule never samples an endpoint.
    Each level halves the step in the auxiliary variable and reuses the
    previous level's sum.

    Raises:
        DivergenceError: the estimate has not stabilized to relative `tol`
            after `max_levels` levels.
    """
    if a == b:
        return 0.0
    if a > b:
        return -tanh_sinh(f, b, a, tol, max_levels)

    def level_sum(h: float, odd_only: bool) -> float:
        total = []
        n = int(_T_MAX / h)
        for j in range(-n, n + 1):
            if odd_only and j % 2 == 0:
                continue
            x, w = _tanh_sinh_node(j * h, a, b)
            if w == 0.0 or x <= a or x >= b:
                continue
            total.append(w * f(x))
        return math.fsum(total)

    h = 1.0
    estimate = h * level_sum(h, odd_only=False)
    for level in range(1, max_levels + 1):
        h /= 2.0
        refined = 0.5 * estimate + h * level_sum(h, odd_only=True)
        if not math.isfinite(refined):
            break
        if abs(refined - estimate) <= tol * abs(refined):
            LOGGER.debug(f"tanh-sinh on [{a}, {b}] converged at level {level}")
            return refined
        estimate = refined

    msg = f"tanh-sinh quadrature on [{a}, {b}] did not stabilize after {max_levels} levels"
    LOGGER.warning(msg)
    raise DivergenceError(msg)


def positive_range(
    f: Callable[[float], float],
    lower: float = 0.0,
    upper: float = math.inf,
    split: float = NUMERICS["priors"]["nu_split"],
    tol: float = 1e-10,
    method: Method = "adaptive",
) -> float:
    """∫_lower^upper f(x) dx for 0 ≤ lower < upper ≤ ∞.

    An infinite upper limit is handled by splitting at `split` (or at
    `lower` when that is larger) and mapping the tail with u = 1/x:
    ∫_s^∞ f(x) dx = ∫_0^(1/s) f(1/u) / u² du.
    """
    if method == "adaptive":
        rule = lambda g, a, b: adaptive(g, a, b, tol)[0]  # noqa: E731
    elif method == "tanh-sinh":
        rule = lambda g, a, b: tanh_sinh(g, a, b, tol)  # noqa: E731
    else:
        raise ValueError(f"Unknown quadrature method {method}")

    if math.isfinite(upper):
        return rule(f, lower, upper)

    def tail(u: float) -> float:
        return f(1.0 / u) / (u * u)

    start = max(lower, split)
    total = rule(tail, 0.0, 1.0 / start)
    if lower < start:
        total += rule(f, lower, start)
    return total
