"""Posterior propriety checks for priors of the form (σ²)^(-a) π(ν).

After integrating β, σ² and all but one latent precision out of the joint
density, the marginal likelihood is bounded below by a multiple of

    ∫_0 π(ν) ∫_0 λ^(c−1) e^(−(n−p)νλ/2) dλ dν,    c = (ν(n−p) + 2 − 2a)/2,

where λ is the (n−p)-th smallest precision. The inner integral is infinite
for c ≤ 0, so the posterior can only exist if π(ν) = 0 on
(0, (2a−2)/(n−p)]. The condition is necessary, not sufficient.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Iterable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, NonNegativeFloat, PositiveFloat
from scipy.special import comb, gammaln

from tjeffreys import quadrature
from tjeffreys.errors import DomainError, InfeasibleSubsetError
from tjeffreys.objective_priors import PriorKind, PriorSpec
from tjeffreys.regression_core import Dataset, LambdaLike, _lambda_values
from tjeffreys.specfun import (
    lower_incomplete_gamma_regularized,
    upper_incomplete_gamma_regularized,
)
from tjeffreys.utils import LOGGER, NUMERICS

_SETTINGS = NUMERICS["auditor"]
SCHEMA_VERSION = NUMERICS["cli"]["schema_version"]

# increments below this fraction of the value are quadrature noise
_RESOLVABLE = 1e-8
_STABLE = 1e-6


def _check_dims(n: int, p: int):
    if p < 1 or n <= p:
        msg = f"Need n > p >= 1, got n={n}, p={p}"
        LOGGER.error(msg)
        raise DomainError(msg)


def critical_nu(a: float, n: int, p: int) -> float:
    """(2a − 2)/(n − p), the upper end of the ν range where π(ν) must vanish."""
    _check_dims(n, p)
    if a < 1:
        msg = f"critical_nu requires a >= 1, got {a}"
        LOGGER.error(msg)
        raise DomainError(msg)
    return (2.0 * a - 2.0) / (n - p)


def c_exponent(nu: float, n: int, p: int, a: float) -> float:
    """(ν(n−p) + 2 − 2a)/2, written as (n−p)(ν − ν*)/2 so it is exactly 0 at ν*."""
    _check_dims(n, p)
    if not nu > 0:
        raise DomainError(f"nu must be positive, got {nu}")
    return (n - p) * (nu - (2.0 * a - 2.0) / (n - p)) / 2.0


def sigma_integrability_check(n: int, p: int, a: float) -> bool:
    """True when the σ² integral of the β-integrated density is finite."""
    return n + 2.0 * a - p - 2.0 > 0


def sandwich_bounds(v: float, r: float, lam_next: float) -> tuple[float, float, float]:
    """(lower, exact, upper) for ∫_0^λ' x^(v−1) e^(−rx) dx.

    lower = λ'^v e^(−rλ')/v and upper = λ'^v/v. All three coincide at r = 0.
    """
    if not v > 0:
        msg = f"The integral is infinite for v <= 0, got v={v}"
        LOGGER.error(msg)
        raise DomainError(msg)
    if not r >= 0:
        raise DomainError(f"r must be nonnegative, got {r}")
    if not lam_next > 0:
        raise DomainError(f"lambda must be positive, got {lam_next}")

    upper = lam_next**v / v
    if r == 0:
        return upper, upper, upper
    lower = upper * math.exp(-r * lam_next)
    fraction = lower_incomplete_gamma_regularized(v, r * lam_next)
    exact = math.exp(gammaln(v) - v * math.log(r) + math.log(fraction)) if fraction > 0 else 0.0
    return lower, exact, upper


class SubsetSelection(BaseModel):
    """Index subset (0-based) maximizing the product of precisions."""

    indices: tuple[int, ...]
    product: PositiveFloat


def max_nonsingular_subset_product(
    lam: LambdaLike, dataset: Dataset, size: int
) -> SubsetSelection:
    """Largest Π λᵢ over subsets whose rows form a nonsingular matrix.

    For size p the rows are xᵢᵀ. For size p+1 they are (xᵢᵀ, yᵢ). A square
    matrix counts as singular when |det| ≤ det_rtol times the product of its
    row norms.

    Raises:
        DomainError: size is not p or p+1, or the search exceeds the guard.
        InfeasibleSubsetError: every subset is singular.
    """
    n, p = dataset.n, dataset.p
    if size == p:
        rows = dataset.X
    elif size == p + 1:
        rows = np.column_stack([dataset.X, dataset.y])
    else:
        msg = f"size must be p={p} or p+1={p + 1}, got {size}"
        LOGGER.error(msg)
        raise DomainError(msg)
    n_subsets = comb(n, size, exact=True)
    if n_subsets > _SETTINGS["subset_guard"]:
        msg = f"C({n}, {size}) = {n_subsets} subsets exceeds guard {_SETTINGS['subset_guard']}"
        LOGGER.error(msg)
        raise DomainError(msg)

    weights = _lambda_values(lam, n)
    subsets = np.array(list(itertools.combinations(range(n), size)), dtype=int)
    log_products = np.log(weights)[subsets].sum(axis=1)
    row_norms = np.linalg.norm(rows, axis=1)

    for idx in np.argsort(-log_products, kind="stable"):
        subset = subsets[idx]
        det = np.linalg.det(rows[subset])
        scale = float(np.prod(row_norms[subset]))
        if abs(det) > _SETTINGS["det_rtol"] * scale:
            LOGGER.debug(f"Subset {subset.tolist()} selected, det={det}")
            return SubsetSelection(
                indices=tuple(int(i) for i in subset),
                product=float(np.prod(weights[subset])),
            )

    msg = f"No nonsingular subset of size {size}"
    LOGGER.error(msg)
    raise InfeasibleSubsetError(msg)


def lower_bound_log_kernel(lam: float, nu: float, n: int, p: int, a: float) -> float:
    """log of the one-dimensional kernel bounding the marginal likelihood from below.

    (n−p)[(ν/2)log(ν/2) − log Γ(ν/2)] − (n−p−1)log((ν+1)/2) − log Γ(n−p)
    + (c−1)log λ − (n−p)νλ/2
    """
    c = c_exponent(nu, n, p, a)
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    m = n - p
    half = nu / 2.0
    return (
        m * (half * math.log(half) - gammaln(half))
        - (m - 1) * math.log((nu + 1.0) / 2.0)
        - gammaln(m)
        + (c - 1.0) * math.log(lam)
        - m * nu * lam / 2.0
    )


def truncated_kernel_integral(
    c: float,
    r: float,
    eps: float,
    T: float = 1.0,
    method: Literal["auto", "quadrature"] = "auto",
) -> float:
    """∫_ε^T λ^(c−1) e^(−rλ) dλ.

    With method="auto" the closed form is used for r = 0, incomplete gamma
    differences for r > 0 and c > 0, and quadrature in log λ otherwise.
    method="quadrature" always integrates numerically.
    """
    if not (0 < eps < T):
        msg = f"Need 0 < eps < T, got eps={eps}, T={T}"
        LOGGER.error(msg)
        raise DomainError(msg)
    if not r >= 0:
        raise DomainError(f"r must be nonnegative, got {r}")
    if r == 0 and math.isinf(T) and c >= 0:
        return math.inf

    if method == "auto" and r == 0:
        log_span = math.log(T / eps)
        if c == 0:
            return log_span
        # (T^c − ε^c)/c without cancellation for small |c|, factored on the larger end
        if c > 0:
            return math.exp(c * math.log(T)) * -math.expm1(-c * log_span) / c
        return math.exp(c * math.log(eps)) * math.expm1(c * log_span) / c

    if method == "auto" and c > 0:
        lo, hi = r * eps, r * T
        if lower_incomplete_gamma_regularized(c, lo) < 0.5:
            diff = lower_incomplete_gamma_regularized(c, hi) - lower_incomplete_gamma_regularized(c, lo)
        else:
            diff = upper_incomplete_gamma_regularized(c, lo) - upper_incomplete_gamma_regularized(c, hi)
        return math.exp(gammaln(c) - c * math.log(r)) * diff

    # λ = e^t
    def integrand(t: float) -> float:
        if r > 0 and t > 700.0:
            return 0.0
        return math.exp(c * t - r * math.exp(t))

    value, _ = quadrature.adaptive(integrand, math.log(eps), math.log(T), tol=1e-10)
    return value


class Classification(str, Enum):
    Divergent = "Divergent"
    Convergent = "Convergent"
    Boundary = "Boundary"


class GrowthPoint(BaseModel):
    eps: PositiveFloat
    value: float


class EvidenceRow(BaseModel):
    """Behaviour of the truncated kernel integral at one ν.

    Attributes:
        nu (float): Degrees of freedom.
        c (float): Kernel exponent at ν.
        r (float): Exponential rate of the kernel.
        classification (Classification): Divergent for c < 0, Convergent for
            c > 0, Boundary within boundary_rtol of the critical ν.
        note (str): Human readable remark.
        verified (bool): The ε ladder follows the analytic growth law.
        limit (float, optional): Extrapolated ε → 0 value for Convergent rows.
        growth (list): Integral value at each ε.
    """

    nu: PositiveFloat
    c: float
    r: NonNegativeFloat
    classification: Classification
    note: str = ""
    verified: bool
    limit: Optional[float] = None
    growth: list[GrowthPoint]


def _eps_ladder() -> list[float]:
    first, last = _SETTINGS["eps_exponents"]
    return [10.0 ** (-k) for k in range(first, last + 1)]


def _matches(observed: float, expected: float, tol: float) -> bool:
    return abs(observed - expected) <= tol * abs(expected)


def _evidence_row(nu: float, n: int, p: int, a: float, r: Optional[float], T: float) -> EvidenceRow:
    c = c_exponent(nu, n, p, a)
    rate = (n - p) * nu / 2.0 if r is None else r
    tol = _SETTINGS["growth_tol"]
    ladder = _eps_ladder()

    values = [truncated_kernel_integral(c, rate, eps, T, method="quadrature") for eps in ladder]
    growth = [GrowthPoint(eps=eps, value=v) for eps, v in zip(ladder, values)]

    verified = all(b >= a_ - _RESOLVABLE * abs(b) for a_, b in zip(values, values[1:]))
    if rate == 0:
        # quadrature against the closed form
        laws = [truncated_kernel_integral(c, 0.0, eps, T) for eps in ladder]
        verified &= all(_matches(v, law, tol) for v, law in zip(values, laws))

    # once e^(-rλ) is flat on a decade, successive increments scale by 10^-c
    increments = [
        values[k + 1] - values[k]
        for k in range(len(values) - 1)
        if rate * ladder[k] <= tol
        and values[k + 1] - values[k] > _RESOLVABLE * values[k + 1]
    ]
    ratios = [b / a_ for a_, b in zip(increments, increments[1:])]
    follows_law = len(ratios) > 0 and all(_matches(q, 10.0 ** (-c), tol) for q in ratios)
    if c > 0:
        stabilized = values[-1] - values[-2] <= _STABLE * values[-1]
        verified &= follows_law or stabilized
    else:
        verified &= follows_law

    crit = (2.0 * a - 2.0) / (n - p)
    limit = None
    note = ""
    if crit > 0 and abs(nu - crit) / crit < _SETTINGS["boundary_rtol"]:
        classification = Classification.Boundary
        note = "c=0 (log divergence)"
    elif c <= 0:
        classification = Classification.Divergent
        note = "c=0 (log divergence)" if c == 0 else f"power-law divergence, exponent {c:.4g}"
    else:
        classification = Classification.Convergent
        q = 10.0 ** (-c)
        limit = values[-1] + (values[-1] - values[-2]) * q / (1.0 - q)
        note = "integral finite as eps -> 0"

    if not verified:
        LOGGER.warning(f"nu={nu}: eps ladder does not follow the expected growth law")
    LOGGER.debug(f"nu={nu}, c={c}, {classification.value}, last value {values[-1]}")
    return EvidenceRow(
        nu=nu,
        c=c,
        r=rate,
        classification=classification,
        note=note,
        verified=verified,
        limit=limit,
        growth=growth,
    )


def divergence_diagnostic(
    nu_grid: Iterable[float],
    n: int,
    p: int,
    a: float,
    r: Optional[float] = 0.0,
    T: float = 1.0,
    workers: int = 1,
) -> list[EvidenceRow]:
    """Evidence table of the truncated kernel integral along the ε ladder.

    Args:
        nu_grid (Iterable[float]): Degrees of freedom to probe.
        n, p (int): Sample size and number of covariates.
        a (float): σ² exponent of the prior.
        r (float, optional): Exponential rate of the kernel. None uses the
            bound's own rate (n−p)ν/2.
        T (float): Upper truncation point.
        workers (int): Threads evaluating the grid. Row order follows `nu_grid`.
    """
    _check_dims(n, p)
    nu_grid = [float(nu) for nu in nu_grid]
    if any(not nu > 0 for nu in nu_grid):
        raise DomainError("nu grid must be positive")

    def row(nu: float) -> EvidenceRow:
        return _evidence_row(nu, n, p, a, r, T)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(row, nu_grid))
    return [row(nu) for nu in nu_grid]


class Verdict(str, Enum):
    Proper = "Proper"
    Improper = "Improper"
    Inconclusive = "Inconclusive"


class AuditReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    verdict: Verdict
    critical_nu: NonNegativeFloat
    a: float
    n: int
    p: int
    prior: str
    note: str
    evidence: list[EvidenceRow]


def has_mass_below_critical(
    spec: PriorSpec, n: int, p: int, nu_floor: float = 0.0, probes: Iterable[float] = ()
) -> bool:
    """π(ν) > 0 somewhere on (nu_floor, critical_nu], checked on a log grid plus `probes`."""
    if spec.a <= 1:
        return False
    crit = critical_nu(spec.a, n, p)
    if crit <= nu_floor:
        return False
    low = max(crit * 1e-6, nu_floor)
    grid = np.geomspace(low, crit, _SETTINGS["probe_points"])
    points = [float(nu) for nu in grid] + [float(nu) for nu in probes if 0 < nu <= crit]
    return any(math.isfinite(spec.log_nu(nu)) for nu in points if nu > nu_floor)


def audit(
    dataset: Union[Dataset, tuple[int, int]],
    spec: PriorSpec,
    nu_probe_grid: Optional[Iterable[float]] = None,
    workers: int = 1,
) -> AuditReport:
    """Propriety verdict for `spec` on a dataset, or on its (n, p) alone.

    Only n, p, a and the support of π(ν) enter the verdict.
    """
    if isinstance(dataset, Dataset):
        n, p = dataset.n, dataset.p
    else:
        n, p = dataset
    _check_dims(n, p)
    if spec.p != p:
        raise DomainError(f"Prior built for p={spec.p}, data has p={p}")

    crit = critical_nu(spec.a, n, p)
    probes = [float(nu) for nu in (nu_probe_grid or [])]
    if not probes:
        probes = [0.5 * crit, crit, 1.5 * crit] if crit > 0 else [0.05, 0.5, 5.0]

    if spec.a > 1 and has_mass_below_critical(spec, n, p, probes=probes):
        verdict = Verdict.Improper
        note = (
            f"pi(nu) is positive on (0, {crit:.6g}] where the lower bound of the "
            "marginal likelihood is infinite; the posterior does not exist"
        )
    elif spec.kind is PriorKind.IndependenceJeffreys:
        verdict = Verdict.Proper
        note = "a = 1 and n > p: the posterior is proper"
    else:
        verdict = Verdict.Inconclusive
        note = (
            f"pi(nu) vanishes on (0, {crit:.6g}]; this condition is necessary, "
            "not sufficient, for a proper posterior"
        )

    evidence = divergence_diagnostic(probes, n, p, spec.a, r=None, workers=workers)
    LOGGER.info(f"Audit {spec.name} n={n} p={p}: {verdict.value}, critical nu {crit:.6g}")
    return AuditReport(
        verdict=verdict,
        critical_nu=crit,
        a=spec.a,
        n=n,
        p=p,
        prior=spec.name,
        note=note,
        evidence=evidence,
    )
