"""Fisher information of the Student-t regression model and its objective priors.

Both priors share the form

    π(β, σ², ν) ∝ (σ²)^(-a) π(ν)

with a = 1 + p/2 for the Jeffreys-rule prior and a = 1 for the independence
Jeffreys prior. The ν factor involves the bracket

    B(ν) = Ψ'(ν/2) − Ψ'((ν+1)/2) − 2(ν+3) / (ν(ν+1)²),

which is positive but decays like 6/ν⁴, so it is evaluated with a termwise
trigamma difference and, for very large ν, with its asymptotic expansion.
"""

from __future__ import annotations

import math
import threading
from enum import Enum
from pathlib import Path
from typing import Callable, Literal, Optional, Union

import numpy as np
import pandas as pd
import yaml
from attrs import define, field
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveInt,
    model_validator,
)
from typing_extensions import Self

from tjeffreys import quadrature
from tjeffreys.errors import DivergenceError, DomainError, RankDeficiencyError
from tjeffreys.specfun import trigamma_half_step_difference
from tjeffreys.utils import LOGGER, NUMERICS, validate_min_max

_SETTINGS = NUMERICS["priors"]

# B(ν) ~ Σ c_k / ν^k for large ν
_BRACKET_SERIES = ((4, 6.0), (5, -12.0), (6, 14.0), (7, -12.0), (8, 22.0))


class PriorKind(str, Enum):
    JeffreysRule = "jeffreys-rule"
    IndependenceJeffreys = "independence"
    CustomNu = "custom"


class PriorSpec(BaseModel):
    """Prior (σ²)^(-a) π(ν) on (β, σ², ν).

    Attributes:
        kind (PriorKind): Jeffreys-rule, independence Jeffreys or a custom π(ν).
        p (int): Number of covariates.
        a (float): σ² exponent. Derived for the built-in kinds, required for
            CustomNu.
        name (str): Label used in reports.
        nu_log_density (Callable): log π(ν) up to a constant, CustomNu only.
        nu_support (tuple): Interval outside of which π(ν) is zero.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: PriorKind
    p: PositiveInt
    a: Optional[float] = None
    name: str = ""
    nu_log_density: Optional[Callable[[float], float]] = Field(default=None, exclude=True)
    nu_support: tuple[NonNegativeFloat, float] = (0.0, math.inf)

    @model_validator(mode="before")
    @classmethod
    def derive_exponent(cls, data: dict) -> dict:
        if not isinstance(data, dict):
            return data
        kind = PriorKind(data.get("kind"))
        p = data.get("p")
        if kind is PriorKind.JeffreysRule and data.get("a") is None:
            data["a"] = 1.0 + p / 2.0
        elif kind is PriorKind.IndependenceJeffreys and data.get("a") is None:
            data["a"] = 1.0
        if not data.get("name"):
            data["name"] = kind.value
        return data

    @model_validator(mode="after")
    def validate_kind(self) -> Self:
        if self.kind is PriorKind.JeffreysRule and self.a != 1.0 + self.p / 2.0:
            raise ValueError(f"Jeffreys-rule prior requires a = 1 + p/2 = {1.0 + self.p / 2.0}")
        if self.kind is PriorKind.IndependenceJeffreys and self.a != 1.0:
            raise ValueError("Independence Jeffreys prior requires a = 1")
        if self.kind is PriorKind.CustomNu:
            if self.a is None or self.nu_log_density is None:
                raise ValueError("Custom nu prior needs an explicit a and a nu_log_density")
        lo, hi = self.nu_support
        if not lo < hi:
            raise ValueError(f"Empty nu support {self.nu_support}")
        return self

    @classmethod
    def jeffreys_rule(cls, p: int) -> Self:
        return cls(kind=PriorKind.JeffreysRule, p=p)

    @classmethod
    def independence(cls, p: int) -> Self:
        return cls(kind=PriorKind.IndependenceJeffreys, p=p)

    @classmethod
    def custom(
        cls,
        p: int,
        a: float,
        nu_log_density: Callable[[float], float],
        name: str = "custom",
        nu_support: tuple[float, float] = (0.0, math.inf),
    ) -> Self:
        return cls(
            kind=PriorKind.CustomNu,
            p=p,
            a=a,
            name=name,
            nu_log_density=nu_log_density,
            nu_support=nu_support,
        )

    @classmethod
    def factory(cls, prior: Union[str, PriorKind], p: int) -> Self:
        """Built-in prior from its CLI name."""
        kind = PriorKind(prior)
        if kind is PriorKind.CustomNu:
            raise ValueError("Custom priors are built with load_custom_prior")
        return cls(kind=kind, p=p)

    def log_nu(self, nu: float) -> float:
        """log π(ν) up to a constant, −∞ outside the support."""
        lo, hi = self.nu_support
        if not lo < nu <= hi:
            return -math.inf
        if self.kind is PriorKind.CustomNu:
            return float(self.nu_log_density(nu))
        return nu_prior_log_unnormalized(nu, self.kind, self.p)


def _check_positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        msg = f"{name} must be finite and positive, got {value}"
        LOGGER.error(msg)
        raise DomainError(msg)
    return value


def jeffreys_bracket(nu: float) -> float:
    """B(ν) = Ψ'(ν/2) − Ψ'((ν+1)/2) − 2(ν+3)/(ν(ν+1)²)."""
    nu = _check_positive("nu", nu)
    if nu > _SETTINGS["bracket_series_nu"]:
        w = 1.0 / nu
        return math.fsum(c * w**k for k, c in reversed(_BRACKET_SERIES))
    return trigamma_half_step_difference(nu / 2.0) - 2.0 * (nu + 3.0) / (
        nu * (nu + 1.0) ** 2
    )


def fisher_nu_entry_bracket(nu: float) -> float:
    """Ψ'(ν/2) − Ψ'((ν+1)/2) − 2(ν+5)/(ν(ν+1)(ν+3)), the (ν, ν) bracket."""
    nu = _check_positive("nu", nu)
    if nu > _SETTINGS["bracket_series_nu"]:
        return jeffreys_bracket(nu) + 8.0 / (nu * (nu + 1.0) ** 2 * (nu + 3.0))
    return trigamma_half_step_difference(nu / 2.0) - 2.0 * (nu + 5.0) / (
        nu * (nu + 1.0) * (nu + 3.0)
    )


def scale_nu_block(sigma2: float, nu: float, n: int) -> np.ndarray:
    """The 2×2 (σ², ν) block of the Fisher information."""
    sigma2 = _check_positive("sigma2", sigma2)
    nu = _check_positive("nu", nu)
    s_ss = n / (2.0 * sigma2**2) * nu / (nu + 3.0)
    s_sn = -n / sigma2 / ((nu + 1.0) * (nu + 3.0))
    s_nn = n / 4.0 * fisher_nu_entry_bracket(nu)
    return np.array([[s_ss, s_sn], [s_sn, s_nn]])


@define(frozen=True)
class FisherMatrix:
    """(p+2)×(p+2) Fisher information, ordered (β, σ², ν)."""

    entries: np.ndarray = field()
    p: int = field()

    @property
    def beta_block(self) -> np.ndarray:
        return self.entries[: self.p, : self.p]

    @property
    def scale_nu_block(self) -> np.ndarray:
        return self.entries[self.p :, self.p :]

    @property
    def cross_blocks(self) -> np.ndarray:
        return self.entries[: self.p, self.p :]


def fisher_information(sigma2: float, nu: float, X: np.ndarray) -> FisherMatrix:
    """Fisher information I(β, σ², ν) of the Student-t regression model."""
    sigma2 = _check_positive("sigma2", sigma2)
    nu = _check_positive("nu", nu)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    if n < 1:
        raise DomainError("fisher_information needs at least one observation")
    xtx = X.T @ X
    if np.linalg.matrix_rank(X) < p:
        msg = f"X'X is singular, rank {np.linalg.matrix_rank(X)} < p = {p}"
        LOGGER.error(msg)
        raise RankDeficiencyError(msg)

    entries = np.zeros((p + 2, p + 2))
    entries[:p, :p] = (nu + 1.0) / (nu + 3.0) * xtx / sigma2
    entries[p:, p:] = scale_nu_block(sigma2, nu, n)
    return FisherMatrix(entries=entries, p=p)


def nu_prior_log_unnormalized(
    nu: float, kind: Union[PriorKind, str], p: int = 1
) -> float:
    """log of the ν factor of the Jeffreys-rule or independence Jeffreys prior.

    Returns −∞ when the bracket evaluates to a nonpositive number, which only
    happens through floating point cancellation.
    """
    nu = _check_positive("nu", nu)
    kind = PriorKind(kind)
    if kind is PriorKind.CustomNu:
        raise ValueError("Custom nu priors are evaluated through PriorSpec.log_nu")

    bracket = jeffreys_bracket(nu)
    if bracket <= 0:
        if bracket < -_SETTINGS["bracket_clamp"]:
            LOGGER.warning(f"Jeffreys bracket {bracket} at nu={nu} below clamp")
        return -math.inf

    log_value = 0.5 * math.log(nu / (nu + 3.0)) + 0.5 * math.log(bracket)
    if kind is PriorKind.JeffreysRule:
        log_value += 0.5 * p * math.log((nu + 1.0) / (nu + 3.0))
    return log_value


def full_prior_log(
    beta: np.ndarray, sigma2: float, nu: float, spec: PriorSpec
) -> float:
    """log π(β, σ², ν) = −a log σ² + log π(ν), constant in β."""
    sigma2 = _check_positive("sigma2", sigma2)
    nu = _check_positive("nu", nu)
    return -spec.a * math.log(sigma2) + spec.log_nu(nu)


@define
class NormalizerCache:
    """Memo of ν-prior normalizing constants.

    Writers hold the lock while computing, so each constant is computed once.
    Completed entries are read without locking.
    """

    _values: dict = field(factory=dict)
    _lock: threading.Lock = field(factory=threading.Lock)

    def get(self, key: tuple, compute: Callable[[], float]) -> float:
        if key in self._values:
            return self._values[key]
        with self._lock:
            if key not in self._values:
                self._values[key] = compute()
            return self._values[key]

    def clear(self):
        with self._lock:
            self._values.clear()


NORMALIZERS = NormalizerCache()


def nu_prior_normalizer(
    kind: Union[PriorKind, str, PriorSpec],
    p: int = 1,
    quad_tol: float = 1e-9,
    method: quadrature.Method = "adaptive",
) -> float:
    """∫_0^∞ π(ν) dν of the unnormalized ν factor.

    Raises:
        DivergenceError: the integral does not stabilize, π(ν) is not proper.
    """
    validate_min_max("quad_tol", quad_tol, _SETTINGS)
    if isinstance(kind, PriorSpec):
        spec = kind
    else:
        spec = PriorSpec.factory(kind, p)

    # the key holds the callable itself so its identity cannot be reused
    key = (
        spec.kind,
        spec.name,
        spec.p,
        spec.a,
        tuple(spec.nu_support),
        spec.nu_log_density,
        quad_tol,
        method,
    )

    def density(nu: float) -> float:
        return math.exp(spec.log_nu(nu))

    def compute() -> float:
        lo, hi = spec.nu_support
        try:
            value = quadrature.positive_range(
                density, lo, hi, _SETTINGS["nu_split"], quad_tol, method
            )
        except DivergenceError as err:
            msg = f"pi(nu) of {spec.name} is not integrable: {err}"
            LOGGER.error(msg)
            raise DivergenceError(msg) from err
        if not (math.isfinite(value) and value > 0):
            raise DivergenceError(f"pi(nu) of {spec.name} normalizer is {value}")
        LOGGER.debug(f"Normalizer of {spec.name} (p={spec.p}, {method}) = {value}")
        return value

    return NORMALIZERS.get(key, compute)


def jeffreys_determinant_identity_residual(nu: float, sigma2: float, n: int) -> float:
    """|√det(I_(σ²,ν)) / [(1/σ²) √(ν/(ν+3)) √B(ν)] − n/(2√2)|.

    The determinant is taken from the Fisher entries as displayed, the
    denominator from the prior's closed form, so a small residual certifies
    that the prior ν factor is √det of the (σ², ν) block.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    block = scale_nu_block(sigma2, nu, n)
    det = block[0, 0] * block[1, 1] - block[0, 1] * block[1, 0]
    bracket = jeffreys_bracket(nu)
    if det <= 0 or bracket <= 0:
        return math.inf
    prior_factor = math.sqrt(nu / (nu + 3.0)) * math.sqrt(bracket) / sigma2
    ratio = math.sqrt(det) / prior_factor
    return abs(ratio - n / (2.0 * math.sqrt(2.0)))


def prior_curve(
    spec: PriorSpec,
    nu_grid: np.ndarray,
    normalize: bool = True,
    quad_tol: float = 1e-9,
) -> pd.DataFrame:
    """ν-prior evaluated on a grid, columns (nu, log_unnormalized_density, density, kind)."""
    nu_grid = np.asarray(nu_grid, dtype=float)
    log_values = np.array([spec.log_nu(nu) for nu in nu_grid])
    log_norm = math.log(nu_prior_normalizer(spec, spec.p, quad_tol)) if normalize else 0.0
    return pd.DataFrame(
        {
            "nu": nu_grid,
            "log_unnormalized_density": log_values,
            "density": np.exp(log_values - log_norm),
            "kind": spec.kind.value,
        }
    )


class CustomPriorFile(BaseModel):
    """YAML description of a custom ν-prior."""

    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    a: float = Field(ge=1.0)
    base: Literal["independence", "jeffreys-rule", "constant"]
    nu_min: NonNegativeFloat = 0.0
    nu_max: float = math.inf

    @model_validator(mode="after")
    def validate_support(self) -> Self:
        if not self.nu_min < self.nu_max:
            raise ValueError(f"nu_min ({self.nu_min}) must be below nu_max ({self.nu_max})")
        return self


def load_custom_prior(path: Union[str, Path], p: int) -> PriorSpec:
    """Build a CustomNu prior from a YAML file.

    The file names a base ν density (one of the built-in ν factors or a
    constant), the σ² exponent `a` and an optional support (nu_min, nu_max].
    """
    with open(path, "r") as f:
        config = CustomPriorFile(**yaml.safe_load(f))

    if config.base == "constant":

        def base(nu: float) -> float:
            return 0.0
    else:
        base_kind = PriorKind(config.base)

        def base(nu: float) -> float:
            return nu_prior_log_unnormalized(nu, base_kind, p)

    LOGGER.info(
        f"Custom prior {config.name}: a={config.a}, base={config.base}, "
        f"support=({config.nu_min}, {config.nu_max}]"
    )
    return PriorSpec.custom(
        p=p,
        a=config.a,
        nu_log_density=base,
        name=config.name,
        nu_support=(config.nu_min, config.nu_max),
    )
