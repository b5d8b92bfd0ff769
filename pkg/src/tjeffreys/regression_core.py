"""Data model, Student-t likelihood and the scale mixture quantities.

With latent precisions λ and D = diag(λ), the weighted regression quantities

    A = XᵀDX,   b = A⁻¹XᵀDy,   S² = yᵀDy − yᵀDX A⁻¹ XᵀDy

are computed from a QR factorization of D^(1/2)X, never from the normal
equations.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
from attrs import define, field
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import linalg, stats
from scipy.special import gammaln
from typing_extensions import Self

from tjeffreys.errors import (
    DataValidationError,
    DomainError,
    RankDeficiencyError,
    SingularityError,
)
from tjeffreys.objective_priors import PriorSpec, full_prior_log
from tjeffreys.utils import LOGGER, NUMERICS

_SETTINGS = NUMERICS["regression"]
_LOG_2PI = math.log(2.0 * math.pi)


def _read_only(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class Dataset(BaseModel):
    """Response `y` (n,) and design matrix `X` (n, p) with n > p = rank(X)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    y: np.ndarray
    X: np.ndarray
    columns: tuple[str, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def coerce_arrays(cls, data: dict) -> dict:
        if not isinstance(data, dict):
            return data
        try:
            y = np.asarray(data["y"], dtype=float).reshape(-1)
            X = np.asarray(data["X"], dtype=float)
        except (TypeError, ValueError) as err:
            raise DataValidationError(f"Dataset entries must be numeric: {err}") from err
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        data["y"] = _read_only(y)
        data["X"] = _read_only(X)
        if not data.get("columns"):
            data["columns"] = tuple(f"x{j + 1}" for j in range(X.shape[1]))
        return data

    @model_validator(mode="after")
    def validate_dataset(self) -> Self:
        n, p = self.X.shape
        if self.y.shape[0] != n:
            msg = f"y has {self.y.shape[0]} entries but X has {n} rows"
            LOGGER.error(msg)
            raise DataValidationError(msg)
        if p < 1:
            raise DataValidationError("X needs at least one column")
        if len(self.columns) != p:
            raise DataValidationError(f"{len(self.columns)} column names for {p} columns")
        if not (np.isfinite(self.y).all() and np.isfinite(self.X).all()):
            msg = "Dataset contains non-finite entries"
            LOGGER.error(msg)
            raise DataValidationError(msg)
        if n <= p:
            msg = f"Need n > p, got n={n}, p={p}"
            LOGGER.error(msg)
            raise DataValidationError(msg)
        rank = np.linalg.matrix_rank(self.X)
        if rank < p:
            msg = f"X has rank {rank} < p = {p}"
            LOGGER.error(msg)
            raise RankDeficiencyError(msg)
        return self

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_csv(cls, path: Union[str, Path], intercept: bool = False) -> Self:
        """Load a CSV with a header row, `y` first and covariates after.

        Args:
            path (str, Path): CSV file.
            intercept (bool): Prepend a column of ones named `intercept`.
        """
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
            msg = f"Could not parse {path}: {err}"
            LOGGER.error(msg)
            raise DataValidationError(msg) from err
        if frame.shape[1] < 1 or frame.columns[0] != "y":
            msg = f"First column of {path} must be named 'y'"
            LOGGER.error(msg)
            raise DataValidationError(msg)
        covariates = frame.iloc[:, 1:].copy()
        if intercept:
            covariates.insert(0, "intercept", 1.0)
        if covariates.shape[1] == 0:
            msg = f"{path} has no covariate columns"
            LOGGER.error(msg)
            raise DataValidationError(msg)
        non_numeric = [c for c in frame.columns if not pd.api.types.is_numeric_dtype(frame[c])]
        if non_numeric:
            msg = f"Non-numeric columns in {path}: {non_numeric}"
            LOGGER.error(msg)
            raise DataValidationError(msg)

        LOGGER.info(f"Loaded {path}: n={frame.shape[0]}, p={covariates.shape[1]}")
        return cls(
            y=frame["y"].to_numpy(),
            X=covariates.to_numpy(),
            columns=tuple(str(c) for c in covariates.columns),
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.X, columns=list(self.columns))
        frame.insert(0, "y", self.y)
        return frame


class MixingVector(BaseModel):
    """Latent precisions λ₁..λₙ, all strictly positive."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, values) -> np.ndarray:
        values = np.asarray(values, dtype=float).reshape(-1)
        if not (np.isfinite(values).all() and (values > 0).all()):
            msg = "Mixing weights must be finite and strictly positive"
            LOGGER.error(msg)
            raise DomainError(msg)
        return _read_only(values)

    @classmethod
    def ones(cls, n: int) -> Self:
        return cls(values=np.ones(n))

    def __len__(self) -> int:
        return self.values.shape[0]


LambdaLike = Union[MixingVector, np.ndarray]


def _lambda_values(lam: LambdaLike, n: int) -> np.ndarray:
    values = lam.values if isinstance(lam, MixingVector) else MixingVector(values=lam).values
    if values.shape[0] != n:
        raise DomainError(f"Expected {n} mixing weights, got {values.shape[0]}")
    return values


@define(frozen=True)
class WlsDecomposition:
    """(A, b, S²) of the weighted regression plus the triangular factor R, A = RᵀR."""

    A: np.ndarray
    b: np.ndarray
    s2: float
    R: np.ndarray = field(repr=False)

    @property
    def logdet_A(self) -> float:
        return 2.0 * float(np.sum(np.log(np.abs(np.diag(self.R)))))

    def quadratic_form(self, beta: np.ndarray) -> float:
        """(β − b)ᵀA(β − b)."""
        d = self.R @ (np.asarray(beta, dtype=float) - self.b)
        return float(d @ d)


def weighted_regression(dataset: Dataset, lam: LambdaLike) -> WlsDecomposition:
    """Weighted least squares through the QR factorization of D^(1/2)X.

    Raises:
        SingularityError: D^(1/2)X is rank deficient to working precision.
    """
    weights = _lambda_values(lam, dataset.n)
    root = np.sqrt(weights)
    Xw = root[:, None] * dataset.X
    yw = root * dataset.y

    Q, R = linalg.qr(Xw, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.min() <= _SETTINGS["rank_rtol"] * diag.max():
        msg = f"Weighted design is rank deficient, |diag R| range [{diag.min()}, {diag.max()}]"
        LOGGER.error(msg)
        raise SingularityError(msg)

    qty = Q.T @ yw
    b = linalg.solve_triangular(R, qty)
    resid = yw - Q @ qty
    s2 = float(resid @ resid)
    # exact fit up to rounding
    if s2 <= _SETTINGS["s2_clamp"] * float(yw @ yw):
        s2 = 0.0
    return WlsDecomposition(A=R.T @ R, b=b, s2=s2, R=R)


def weighted_sum_of_squares(beta: np.ndarray, dataset: Dataset, lam: LambdaLike) -> float:
    """Σ λᵢ (yᵢ − xᵢᵀβ)²."""
    weights = _lambda_values(lam, dataset.n)
    resid = dataset.y - dataset.X @ np.asarray(beta, dtype=float)
    return float(np.sum(weights * resid**2))


def _check_scale_nu(sigma2: float, nu: float):
    if not (math.isfinite(sigma2) and sigma2 > 0):
        msg = f"sigma2 must be finite and positive, got {sigma2}"
        LOGGER.error(msg)
        raise DomainError(msg)
    if not (nu > 0) or math.isnan(nu):
        msg = f"nu must be positive, got {nu}"
        LOGGER.error(msg)
        raise DomainError(msg)


def student_t_loglik(beta: np.ndarray, sigma2: float, nu: float, dataset: Dataset) -> float:
    """Σᵢ log f_t((yᵢ − xᵢᵀβ)/σ; ν) − (n/2) log σ²."""
    _check_scale_nu(sigma2, nu)
    z = (dataset.y - dataset.X @ np.asarray(beta, dtype=float)) / math.sqrt(sigma2)
    return float(np.sum(stats.t.logpdf(z, df=nu))) - 0.5 * dataset.n * math.log(sigma2)


def mixing_density_log(lam: Union[float, np.ndarray], nu: float):
    """log Gamma(λ | shape ν/2, rate ν/2). Vectorized over λ."""
    if not (nu > 0) or math.isnan(nu):
        raise DomainError(f"nu must be positive, got {nu}")
    values = np.asarray(lam, dtype=float)
    if not (values > 0).all():
        raise DomainError("lambda must be positive")
    out = stats.gamma.logpdf(values, a=nu / 2.0, scale=2.0 / nu)
    return float(out) if out.ndim == 0 else out


def _mixing_terms(weights: np.ndarray, nu: float) -> float:
    return 0.5 * float(np.sum(np.log(weights))) + float(np.sum(mixing_density_log(weights, nu)))


def augmented_joint_logdensity(
    beta: np.ndarray,
    sigma2: float,
    nu: float,
    lam: LambdaLike,
    dataset: Dataset,
    spec: PriorSpec,
) -> float:
    """log of the joint density of (y, β, σ², ν, λ) up to a constant.

    Σ½log λᵢ − (n/2)log(2πσ²) − [(β−b)ᵀA(β−b) + S²]/(2σ²)
    + log π(β, σ², ν) + Σ log f^G(λᵢ | ν)

    Integrating λ out gives the Student-t likelihood times the prior.
    """
    _check_scale_nu(sigma2, nu)
    weights = _lambda_values(lam, dataset.n)
    wls = weighted_regression(dataset, weights)
    quad_form = wls.quadratic_form(beta) + wls.s2
    return (
        _mixing_terms(weights, nu)
        - 0.5 * dataset.n * (_LOG_2PI + math.log(sigma2))
        - quad_form / (2.0 * sigma2)
        + full_prior_log(beta, sigma2, nu, spec)
    )


def beta_integrated_logdensity(
    sigma2: float, nu: float, lam: LambdaLike, dataset: Dataset, spec: PriorSpec
) -> float:
    """augmented_joint_logdensity with β integrated out."""
    _check_scale_nu(sigma2, nu)
    weights = _lambda_values(lam, dataset.n)
    wls = weighted_regression(dataset, weights)
    n, p = dataset.n, dataset.p
    return (
        _mixing_terms(weights, nu)
        - 0.5 * (n - p) * (_LOG_2PI + math.log(sigma2))
        - 0.5 * wls.logdet_A
        - wls.s2 / (2.0 * sigma2)
        - spec.a * math.log(sigma2)
        + spec.log_nu(nu)
    )


def sigma_integrated_logdensity(
    nu: float, lam: LambdaLike, dataset: Dataset, spec: PriorSpec
) -> float:
    """augmented_joint_logdensity with β and σ² integrated out.

    Raises:
        DomainError: n + 2a − p − 2 ≤ 0 or S² = 0, the σ² integral is infinite.
    """
    n, p = dataset.n, dataset.p
    twice_k = n + 2.0 * spec.a - p - 2.0
    if twice_k <= 0:
        msg = f"sigma2 integral diverges, n + 2a - p - 2 = {twice_k} <= 0"
        LOGGER.error(msg)
        raise DomainError(msg)
    weights = _lambda_values(lam, n)
    wls = weighted_regression(dataset, weights)
    if wls.s2 <= 0:
        msg = "sigma2 integral diverges, S2 = 0"
        LOGGER.error(msg)
        raise DomainError(msg)
    k = twice_k / 2.0
    return (
        _mixing_terms(weights, nu)
        - 0.5 * (n - p) * _LOG_2PI
        - 0.5 * wls.logdet_A
        + float(gammaln(k))
        - k * math.log(wls.s2 / 2.0)
        + spec.log_nu(nu)
    )
