"""Metropolis-within-Gibbs sampler for the scale mixture form of the model.

One sweep updates β | σ², λ (normal), σ² | β, λ (inverse gamma),
λ | β, σ², ν (independent gammas) and finally ν | λ with a random walk
Metropolis step on log ν.
"""

from __future__ import annotations

import asyncio
import math
import warnings
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from attrs import define, field
from pydantic import (
    BaseModel,
    ConfigDict,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)
from scipy import linalg, stats
from scipy.integrate import trapezoid
from scipy.special import gammaln
from typing_extensions import Self

from tjeffreys.errors import DomainError, ImproperPosteriorError
from tjeffreys.objective_priors import PriorSpec
from tjeffreys.propriety_auditor import critical_nu, has_mass_below_critical
from tjeffreys.regression_core import (
    Dataset,
    MixingVector,
    weighted_regression,
    weighted_sum_of_squares,
)
from tjeffreys.utils import DEFAULT_CONFIG, LOGGER, NUMERICS, validate_min_max

_SETTINGS = NUMERICS["sampler"]
SCHEMA_VERSION = NUMERICS["cli"]["schema_version"]
_TINY = np.finfo(float).tiny


class ChainConfig(BaseModel):
    """Tuning of a single chain.

    Attributes:
        iterations (int): Total sweeps including burn-in.
        burn_in (int): Sweeps discarded before recording.
        thin (int): Record every `thin`-th sweep after burn-in.
        nu_proposal_sd (float): Random walk scale on log ν.
        seed (int): Seed of the chain's generator.
        nu_floor (float): ν proposals at or below the floor are rejected.
        allow_truncated_support (bool): Permit sampling a prior whose
            untruncated posterior is improper, provided nu_floor lies above
            the critical ν.
    """

    model_config = ConfigDict(extra="forbid")

    iterations: PositiveInt = 20000
    burn_in: NonNegativeInt = 5000
    thin: PositiveInt = 5
    nu_proposal_sd: PositiveFloat = 0.5
    seed: NonNegativeInt = 20150601
    nu_floor: NonNegativeFloat = 0.0
    allow_truncated_support: bool = False

    @field_validator("thin", mode="after")
    @classmethod
    def validate_thin(cls, value: int) -> int:
        return validate_min_max("thin", value, _SETTINGS)

    @field_validator("nu_proposal_sd", mode="after")
    @classmethod
    def validate_nu_proposal_sd(cls, value: float) -> float:
        return validate_min_max("nu_proposal_sd", value, _SETTINGS)

    @field_validator("seed", mode="after")
    @classmethod
    def validate_seed(cls, value: int) -> int:
        if value >= 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {value}")
        return value

    @model_validator(mode="after")
    def validate_burn_in(self) -> Self:
        if not self.iterations > self.burn_in:
            msg = f"iterations ({self.iterations}) must exceed burn_in ({self.burn_in})"
            LOGGER.error(msg)
            raise ValueError(msg)
        return self

    @classmethod
    def factory(cls, chain_config: Optional[dict] = None) -> Self:
        """ChainConfig from the [chain] defaults updated with `chain_config`."""
        config = dict(DEFAULT_CONFIG["chain"].unwrap())
        config.update(chain_config or {})
        return cls(**config)

    @property
    def kept(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@define
class ChainState:
    beta: np.ndarray
    sigma2: float
    nu: float
    lam: MixingVector


@define
class Trace:
    """Recorded draws of one chain plus its tuning metadata."""

    iteration: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    nu: np.ndarray
    acceptance_rate_nu: float
    config: ChainConfig
    seed: int
    n: int
    p: int
    prior: str = ""
    chain: int = 0
    columns: tuple = field(factory=tuple)

    def __len__(self) -> int:
        return self.nu.shape[0]

    @property
    def beta_names(self) -> list[str]:
        return [f"beta_{j + 1}" for j in range(self.beta.shape[1])]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.beta, columns=self.beta_names)
        frame.insert(0, "iter", self.iteration)
        frame["sigma2"] = self.sigma2
        frame["nu"] = self.nu
        return frame

    def to_csv(self, path: Union[str, Path]):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(
        cls,
        path: Union[str, Path],
        config: ChainConfig,
        n: int,
        acceptance_rate_nu: float = math.nan,
        prior: str = "",
    ) -> Self:
        """Rebuild a trace from its CSV. Metadata not stored in the file is passed in."""
        frame = pd.read_csv(path, float_precision="round_trip")
        beta_cols = [c for c in frame.columns if c.startswith("beta_")]
        return cls(
            iteration=frame["iter"].to_numpy(),
            beta=frame[beta_cols].to_numpy(),
            sigma2=frame["sigma2"].to_numpy(),
            nu=frame["nu"].to_numpy(),
            acceptance_rate_nu=acceptance_rate_nu,
            config=config,
            seed=config.seed,
            n=n,
            p=len(beta_cols),
            prior=prior,
        )


def update_beta(state: ChainState, dataset: Dataset, rng: np.random.Generator) -> np.ndarray:
    """Draw β ~ Normal(b, σ²A⁻¹) using the triangular factor of A."""
    wls = weighted_regression(dataset, state.lam)
    z = rng.standard_normal(dataset.p)
    return wls.b + math.sqrt(state.sigma2) * linalg.solve_triangular(wls.R, z)


def update_sigma2(
    state: ChainState, dataset: Dataset, spec: PriorSpec, rng: np.random.Generator
) -> float:
    """Draw σ² ~ InvGamma(n/2 + a − 1, Σλᵢ(yᵢ − xᵢᵀβ)²/2)."""
    shape = dataset.n / 2.0 + spec.a - 1.0
    if shape <= 0:
        raise DomainError(f"sigma2 conditional has nonpositive shape {shape}")
    rate = weighted_sum_of_squares(state.beta, dataset, state.lam) / 2.0
    return rate / rng.gamma(shape)


def update_lambda(state: ChainState, dataset: Dataset, rng: np.random.Generator) -> MixingVector:
    """Draw λᵢ ~ Gamma((ν+1)/2, rate (ν + rᵢ²/σ²)/2) independently."""
    resid = dataset.y - dataset.X @ state.beta
    rate = (state.nu + resid**2 / state.sigma2) / 2.0
    draws = rng.gamma((state.nu + 1.0) / 2.0, 1.0 / rate)
    return MixingVector(values=np.maximum(draws, _TINY))


def nu_conditional_log(nu: float, lam: np.ndarray, spec: PriorSpec) -> float:
    """log π(ν) + Σ log Gamma(λᵢ | ν/2, ν/2) up to a constant."""
    log_prior = spec.log_nu(nu)
    if not math.isfinite(log_prior):
        return -math.inf
    half = nu / 2.0
    n = lam.shape[0]
    return (
        log_prior
        + n * (half * math.log(half) - gammaln(half))
        + (half - 1.0) * float(np.sum(np.log(lam)))
        - half * float(np.sum(lam))
    )


def update_nu(
    state: ChainState,
    dataset: Dataset,
    spec: PriorSpec,
    config: ChainConfig,
    rng: np.random.Generator,
) -> tuple[float, bool]:
    """Random walk Metropolis step on log ν.

    Proposals at or below `config.nu_floor` are rejected.
    """
    log_current = math.log(state.nu)
    log_proposal = log_current + config.nu_proposal_sd * rng.standard_normal()
    proposal = math.exp(log_proposal)
    u = rng.uniform()
    if proposal <= config.nu_floor or proposal <= 0:
        return state.nu, False

    lam = state.lam.values
    # log ν Jacobian
    log_ratio = (
        nu_conditional_log(proposal, lam, spec)
        + log_proposal
        - nu_conditional_log(state.nu, lam, spec)
        - log_current
    )
    if log_ratio == -math.inf:
        return state.nu, False
    if log_ratio >= 0 or u == 0.0 or math.log(u) < log_ratio:
        return proposal, True
    return state.nu, False


def check_propriety(dataset: Dataset, spec: PriorSpec, config: ChainConfig):
    """Refuse to sample a posterior that does not exist.

    Raises:
        ImproperPosteriorError: π(ν) is positive below the critical ν and the
            config does not truncate the support above it.
    """
    n, p = dataset.n, dataset.p
    if not has_mass_below_critical(spec, n, p):
        return
    crit = critical_nu(spec.a, n, p)
    if config.allow_truncated_support and config.nu_floor > crit:
        LOGGER.warning(
            f"Sampling {spec.name} on the truncated support nu > {config.nu_floor} "
            f"(critical nu {crit:.6g})"
        )
        return
    msg = (
        f"Posterior under the {spec.name} prior is improper: a={spec.a}, n={n}, p={p}, "
        f"and pi(nu) is positive on (0, {crit:.6g}]. The posterior only exists if "
        f"pi(nu) vanishes there; set allow_truncated_support with nu_floor > {crit:.6g} "
        "to sample a truncated variant"
    )
    LOGGER.error(msg)
    raise ImproperPosteriorError(msg, critical_nu=crit, a=spec.a)


def _initial_nu(spec: PriorSpec, config: ChainConfig) -> float:
    lo, hi = spec.nu_support
    lo = max(lo, config.nu_floor)
    nu = _SETTINGS["nu_init"]
    if lo < nu <= hi:
        return nu
    return 2.0 * lo if math.isinf(hi) else 0.5 * (lo + hi)


def initial_state(dataset: Dataset, spec: PriorSpec, config: ChainConfig) -> ChainState:
    """β at OLS, σ² at the residual variance, λ = 1 and ν = nu_init (moved into the support if needed)."""
    lam = MixingVector.ones(dataset.n)
    wls = weighted_regression(dataset, lam)
    sigma2 = wls.s2 / (dataset.n - dataset.p)
    if sigma2 <= 0:
        sigma2 = 1.0
    return ChainState(beta=wls.b.copy(), sigma2=sigma2, nu=_initial_nu(spec, config), lam=lam)


def run_chain(
    dataset: Dataset,
    spec: PriorSpec,
    config: ChainConfig,
    seed_sequence: Optional[np.random.SeedSequence] = None,
    chain: int = 0,
) -> Trace:
    """Run one chain with systematic scan β → σ² → λ → ν.

    The trace is a pure function of (dataset, spec, config, seed_sequence).

    Raises:
        ImproperPosteriorError: see `check_propriety`.
    """
    check_propriety(dataset, spec, config)
    rng = np.random.default_rng(config.seed if seed_sequence is None else seed_sequence)
    state = initial_state(dataset, spec, config)

    kept = config.kept
    iteration = np.empty(kept, dtype=int)
    beta = np.empty((kept, dataset.p))
    sigma2 = np.empty(kept)
    nu = np.empty(kept)

    accepted = 0
    k = 0
    for t in range(config.iterations):
        state.beta = update_beta(state, dataset, rng)
        state.sigma2 = update_sigma2(state, dataset, spec, rng)
        state.lam = update_lambda(state, dataset, rng)
        state.nu, move = update_nu(state, dataset, spec, config, rng)
        accepted += move

        if t >= config.burn_in and (t + 1 - config.burn_in) % config.thin == 0 and k < kept:
            iteration[k] = t + 1
            beta[k] = state.beta
            sigma2[k] = state.sigma2
            nu[k] = state.nu
            k += 1
        if (t + 1) % _SETTINGS["log_every"] == 0:
            LOGGER.debug(
                f"chain {chain} iteration {t + 1}: nu={state.nu:.4g}, "
                f"acceptance {accepted / (t + 1):.3f}"
            )

    rate = accepted / config.iterations
    LOGGER.info(f"Chain {chain} ({spec.name}) finished, nu acceptance {rate:.3f}")
    return Trace(
        iteration=iteration,
        beta=beta,
        sigma2=sigma2,
        nu=nu,
        acceptance_rate_nu=rate,
        config=config,
        seed=config.seed,
        n=dataset.n,
        p=dataset.p,
        prior=spec.name,
        chain=chain,
        columns=dataset.columns,
    )


async def run_chains(
    dataset: Dataset, spec: PriorSpec, config: ChainConfig, n_chains: int
) -> list[Trace]:
    """Independent chains on threads, seeded from SeedSequence(config.seed).spawn.

    Traces are returned in chain order.
    """
    if n_chains < 1:
        raise ValueError(f"n_chains must be >= 1, got {n_chains}")
    check_propriety(dataset, spec, config)
    children = np.random.SeedSequence(config.seed).spawn(n_chains)
    _ = []
    for chain, child in enumerate(children):
        _.append(asyncio.to_thread(run_chain, dataset, spec, config, child, chain))
    return list(await asyncio.gather(*_))


@define
class GridPosterior:
    """Posterior density of (β, σ², ν) on a rectangular grid, p = 1."""

    beta_grid: np.ndarray
    sigma2_grid: np.ndarray
    nu_grid: np.ndarray
    density: np.ndarray
    boundary_mass: float

    @property
    def grids(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.beta_grid, self.sigma2_grid, self.nu_grid

    def marginal(self, axis: int) -> np.ndarray:
        """Marginal density along axis 0 (β), 1 (σ²) or 2 (ν)."""
        d = self.density
        for other in sorted({0, 1, 2} - {axis}, reverse=True):
            d = trapezoid(d, self.grids[other], axis=other)
        return d

    def mean(self, axis: int, log: bool = False) -> float:
        """Posterior mean of the parameter on `axis`, or of its log."""
        x = self.grids[axis]
        values = np.log(x) if log else x
        return float(trapezoid(values * self.marginal(axis), x))


def grid_posterior_oracle(
    dataset: Dataset,
    spec: PriorSpec,
    beta_grid: np.ndarray,
    sigma2_grid: np.ndarray,
    nu_grid: np.ndarray,
) -> GridPosterior:
    """Brute force posterior of the Student-t regression with λ integrated out.

    Raises:
        DomainError: p != 1 or a grid larger than grid_max_points.
    """
    if dataset.p != 1:
        raise DomainError(f"grid oracle needs p = 1, got p = {dataset.p}")
    grids = [np.asarray(g, dtype=float) for g in (beta_grid, sigma2_grid, nu_grid)]
    for g in grids:
        if not 2 <= g.shape[0] <= _SETTINGS["grid_max_points"]:
            raise DomainError(f"grid size {g.shape[0]} outside [2, {_SETTINGS['grid_max_points']}]")
        if np.any(np.diff(g) <= 0):
            raise DomainError("grids must be strictly increasing")
    beta_grid, sigma2_grid, nu_grid = grids
    if sigma2_grid[0] <= 0 or nu_grid[0] <= 0:
        raise DomainError("sigma2 and nu grids must be positive")

    # residuals (β, obs), scaled per σ² and scored against every ν at once
    residuals = dataset.y[None, :] - beta_grid[:, None] * dataset.X[None, :, 0]
    scale = np.sqrt(sigma2_grid)
    log_density = np.empty((beta_grid.size, sigma2_grid.size, nu_grid.size))
    for i in range(beta_grid.size):
        z = residuals[i][None, :, None] / scale[:, None, None]
        log_density[i] = stats.t.logpdf(z, df=nu_grid[None, None, :]).sum(axis=1)
    log_density -= (0.5 * dataset.n + spec.a) * np.log(sigma2_grid)[None, :, None]
    log_density += np.array([spec.log_nu(nu) for nu in nu_grid])[None, None, :]

    density = np.exp(log_density - np.max(log_density))
    total = trapezoid(
        trapezoid(trapezoid(density, nu_grid, axis=2), sigma2_grid, axis=1), beta_grid
    )
    density /= total
    posterior = GridPosterior(beta_grid, sigma2_grid, nu_grid, density, 0.0)

    escape = 0.0
    for axis, g in enumerate(grids):
        marginal = posterior.marginal(axis)
        edges = trapezoid(marginal[:2], g[:2]) + trapezoid(marginal[-2:], g[-2:])
        escape = max(escape, float(edges))
    posterior.boundary_mass = escape
    if escape > _SETTINGS["grid_mass_escape"]:
        msg = f"{escape:.2%} of the grid posterior mass lies in boundary cells"
        LOGGER.warning(msg)
        warnings.warn(msg, RuntimeWarning)
    return posterior


def effective_sample_size(x: np.ndarray) -> float:
    """ESS of one chain with Geyer's initial positive and monotone sequences."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    if m < 4 or np.ptp(x) == 0:
        return float(m)

    centered = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * m)))
    spectrum = np.fft.rfft(centered, n=size)
    acov = np.fft.irfft(spectrum * np.conjugate(spectrum), n=size)[:m] / m

    mean_var = acov[0] * m / (m - 1.0)
    var_plus = mean_var * (m - 1.0) / m
    rho = np.zeros(m)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[1]) / var_plus
    rho[1] = rho_odd

    t = 1
    while t < m - 2 and rho_even + rho_odd >= 0.0:
        rho_even = 1.0 - (mean_var - acov[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - acov[t + 2]) / var_plus
        rho[t + 1] = rho_even
        if rho_even + rho_odd >= 0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t

    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2

    tau = -1.0 + 2.0 * np.sum(rho[:max_t]) + np.sum(rho[max_t + 1 : max_t + 2])
    return float(m / tau)


def threshold_violation_rate(trace: Trace, threshold: float) -> float:
    """Fraction of ν draws at or below `threshold`."""
    if len(trace) == 0:
        return math.nan
    return float(np.mean(trace.nu <= threshold))


class ParameterSummary(BaseModel):
    mean: float
    sd: NonNegativeFloat
    lower: float
    upper: float
    ess: NonNegativeFloat


class TraceSummary(BaseModel):
    """Posterior summary of one trace, serialized as the fit summary JSON."""

    schema_version: str = SCHEMA_VERSION
    prior: str
    chain: int
    seed: int
    draws: int
    level: float
    acceptance_rate_nu: float
    parameters: dict[str, ParameterSummary]
    nu_threshold: float
    threshold_violation_rate: float


def _summarize_draws(x: np.ndarray, level: float) -> ParameterSummary:
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(x, [tail, 1.0 - tail], method="inverted_cdf")
    return ParameterSummary(
        mean=float(np.mean(x)),
        sd=float(np.std(x, ddof=1)) if x.shape[0] > 1 else 0.0,
        lower=float(lower),
        upper=float(upper),
        ess=effective_sample_size(x),
    )


def summarize(trace: Trace, level: float = 0.95) -> TraceSummary:
    """Mean, sd, equal tailed interval and ESS of every parameter.

    Interval endpoints are order statistics of the draws. The ν threshold
    violation rate is measured against p/(n−p), the smallest ν the
    Jeffreys-rule prior would need to exclude.
    """
    if len(trace) == 0:
        raise ValueError("Cannot summarize an empty trace")
    parameters = {
        name: _summarize_draws(trace.beta[:, j], level)
        for j, name in enumerate(trace.beta_names)
    }
    parameters["sigma2"] = _summarize_draws(trace.sigma2, level)
    parameters["nu"] = _summarize_draws(trace.nu, level)
    threshold = trace.p / (trace.n - trace.p)
    return TraceSummary(
        prior=trace.prior,
        chain=trace.chain,
        seed=trace.seed,
        draws=len(trace),
        level=level,
        acceptance_rate_nu=trace.acceptance_rate_nu,
        parameters=parameters,
        nu_threshold=threshold,
        threshold_violation_rate=threshold_violation_rate(trace, threshold),
    )
