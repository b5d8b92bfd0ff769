"""Command line front end.

Every command reads the packaged defaults, deep-merges an optional user TOML
(`--config`) over them, applies command line flags, validates the result and
writes its outputs into the run directory. Exit codes follow `ExitCode`.
"""

from __future__ import annotations

import argparse
import asyncio
import math
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)
from typing_extensions import Self

from tjeffreys.errors import ExitCode, exit_code_for
from tjeffreys.gibbs_sampler import ChainConfig, run_chain, run_chains, summarize
from tjeffreys.objective_priors import PriorSpec, load_custom_prior, prior_curve
from tjeffreys.propriety_auditor import (
    EvidenceRow,
    audit,
    critical_nu,
    divergence_diagnostic,
)
from tjeffreys.regression_core import Dataset
from tjeffreys.utils import (
    LOGGER,
    NUMERICS,
    read_user_config,
    setup_output_path,
    update_logger,
    validate_in,
    validate_min_max,
)

SCHEMA_VERSION = NUMERICS["cli"]["schema_version"]
CUSTOM_PREFIX = "custom:"


def resolve_prior(prior: str, p: int) -> PriorSpec:
    """Built-in prior by name, or a custom prior from `custom:<yaml file>`."""
    if prior.startswith(CUSTOM_PREFIX):
        return load_custom_prior(prior[len(CUSTOM_PREFIX) :], p)
    validate_in("prior", prior, NUMERICS["cli"])
    return PriorSpec.factory(prior, p)


def _validate_prior_name(prior: str) -> str:
    if prior.startswith(CUSTOM_PREFIX):
        if not Path(prior[len(CUSTOM_PREFIX) :]).exists():
            raise ValueError(f"Custom prior file {prior[len(CUSTOM_PREFIX):]} not found")
        return prior
    return validate_in("prior", prior, NUMERICS["cli"])


class FitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: str
    prior: str = "independence"
    intercept: bool = False
    chains: PositiveInt = 1

    @field_validator("prior", mode="after")
    @classmethod
    def validate_prior(cls, value: str) -> str:
        return _validate_prior_name(value)

    @field_validator("data", mode="after")
    @classmethod
    def validate_data(cls, value: str) -> str:
        if len(value) == 0:
            raise ValueError("fit needs a data CSV")
        return value


class AuditConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: str = ""
    n: int = 0
    p: int = 0
    intercept: bool = False
    prior: str = "independence"
    nu_probe: list[PositiveFloat] = []

    @field_validator("prior", mode="after")
    @classmethod
    def validate_prior(cls, value: str) -> str:
        return _validate_prior_name(value)

    @model_validator(mode="after")
    def validate_source(self) -> Self:
        if len(self.data) == 0 and not (self.p >= 1 and self.n > 0):
            raise ValueError("audit needs a data CSV or both n and p")
        return self


class PriorCurveConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    prior: str = "independence"
    p: PositiveInt = 1
    nu_min: PositiveFloat = 1e-3
    nu_max: PositiveFloat = 1e4
    steps: int = Field(default=400, ge=2)
    quad_tol: PositiveFloat = 1e-9

    @field_validator("prior", mode="after")
    @classmethod
    def validate_prior(cls, value: str) -> str:
        return _validate_prior_name(value)

    @field_validator("quad_tol", mode="after")
    @classmethod
    def validate_quad_tol(cls, value: float) -> float:
        return validate_min_max("quad_tol", value, NUMERICS["priors"])

    @model_validator(mode="after")
    def validate_range(self) -> Self:
        if not self.nu_min < self.nu_max:
            raise ValueError(f"nu_min ({self.nu_min}) must be below nu_max ({self.nu_max})")
        return self


class CoverageConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    prior: Literal["independence"] = "independence"
    n: PositiveInt = 30
    p: PositiveInt = 2
    true_beta: list[float] = []
    true_sigma2: PositiveFloat = 1.0
    true_nu: PositiveFloat = 5.0
    replicates: PositiveInt = 100
    level: float = Field(default=0.95, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def validate_dims(self) -> Self:
        if not self.n > self.p:
            raise ValueError(f"Need n > p, got n={self.n}, p={self.p}")
        if len(self.true_beta) == 0:
            self.true_beta = [1.0] * self.p
        if len(self.true_beta) != self.p:
            raise ValueError(f"true_beta has {len(self.true_beta)} entries, p = {self.p}")
        return self


class DivergenceDemoConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: PositiveInt = 30
    p: PositiveInt = 2
    a: float = Field(default=2.0, ge=1.0)
    nu: list[PositiveFloat] = Field(default=[0.05, 0.0714, 0.1], min_length=1)
    r: NonNegativeFloat = 0.0

    @model_validator(mode="after")
    def validate_dims(self) -> Self:
        if not self.n > self.p:
            raise ValueError(f"Need n > p, got n={self.n}, p={self.p}")
        return self


class ParameterCoverage(BaseModel):
    true_value: float
    coverage: float
    se: float
    mean_width: float


class CoverageReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    prior: str
    n: int
    p: int
    level: float
    replicates: int
    completed: int
    failed: int
    parameters: dict[str, ParameterCoverage]
    nu_threshold: float
    mean_threshold_violation_rate: float


class DivergenceReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    n: int
    p: int
    a: float
    critical_nu: float
    r: float
    evidence: list[EvidenceRow]


def _write_json(model: BaseModel, path: Path):
    path.write_text(model.model_dump_json(indent=2))
    LOGGER.info(f"Wrote {path}")


def _output_file(run_config: dict, suffix: str) -> Path:
    out = Path(run_config["run"]["output_path"])
    return out / f"{run_config['run']['name']}_{suffix}"


def cmd_fit(run_config: dict) -> ExitCode:
    """Sample the posterior, write one trace CSV and one summary JSON per chain."""
    fit = FitConfig(**run_config["fit"])
    chain = ChainConfig(**run_config["chain"])
    dataset = Dataset.from_csv(fit.data, intercept=fit.intercept)
    spec = resolve_prior(fit.prior, dataset.p)

    if fit.chains == 1:
        traces = [run_chain(dataset, spec, chain)]
    else:
        traces = asyncio.run(run_chains(dataset, spec, chain, fit.chains))

    for trace in traces:
        tag = "" if fit.chains == 1 else f"_chain{trace.chain}"
        trace.to_csv(_output_file(run_config, f"trace{tag}.csv"))
        _write_json(summarize(trace), _output_file(run_config, f"summary{tag}.json"))
    return ExitCode.SUCCESS


def cmd_audit(run_config: dict) -> ExitCode:
    """Propriety verdict with the divergence evidence table."""
    config = AuditConfig(**run_config["audit"])
    if len(config.data) > 0:
        dataset = Dataset.from_csv(config.data, intercept=config.intercept)
        target, p = dataset, dataset.p
    else:
        target, p = (config.n, config.p), config.p
    spec = resolve_prior(config.prior, p)
    report = audit(target, spec, config.nu_probe or None)
    _write_json(report, _output_file(run_config, "audit.json"))
    print(report.model_dump_json(indent=2))
    return ExitCode.SUCCESS


def cmd_prior_curve(run_config: dict) -> ExitCode:
    """Normalized ν-prior on a log grid, written as CSV."""
    config = PriorCurveConfig(**run_config["prior_curve"])
    spec = resolve_prior(config.prior, config.p)
    grid = np.geomspace(config.nu_min, config.nu_max, config.steps)
    frame = prior_curve(spec, grid, normalize=True, quad_tol=config.quad_tol)
    path = _output_file(run_config, "prior_curve.csv")
    frame.to_csv(path, index=False, float_format="%.17g")
    LOGGER.info(f"Wrote {path}")
    return ExitCode.SUCCESS


def simulate_dataset(
    n: int, beta: np.ndarray, sigma2: float, nu: float, rng: np.random.Generator
) -> Dataset:
    """Draw (y, X) from the Student-t regression model.

    X has an intercept column followed by standard normal covariates.
    """
    p = beta.shape[0]
    X = np.ones((n, p))
    if p > 1:
        X[:, 1:] = rng.standard_normal((n, p - 1))
    y = X @ beta + math.sqrt(sigma2) * rng.standard_t(nu, size=n)
    return Dataset(y=y, X=X)


def _coverage_replicate(
    config: CoverageConfig, chain: ChainConfig, seed: np.random.SeedSequence
) -> dict:
    data_seed, chain_seed = seed.spawn(2)
    beta = np.asarray(config.true_beta)
    dataset = simulate_dataset(
        config.n, beta, config.true_sigma2, config.true_nu, np.random.default_rng(data_seed)
    )
    spec = PriorSpec.independence(config.p)
    trace = run_chain(dataset, spec, chain, seed_sequence=chain_seed)
    summary = summarize(trace, level=config.level)

    truth = {f"beta_{j + 1}": b for j, b in enumerate(config.true_beta)}
    truth["sigma2"] = config.true_sigma2
    truth["nu"] = config.true_nu
    result = {}
    for name, value in truth.items():
        s = summary.parameters[name]
        result[name] = (s.lower <= value <= s.upper, s.upper - s.lower)
    return {"intervals": result, "violation": summary.threshold_violation_rate}


async def coverage_study(
    config: CoverageConfig, chain: ChainConfig, seed: int
) -> CoverageReport:
    """Fit `replicates` simulated datasets concurrently and tabulate coverage.

    Failed replicates are counted and do not stop the study.
    """
    children = np.random.SeedSequence(seed).spawn(config.replicates)
    _ = [asyncio.to_thread(_coverage_replicate, config, chain, child) for child in children]
    results = await asyncio.gather(*_, return_exceptions=True)

    completed = [r for r in results if not isinstance(r, BaseException)]
    failed = len(results) - len(completed)
    for r in results:
        if isinstance(r, BaseException):
            LOGGER.warning(f"Coverage replicate failed: {r!r}")
    if len(completed) == 0:
        raise ArithmeticError(f"All {failed} coverage replicates failed")

    truth = {f"beta_{j + 1}": b for j, b in enumerate(config.true_beta)}
    truth["sigma2"] = config.true_sigma2
    truth["nu"] = config.true_nu
    m = len(completed)
    parameters = {}
    for name, value in truth.items():
        covered = np.array([r["intervals"][name][0] for r in completed], dtype=float)
        widths = np.array([r["intervals"][name][1] for r in completed])
        rate = float(covered.mean())
        parameters[name] = ParameterCoverage(
            true_value=value,
            coverage=rate,
            se=math.sqrt(rate * (1.0 - rate) / m),
            mean_width=float(widths.mean()),
        )
        LOGGER.info(f"{name}: coverage {rate:.3f} +/- {parameters[name].se:.3f}")

    return CoverageReport(
        prior=config.prior,
        n=config.n,
        p=config.p,
        level=config.level,
        replicates=config.replicates,
        completed=m,
        failed=failed,
        parameters=parameters,
        nu_threshold=config.p / (config.n - config.p),
        mean_threshold_violation_rate=float(np.mean([r["violation"] for r in completed])),
    )


def cmd_coverage(run_config: dict) -> ExitCode:
    """Frequentist coverage of the equal tailed credible intervals."""
    config = CoverageConfig(**run_config["coverage"])
    chain = ChainConfig(**run_config["chain"])
    report = asyncio.run(coverage_study(config, chain, chain.seed))
    _write_json(report, _output_file(run_config, "coverage.json"))
    return ExitCode.SUCCESS


def divergence_frame(report: DivergenceReport) -> pd.DataFrame:
    """Long table (nu, c, classification, eps, value) of the growth curves."""
    rows = [
        {
            "nu": row.nu,
            "c": row.c,
            "classification": row.classification.value,
            "eps": point.eps,
            "value": point.value,
        }
        for row in report.evidence
        for point in row.growth
    ]
    return pd.DataFrame(rows, columns=["nu", "c", "classification", "eps", "value"])


def cmd_divergence_demo(run_config: dict) -> ExitCode:
    """Evidence table and growth curves of the truncated kernel integral."""
    config = DivergenceDemoConfig(**run_config["divergence_demo"])
    evidence = divergence_diagnostic(config.nu, config.n, config.p, config.a, r=config.r)
    report = DivergenceReport(
        n=config.n,
        p=config.p,
        a=config.a,
        critical_nu=critical_nu(config.a, config.n, config.p),
        r=config.r,
        evidence=evidence,
    )
    _write_json(report, _output_file(run_config, "divergence.json"))
    path = _output_file(run_config, "divergence.csv")
    divergence_frame(report).to_csv(path, index=False, float_format="%.17g")
    LOGGER.info(f"Wrote {path}")
    for row in evidence:
        print(f"nu={row.nu:<10.6g} c={row.c:<+10.4g} {row.classification.value:<11} {row.note}")
    return ExitCode.SUCCESS


COMMANDS = {
    "fit": cmd_fit,
    "audit": cmd_audit,
    "prior-curve": cmd_prior_curve,
    "coverage": cmd_coverage,
    "divergence-demo": cmd_divergence_demo,
}


def _float_list(value: str) -> list[float]:
    return [float(v) for v in value.split(",") if len(v.strip()) > 0]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tjeffreys",
        description="Objective Bayesian Student-t regression under Jeffreys priors.",
    )
    parser.add_argument("--config", help="run configuration TOML merged over the defaults")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--name", default="", help="run name, prefixes every output file")
    parser.add_argument("--rotate-logs", action="store_true", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    def chain_args(p: argparse.ArgumentParser):
        p.add_argument("--iters", dest="iterations", type=int)
        p.add_argument("--burn", dest="burn_in", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--nu-proposal-sd", dest="nu_proposal_sd", type=float)

    fit = sub.add_parser("fit", help="sample the posterior")
    fit.add_argument("--data")
    fit.add_argument("--prior", help="independence | jeffreys-rule | custom:<yaml>")
    fit.add_argument("--intercept", action="store_true", default=None)
    fit.add_argument("--nu-floor", dest="nu_floor", type=float)
    fit.add_argument("--chains", type=int)
    chain_args(fit)

    aud = sub.add_parser("audit", help="posterior propriety verdict")
    aud.add_argument("--data")
    aud.add_argument("--n", type=int)
    aud.add_argument("--p", type=int)
    aud.add_argument("--prior")
    aud.add_argument("--intercept", action="store_true", default=None)
    aud.add_argument("--nu-probe", dest="nu_probe", type=_float_list)

    curve = sub.add_parser("prior-curve", help="normalized nu-prior as CSV")
    curve.add_argument("--prior")
    curve.add_argument("--p", type=int)
    curve.add_argument("--nu-min", dest="nu_min", type=float)
    curve.add_argument("--nu-max", dest="nu_max", type=float)
    curve.add_argument("--steps", type=int)
    curve.add_argument("--quad-tol", dest="quad_tol", type=float)

    cov = sub.add_parser("coverage", help="coverage of the credible intervals")
    cov.add_argument("--n", type=int)
    cov.add_argument("--p", type=int)
    cov.add_argument("--true-beta", dest="true_beta", type=_float_list)
    cov.add_argument("--true-sigma2", dest="true_sigma2", type=float)
    cov.add_argument("--true-nu", dest="true_nu", type=float)
    cov.add_argument("--replicates", type=int)
    cov.add_argument("--level", type=float)
    chain_args(cov)

    demo = sub.add_parser("divergence-demo", help="growth of the truncated kernel integral")
    demo.add_argument("--n", type=int)
    demo.add_argument("--p", type=int)
    demo.add_argument("--a", type=float)
    demo.add_argument("--nu", type=_float_list)
    demo.add_argument("--r", type=float)
    return parser


_CHAIN_KEYS = ("iterations", "burn_in", "thin", "seed", "nu_proposal_sd", "nu_floor")


def apply_arguments(run_config: dict, args: argparse.Namespace) -> dict:
    """Copy command line flags that were given into the run configuration."""
    section = args.command.replace("-", "_")
    for key, value in vars(args).items():
        if value is None or key in ("command", "config", "out", "name", "rotate_logs"):
            continue
        if key in _CHAIN_KEYS:
            run_config["chain"][key] = value
        else:
            run_config[section][key] = value
    if getattr(args, "nu_floor", None) is not None:
        run_config["chain"]["allow_truncated_support"] = True
    if args.out is not None:
        run_config["run"]["output_path"] = args.out
    if args.rotate_logs is not None:
        run_config["rotate_logs"]["rotate_logs"] = True
    return run_config


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = None
    try:
        run_config = apply_arguments(read_user_config(args.config), args)
        run_name = args.name or run_config["run"]["name"] or args.command
        run_config = setup_output_path(run_config, run_name)
        handler = update_logger(
            run_config["logging"], rotating=run_config["rotate_logs"]["rotate_logs"]
        )
        LOGGER.info(f"Starting {args.command} run {run_config['run']['name']}")
        code = COMMANDS[args.command](run_config)
        LOGGER.info(f"Finished {args.command}")
    except Exception as err:
        code = exit_code_for(err)
        LOGGER.error(f"{args.command} failed ({code.name}): {err}")
        print(f"error: {err}", file=sys.stderr)
    finally:
        if handler is not None:
            LOGGER.removeHandler(handler)
            handler.close()
    return int(code)


if __name__ == "__main__":
    sys.exit(main())
