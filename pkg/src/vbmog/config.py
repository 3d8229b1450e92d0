"""Run configuration: a YAML file validated against a pydantic schema."""
from __future__ import annotations

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .adaptive import AdaptiveConfig

BUNDLED_DIR = Path(__file__).parent / "configs"


class ConfigError(ValueError):
    """Raised for unreadable files and schema violations."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AdaptiveSettings(_Strict):
    S0: int = Field(4, ge=1)
    delta_S: int = Field(3, ge=1)
    alpha: float = Field(10.0, gt=0)
    q_min: float = Field(1e-3, gt=0, lt=1)
    d_min: float = Field(0.01, gt=0)
    L_max: int = Field(3, ge=1)
    I_max: float = Field(0.01, gt=0)
    d_theta_policy: Literal["adaptive", "fixed"] = "adaptive"
    d_theta_max: int = Field(20, ge=1)
    inner_rtol: float = Field(1e-6, gt=0)
    inner_max_sweeps: int = Field(100, ge=1)
    mu_rtol: float = Field(1e-5, gt=0)
    mu_max_steps: int = Field(50, ge=1)
    tau_rtol: float = Field(1e-3, gt=0)
    max_outer: int = Field(20, ge=1)
    stiefel_iters: int = Field(30, ge=1)
    max_attempts: int = Field(100, ge=1)


class PriorSettings(_Strict):
    a0: float = Field(0.0, ge=0)
    b0: float = Field(0.0, ge=0)
    lam0_first: float = Field(1.0, gt=0)
    a_phi: float = Field(0.0, ge=0)
    b_phi: float = Field(0.0, ge=0)
    b_floor: float = Field(1e-12, gt=0)
    mu_precision: float = Field(1e-10, gt=0)


class ToyScenario(_Strict):
    y_hat: float = 0.45
    init_std: float = Field(1.0, gt=0)


class InclusionSpec(_Strict):
    shape: Literal["circle", "ellipse", "rectangle"]
    center: tuple[float, float]
    radii: tuple[float, ...] = Field(min_length=1, max_length=2)
    modulus: float = Field(gt=0)


class FemScenario(_Strict):
    nx: int = Field(ge=1)
    ny: int = Field(ge=1)
    lx: float = Field(50.0, gt=0)
    ly: float = Field(50.0, gt=0)
    refine: int = Field(1, ge=1)
    nu: float = Field(0.3, gt=0, lt=0.5)
    traction: tuple[float, float] = (0.0, -100.0)
    background: float = Field(10000.0, gt=0)
    inclusions: list[InclusionSpec] = Field(default_factory=list)
    snr: float = Field(gt=0)
    half: bool = False
    init_log_modulus: float = 9.0
    init_perturbation: float = Field(0.1, gt=0)
    init_snr: float | None = Field(1000.0, gt=0)
    newton_tol: float = Field(1e-10, gt=0)


class ValidationSettings(_Strict):
    M: int = Field(1000, ge=0)
    mcmc_steps: int = Field(0, ge=0)
    mcmc_std: float = Field(0.35, gt=0)
    density_grid: int = Field(2001, ge=1000)


class RunConfig(_Strict):
    """Validated run description."""

    model: Literal["toy", "fem"]
    seed: int = Field(0, ge=0)
    output_dir: str = "runs/out"
    workers: int = Field(1, ge=1)
    adaptive: AdaptiveSettings = Field(default_factory=AdaptiveSettings)
    prior: PriorSettings = Field(default_factory=PriorSettings)
    toy: ToyScenario | None = None
    fem: FemScenario | None = None
    validation: ValidationSettings = Field(default_factory=ValidationSettings)

    @model_validator(mode="after")
    def _scenario_present(self):
        if self.model == "toy" and self.toy is None:
            self.toy = ToyScenario()
        if self.model == "fem" and self.fem is None:
            raise ValueError("field 'fem' is required when model is 'fem'")
        return self

    def adaptive_config(self, seed: int) -> AdaptiveConfig:
        return AdaptiveConfig(seed=seed, lam0_first=self.prior.lam0_first, workers=self.workers,
                              **self.adaptive.model_dump())


def _format_errors(exc: ValidationError):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc


def resolve_config_path(name) -> Path:
    """A file path, or the stem of a bundled config such as ``toy``."""
    p = Path(name)
    if p.exists():
        return p
    bundled = BUNDLED_DIR / f"{name}.yaml"
    if bundled.exists():
        return bundled
    raise ConfigError(f"config file not found: {name}")


def load_config(path) -> RunConfig:
    p = resolve_config_path(path)
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return parse_config(data)


def bundled_configs():
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.yaml"))
