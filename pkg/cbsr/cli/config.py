"""Validated configuration of a command line run."""

import json
from pathlib import Path
from typing import Any, Literal, Self

from pydantic import BaseModel, ConfigDict, Field, model_validator

from cbsr.core.errors import ConfigError
from cbsr.enums.design import NormCLMode, OutcomeModelKind, SimDesign
from cbsr.enums.feature_kind import FeatureKind
from cbsr.enums.fitter_kind import FitterKind
from cbsr.enums.kernel_kind import KernelKind
from cbsr.enums.penalty_norm import PenaltyNorm
from cbsr.estimation.pipeline import MethodConfig
from cbsr.fitting.kernel import Kernel
from cbsr.models.feature_map import FeatureMap
from cbsr.simulate.generators import SimSpec

type Command = Literal["fit", "weights", "estimate", "diagnose", "simulate"]
type Preset = Literal["highdim", "kernels"]


def parse_kernel(text: str) -> Kernel:
    """Parse ``kind`` or ``kind:parameter``, e.g. ``laplace:0.1`` or ``polynomial:3``.

    The parameter is sigma for gaussian and laplace kernels and the degree for
    polynomial kernels.

    Args:
        text: Kernel label

    Returns:
        The kernel

    Raises:
        ConfigError: If the label cannot be parsed
    """
    kind, _, param = text.strip().lower().partition(":")
    try:
        kernel_kind = KernelKind(kind)
        if not param:
            return Kernel(kind=kernel_kind)
        if kernel_kind is KernelKind.POLYNOMIAL:
            return Kernel(kind=kernel_kind, degree=int(param))
        return Kernel(kind=kernel_kind, sigma=float(param))
    except ValueError:
        raise ConfigError(f"Invalid kernel [{text}], expected kind or kind:parameter") from None


class RunConfig(BaseModel):
    """Every option of a run; the resolved instance is echoed into each report."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    command: Command = Field(description="Subcommand")
    input: Path | None = Field(description="Input CSV", default=None)
    treatment_col: str = Field(description="Treatment column", default="t")
    outcome_col: str | None = Field(description="Outcome column", default=None)
    estimand: str = Field(description="ate, att, atc, owate or custom:a,b", default="att")
    fitter: FitterKind = Field(description="Propensity fitter", default=FitterKind.GLM)
    lambda_: float | None = Field(description="Penalty level", default=None, gt=0, alias="lambda")
    norm: PenaltyNorm | None = Field(description="Penalty norm, implied by l1/l2", default=None)
    kernel: KernelKind | None = Field(description="Kernel of rkhs fits", default=None)
    sigma: float = Field(description="Kernel inverse bandwidth", default=1.0, gt=0)
    degree: int = Field(description="Polynomial kernel degree", default=2, ge=1)
    nu: float = Field(description="Boosting shrinkage", default=0.1, gt=0, le=1)
    depth: int = Field(description="Boosting tree depth", default=1, ge=1, le=3)
    trees: int = Field(description="Boosting iterations", default=100, ge=0)
    cv_target: float | None = Field(description="Target CV of the weights", default=None, gt=0)
    k_max: int = Field(description="Stepwise columns to add", default=4, ge=0)
    features: FeatureKind = Field(
        description="Feature expansion", default=FeatureKind.RAW_INTERCEPT
    )
    feature_degree: int = Field(description="Degree of polynomial features", default=1, ge=1)
    aipw: bool = Field(description="Augment with an outcome regression", default=False)
    outcome_model: OutcomeModelKind | None = Field(
        description="Outcome regression for --aipw", default=None
    )
    split: float | None = Field(
        description="Share of units used to fit the outcome regression", default=None, gt=0, lt=1
    )
    level: float = Field(description="Interval coverage level", default=0.95, gt=0, lt=1)
    norm_cl: float | None = Field(description="Outcome norm limit", default=None, ge=0)
    norm_cl_mode: NormCLMode | None = Field(description="Source of the norm limit", default=None)
    seed: int = Field(description="Random seed", default=0)
    out: Path | None = Field(description="Output file, stdout when omitted", default=None)

    design: SimDesign | None = Field(description="Simulation design", default=None)
    n: int = Field(description="Simulated sample size", default=1000, ge=10)
    d: int | None = Field(description="Simulated dimension", default=None, ge=1)
    rho: float = Field(description="Propensity strength (highdim)", default=1.0, ge=0)
    s_t: int = Field(description="Propensity sparsity (highdim)", default=5, ge=1)
    s_y: int = Field(description="Outcome sparsity (highdim)", default=5, ge=1)
    noise: float | None = Field(description="Outcome noise SD", default=None, ge=0)
    f_kernel: str = Field(description="Propensity GP kernel (gp_lowdim)", default="polynomial:1")
    g_kernel: str = Field(description="Outcome GP kernel (gp_lowdim)", default="laplace:0.1")
    replicates: int = Field(description="Simulation replicates", default=2, ge=2)
    preset: Preset | None = Field(description="Method set for simulate", default=None)

    @model_validator(mode="after")
    def validate_command_options(self) -> Self:
        """Validate that options fit the command and each other.

        Returns:
            The validated model instance

        Raises:
            ValueError: If the configuration is inconsistent
        """
        if self.command == "simulate":
            if self.design is None:
                raise ValueError("simulate requires --design")
        else:
            if self.input is None:
                raise ValueError(f"{self.command} requires --input")
            if self.fitter is FitterKind.ORACLE:
                raise ValueError("the oracle fitter needs simulated data")
            if self.norm_cl_mode is NormCLMode.ORACLE:
                raise ValueError("norm_cl_mode oracle is only valid under simulate")
        if self.command == "estimate" and self.outcome_col is None:
            raise ValueError("estimate requires --outcome-col")

        if self.fitter is FitterKind.RKHS and self.kernel is None:
            raise ValueError("fitter rkhs requires --kernel")
        if self.norm is not None:
            implied = {FitterKind.L1: PenaltyNorm.L1, FitterKind.L2: PenaltyNorm.L2}
            if implied.get(self.fitter) is not self.norm:
                raise ValueError(
                    f"--norm {self.norm.value} does not match fitter {self.fitter.value}"
                )
        if self.aipw and self.outcome_model is None:
            raise ValueError("--aipw requires --outcome-model")
        if self.outcome_model is not None and not self.aipw:
            raise ValueError("--outcome-model is only used with --aipw")
        if self.split is not None and not self.aipw:
            raise ValueError("--split applies to outcome-adjusted estimates only")
        if self.norm_cl_mode is NormCLMode.CONSTANT and self.norm_cl is None:
            raise ValueError("norm_cl_mode constant requires --norm-cl")
        if self.norm_cl_mode is NormCLMode.PLUGIN and self.norm_cl is not None:
            raise ValueError("norm_cl_mode plugin estimates the norm limit; drop --norm-cl")
        if self.preset is not None and self.command != "simulate":
            raise ValueError("--preset applies to simulate only")

        return self

    @classmethod
    def from_json(cls, file_path: str | Path, **overrides: Any) -> Self:
        """Read a configuration echoed by an earlier run.

        Args:
            file_path: JSON file holding the configuration, or a report embedding it
                under ``config``
            **overrides: Values replacing those in the file

        Returns:
            The configuration
        """
        with open(Path(file_path), encoding="utf-8") as f:
            data = json.load(f)
        if "config" in data and "command" not in data:
            data = data["config"]
        return cls.model_validate({**data, **overrides})

    def echo(self) -> dict[str, Any]:
        """JSON-ready configuration, seed included, in field order."""
        return self.model_dump(mode="json", by_alias=True)

    @property
    def rkhs_kernel(self) -> Kernel | None:
        """Kernel of the propensity fit."""
        if self.kernel is None:
            return None
        return Kernel(kind=self.kernel, sigma=self.sigma, degree=self.degree)

    def feature_map(self) -> FeatureMap:
        """Design declared by --features."""
        if self.features is FeatureKind.POLYNOMIAL:
            return FeatureMap(kind=self.features, degree=self.feature_degree)
        if self.feature_degree != 1:
            raise ConfigError("--feature-degree applies to polynomial features only")
        return FeatureMap(kind=self.features)

    def method(self) -> MethodConfig:
        """The method described by the fitter options.

        Raises:
            ConfigError: If the fitter options are inconsistent
        """
        try:
            return MethodConfig(
                fitter=self.fitter,
                estimand=self.estimand,
                lambda_=self.lambda_,
                cv_target=self.cv_target,
                kernel=self.rkhs_kernel,
                k_max=self.k_max,
                depth=self.depth,
                n_trees=self.trees,
                shrinkage=self.nu,
                outcome_model=self.outcome_model if self.aipw else None,
                features=self.feature_map(),
            )
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def sim_spec(self) -> SimSpec:
        """The simulation cell.

        Raises:
            ConfigError: If the design parameters are invalid
        """
        if self.design is None:
            raise ConfigError("simulate requires --design")
        options: dict[str, Any] = {"design": self.design, "n": self.n}
        match self.design:
            case SimDesign.KANG_SCHAFER:
                options["d"] = 4
            case SimDesign.GP_LOWDIM:
                options.update(
                    d=self.d or 5,
                    kernel_f=parse_kernel(self.f_kernel),
                    kernel_g=parse_kernel(self.g_kernel),
                    sigma=1.0 if self.noise is None else self.noise,
                )
            case SimDesign.HIGHDIM:
                options.update(
                    d=self.d or 100,
                    rho=self.rho,
                    s_t=self.s_t,
                    s_y=self.s_y,
                    sigma=5.0 if self.noise is None else self.noise,
                )
        try:
            return SimSpec(**options)
        except ValueError as e:
            raise ConfigError(str(e)) from None
