"""Solver configuration for cbsr."""

import json
import os
from functools import lru_cache
from pathlib import Path
from typing import Self

from pydantic import Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class SolverSettings(BaseSettings):
    """Numerical settings shared by every fitter.

    Values can be overridden through ``CBSR_*`` environment variables, e.g.
    ``CBSR_THREADS=4`` caps parallelism.
    """

    model_config = SettingsConfigDict(env_prefix="CBSR_", extra="ignore")

    tol_grad: float = Field(
        description="Gradient sup-norm tolerance, relative to each column's scale",
        default=1e-11,
        gt=0,
    )
    max_iter: int = Field(description="Maximum Newton iterations", default=100, ge=1)
    armijo: float = Field(description="Armijo sufficient increase constant", default=1e-4, gt=0)
    max_halvings: int = Field(description="Maximum step halvings per line search", default=60)
    hessian_jitter: float = Field(
        description="Initial ridge added when the Hessian factorization fails", default=1e-10
    )
    separation_bound: float = Field(
        description="Sup-norm of standardized coefficients declaring divergence", default=30.0
    )
    kernel_jitter: float = Field(
        description="Gram matrix jitter, relative to its mean diagonal", default=1e-8
    )
    prox_max_iter: int = Field(
        description="Maximum proximal gradient iterations for the lasso penalty", default=20000
    )
    threads: int = Field(
        description="Worker threads for concurrent fits and replicates",
        default_factory=lambda: os.cpu_count() or 1,
    )

    @model_validator(mode="after")
    def validate_limits(self) -> Self:
        """Validate solver limits.

        Returns:
            The validated model instance

        Raises:
            ValueError: If a limit is not usable
        """
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.max_halvings < 1:
            raise ValueError("max_halvings must be at least 1")
        if self.separation_bound <= 0:
            raise ValueError("separation_bound must be positive")

        return self

    @classmethod
    def from_json(cls, file_path: str = "cbsr.json") -> Self:
        """Read the settings from a JSON file.

        Args:
            file_path: The path to the JSON file

        Returns:
            SolverSettings: The settings instance
        """
        config_file = Path(file_path)
        if not config_file.exists():
            # Defaults (plus environment) when there is no file
            return cls()

        with open(config_file, encoding="utf-8") as f:
            data = json.load(f)

        return cls(**data)

    def save(self, file_path: str = "cbsr.json") -> None:
        """Save the settings to a JSON file.

        Args:
            file_path: The path to the JSON file
        """
        with open(Path(file_path), "w", encoding="utf-8") as f:
            json.dump(self.model_dump(mode="json"), f, indent=2)


@lru_cache
def get_settings() -> SolverSettings:
    """Get or create the solver settings singleton.

    Returns:
        SolverSettings: The solver settings instance.
    """
    return SolverSettings()


def resolve(settings: SolverSettings | None) -> SolverSettings:
    """Return the explicit settings or the process-wide singleton.

    Args:
        settings: Settings passed by the caller, if any

    Returns:
        The settings to use
    """
    return settings if settings is not None else get_settings()
