"""Settings."""

from functools import lru_cache
from pathlib import Path

from pydantic import field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """heavytail settings"""

    debug: bool = False
    jobs: int = 1

    # explicit Nd x Nd matrices are only built up to this size
    dense_cap: int = 4096

    n_mc: int = 200_000
    n_mc_spectral: int = 20_000
    quad_epsabs: float = 1e-8
    quad_epsrel: float = 1e-6
    root_tol: float = 1e-4
    s_max: float = 64.0

    overflow_guard: float = 1e12
    min_samples: int = 400
    eig_tol: float = 1e-9
    delta_tol: float = 1e-12

    output_dir: Path = Path("out")

    model_config = {
        "env_prefix": "HEAVYTAIL_",
        "env_file": ".env",
        "extra": "allow",
    }

    @field_validator("jobs", "dense_cap", "n_mc", "n_mc_spectral", "min_samples")
    def positive_count(cls, v):
        """Counts must be positive."""
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator(
        "quad_epsabs",
        "quad_epsrel",
        "root_tol",
        "s_max",
        "overflow_guard",
        "eig_tol",
        "delta_tol",
    )
    def positive_tolerance(cls, v):
        """Tolerances and caps must be positive."""
        if not v > 0:
            raise ValueError("must be > 0")
        return v


@lru_cache
def get_settings() -> Settings:
    """Process-wide settings."""
    return Settings()
