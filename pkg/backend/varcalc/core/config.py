from typing import List
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings."""

    # Project Settings
    PROJECT_NAME: str = "varcalc"
    SCHEMA_VERSION: int = 1
    LOG_LEVEL: str = "WARNING"

    # Tolerances
    TAU_ACT: float = 1e-9  # activity of max/min/abs arguments
    TOL_LP: float = 1e-9  # LP feasibility
    TOL_GEOM: float = 1e-8  # canonicalization and set membership
    TOL_ARG: float = 1e-6  # argmin membership on objective values

    # Geometry limits
    R_CONE: float = 1e6
    MAX_HULL_DIM: int = 4
    MAX_VAR_DIM: int = 8
    MAX_LP_VARS: int = 512
    BRANCH_CAP: int = 4096
    HAUSDORFF_DIRS: int = 64

    # Sampling defaults
    SAMPLE_RADII: List[float] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
    DIRS_PER_RADIUS: int = 256
    SEED: int = 0

    # Value function grids
    GRID_RESOLUTION: int = 401
    MAX_GRID_POINTS: int = 2_000_000
    STENCIL_RADIUS: float = 0.1
    STENCIL_COUNT: int = 4

    # Bilevel
    KAPPA_GRID: List[float] = [float(2 ** k) for k in range(21)]
    LIPSCHITZ_LIKE_MAX_RATIO: float = 1e3

    model_config = SettingsConfigDict(
        case_sensitive=True,
        env_file=".env",
        env_prefix="VARCALC_"
    )

settings = Settings()
