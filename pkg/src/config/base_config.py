"""Base configuration for the WAU-net desk engine."""

from typing import Optional

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings

load_dotenv()


class Settings(BaseSettings):
    """Process-level settings read from the environment (prefix WAUNET_)."""

    # Kernel parallelism
    threads: Optional[int] = Field(None, ge=1, description="Upper bound on BLAS/kernel threads")

    # Numerics
    default_dtype: str = Field("float32", pattern="^(float32|float64)$")

    # Phantom generation
    phantom_max_retries: int = Field(50, ge=1)

    # Gradient checking
    gradcheck_eps: float = Field(1e-4, gt=0)
    gradcheck_primitive_tol: float = Field(1e-5, gt=0)
    gradcheck_network_tol: float = Field(1e-4, gt=0)
    gradcheck_samples: int = Field(200, ge=1)

    # Logging Configuration
    log_level: str = Field("INFO")
    log_file: str = Field("waunet.log")
    log_dir: str = Field("logs")

    model_config = {
        "env_prefix": "WAUNET_",
        "env_file": ".env",
        "case_sensitive": False,
        "extra": "ignore",
    }


# Global settings instance
settings = Settings()
