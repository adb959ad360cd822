from functools import lru_cache
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# Load environment variables from .env file
load_dotenv()


class Settings(BaseSettings):
    """Process-level settings read from INTSEL_* environment variables"""

    model_config = SettingsConfigDict(env_prefix="INTSEL_", extra="ignore")

    # Default run config file, used when --config is not given
    config_path: Optional[Path] = Field(default=None, alias="INTSEL_CONFIG")
    workers: Optional[int] = Field(default=None, ge=1)
    log_level: str = "INFO"
    # Where the HTTP service looks for <kind>.ckpt.json checkpoints
    artifacts_dir: Path = Path("artifacts")


@lru_cache
def get_settings() -> Settings:
    return Settings()
