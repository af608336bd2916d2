from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_LEVELS = ("error", "info", "debug")


class Settings(BaseSettings):
    """Process settings loaded from ABC_* environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="ABC_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Project Info
    PROJECT_NAME: str = "abc-embed"
    VERSION: str = "1.0.0"

    # Logging
    LOG: str = "info"

    # Default locations used by run_pipeline.sh
    DATA_DIR: str = "data"
    RUNS_DIR: str = "runs"

    # Documented full-scale preset; never loaded unless --full-scale is passed
    FULL_SCALE_CONFIG: str | None = None

    # Embedding batch used for no-grad encodes (scoring, eval, stage-2 candidates)
    EMBED_BATCH_SIZE: int = 64

    @field_validator("LOG", mode="before")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        """Accept any casing; reject unknown levels."""
        level = str(v).strip().lower()
        if level not in LOG_LEVELS:
            raise ValueError(f"ABC_LOG must be one of {', '.join(LOG_LEVELS)}")
        return level


settings = Settings()
