"""Configuration management using Pydantic settings."""

import logging
from pathlib import Path
from typing import Optional

from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from deep_arguing.data import DatasetSchema, SplitConfig
from deep_arguing.errors import ConfigurationError
from deep_arguing.semantics import SemanticsMode

logger = logging.getLogger(__name__)

# Get project root directory (where .env lives)
PROJECT_ROOT = Path(__file__).parent.parent
ENV_FILE = PROJECT_ROOT / ".env"


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=str(ENV_FILE), case_sensitive=False, extra="ignore", protected_namespaces=("settings_",)
    )

    # HTTP service
    api_host: str = "127.0.0.1"
    api_port: int = 8000
    api_debug: bool = False

    # Checkpoint served by the HTTP service
    model_path: str = "model.npz"

    # Logging
    log_level: str = "INFO"


class TrainConfig(BaseSettings):
    """
    Flat run configuration: training hyperparameters, seed and data schema.

    Read from keyword arguments and a key=value file only. Unknown keys are
    rejected; list values are written as JSON, e.g. ``numeric_columns=["age"]``.
    """

    model_config = SettingsConfigDict(env_file=None, case_sensitive=False, extra="forbid")

    # Optimisation
    lr: float = Field(0.003, gt=0)
    weight_decay: float = Field(1e-4, ge=0)
    epochs: int = Field(32, ge=1)
    batch_size: int = Field(64, ge=1)
    grad_max_norm: float = Field(3.0, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)

    # Loss coefficients
    lambda_delta: float = Field(1.0, ge=0)
    lambda_dag: float = Field(1e-4, ge=0)
    lambda_sp: float = Field(1e-4, ge=0)
    lambda_sp_prime: float = Field(1e-4, ge=0)
    reweight_classes: bool = True

    # Argumentation
    alpha: float = Field(10.0, gt=0)
    clusters_per_class: int = Field(5, ge=1)
    iterations: int = Field(5, ge=1)
    lse_temperature: float = Field(0.025, gt=0)
    semantics_mode: SemanticsMode = SemanticsMode.FOLDED

    # Architecture
    embedding_dim: int = Field(64, ge=1)
    extractor_widths: list[int] = Field(default_factory=lambda: [64, 64], min_length=1)
    head_hidden_widths: list[int] = Field(default_factory=lambda: [64])

    seed: int = 0

    # Data schema and splits
    label_column: str = "label"
    numeric_columns: list[str] = Field(default_factory=list)
    categorical_columns: list[str] = Field(default_factory=list)
    label_vocabulary: Optional[list[str]] = None
    test_path: Optional[Path] = None
    test_fraction: float = Field(0.2, gt=0, lt=1)
    val_fraction: float = Field(0.2, gt=0, lt=1)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls,
        init_settings,
        env_settings,
        dotenv_settings,
        file_secret_settings,
    ):
        """Ignore process environment; a run is defined by its file alone."""
        return (init_settings, dotenv_settings)

    @model_validator(mode="after")
    def _check_widths(self) -> "TrainConfig":
        if any(w < 1 for w in self.extractor_widths + self.head_hidden_widths):
            raise ValueError("layer widths must be positive")
        return self

    @property
    def dataset_schema(self) -> DatasetSchema:
        """Data schema view of this configuration."""
        return DatasetSchema(
            label_column=self.label_column,
            numeric_columns=self.numeric_columns,
            categorical_columns=self.categorical_columns,
            label_vocabulary=self.label_vocabulary,
        )

    @property
    def split_config(self) -> SplitConfig:
        """Split regime view of this configuration."""
        return SplitConfig(
            test_path=self.test_path,
            test_fraction=self.test_fraction,
            val_fraction=self.val_fraction,
        )


def load_train_config(path: Path | str) -> TrainConfig:
    """Read a run configuration file, rejecting unknown keys."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        config = TrainConfig(_env_file=str(path))
    except ValidationError as e:
        logger.error(f"Invalid config {path}: {e}")
        raise ConfigurationError(f"invalid config {path}: {e}") from e
    logger.info(f"Loaded run config from {path}")
    return config


# Global settings instance
settings = Settings()
