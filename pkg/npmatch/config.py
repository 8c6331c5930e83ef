# npmatch/config.py
"""
Training and run configuration.

TrainConfig holds every threshold, coefficient and schedule constant of the training loop.
RunConfigFile adds the dataset and output settings. Both are strict pydantic models; run
files are plain ``key=value`` documents read with python-dotenv.
"""

import io
import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from npmatch.errors import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = "runs"


class TrainConfig(BaseModel):
    """Desk-scale defaults; the benchmark values are available as presets."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    confidence_threshold: float = 0.95
    uncertainty_threshold: float = 0.4
    lambda_u: float = 1.0
    beta: float = 0.01
    num_samples: int = 10
    batch_size: int = 16
    unlabeled_ratio: int = 7
    lr: float = 0.03
    weight_decay: float = 5e-4
    momentum: float = 0.9
    grad_clip_norm: float = 1.0
    ema_momentum: float = 0.999
    total_iterations: int = 5000
    seed: int = 0
    uncertainty_kind: Literal["entropy", "variance"] = "entropy"
    bank_capacity: int = 256
    feature_dim: int = 32
    latent_dim: int = 32
    hidden_dim: int = 32
    log_interval: int = 100
    weak_sigma: float = 0.02
    strong_sigma: float = 0.15
    strong_dropout: float = 0.1

    @field_validator("confidence_threshold")
    @classmethod
    def _check_confidence(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("must lie in (0, 1]")
        return v

    @field_validator("uncertainty_threshold", "lr")
    @classmethod
    def _check_positive(cls, v: float) -> float:
        if v <= 0.0:
            raise ValueError("must be > 0")
        return v

    @field_validator("lambda_u", "beta", "weight_decay", "grad_clip_norm", "weak_sigma", "strong_sigma")
    @classmethod
    def _check_non_negative(cls, v: float) -> float:
        if v < 0.0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("momentum", "ema_momentum", "strong_dropout")
    @classmethod
    def _check_unit_interval(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("must lie in [0, 1)")
        return v

    @field_validator(
        "num_samples",
        "batch_size",
        "unlabeled_ratio",
        "total_iterations",
        "bank_capacity",
        "feature_dim",
        "latent_dim",
        "hidden_dim",
        "log_interval",
    )
    @classmethod
    def _check_count(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("batch_size")
    @classmethod
    def _check_splittable(cls, v: int) -> int:
        if v < 2:
            raise ValueError("must be >= 2 so the labeled batch splits into context and target")
        return v

    @field_validator("seed")
    @classmethod
    def _check_seed(cls, v: int) -> int:
        if v < 0:
            raise ValueError("must be >= 0")
        return v


class RunConfigFile(TrainConfig):
    """TrainConfig plus the dataset recipe and the output directory."""

    dataset: Literal["two_moons", "gaussian_blobs"] = "two_moons"
    n_samples: int = 1000
    noise: float = 0.1
    num_classes: int = 2
    blob_spread: float = 0.5
    blob_radius: float = 5.0
    labels_per_class: int = 3
    test_fraction: float = 0.2
    data_seed: int = 0
    out_dir: str = Field(default_factory=lambda: os.getenv("NPMATCH_OUT_DIR", DEFAULT_OUT_DIR))

    @field_validator("n_samples", "labels_per_class")
    @classmethod
    def _check_dataset_count(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("noise", "blob_spread", "blob_radius")
    @classmethod
    def _check_scale(cls, v: float) -> float:
        if v < 0.0:
            raise ValueError("must be >= 0")
        return v

    @field_validator("test_fraction")
    @classmethod
    def _check_fraction(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("must lie in [0, 1)")
        return v

    @model_validator(mode="after")
    def _check_classes(self) -> "RunConfigFile":
        if self.dataset == "two_moons" and self.num_classes != 2:
            raise ValueError("num_classes must be 2 for two_moons")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{name: getattr(self, name) for name in TrainConfig.model_fields})


# Hyperparameter overlays per benchmark; data and backbones are not carried over.
PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {},
    "cifar10": {
        "weight_decay": 5e-4,
        "batch_size": 64,
        "unlabeled_ratio": 7,
        "confidence_threshold": 0.95,
        "uncertainty_threshold": 0.4,
        "lambda_u": 1.0,
        "beta": 0.01,
        "ema_momentum": 0.999,
        "lr": 0.03,
        "num_samples": 10,
        "bank_capacity": 2560,
    },
    "cifar100": {
        "weight_decay": 1e-3,
        "batch_size": 64,
        "unlabeled_ratio": 7,
        "confidence_threshold": 0.95,
        "uncertainty_threshold": 0.4,
        "lambda_u": 1.0,
        "beta": 0.01,
        "ema_momentum": 0.999,
        "lr": 0.03,
        "num_samples": 10,
        "bank_capacity": 2560,
    },
    "stl10": {
        "weight_decay": 5e-4,
        "batch_size": 64,
        "unlabeled_ratio": 7,
        "confidence_threshold": 0.95,
        "uncertainty_threshold": 0.4,
        "lambda_u": 1.0,
        "beta": 0.01,
        "ema_momentum": 0.999,
        "lr": 0.03,
        "num_samples": 10,
        "bank_capacity": 2560,
    },
    "imagenet": {
        "weight_decay": 1e-4,
        "batch_size": 256,
        "unlabeled_ratio": 1,
        "confidence_threshold": 0.7,
        "uncertainty_threshold": 1.2,
        "lambda_u": 1.0,
        "beta": 0.01,
        "ema_momentum": 0.999,
        "lr": 0.05,
        "num_samples": 10,
        "bank_capacity": 2560,
    },
}


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse a key=value document (``#`` comments and blank lines allowed)."""
    values = dotenv_values(stream=io.StringIO(text), interpolate=False)
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"Config line '{key}' has no value", {"key": key})
    return dict(values)


def to_config_text(cfg: BaseModel) -> str:
    """One ``key=value`` line per field, in declaration order."""
    return "".join(f"{name}={getattr(cfg, name)}\n" for name in type(cfg).model_fields)


def _validate(values: Mapping[str, Any]) -> RunConfigFile:
    unknown = sorted(set(values) - set(RunConfigFile.model_fields))
    if unknown:
        raise ConfigError(f"Unknown config key '{unknown[0]}'", {"key": unknown[0], "unknown": unknown})
    try:
        return RunConfigFile.model_validate(dict(values))
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(f"Invalid value for '{key}': {first['msg']}", {"key": key}) from e


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    preset: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfigFile:
    """Built-in defaults < preset < config file < overrides (CLI flags and --set pairs)."""
    values: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset}'", {"key": "preset", "known": sorted(PRESETS)})
        values.update(PRESETS[preset])
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}", {"key": "config", "path": str(path)})
        values.update(parse_config_text(path.read_text()))
        logger.info(f"[config] loaded {path}")
    values.update(overrides or {})
    return _validate(values)


def parse_override(pair: str) -> Dict[str, str]:
    """Split a ``key=value`` override."""
    key, sep, value = pair.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"Override '{pair}' is not of the form key=value", {"key": pair})
    return {key: value.strip()}
