"""Flat key=value experiment configuration files."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from pydantic import ValidationError as PydanticValidationError

from gaitadapt.errors.exceptions import ConfigError
from gaitadapt.schemas.training import LossWeights, TrainConfig

_LIST_KEYS = {"lr_milestones", "adam_betas"}
_WEIGHT_PREFIX = "weight_"


def _split_list(key: str, raw: str) -> list[str]:
    items = [item.strip() for item in raw.split(",")]
    if raw.strip() == "":
        return []
    if any(item == "" for item in items):
        raise ConfigError(f"Malformed list for '{key}': {raw!r}", key=key)
    return items


def parse_train_config(values: dict[str, str | None]) -> TrainConfig:
    """
    Build a TrainConfig from flat string values.

    Raises ConfigError naming the first offending key.
    """
    known = set(TrainConfig.model_fields) - {"loss_weights"}
    weight_fields = set(LossWeights.model_fields)

    kwargs: dict[str, Any] = {}
    weights: dict[str, str] = {}
    for raw_key, raw_value in values.items():
        key = raw_key.strip().lower()
        value = (raw_value or "").strip()
        if key.startswith(_WEIGHT_PREFIX):
            component = key[len(_WEIGHT_PREFIX) :]
            if component not in weight_fields:
                raise ConfigError(f"Unknown config key: {raw_key}", key=raw_key)
            weights[component] = value
        elif key in _LIST_KEYS:
            kwargs[key] = _split_list(key, value)
        elif key in known:
            kwargs[key] = value if value != "" else None
        else:
            raise ConfigError(f"Unknown config key: {raw_key}", key=raw_key)

    # Empty scalars fall back to defaults
    kwargs = {k: v for k, v in kwargs.items() if v is not None}

    try:
        if weights:
            kwargs["loss_weights"] = LossWeights.model_validate(weights)
        return TrainConfig.model_validate(kwargs)
    except PydanticValidationError as e:
        first = e.errors()[0]
        loc = first.get("loc", ())
        key = str(loc[0]) if loc else None
        if key is None:
            # Cross-field checks carry no location; name the first key their message mentions
            key = next((k for k in kwargs if k in str(first.get("msg", ""))), None)
        if key is not None and key in weight_fields and "loss_weights" not in loc:
            key = f"{_WEIGHT_PREFIX}{key}"
        raise ConfigError(f"Invalid config value for '{key}': {first.get('msg')}", key=key) from e


def load_train_config(path: Path) -> TrainConfig:
    """Load and validate a flat key=value config file."""
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    config = parse_train_config(dotenv_values(path))
    if config.stream_dir is not None and not config.stream_dir.is_absolute():
        config = config.model_copy(update={"stream_dir": (path.parent / config.stream_dir)})
    return config
