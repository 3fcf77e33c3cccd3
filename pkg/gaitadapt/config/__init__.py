"""Configuration module."""

from gaitadapt.config.loader import load_train_config, parse_train_config
from gaitadapt.config.settings import get_config, reset_config

__all__ = ["get_config", "reset_config", "load_train_config", "parse_train_config"]
