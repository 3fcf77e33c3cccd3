"""Centralized runtime settings loading."""

import os
from dataclasses import dataclass

from dotenv import load_dotenv


@dataclass(frozen=True)
class Config:
    """Process-level runtime settings."""

    # Logging
    log_level: str

    # Compute
    num_threads: int
    device: str
    eval_batch_size: int

    # Run directory locking
    lock_timeout_seconds: float
    lock_poll_seconds: float


def _get_optional_env(key: str, default: str) -> str:
    """Get optional environment variable with default."""
    value = os.getenv(key)
    return value.strip() if value else default


def load_config() -> Config:
    """Load and validate configuration from environment."""
    load_dotenv()

    eval_batch = int(_get_optional_env("GAITADAPT_EVAL_BATCH", "64"))
    if eval_batch < 1:
        raise ValueError("GAITADAPT_EVAL_BATCH must be a positive integer")

    return Config(
        log_level=_get_optional_env("GAITADAPT_LOG_LEVEL", "INFO").upper(),
        num_threads=int(_get_optional_env("GAITADAPT_NUM_THREADS", "0")),
        device=_get_optional_env("GAITADAPT_DEVICE", "cpu"),
        eval_batch_size=eval_batch,
        lock_timeout_seconds=float(_get_optional_env("GAITADAPT_LOCK_TIMEOUT", "10")),
        lock_poll_seconds=float(_get_optional_env("GAITADAPT_LOCK_POLL", "0.5")),
    )


# Singleton config instance (lazy loaded)
_config: Config | None = None


def get_config() -> Config:
    """Get the configuration singleton."""
    global _config
    if _config is None:
        _config = load_config()
    return _config


def reset_config() -> None:
    """Reset config singleton (useful for testing)."""
    global _config
    _config = None
