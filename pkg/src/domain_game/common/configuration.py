"""Module configuration."""

import logging
from functools import lru_cache
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict

from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)


class DomainGameSettings(BaseSettings):
    """Process-wide settings read from ``DOMAIN_GAME_*`` environment variables.

    Only the data root is read from the environment; every parameter that can
    change a result lives in the run configuration file and its snapshot.
    """

    model_config = SettingsConfigDict(env_prefix="DOMAIN_GAME_", frozen=True)

    data_root: Optional[str] = None

    @staticmethod
    @lru_cache(maxsize=None)
    def get_instance() -> "DomainGameSettings":
        return DomainGameSettings()


def configure_torch(num_threads: int = 1, deterministic: bool = True) -> None:
    """Apply the reproducibility switches of a run configuration to torch."""
    import torch

    if num_threads > 0:
        torch.set_num_threads(num_threads)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)
    logger.debug(f"torch threads={torch.get_num_threads()} deterministic={deterministic}")


def resolve_data_root(explicit: Optional[str]) -> Optional[str]:
    """Pick the explicit data path, falling back to ``DOMAIN_GAME_DATA_ROOT``."""
    if explicit:
        return explicit
    return DomainGameSettings.get_instance().data_root
