# logging_config.py
import os
import logging
import logging.config
from copy import deepcopy

import colorlog  # noqa: F401  referenced by the "()" factory below


LOGGING_FILE_PATH = os.environ.get("DOMAIN_GAME_LOG_FILE", "")

LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "colored": {
            "()": "colorlog.ColoredFormatter",
            "format": "%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            "log_colors": {
                "DEBUG": "cyan",
                "INFO": "green",
                "WARNING": "yellow",
                "ERROR": "red",
                "CRITICAL": "red,bg_white",
            },
        },
        "standard": {"format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s"},
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "colored",
            "level": "INFO",
        },
    },
    "loggers": {
        "": {  # root logger
            "handlers": ["console"],
            "level": "INFO",
            "propagate": True,
        },
        "domain_game": {
            "handlers": ["console"],
            "level": "DEBUG",
            "propagate": False,
        },
    },
}

_configured = False


def build_logging_config(log_file: str = LOGGING_FILE_PATH, verbose: bool = False) -> dict:
    """Return a logging config, adding a file handler when a log file is requested."""
    config = deepcopy(LOGGING_CONFIG)
    if verbose:
        config["handlers"]["console"]["level"] = "DEBUG"
    if log_file:
        config["handlers"]["file"] = {
            "class": "logging.FileHandler",
            "filename": log_file,
            "formatter": "standard",
            "level": "DEBUG",
        }
        for logger_config in config["loggers"].values():
            logger_config["handlers"].append("file")
    return config


def setup_logging(verbose: bool = False, force: bool = False):
    global _configured
    if _configured and not force:
        return
    logging.config.dictConfig(build_logging_config(verbose=verbose))
    _configured = True
