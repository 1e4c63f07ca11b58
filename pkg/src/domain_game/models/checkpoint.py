"""Versioned single-file checkpoint container."""

import logging
import os
from typing import Any, Dict, Tuple

import torch
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from domain_game.common.exceptions import CheckpointError
from domain_game.models.nets import DomainGameNets, NetConfig
from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_RETRIES = 3


@retry(
    retry=retry_if_exception_type(OSError),
    stop=stop_after_attempt(MAX_RETRIES),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
    reraise=True,
)
def _write(payload: Dict[str, Any], path: str) -> None:
    tmp_path = f"{path}.tmp"
    torch.save(payload, tmp_path)
    os.replace(tmp_path, path)


def save_checkpoint(payload: Dict[str, Any], path: str) -> str:
    """Write ``payload`` with the format version embedded.

    Raises:
        CheckpointError: when the file cannot be written after retries.
    """
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    payload = {**payload, "format_version": FORMAT_VERSION}
    try:
        _write(payload, path)
    except OSError as e:
        raise CheckpointError(title="Checkpoint write failed", detail=f"{path}: {e}")
    logger.debug(f"checkpoint written: {path}")
    return path


def read_checkpoint(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise CheckpointError(title="Checkpoint not found", detail=f"no checkpoint at {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(title="Checkpoint unreadable", detail=f"{path}: {type(e).__name__}: {e}")
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            title="Unsupported checkpoint version",
            detail=f"{path}: format_version={version}, expected {FORMAT_VERSION}",
        )
    return payload


def load_nets(path: str) -> Tuple[DomainGameNets, Dict[str, Any]]:
    """Restore the four networks (in eval mode) and return them with the raw payload."""
    payload = read_checkpoint(path)
    nets = DomainGameNets(NetConfig(**payload["net_config"]))
    nets.load_state_dict(payload["nets"])
    nets.eval()
    return nets, payload
