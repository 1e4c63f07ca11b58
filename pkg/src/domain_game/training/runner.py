"""Epoch loop over a run directory.

Layout of a run directory::

    config.snapshot     effective configuration (YAML)
    history.jsonl       one record per epoch
    ckpt/epoch_<n>.pt   full game state after epoch n
    ckpt/best.pt        copy of the best source-val epoch
    summary.json        best epoch, diagnostics, style separation, parameter counts
    metadata.json       wall-clock timestamps and library versions
"""

from __future__ import annotations

import contextlib
import datetime
import json
import logging
import os
import platform
import shutil
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional

import numpy as np
import torch
import yaml
from pydantic import BaseModel, ConfigDict
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from domain_game.common.configuration import configure_torch
from domain_game.common.exceptions import CheckpointError, NonFiniteLossError, RunDirectoryLockedError, ShapeMismatchError
from domain_game.data.synthdata import BenchmarkManifest, load_manifest, load_samples, load_windows
from domain_game.evaluation.metrics import evaluated_classes, nets_predictor, score_volume, select_best_checkpoint
from domain_game.models.checkpoint import save_checkpoint
from domain_game.models.nets import DomainGameNets, NetConfig
from domain_game.training.game import (
    GameState,
    TrainConfig,
    batches,
    feature_diagnostics,
    lr_at,
    style_separation,
    train_step,
)
from domain_game.utils.convert import dict_to_json_string, json_string_to_dict, to_builtin
from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

SNAPSHOT_FILENAME = "config.snapshot"
HISTORY_FILENAME = "history.jsonl"
SUMMARY_FILENAME = "summary.json"
METADATA_FILENAME = "metadata.json"
LOCK_FILENAME = ".lock"
CHECKPOINT_DIR = "ckpt"
BEST_CHECKPOINT = "best.pt"
POSTMORTEM_CHECKPOINT = "postmortem.pt"
SHUFFLE_STREAM = 3


class EpochRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epoch: int
    lr: float
    steps: int
    train: Dict[str, float]
    val_dice: float
    checkpoint: str


@dataclass
class TrainingResult:
    run_dir: str
    history: List[EpochRecord]
    best_epoch: int
    summary: Dict[str, Any] = field(default_factory=dict)

    @property
    def best_checkpoint(self) -> str:
        return os.path.join(self.run_dir, CHECKPOINT_DIR, BEST_CHECKPOINT)


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch}.pt"


@contextlib.contextmanager
def run_directory_lock(run_dir: str) -> Iterator[str]:
    """Hold an exclusive lock file for the lifetime of a run.

    Raises:
        RunDirectoryLockedError: when another process holds the lock.
    """
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, LOCK_FILENAME)
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunDirectoryLockedError(
            title="Run directory in use",
            detail=f"{run_dir} is locked by another run (remove {path} if that run is gone)",
        )
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(path)


@retry(
    retry=retry_if_exception_type(OSError),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=1),
    reraise=True,
)
def _write_file(path: str, text: str, mode: str = "w") -> None:
    with open(path, mode, encoding="utf-8") as handle:
        handle.write(text)


def _persist(path: str, text: str, epoch: Optional[int] = None, mode: str = "w") -> None:
    try:
        _write_file(path, text, mode)
    except OSError as e:
        where = f"epoch {epoch}: " if epoch is not None else ""
        raise CheckpointError(title="Run directory write failed", detail=f"{where}{path}: {e}")


def _save_state(state: GameState, path: str, epoch: int, extra: Optional[Dict[str, Any]] = None) -> None:
    try:
        save_checkpoint({**state.state_dict(), **(extra or {})}, path)
    except CheckpointError as e:
        raise CheckpointError(title=e.title, detail=f"epoch {epoch}: {e.detail}")


def write_snapshot(run_dir: str, snapshot: Dict[str, Any]) -> str:
    path = os.path.join(run_dir, SNAPSHOT_FILENAME)
    _persist(path, yaml.safe_dump(to_builtin(snapshot), sort_keys=True, default_flow_style=False))
    return path


def read_history(run_dir: str) -> List[EpochRecord]:
    with open(os.path.join(run_dir, HISTORY_FILENAME)) as handle:
        return [EpochRecord(**json_string_to_dict(line)) for line in handle if line.strip()]


def source_val_dice(state: GameState, val_samples, classes: List[int], batch_size: int) -> float:
    """Mean per-volume Dice on the source validation volumes, in [0, 1]."""
    predictor = nets_predictor(state.nets, batch_size)
    values = [score_volume(predictor(volume, labels, sid), labels, classes, sid).dice for volume, labels, sid in val_samples]
    return float(np.mean(values))


def target_style_separation(nets: DomainGameNets, manifest: BenchmarkManifest, data_dir: str) -> Dict[str, float]:
    """Domain-vector distance between the source-test windows and each target's test windows.

    Windows are matched by position; in a paired benchmark both sides show the same anatomy.
    """
    source_windows = load_windows(data_dir, manifest.splits[manifest.source_domain.domain_id]["test"])
    separation = {}
    for target in manifest.target_domains:
        target_windows = load_windows(data_dir, manifest.splits[target.domain_id]["test"])
        n = min(len(source_windows), len(target_windows))
        separation[target.domain_id] = style_separation(nets, source_windows[:n], target_windows[:n])
    return separation


def run_training(
    config: TrainConfig,
    net_config: NetConfig,
    data_dir: str,
    run_dir: str,
    manifest: Optional[BenchmarkManifest] = None,
    snapshot: Optional[Dict[str, Any]] = None,
) -> TrainingResult:
    """Train on the source-train windows, checkpointing and validating every epoch.

    Raises:
        RunDirectoryLockedError: if another run writes to ``run_dir``.
        ShapeMismatchError: if the networks do not fit the benchmark.
        NonFiniteLossError: after a post-mortem checkpoint has been written.
        CheckpointError: on disk failures, naming the epoch.
    """
    configure_torch(config.torch_num_threads, config.deterministic_algorithms)
    manifest = manifest or load_manifest(data_dir)
    if net_config.num_classes != manifest.num_classes or net_config.image_size != manifest.image_size:
        raise ShapeMismatchError(
            title="Model does not fit benchmark",
            detail=(
                f"expected num_classes={manifest.num_classes}, image_size={manifest.image_size}; "
                f"got num_classes={net_config.num_classes}, image_size={net_config.image_size}"
            ),
        )
    started = datetime.datetime.now(datetime.timezone.utc)
    with run_directory_lock(run_dir):
        ckpt_dir = os.path.join(run_dir, CHECKPOINT_DIR)
        os.makedirs(ckpt_dir, exist_ok=True)
        write_snapshot(run_dir, snapshot or {"model": net_config.model_dump(), "training": config.model_dump()})

        source_id = manifest.source_domain.domain_id
        train_windows = load_windows(data_dir, manifest.splits[source_id]["train"])
        val_ids = manifest.splits[source_id]["val"]
        val_samples = load_samples(data_dir, val_ids)
        val_windows = load_windows(data_dir, val_ids)
        classes = evaluated_classes(manifest.num_classes, manifest.source_domain)
        logger.info(f"training on {len(train_windows)} windows, validating on {len(val_samples)} volumes")

        state = GameState.create(net_config, config)
        initial_diagnostics = feature_diagnostics(state.nets, val_windows, seed=config.seed)

        history_path = os.path.join(run_dir, HISTORY_FILENAME)
        _persist(history_path, "")
        history: List[EpochRecord] = []
        for epoch in range(1, config.epochs + 1):
            lr = lr_at(epoch - 1, config)
            state.set_learning_rate(lr)
            shuffle = np.random.default_rng(np.random.SeedSequence([config.seed, epoch, SHUFFLE_STREAM]))
            step_metrics = []
            for batch in batches(train_windows, config.batch_size, shuffle):
                try:
                    state, metrics = train_step(state, batch, config)
                except NonFiniteLossError as e:
                    path = os.path.join(ckpt_dir, POSTMORTEM_CHECKPOINT)
                    _save_state(state, path, epoch, extra={"failure": {"term": e.term, "metrics": e.metrics}})
                    logger.error(f"epoch {epoch}: non-finite '{e.term}', state saved to {path}")
                    raise
                step_metrics.append(metrics.to_dict())
            state.epoch = epoch

            train_means = {k: float(np.mean([m[k] for m in step_metrics])) for k in step_metrics[0] if k != "t"}
            val_dice = source_val_dice(state, val_samples, classes, config.eval_batch_size)
            name = checkpoint_name(epoch)
            _save_state(state, os.path.join(ckpt_dir, name), epoch)
            record = EpochRecord(epoch=epoch, lr=lr, steps=len(step_metrics), train=train_means, val_dice=val_dice, checkpoint=name)
            _persist(history_path, dict_to_json_string(record.model_dump()) + "\n", epoch, mode="a")
            history.append(record)
            logger.info(
                f"epoch {epoch}/{config.epochs}: total={train_means['total']:.4f} "
                f"u_x={train_means['u_x_surrogate']:.4f} val_dice={val_dice:.4f} lr={lr:.2e}"
            )

        best_epoch = select_best_checkpoint([r.model_dump() for r in history])
        try:
            shutil.copyfile(os.path.join(ckpt_dir, checkpoint_name(best_epoch)), os.path.join(ckpt_dir, BEST_CHECKPOINT))
        except OSError as e:
            raise CheckpointError(title="Best checkpoint copy failed", detail=f"epoch {best_epoch}: {e}")

        summary = {
            "best_epoch": best_epoch,
            "best_checkpoint": checkpoint_name(best_epoch),
            "best_val_dice": history[best_epoch - 1].val_dice,
            "initial_diagnostics": initial_diagnostics,
            "final_diagnostics": feature_diagnostics(state.nets, val_windows, seed=config.seed),
            "style_separation": target_style_separation(state.nets, manifest, data_dir),
            "paired_targets": manifest.paired_targets,
            "parameters": state.nets.parameter_report(),
        }
        _persist(os.path.join(run_dir, SUMMARY_FILENAME), json.dumps(to_builtin(summary), indent=2, sort_keys=True) + "\n")
        metadata = {
            "started": started.isoformat(),
            "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "python": platform.python_version(),
            "torch": torch.__version__,
            "numpy": np.__version__,
        }
        _persist(os.path.join(run_dir, METADATA_FILENAME), json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    logger.info(f"best epoch {best_epoch} (val dice {summary['best_val_dice']:.4f}) in {run_dir}")
    return TrainingResult(run_dir=run_dir, history=history, best_epoch=best_epoch, summary=summary)
