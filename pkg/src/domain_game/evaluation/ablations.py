"""Registered ablations, the single-encoder control baseline and the ablation suite."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd

from domain_game.common.exceptions import DuplicateRegistration, InvalidArgumentError
from domain_game.evaluation.metrics import cross_domain_report, write_text
from domain_game.models.nets import NetConfig
from domain_game.training.game import TrainConfig
from domain_game.training.runner import TrainingResult, run_training
from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

BENCHMARK_ROW = "benchmark"
DEFAULT_SEEDS = (0, 1, 2)


class AblationTypes(str, Enum):
    DOMAIN_ENCODER = "domain-encoder"
    SPACE_CONSTRAINT = "space-constraint"
    ROTATION = "rotation"
    FLIP = "flip"


@dataclass
class AblationVariant:
    name: str
    label: str
    apply: Callable[[TrainConfig], TrainConfig]


class RegistryDict(Dict[str, AblationVariant]):
    """Dict that raises when reassigning an existing key."""

    def __setitem__(self, key, value):
        if self.__contains__(key):
            raise DuplicateRegistration(
                title="Ablation exists",
                detail=f"ablation '{key}' was already registered and would override another variant.",
            )
        super().__setitem__(key, value)


class AblationRegistry:
    """Ablations keyed by their command-line name, in registration order."""

    variants: RegistryDict = RegistryDict()

    @classmethod
    def register(cls, name: str, label: str):
        def decorator(apply: Callable[[TrainConfig], TrainConfig]):
            cls.variants[name] = AblationVariant(name=name, label=label, apply=apply)
            return apply

        return decorator

    @classmethod
    def get(cls, name: str) -> AblationVariant:
        try:
            return cls.variants[name]
        except KeyError:
            raise InvalidArgumentError(
                title="Unknown ablation", detail=f"'{name}' is not one of {cls.list_names()}"
            )

    @classmethod
    def list_names(cls) -> List[str]:
        return list(cls.variants)


@AblationRegistry.register(AblationTypes.DOMAIN_ENCODER.value, "w/o domain encoder")
def _without_domain_encoder(config: TrainConfig) -> TrainConfig:
    return config.model_copy(update={"disable_domain_encoder": True})


@AblationRegistry.register(AblationTypes.SPACE_CONSTRAINT.value, "w/o space constraint")
def _without_space_constraint(config: TrainConfig) -> TrainConfig:
    return config.model_copy(update={"disable_space_constraint": True})


@AblationRegistry.register(AblationTypes.ROTATION.value, "w/o rotation")
def _without_rotation(config: TrainConfig) -> TrainConfig:
    return config.model_copy(update={"enable_rotation": False})


@AblationRegistry.register(AblationTypes.FLIP.value, "w/o flip")
def _without_flip(config: TrainConfig) -> TrainConfig:
    return config.model_copy(update={"enable_flip": False})


def apply_ablation(config: TrainConfig, name: Optional[str]) -> TrainConfig:
    if name is None:
        return config
    return AblationRegistry.get(name).apply(config)


def single_encoder_config(config: TrainConfig) -> TrainConfig:
    """Plain segmentation network: no domain player, no lasso, identity views only."""
    return config.model_copy(
        update={
            "disable_domain_encoder": True,
            "disable_space_constraint": True,
            "enable_rotation": False,
            "enable_flip": False,
            "n_transforms": 1,
        }
    )


def train_baseline_single_encoder(
    config: TrainConfig,
    net_config: NetConfig,
    data_dir: str,
    run_dir: str,
    snapshot: Optional[Dict[str, Any]] = None,
) -> TrainingResult:
    baseline = single_encoder_config(config)
    if snapshot is not None:
        snapshot = {**snapshot, "training": baseline.model_dump()}
    return run_training(baseline, net_config, data_dir, run_dir, snapshot=snapshot)


def _train_and_report(config: TrainConfig, net_config: NetConfig, data_dir: str, run_dir: str) -> Dict[str, float]:
    result = run_training(config, net_config, data_dir, run_dir)
    report, _ = cross_domain_report(result.best_checkpoint, data_dir)
    report.write(os.path.join(run_dir, "report"))
    return {
        "source_dice": report.source.dice_mean,
        "target_dice": report.target_dice_average,
        "target_jaccard": report.target_jaccard_average,
        "dice_drop": report.dice_drop,
    }


def summarize_ablations(runs: pd.DataFrame) -> pd.DataFrame:
    """Median over seeds per variant, with target drops against the benchmark row.

    Args:
        runs: one row per (variant, seed) with ``variant``, ``label``,
            ``target_dice`` and ``target_jaccard`` columns.
    """
    order = list(dict.fromkeys(runs["variant"]))
    table = (
        runs.groupby("variant", sort=False)
        .agg(label=("label", "first"), target_dice=("target_dice", "median"), target_jaccard=("target_jaccard", "median"))
        .reindex(order)
        .reset_index()
    )
    benchmark = table.loc[table["variant"] == BENCHMARK_ROW].iloc[0]
    table["dice_drop"] = benchmark["target_dice"] - table["target_dice"]
    table["jaccard_drop"] = benchmark["target_jaccard"] - table["target_jaccard"]
    return table


def run_ablation_suite(
    config: TrainConfig,
    net_config: NetConfig,
    data_dir: str,
    out_dir: str,
    seeds: Sequence[int] = DEFAULT_SEEDS,
) -> pd.DataFrame:
    """Train the full method and every registered ablation on each seed.

    Writes ``runs.csv`` (one row per run) and ``ablations.{csv,txt}`` (medians
    over seeds) into ``out_dir``, and returns the median table.
    """
    variants = [(BENCHMARK_ROW, "Benchmark", config)] + [
        (v.name, v.label, v.apply(config)) for v in AblationRegistry.variants.values()
    ]
    rows = []
    for seed in seeds:
        for name, label, variant_config in variants:
            seeded = variant_config.model_copy(update={"seed": seed})
            run_dir = os.path.join(out_dir, name, f"seed_{seed}")
            logger.info(f"ablation '{name}', seed {seed}")
            rows.append({"variant": name, "label": label, "seed": seed, **_train_and_report(seeded, net_config, data_dir, run_dir)})
    runs = pd.DataFrame(rows)
    table = summarize_ablations(runs)
    write_text(os.path.join(out_dir, "runs.csv"), runs.to_csv(index=False))
    write_text(os.path.join(out_dir, "ablations.csv"), table.to_csv(index=False))
    write_text(os.path.join(out_dir, "ablations.txt"), table.to_string(index=False, float_format=lambda v: f"{v:.2f}") + "\n")
    return table
