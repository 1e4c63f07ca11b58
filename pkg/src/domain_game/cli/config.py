"""Run configuration file: one YAML document with data, model, training and evaluation sections."""

from __future__ import annotations

import os
from typing import Any, Dict

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from domain_game.data.synthdata import BenchmarkConfig
from domain_game.models.nets import NetConfig
from domain_game.training.game import TrainConfig


class EvaluationConfig(BaseModel):
    """Output names written next to an evaluation report."""

    model_config = ConfigDict(extra="forbid")

    report_name: str = "report"
    examples_name: str = "examples.npz"
    plots_dir: str = "plots"
    batch_size: int = Field(32, gt=0)


class RunConfigFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: BenchmarkConfig = Field(default_factory=BenchmarkConfig)
    model: NetConfig = Field(default_factory=NetConfig)
    training: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    @model_validator(mode="after")
    def _check_sections_agree(self):
        if self.data.image_size % (2**self.model.depth) != 0:
            raise ValueError(
                f"data.image_size ({self.data.image_size}) must be divisible by 2**model.depth ({2 ** self.model.depth})"
            )
        if self.model.image_size != self.data.image_size:
            raise ValueError(f"model.image_size ({self.model.image_size}) differs from data.image_size ({self.data.image_size})")
        if self.model.num_classes != self.data.num_classes:
            raise ValueError(
                f"model.num_classes ({self.model.num_classes}) differs from data.num_classes ({self.data.num_classes})"
            )
        if self.model.delta_dim > self.model.x_channels:
            raise ValueError(
                f"model.delta_dim ({self.model.delta_dim}) must not exceed model.x_channels ({self.model.x_channels})"
            )
        return self

    @classmethod
    def from_yaml(cls, path: str) -> "RunConfigFile":
        """Load and validate a config file; an empty file yields all defaults.

        Raises:
            FileNotFoundError: naming the missing path.
            pydantic.ValidationError: for unknown keys or invalid values.
        """
        if not os.path.isfile(path):
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path) as handle:
            document = yaml.safe_load(handle) or {}
        if not isinstance(document, dict):
            raise ValueError(f"{path}: expected a mapping at the top level, got {type(document).__name__}")
        return cls(**document)

    def snapshot(self) -> Dict[str, Any]:
        """Effective configuration after defaults."""
        return self.model_dump(mode="json")
