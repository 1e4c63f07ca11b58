"""Cross-domain evaluation: per-volume scores, domain summaries and reports.

Reported means and standard deviations are percentages (Dice 0.873 is reported
as 87.3); standard deviations are population statistics over volumes.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, computed_field
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from domain_game.common.exceptions import EmptyHistoryError, InvalidArgumentError
from domain_game.common.objectives import dice_score, jaccard_score
from domain_game.data.synthdata import BenchmarkManifest, DomainStyle, load_manifest, load_samples, sliding_windows
from domain_game.models.checkpoint import load_nets
from domain_game.models.nets import DomainGameNets
from domain_game.utils.convert import to_builtin
from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

REPORT_SCALE = 100.0
CSV_COLUMNS = ["domain_id", "n_samples", "dice_mean", "dice_std", "jaccard_mean", "jaccard_std", "is_source"]

#: ``(volume [D, H, W], labels [D, H, W], sample_id) -> predicted mask [D, H, W]``
Predictor = Callable[[np.ndarray, np.ndarray, str], np.ndarray]


def select_best_checkpoint(history: Sequence[Union[float, Mapping]]) -> int:
    """1-indexed epoch with the highest source-val Dice; ties go to the earliest epoch.

    Args:
        history: epoch records with ``epoch`` and ``val_dice`` keys, or bare
            val Dice values in epoch order.

    Raises:
        EmptyHistoryError: for an empty history.
    """
    if len(history) == 0:
        raise EmptyHistoryError(title="Empty history", detail="no epoch has been recorded, cannot select a checkpoint")
    best_epoch, best_dice = None, -np.inf
    for index, record in enumerate(history):
        if isinstance(record, Mapping):
            epoch, dice = int(record["epoch"]), float(record["val_dice"])
        else:
            epoch, dice = index + 1, float(record)
        if dice > best_dice:
            best_epoch, best_dice = epoch, dice
    return best_epoch


@torch.no_grad()
def predict_volume(nets: DomainGameNets, volume: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Predict every slice of ``volume`` from its centred 3-slice window."""
    nets.eval()
    device = next(nets.parameters()).device
    windows = sliding_windows(volume, np.zeros(volume.shape, dtype=np.int64))
    masks = []
    for start in range(0, len(windows), batch_size):
        batch = np.stack([w.window for w in windows[start : start + batch_size]])
        masks.append(nets.predict_masks(torch.from_numpy(batch).to(device)).cpu().numpy())
    return np.concatenate(masks).astype(np.int64)


def nets_predictor(nets: DomainGameNets, batch_size: int = 32) -> Predictor:
    def predict(volume, labels, sample_id):
        return predict_volume(nets, volume, batch_size)

    return predict


def oracle_predictor(volume: np.ndarray, labels: np.ndarray, sample_id: str) -> np.ndarray:
    return labels.copy()


def background_predictor(volume: np.ndarray, labels: np.ndarray, sample_id: str) -> np.ndarray:
    return np.zeros_like(labels)


def as_predictor(checkpoint: Union[str, DomainGameNets, Predictor], batch_size: int = 32) -> Predictor:
    """Accept a checkpoint path, loaded networks or a predictor."""
    if isinstance(checkpoint, (str, os.PathLike)):
        nets, _ = load_nets(str(checkpoint))
        return nets_predictor(nets, batch_size)
    if isinstance(checkpoint, DomainGameNets):
        return nets_predictor(checkpoint, batch_size)
    if callable(checkpoint):
        return checkpoint
    raise InvalidArgumentError(title="Unsupported checkpoint", detail=f"cannot evaluate {type(checkpoint).__name__}")


def evaluated_classes(num_classes: int, style: Optional[DomainStyle] = None) -> List[int]:
    if style is not None and style.evaluated_classes:
        return list(style.evaluated_classes)
    return list(range(1, num_classes))


@dataclass
class SampleMetrics:
    sample_id: str
    dice: float
    jaccard: float
    per_class_dice: Dict[int, float] = field(default_factory=dict)


def score_volume(pred_mask: np.ndarray, true_mask: np.ndarray, classes: Sequence[int], sample_id: str = "") -> SampleMetrics:
    """Per-class volume Dice and Jaccard, averaged over ``classes``."""
    per_class_dice = {c: dice_score(pred_mask, true_mask, c) for c in classes}
    jaccards = [jaccard_score(pred_mask, true_mask, c) for c in classes]
    return SampleMetrics(
        sample_id=sample_id,
        dice=float(np.mean(list(per_class_dice.values()))),
        jaccard=float(np.mean(jaccards)),
        per_class_dice=per_class_dice,
    )


def evaluate_domain(
    checkpoint: Union[str, DomainGameNets, Predictor],
    data_dir: str,
    sample_ids: Sequence[str],
    classes: Sequence[int],
) -> List[SampleMetrics]:
    """Per-volume scores of one domain split.

    Raises:
        InvalidArgumentError: for an empty split or class list.
        MissingSampleError: naming every sample without a file.
    """
    if not sample_ids:
        raise InvalidArgumentError(title="Empty split", detail="evaluate_domain needs at least one sample")
    if not classes:
        raise InvalidArgumentError(title="No classes", detail="at least one foreground class must be evaluated")
    predictor = as_predictor(checkpoint)
    scores = []
    for volume, labels, sample_id in load_samples(data_dir, sample_ids):
        prediction = predictor(volume, labels, sample_id)
        scores.append(score_volume(prediction, labels, classes, sample_id))
    return scores


class DomainMetrics(BaseModel):
    model_config = ConfigDict(extra="forbid")

    domain_id: str
    n_samples: int
    dice_mean: float
    dice_std: float
    jaccard_mean: float
    jaccard_std: float
    is_source: bool = False


def summarize_domain(domain_id: str, scores: Sequence[SampleMetrics], is_source: bool = False) -> DomainMetrics:
    dice = np.array([s.dice for s in scores], dtype=np.float64) * REPORT_SCALE
    jaccard = np.array([s.jaccard for s in scores], dtype=np.float64) * REPORT_SCALE
    return DomainMetrics(
        domain_id=domain_id,
        n_samples=len(scores),
        dice_mean=float(dice.mean()),
        dice_std=float(dice.std()),
        jaccard_mean=float(jaccard.mean()),
        jaccard_std=float(jaccard.std()),
        is_source=is_source,
    )


@retry(
    retry=retry_if_exception_type(OSError),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=1),
    reraise=True,
)
def write_text(path: str, text: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)
    return path


class MetricsReport(BaseModel):
    """Source and target domain summaries with the target average and drop."""

    model_config = ConfigDict(extra="forbid")

    domains: List[DomainMetrics]

    @property
    def source(self) -> DomainMetrics:
        for domain in self.domains:
            if domain.is_source:
                return domain
        raise KeyError("report has no source domain")

    @property
    def targets(self) -> List[DomainMetrics]:
        return [d for d in self.domains if not d.is_source]

    def _target_average(self, metric: str) -> Optional[float]:
        if not self.targets:
            return None
        return float(np.mean([getattr(d, f"{metric}_mean") for d in self.targets]))

    @computed_field
    @property
    def target_dice_average(self) -> Optional[float]:
        return self._target_average("dice")

    @computed_field
    @property
    def target_jaccard_average(self) -> Optional[float]:
        return self._target_average("jaccard")

    @computed_field
    @property
    def dice_drop(self) -> Optional[float]:
        average = self.target_dice_average
        return None if average is None else self.source.dice_mean - average

    @computed_field
    @property
    def jaccard_drop(self) -> Optional[float]:
        average = self.target_jaccard_average
        return None if average is None else self.source.jaccard_mean - average

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([d.model_dump() for d in self.domains], columns=CSV_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "MetricsReport":
        records = to_builtin(frame[CSV_COLUMNS].to_dict(orient="records"))
        return cls(domains=[DomainMetrics(**r) for r in records])

    def to_csv(self, path: str) -> str:
        return write_text(path, self.to_frame().to_csv(index=False))

    @classmethod
    def from_csv(cls, path: str) -> "MetricsReport":
        frame = pd.read_csv(path, float_precision="round_trip", dtype={"domain_id": str})
        return cls.from_frame(frame)

    def render_table(self) -> str:
        """Aligned plain-text table; target rows carry their Dice drop against the source."""
        frame = self.to_frame()
        source_dice = self.source.dice_mean
        frame["dice"] = [f"{m:.2f} ± {s:.2f}" for m, s in zip(frame["dice_mean"], frame["dice_std"])]
        frame["jaccard"] = [f"{m:.2f} ± {s:.2f}" for m, s in zip(frame["jaccard_mean"], frame["jaccard_std"])]
        frame["drop"] = ["" if src else f"↓{source_dice - m:.2f}" for m, src in zip(frame["dice_mean"], frame["is_source"])]
        frame["role"] = ["source" if src else "target" for src in frame["is_source"]]
        lines = [frame[["domain_id", "role", "n_samples", "dice", "jaccard", "drop"]].to_string(index=False)]
        if self.targets:
            lines.append(
                f"Avg. on target: dice {self.target_dice_average:.2f}, jaccard {self.target_jaccard_average:.2f}, "
                f"drop ↓{self.dice_drop:.2f}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> List[str]:
        """Write ``<stem>.csv``, ``<stem>.txt`` and ``<stem>.json`` next to ``path``."""
        stem, _ = os.path.splitext(path)
        return [
            self.to_csv(f"{stem}.csv"),
            write_text(f"{stem}.txt", self.render_table()),
            write_text(f"{stem}.json", self.model_dump_json(indent=2) + "\n"),
        ]


def cross_domain_report(
    checkpoint: Union[str, DomainGameNets, Predictor],
    manifest: Union[str, BenchmarkManifest],
    data_dir: Optional[str] = None,
) -> Tuple[MetricsReport, Dict[str, List[SampleMetrics]]]:
    """Evaluate source-test and every target domain.

    Args:
        checkpoint: checkpoint path, networks or predictor.
        manifest: a manifest, or the benchmark directory holding one.
        data_dir: benchmark directory when ``manifest`` is an object.

    Returns:
        the report and the per-sample scores keyed by domain id.
    """
    if isinstance(manifest, str):
        data_dir, manifest = manifest, load_manifest(manifest)
    if data_dir is None:
        raise InvalidArgumentError(title="Missing data directory", detail="pass data_dir with a manifest object")
    predictor = as_predictor(checkpoint)
    domains, per_sample = [], {}
    for style in manifest.domains:
        is_source = style.domain_id == manifest.source_domain.domain_id
        ids = manifest.splits[style.domain_id]["test"]
        scores = evaluate_domain(predictor, data_dir, ids, evaluated_classes(manifest.num_classes, style))
        per_sample[style.domain_id] = scores
        domains.append(summarize_domain(style.domain_id, scores, is_source=is_source))
        logger.info(f"domain '{style.domain_id}': dice {domains[-1].dice_mean:.2f} ± {domains[-1].dice_std:.2f}")
    return MetricsReport(domains=domains), per_sample


def collect_examples(
    checkpoint: Union[str, DomainGameNets, Predictor], manifest: BenchmarkManifest, data_dir: str
) -> Dict[str, np.ndarray]:
    """Centre slice image, label and prediction of the first test volume of each domain."""
    predictor = as_predictor(checkpoint)
    examples = {}
    for style in manifest.domains:
        (volume, labels, sample_id), = load_samples(data_dir, manifest.splits[style.domain_id]["test"][:1])
        prediction = predictor(volume, labels, sample_id)
        center = volume.shape[0] // 2
        examples[f"{style.domain_id}__image"] = volume[center]
        examples[f"{style.domain_id}__label"] = labels[center]
        examples[f"{style.domain_id}__prediction"] = prediction[center]
    return examples


def save_examples(path: str, examples: Dict[str, np.ndarray]) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as handle:
        np.savez(handle, **examples)
    return path


def load_examples(path: str) -> Dict[str, Dict[str, np.ndarray]]:
    """``{domain_id: {"image", "label", "prediction"}}`` in file order."""
    grouped: Dict[str, Dict[str, np.ndarray]] = {}
    with np.load(path) as archive:
        for key in archive.files:
            domain_id, kind = key.rsplit("__", 1)
            grouped.setdefault(domain_id, {})[kind] = archive[key]
    return grouped
