"""Deterministic SVG figures: a per-domain Dice bar chart and image/label/prediction triptychs."""

from __future__ import annotations

import logging
import os
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from domain_game.evaluation.metrics import MetricsReport, load_examples  # noqa: E402
from domain_game.utils.logging_config import setup_logging  # noqa: E402

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

SVG_RC = {"svg.hashsalt": "domain-game", "svg.fonttype": "path"}
SVG_METADATA = {"Date": None}
SOURCE_COLOR = "#4c72b0"
TARGET_COLOR = "#dd8452"


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    return path


def dice_bar_chart(report: MetricsReport, path: str) -> str:
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(report.domains), 3.2))
        names = [d.domain_id for d in report.domains]
        ax.bar(
            names,
            [d.dice_mean for d in report.domains],
            yerr=[d.dice_std for d in report.domains],
            color=[SOURCE_COLOR if d.is_source else TARGET_COLOR for d in report.domains],
            capsize=3,
        )
        if report.target_dice_average is not None:
            ax.axhline(report.target_dice_average, color="gray", linestyle="--", linewidth=1, label="Avg. on target")
            ax.legend(loc="lower right")
        ax.set_ylabel("Dice (%)")
        ax.set_ylim(0, 100)
        fig.tight_layout()
        return _save(fig, path)


def triptych(domain_id: str, panels: Dict[str, np.ndarray], path: str) -> str:
    with plt.rc_context(SVG_RC):
        fig, axes = plt.subplots(1, 3, figsize=(6.6, 2.4))
        num_classes = int(max(panels["label"].max(), panels["prediction"].max())) + 1
        axes[0].imshow(panels["image"], cmap="gray", vmin=0.0, vmax=1.0)
        axes[1].imshow(panels["label"], cmap="viridis", vmin=0, vmax=max(num_classes - 1, 1))
        axes[2].imshow(panels["prediction"], cmap="viridis", vmin=0, vmax=max(num_classes - 1, 1))
        for ax, title in zip(axes, ("image", "label", "prediction")):
            ax.set_title(title)
            ax.axis("off")
        fig.suptitle(domain_id)
        fig.tight_layout()
        return _save(fig, path)


def report_plots(report_path: str, examples_path: Optional[str] = None, out_dir: Optional[str] = None) -> List[str]:
    """One bar chart for the report plus one triptych per domain in the examples file."""
    out_dir = out_dir or os.path.dirname(os.path.abspath(report_path))
    report = MetricsReport.from_csv(report_path)
    written = [dice_bar_chart(report, os.path.join(out_dir, "dice_by_domain.svg"))]
    if examples_path:
        for domain_id, panels in load_examples(examples_path).items():
            written.append(triptych(domain_id, panels, os.path.join(out_dir, f"triptych_{domain_id}.svg")))
    logger.info(f"wrote {len(written)} figure(s) to {out_dir}")
    return written
