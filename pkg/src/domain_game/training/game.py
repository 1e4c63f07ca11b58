"""The two-player training game.

Each step samples a transform set per window, encodes every transformed view
with both encoders, and descends the minmax objective twice: Phase A updates
the anatomical encoder and segmentation decoder with the domain player frozen,
Phase B updates the domain encoder and reconstruction decoder with the
anatomical player frozen.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass
from itertools import chain
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from domain_game.common.exceptions import NonFiniteLossError
from domain_game.common.geometry import TransformSpec, apply_transform, sample_transform_set
from domain_game.common.objectives import (
    LossBundle,
    lasso_penalty,
    psnr,
    pull_loss_delta,
    pull_loss_x,
    repel_loss,
    soft_dice_utility,
    total_objective,
)
from domain_game.data.synthdata import WindowSample
from domain_game.models.nets import DomainGameNets, NetConfig
from domain_game.utils.logging_config import setup_logging

# Set up logging configuration
setup_logging()

# Create a logger
logger = logging.getLogger(__name__)

PHASE_A = "A"
PHASE_B = "B"


class TrainConfig(BaseModel):
    """Optimisation, game weights and ablation switches."""

    model_config = ConfigDict(extra="forbid")

    lambda_lasso: float = Field(5.0, ge=0)
    omega: float = Field(5e-2, ge=0)
    learning_rate: float = Field(1e-4, gt=0)
    lr_min: float = Field(0.0, ge=0)
    weight_decay: float = Field(1e-4, ge=0)
    epochs: int = Field(60, gt=0)
    cosine_period: int = Field(30, gt=0)
    n_transforms: int = Field(4, gt=0)
    enable_rotation: bool = True
    enable_flip: bool = True
    disable_domain_encoder: bool = False
    disable_space_constraint: bool = False
    batch_size: int = Field(8, gt=0)
    eval_batch_size: int = Field(32, gt=0)
    seed: int = 0
    device: str = "cpu"
    torch_num_threads: int = Field(1, ge=0)
    deterministic_algorithms: bool = True

    @model_validator(mode="after")
    def _check_lr_range(self):
        if self.lr_min > self.learning_rate:
            raise ValueError(f"lr_min ({self.lr_min}) exceeds learning_rate ({self.learning_rate})")
        return self


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Cosine annealing with warm restarts every ``cosine_period`` epochs."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    phase = (epoch % config.cosine_period) / config.cosine_period
    return config.lr_min + (config.learning_rate - config.lr_min) * (1 + math.cos(math.pi * phase)) / 2


@dataclass
class StepMetrics:
    t: int
    pull_x: float
    pull_delta: float
    repel: float
    lasso: float
    u_x_surrogate: float
    u_delta: float
    total: float

    @classmethod
    def from_bundle(cls, t: int, bundle: LossBundle) -> "StepMetrics":
        return cls(t=t, **bundle.to_metrics())

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


class GameState:
    """Parameters of both players, their optimizers, the step counter and the rng."""

    def __init__(
        self,
        nets: DomainGameNets,
        train_config: TrainConfig,
        rng: np.random.Generator,
        t: int = 0,
        epoch: int = 0,
    ):
        self.nets = nets
        self.train_config = train_config
        self.rng = rng
        self.t = t
        self.epoch = epoch
        self.optimizer_a = torch.optim.AdamW(
            chain(*(m.parameters() for m in nets.phase_a_modules)),
            lr=train_config.learning_rate,
            weight_decay=train_config.weight_decay,
        )
        self.optimizer_b = torch.optim.AdamW(
            chain(*(m.parameters() for m in nets.phase_b_modules)),
            lr=train_config.learning_rate,
            weight_decay=train_config.weight_decay,
        )

    @classmethod
    def create(cls, net_config: NetConfig, train_config: TrainConfig) -> "GameState":
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(train_config.seed)
            nets = DomainGameNets(net_config).to(train_config.device)
        rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, 1]))
        return cls(nets, train_config, rng)

    def set_learning_rate(self, lr: float) -> None:
        for optimizer in (self.optimizer_a, self.optimizer_b):
            for group in optimizer.param_groups:
                group["lr"] = lr

    def state_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "epoch": self.epoch,
            "net_config": self.nets.config.model_dump(),
            "train_config": self.train_config.model_dump(),
            "nets": self.nets.state_dict(),
            "optimizer_a": self.optimizer_a.state_dict(),
            "optimizer_b": self.optimizer_b.state_dict(),
            "rng_state": self.rng.bit_generator.state,
        }

    @classmethod
    def from_state_dict(cls, payload: Dict[str, Any], train_config: Optional[TrainConfig] = None) -> "GameState":
        train_config = train_config or TrainConfig(**payload["train_config"])
        nets = DomainGameNets(NetConfig(**payload["net_config"])).to(train_config.device)
        nets.load_state_dict(payload["nets"])
        rng = np.random.default_rng()
        rng.bit_generator.state = payload["rng_state"]
        state = cls(nets, train_config, rng, t=payload["t"], epoch=payload["epoch"])
        state.optimizer_a.load_state_dict(payload["optimizer_a"])
        state.optimizer_b.load_state_dict(payload["optimizer_b"])
        return state

    def parameter_hashes(self) -> Dict[str, str]:
        """sha256 of each player's parameters, for checking phase isolation."""
        hashes = {}
        for name in ("encoder_x", "decoder_y", "encoder_delta", "decoder_i"):
            digest = hashlib.sha256()
            for tensor in getattr(self.nets, name).state_dict().values():
                digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
            hashes[name] = digest.hexdigest()
        return hashes


def transform_batch(tensor: torch.Tensor, specs: Sequence[TransformSpec]) -> torch.Tensor:
    """Apply ``specs[b]`` to ``tensor[b]`` along the first dimension."""
    return torch.stack([apply_transform(spec, item) for spec, item in zip(specs, tensor)])


def collate_windows(batch: Sequence[WindowSample], device: str = "cpu") -> Tuple[torch.Tensor, torch.Tensor]:
    images = torch.from_numpy(np.stack([w.window for w in batch]).astype(np.float32)).to(device)
    labels = torch.from_numpy(np.stack([w.center_label for w in batch]).astype(np.int64)).to(device)
    return images, labels


def compute_objective(
    nets: DomainGameNets,
    images: torch.Tensor,
    labels: torch.Tensor,
    transforms: Sequence[Sequence[TransformSpec]],
    swap_index: int,
    config: TrainConfig,
    phase: Optional[str] = None,
    u_x_constant: Optional[torch.Tensor] = None,
) -> LossBundle:
    """Evaluate the minmax objective for one batch.

    Args:
        nets: the four networks.
        images: ``[B, 3, H, W]`` untransformed windows.
        labels: ``[B, H, W]`` center-slice labels.
        transforms: ``transforms[b][i]`` is the i-th transform of window b.
        swap_index: which view's domain vector conditions every reconstruction.
        config: weights and ablation switches.
        phase: ``"A"`` tracks gradients of the anatomical player only, ``"B"`` of
            the domain player only, ``None`` tracks both.
        u_x_constant: segmentation utility to reuse in Phase B instead of decoding again.
    """
    n = len(transforms[0])
    use_domain = not config.disable_domain_encoder
    grad_x = phase in (None, PHASE_A)
    grad_delta = phase in (None, PHASE_B)

    views = [transform_batch(images, [ts[i] for ts in transforms]) for i in range(n)]
    view_labels = [transform_batch(labels, [ts[i] for ts in transforms]) for i in range(n)]

    with torch.set_grad_enabled(grad_x and torch.is_grad_enabled()):
        x_ref = nets.encode_x(images)
        x_views = [nets.encode_x(v) for v in views]
    pull_x = torch.stack(
        [pull_loss_x(x_ref[b], [x[b] for x in x_views], transforms[b]) for b in range(images.shape[0])]
    ).mean()

    if u_x_constant is not None:
        u_x = u_x_constant
    else:
        with torch.set_grad_enabled(grad_x and torch.is_grad_enabled()):
            u_x = torch.stack(
                [soft_dice_utility(nets.decode_segmentation(x), y) for x, y in zip(x_views, view_labels)]
            ).mean()

    zero = x_ref.new_zeros(())
    if use_domain:
        with torch.set_grad_enabled(grad_delta and torch.is_grad_enabled()):
            delta_ref = nets.encode_delta(images)
            delta_views = [nets.encode_delta(v) for v in views]
            pull_delta = pull_loss_delta(delta_views)
            delta_s = delta_views[swap_index]
            reconstructions = [nets.decode_reconstruction(delta_s, x) for x in x_views]
            u_delta = torch.stack(
                [psnr(v, r, max_value=1.0, per_sample=True) for v, r in zip(views, reconstructions)]
            ).mean()
        # both players act on the repel term
        repel = repel_loss(x_views, delta_views)
    else:
        delta_ref = x_ref.new_zeros((images.shape[0], nets.config.delta_dim))
        pull_delta, repel, u_delta = zero, zero, zero

    lasso = zero if config.disable_space_constraint else lasso_penalty(x_ref, delta_ref)
    return total_objective(
        pull_x=pull_x,
        pull_delta=pull_delta,
        repel=repel,
        lasso=lasso,
        u_x_surrogate=u_x,
        u_delta=u_delta,
        lambda_lasso=config.lambda_lasso,
        omega=config.omega,
    )


def train_step(state: GameState, batch: Sequence[WindowSample], config: TrainConfig) -> Tuple[GameState, StepMetrics]:
    """One iteration of the game: Phase A then Phase B, ``t <- t + 1``.

    Raises:
        NonFiniteLossError: with the step's metrics attached.
        ValueError: for an empty batch.
    """
    if not batch:
        raise ValueError("train_step needs a non-empty batch")
    nets = state.nets
    nets.train()
    images, labels = collate_windows(batch, config.device)
    transforms = [
        sample_transform_set(config.n_transforms, state.rng, config.enable_rotation, config.enable_flip)
        for _ in batch
    ]
    use_domain = not config.disable_domain_encoder
    swap_index = int(state.rng.integers(0, config.n_transforms)) if use_domain else 0

    try:
        bundle_a = compute_objective(nets, images, labels, transforms, swap_index, config, phase=PHASE_A)
        _check_total(bundle_a, state.t)
        state.optimizer_a.zero_grad(set_to_none=True)
        bundle_a.total.backward()
        state.optimizer_a.step()

        if use_domain:
            bundle_b = compute_objective(
                nets,
                images,
                labels,
                transforms,
                swap_index,
                config,
                phase=PHASE_B,
                u_x_constant=bundle_a.u_x_surrogate.detach(),
            )
            _check_total(bundle_b, state.t)
            state.optimizer_b.zero_grad(set_to_none=True)
            bundle_b.total.backward()
            state.optimizer_b.step()
    except NonFiniteLossError as e:
        e.metrics = {"t": state.t, **(e.metrics or {})}
        raise
    # gradients of the frozen player are never applied
    state.optimizer_a.zero_grad(set_to_none=True)
    state.optimizer_b.zero_grad(set_to_none=True)

    metrics = StepMetrics.from_bundle(state.t, bundle_a)
    state.t += 1
    logger.debug(f"step {metrics.t}: total={metrics.total:.4f} u_x={metrics.u_x_surrogate:.4f} u_delta={metrics.u_delta:.2f}")
    return state, metrics


def _check_total(bundle: LossBundle, t: int) -> None:
    total = float(bundle.total.detach())
    if not math.isfinite(total):
        raise NonFiniteLossError(
            title="Non-finite objective",
            detail=f"total objective is {total} at step {t}",
            term="total",
            metrics={"t": t, **bundle.to_metrics()},
        )


@torch.no_grad()
def feature_diagnostics(
    nets: DomainGameNets,
    windows: Sequence[WindowSample],
    n_transforms: int = 4,
    seed: int = 0,
    batch_size: int = 32,
    device: str = "cpu",
) -> Dict[str, float]:
    """Mean pull and repel terms over ``windows`` with a fixed transform draw.

    Transforms always come from the full group so equivariance is measured the
    same way for every ablation.
    """
    nets.eval()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    totals = {"pull_x": 0.0, "pull_delta": 0.0, "repel": 0.0}
    count = 0
    for start in range(0, len(windows), batch_size):
        batch = windows[start : start + batch_size]
        images, _ = collate_windows(batch, device)
        transforms = [sample_transform_set(n_transforms, rng) for _ in batch]
        views = [transform_batch(images, [ts[i] for ts in transforms]) for i in range(n_transforms)]
        x_ref = nets.encode_x(images)
        x_views = [nets.encode_x(v) for v in views]
        delta_views = [nets.encode_delta(v) for v in views]
        for b in range(len(batch)):
            totals["pull_x"] += float(pull_loss_x(x_ref[b], [x[b] for x in x_views], transforms[b]))
            totals["pull_delta"] += float(pull_loss_delta([d[b] for d in delta_views]))
            totals["repel"] += float(repel_loss([x[b : b + 1] for x in x_views], [d[b : b + 1] for d in delta_views]))
        count += len(batch)
    return {k: v / max(count, 1) for k, v in totals.items()}


@torch.no_grad()
def style_separation(nets: DomainGameNets, windows_a: Sequence[WindowSample], windows_b: Sequence[WindowSample]) -> float:
    """Mean squared distance between domain vectors of paired windows rendered in two styles."""
    nets.eval()
    images_a, _ = collate_windows(windows_a)
    images_b, _ = collate_windows(windows_b)
    return float(torch.mean((nets.encode_delta(images_a) - nets.encode_delta(images_b)) ** 2))


def batches(windows: Sequence[WindowSample], batch_size: int, rng: np.random.Generator) -> List[List[WindowSample]]:
    """Shuffled fixed-size batches; the last partial batch is kept."""
    order = rng.permutation(len(windows))
    return [[windows[i] for i in order[s : s + batch_size]] for s in range(0, len(windows), batch_size)]
