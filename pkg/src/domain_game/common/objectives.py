"""Losses, utilities and overlap metrics of the domain game.

Squared-norm losses are normalised by element count and by the size of the
transform set, so the loss weights keep their meaning across tensor sizes.
Every tensor-valued function accepts arbitrary leading (batch) dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Dict, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from domain_game.common.exceptions import InvalidArgumentError, NonFiniteLossError, ShapeMismatchError
from domain_game.common.geometry import TransformSpec, apply_transform

PSNR_CAP_DB = 100.0
SOFT_DICE_EPS = 1e-5
COSINE_EPS = 1e-12

Scalar = Union[float, torch.Tensor]


def _check_same_shapes(tensors: Sequence[torch.Tensor], what: str) -> None:
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) > 1:
        raise ShapeMismatchError(
            title=f"Inconsistent {what} shapes",
            detail=f"expected all {what} to share one shape, got {sorted(shapes)}",
        )


def pull_loss_x(
    x_ref: torch.Tensor,
    x_set: Sequence[torch.Tensor],
    transforms: Sequence[TransformSpec],
) -> torch.Tensor:
    """Transform-alignment pull of anatomical maps.

    ``(1/n) sum_i mean((T_i(x_ref) - x_set[i])^2)``.
    """
    if len(x_set) != len(transforms) or len(x_set) == 0:
        raise ShapeMismatchError(
            title="Transform set mismatch",
            detail=f"expected equal non-empty lists, got {len(x_set)} maps and {len(transforms)} transforms",
        )
    _check_same_shapes([x_ref, *x_set], "anatomical map")
    terms = [torch.mean((apply_transform(t, x_ref) - x) ** 2) for t, x in zip(transforms, x_set)]
    return torch.stack(terms).mean()


def pull_loss_delta(delta_set: Sequence[torch.Tensor]) -> torch.Tensor:
    """Pull of domain vectors over all ordered pairs ``j != i``.

    The pair sum is divided by ``max(1, n(n-1))``; a single vector gives 0.
    """
    if len(delta_set) == 0:
        raise ShapeMismatchError(title="Empty domain set", detail="expected at least one domain vector")
    _check_same_shapes(delta_set, "domain vector")
    n = len(delta_set)
    total = torch.zeros((), dtype=delta_set[0].dtype, device=delta_set[0].device)
    for i in range(n):
        for j in range(n):
            if j != i:
                total = total + torch.mean((delta_set[j] - delta_set[i]) ** 2)
    return total / max(1, n * (n - 1))


def project_pooled(x_map: torch.Tensor, delta_dim: int) -> torch.Tensor:
    """Spatially average an anatomical map and keep its first ``delta_dim`` channels."""
    if x_map.ndim < 3 or x_map.shape[-3] < delta_dim:
        raise ShapeMismatchError(
            title="Cannot project anatomical map",
            detail=f"expected [..., C>={delta_dim}, H, W], got {tuple(x_map.shape)}",
        )
    return x_map.mean(dim=(-2, -1))[..., :delta_dim]


def squared_cosine(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """cos^2 along the last dimension; zero vectors have cosine 0."""
    dot = (u * v).sum(dim=-1)
    norms = u.norm(dim=-1) * v.norm(dim=-1)
    return (dot / norms.clamp_min(COSINE_EPS)) ** 2


def repel_loss(x_set: Sequence[torch.Tensor], delta_set: Sequence[torch.Tensor]) -> torch.Tensor:
    """Mean squared cosine between pooled anatomical maps and domain vectors, in [0, 1]."""
    if len(x_set) != len(delta_set) or len(x_set) == 0:
        raise ShapeMismatchError(
            title="Repel set mismatch",
            detail=f"expected equal non-empty lists, got {len(x_set)} maps and {len(delta_set)} vectors",
        )
    terms = []
    for x_map, delta_vec in zip(x_set, delta_set):
        pooled = project_pooled(x_map, delta_vec.shape[-1])
        terms.append(squared_cosine(pooled, delta_vec).mean())
    return torch.stack(terms).mean()


def lasso_penalty(x_map: torch.Tensor, delta_vec: torch.Tensor) -> torch.Tensor:
    """Sum of the mean absolute values of both features."""
    return x_map.abs().mean() + delta_vec.abs().mean()


def _binary(mask, class_id: int) -> np.ndarray:
    if isinstance(mask, torch.Tensor):
        mask = mask.detach().cpu().numpy()
    return np.asarray(mask) == class_id


def dice_score(pred_mask, true_mask, class_id: int) -> float:
    """``2|A and B| / (|A| + |B|)`` for one class; 1.0 when both are empty."""
    a, b = _binary(pred_mask, class_id), _binary(true_mask, class_id)
    if a.shape != b.shape:
        raise ShapeMismatchError(title="Mask shapes differ", detail=f"got {a.shape} and {b.shape}")
    size = int(a.sum()) + int(b.sum())
    if size == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / size


def jaccard_score(pred_mask, true_mask, class_id: int) -> float:
    """``|A and B| / |A or B|`` for one class; 1.0 when both are empty."""
    a, b = _binary(pred_mask, class_id), _binary(true_mask, class_id)
    if a.shape != b.shape:
        raise ShapeMismatchError(title="Mask shapes differ", detail=f"got {a.shape} and {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(a, b).sum()) / union


def soft_dice_utility(logits: torch.Tensor, true_mask: torch.Tensor) -> torch.Tensor:
    """Differentiable Dice over foreground classes.

    Args:
        logits: ``[..., K, H, W]`` raw scores.
        true_mask: ``[..., H, W]`` integer class ids.

    Returns:
        mean over foreground classes (and leading dimensions) of
        ``(2 sum p*y + eps) / (sum p + sum y + eps)``.
    """
    if logits.shape[:-3] + logits.shape[-2:] != true_mask.shape:
        raise ShapeMismatchError(
            title="Logits and mask disagree",
            detail=f"logits {tuple(logits.shape)} vs mask {tuple(true_mask.shape)}",
        )
    num_classes = logits.shape[-3]
    probs = torch.softmax(logits, dim=-3)
    onehot = F.one_hot(true_mask.long(), num_classes).movedim(-1, -3).to(probs.dtype)
    probs, onehot = probs[..., 1:, :, :], onehot[..., 1:, :, :]
    intersection = (probs * onehot).sum(dim=(-2, -1))
    denominator = probs.sum(dim=(-2, -1)) + onehot.sum(dim=(-2, -1))
    return ((2.0 * intersection + SOFT_DICE_EPS) / (denominator + SOFT_DICE_EPS)).mean()


def psnr(reference: torch.Tensor, estimate: torch.Tensor, max_value: float = 1.0, per_sample: bool = False):
    """Peak signal-to-noise ratio in dB, capped at 100 dB for a zero error.

    Args:
        reference: target tensor.
        estimate: reconstruction of the same shape.
        max_value: peak signal value.
        per_sample: average the dB values over the first dimension instead of
            computing one value over all elements.
    """
    if reference.shape != estimate.shape:
        raise ShapeMismatchError(
            title="PSNR inputs differ",
            detail=f"reference {tuple(reference.shape)} vs estimate {tuple(estimate.shape)}",
        )
    if max_value <= 0:
        raise InvalidArgumentError(title="Invalid peak value", detail=f"max_value must be > 0, got {max_value}")
    squared = (reference - estimate) ** 2
    if per_sample:
        mse = squared.flatten(start_dim=1).mean(dim=1)
    else:
        mse = squared.mean()
    floor = max_value**2 * 10 ** (-PSNR_CAP_DB / 10)
    value = 10.0 * torch.log10(max_value**2 / mse.clamp_min(floor))
    return value.clamp_max(PSNR_CAP_DB).mean()


@dataclass
class LossBundle:
    """All terms of the minmax objective for one step."""

    pull_x: Scalar
    pull_delta: Scalar
    repel: Scalar
    lasso: Scalar
    u_x_surrogate: Scalar
    u_delta: Scalar
    total: Scalar

    def to_metrics(self) -> Dict[str, float]:
        return {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in ((f.name, getattr(self, f.name)) for f in fields(self))}


def total_objective(
    pull_x: Scalar = 0.0,
    pull_delta: Scalar = 0.0,
    repel: Scalar = 0.0,
    lasso: Scalar = 0.0,
    u_x_surrogate: Scalar = 0.0,
    u_delta: Scalar = 0.0,
    lambda_lasso: float = 5.0,
    omega: float = 5e-2,
) -> LossBundle:
    """Compose ``lambda*lasso + pull_x + pull_delta + repel - (u_x + omega*u_delta)``.

    Raises:
        InvalidArgumentError: for negative weights.
        NonFiniteLossError: naming the first non-finite term.
    """
    if lambda_lasso < 0 or omega < 0:
        raise InvalidArgumentError(
            title="Invalid objective weights", detail=f"weights must be >= 0, got lambda={lambda_lasso}, omega={omega}"
        )
    parts = {
        "pull_x": pull_x,
        "pull_delta": pull_delta,
        "repel": repel,
        "lasso": lasso,
        "u_x_surrogate": u_x_surrogate,
        "u_delta": u_delta,
    }
    for name, value in parts.items():
        scalar = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(scalar):
            raise NonFiniteLossError(
                title="Non-finite objective term",
                detail=f"term '{name}' is {scalar}",
                term=name,
                metrics={k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in parts.items()},
            )
    total = lambda_lasso * lasso + pull_x + pull_delta + repel - (u_x_surrogate + omega * u_delta)
    return LossBundle(total=total, **parts)
