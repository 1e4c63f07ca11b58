"""The four players' networks: anatomical and domain encoders, segmentation and
conditioned reconstruction decoders.

Inputs are 3-slice windows stacked as channels, ``[B, 3, H, W]`` (an unbatched
``[3, H, W]`` window is accepted and returned unbatched).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field

from domain_game.common.exceptions import ShapeMismatchError

WINDOW_CHANNELS = 3


class NetConfig(BaseModel):
    """Sizes of the four networks."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    base_channels: int = Field(16, gt=0)
    depth: int = Field(3, gt=0)
    x_channels: int = Field(32, gt=0)
    delta_dim: int = Field(16, gt=0)
    num_classes: int = Field(2, ge=2)
    image_size: int = Field(32, gt=0)

    def check_image_size(self, size: int) -> None:
        if size % (2**self.depth) != 0:
            raise ShapeMismatchError(
                title="Image size incompatible with depth",
                detail=f"expected H, W divisible by {2 ** self.depth}, got {size}",
            )

    @property
    def feature_size(self) -> int:
        return self.image_size // (2**self.depth)


@dataclass
class FeaturePair:
    x_map: torch.Tensor  # [B, Cx, H', W']
    delta_vec: torch.Tensor  # [B, Cd]


class ResidualBlock(nn.Module):
    """Normalization-free residual block with a down-scaled residual branch."""

    def __init__(self, channels: int, residual_scale: float = 0.2):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.residual_scale = residual_scale

    def forward(self, x):
        h = self.conv1(F.silu(x))
        h = self.conv2(F.silu(h))
        return x + self.residual_scale * h


class ConvTrunk(nn.Module):
    """Strided-convolution encoder shared by both encoders' designs (not weights)."""

    def __init__(self, config: NetConfig, out_channels: int):
        super().__init__()
        self.stem = nn.Conv2d(WINDOW_CHANNELS, config.base_channels, 3, padding=1)
        stages = []
        channels = config.base_channels
        for _ in range(config.depth):
            stages += [nn.Conv2d(channels, channels * 2, 3, stride=2, padding=1), ResidualBlock(channels * 2)]
            channels *= 2
        self.stages = nn.Sequential(*stages)
        self.head = nn.Conv2d(channels, out_channels, 1)

    def forward(self, x):
        return self.head(F.silu(self.stages(self.stem(x))))


class AnatomyEncoder(nn.Module):
    """E_X: window -> spatial anatomical map ``[Cx, H/2^depth, W/2^depth]``."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.trunk = ConvTrunk(config, config.x_channels)

    def forward(self, window):
        return self.trunk(window)


class DomainEncoder(nn.Module):
    """E_Delta: window -> globally pooled domain vector ``[Cd]``."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.trunk = ConvTrunk(config, config.delta_dim)

    def forward(self, window):
        return self.trunk(window).mean(dim=(-2, -1))


class UpStage(nn.Module):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_channels, out_channels, 4, stride=2, padding=1)
        self.block = ResidualBlock(out_channels)

    def forward(self, x):
        return self.block(self.up(F.silu(x)))


def _decoder_channels(config: NetConfig) -> List[Tuple[int, int]]:
    channels = config.base_channels * (2**config.depth)
    pairs = [(config.x_channels, channels)]
    for _ in range(config.depth):
        pairs.append((channels, channels // 2))
        channels //= 2
    return pairs


class SegmentationDecoder(nn.Module):
    """F_Y: anatomical map -> full-resolution logits ``[K, H, W]``."""

    def __init__(self, config: NetConfig):
        super().__init__()
        pairs = _decoder_channels(config)
        self.entry = nn.Conv2d(pairs[0][0], pairs[0][1], 3, padding=1)
        self.stages = nn.ModuleList(UpStage(c_in, c_out) for c_in, c_out in pairs[1:])
        self.head = nn.Conv2d(pairs[-1][1], config.num_classes, 1)

    def forward(self, x_map):
        h = self.entry(x_map)
        for stage in self.stages:
            h = stage(h)
        return self.head(F.silu(h))


class Modulation(nn.Module):
    """Maps a domain vector to per-channel ``(scale, shift)``; zero-initialised."""

    def __init__(self, delta_dim: int, channels: int):
        super().__init__()
        self.linear = nn.Linear(delta_dim, 2 * channels)
        nn.init.zeros_(self.linear.weight)
        nn.init.zeros_(self.linear.bias)

    def forward(self, feature, delta_vec):
        scale, shift = self.linear(delta_vec).chunk(2, dim=-1)
        return feature * (1 + scale[..., None, None]) + shift[..., None, None]


class ReconstructionDecoder(nn.Module):
    """F_I: reconstructs a window from an anatomical map conditioned on a domain vector."""

    def __init__(self, config: NetConfig):
        super().__init__()
        pairs = _decoder_channels(config)
        self.entry = nn.Conv2d(pairs[0][0], pairs[0][1], 3, padding=1)
        self.stages = nn.ModuleList(UpStage(c_in, c_out) for c_in, c_out in pairs[1:])
        self.modulations = nn.ModuleList(
            [Modulation(config.delta_dim, pairs[0][1])] + [Modulation(config.delta_dim, c_out) for _, c_out in pairs[1:]]
        )
        self.head = nn.Conv2d(pairs[-1][1], WINDOW_CHANNELS, 1)

    def forward(self, delta_vec, x_map):
        h = self.modulations[0](self.entry(x_map), delta_vec)
        for stage, modulation in zip(self.stages, self.modulations[1:]):
            h = modulation(stage(h), delta_vec)
        return self.head(F.silu(h))


class DomainGameNets(nn.Module):
    """Container of the four parameter sets ``D_X, D_Delta, P_Y, P_I``."""

    def __init__(self, config: NetConfig):
        super().__init__()
        config.check_image_size(config.image_size)
        self.config = config
        self.encoder_x = AnatomyEncoder(config)
        self.encoder_delta = DomainEncoder(config)
        self.decoder_y = SegmentationDecoder(config)
        self.decoder_i = ReconstructionDecoder(config)

    # players of the game, in the order of the two update phases
    @property
    def phase_a_modules(self) -> List[nn.Module]:
        return [self.encoder_x, self.decoder_y]

    @property
    def phase_b_modules(self) -> List[nn.Module]:
        return [self.encoder_delta, self.decoder_i]

    def _check_window(self, window: torch.Tensor) -> Tuple[torch.Tensor, bool]:
        expected = (WINDOW_CHANNELS, self.config.image_size, self.config.image_size)
        unbatched = window.ndim == 3
        batch = window.unsqueeze(0) if unbatched else window
        if batch.ndim != 4 or tuple(batch.shape[1:]) != expected:
            raise ShapeMismatchError(
                title="Window shape mismatch",
                detail=f"expected [B, {expected[0]}, {expected[1]}, {expected[2]}], got {list(window.shape)}",
            )
        return batch, unbatched

    def _check_x_map(self, x_map: torch.Tensor) -> Tuple[torch.Tensor, bool]:
        size = self.config.feature_size
        expected = (self.config.x_channels, size, size)
        unbatched = x_map.ndim == 3
        batch = x_map.unsqueeze(0) if unbatched else x_map
        if batch.ndim != 4 or tuple(batch.shape[1:]) != expected:
            raise ShapeMismatchError(
                title="Anatomical map shape mismatch",
                detail=f"expected [B, {expected[0]}, {expected[1]}, {expected[2]}], got {list(x_map.shape)}",
            )
        return batch, unbatched

    def encode_x(self, window: torch.Tensor) -> torch.Tensor:
        batch, unbatched = self._check_window(window)
        out = self.encoder_x(batch)
        return out[0] if unbatched else out

    def encode_delta(self, window: torch.Tensor) -> torch.Tensor:
        batch, unbatched = self._check_window(window)
        out = self.encoder_delta(batch)
        return out[0] if unbatched else out

    def encode(self, window: torch.Tensor) -> FeaturePair:
        return FeaturePair(x_map=self.encode_x(window), delta_vec=self.encode_delta(window))

    def decode_segmentation(self, x_map: torch.Tensor) -> torch.Tensor:
        batch, unbatched = self._check_x_map(x_map)
        out = self.decoder_y(batch)
        return out[0] if unbatched else out

    def decode_reconstruction(self, delta_vec: torch.Tensor, x_map: torch.Tensor) -> torch.Tensor:
        batch, unbatched = self._check_x_map(x_map)
        delta = delta_vec.unsqueeze(0) if delta_vec.ndim == 1 else delta_vec
        if delta.shape != (batch.shape[0], self.config.delta_dim):
            raise ShapeMismatchError(
                title="Domain vector shape mismatch",
                detail=f"expected [{batch.shape[0]}, {self.config.delta_dim}], got {list(delta_vec.shape)}",
            )
        out = self.decoder_i(delta, batch)
        return out[0] if unbatched else out

    @torch.no_grad()
    def predict_masks(self, windows: torch.Tensor) -> torch.Tensor:
        """Argmax class map for a batch of windows."""
        return self.decode_segmentation(self.encode_x(windows)).argmax(dim=-3)

    def swap_reconstruction(self, window_a: torch.Tensor, window_b: torch.Tensor) -> torch.Tensor:
        """Reconstruct ``window_a``'s anatomy rendered with ``window_b``'s domain vector."""
        return self.decode_reconstruction(self.encode_delta(window_b), self.encode_x(window_a))

    def parameter_report(self) -> Dict[str, int]:
        report = {
            "encoder_x": sum(p.numel() for p in self.encoder_x.parameters()),
            "encoder_delta": sum(p.numel() for p in self.encoder_delta.parameters()),
            "decoder_y": sum(p.numel() for p in self.decoder_y.parameters()),
            "decoder_i": sum(p.numel() for p in self.decoder_i.parameters()),
        }
        report["total"] = sum(report.values())
        return report
