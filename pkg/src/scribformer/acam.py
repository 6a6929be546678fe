"""Attention-guided class activation maps.

Each encoder stage output passes channel attention modulation, spatial
attention modulation and a 1x1 class head, giving one K-channel activation
map per stage. Attention values are gated by a Gaussian density centered at
their own mean (rescaled so the peak gate is 1), which amplifies near-mean
responses. A small strided-conv alignment encoder brings shallow maps down to
the deepest grid so the consistency loss can compare them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, ValidationError

SIGMA_FLOOR = 1e-5


@dataclass
class ModulationParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")


def gaussian_density(values: torch.Tensor, params: ModulationParams) -> torch.Tensor:
    """Elementwise Gaussian density of the attention values."""
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * params.sigma)
    return norm * torch.exp(-((values - params.mu) ** 2) / (2.0 * params.sigma**2))


def gaussian_modulation(values: torch.Tensor, params: ModulationParams) -> torch.Tensor:
    """Gaussian gate in (0, 1]: the density divided by its peak.

    Maximal (1.0) exactly where values equal the mean, strictly decreasing
    with distance from it.
    """
    return torch.exp(-((values - params.mu) ** 2) / (2.0 * params.sigma**2))


def _adaptive_gate(attn: torch.Tensor, dims: tuple[int, ...]) -> torch.Tensor:
    """Gate each sample's attention by a Gaussian at its own mean/std."""
    mu = attn.mean(dim=dims, keepdim=True)
    sigma = attn.std(dim=dims, keepdim=True, unbiased=False).clamp_min(SIGMA_FLOOR)
    return torch.exp(-((attn - mu) ** 2) / (2.0 * sigma**2))


class ChannelAttentionModulation(nn.Module):
    """Per-channel attention from spatial pooling + 1-D conv across channels.

    Replicate padding keeps edge channels on the same footing as interior
    ones, so identical channels always get identical gates.
    """

    def __init__(self, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv1d(1, 1, kernel_size, padding=kernel_size // 2, padding_mode="replicate")

    def attention(self, f: torch.Tensor) -> torch.Tensor:
        pooled = f.mean(dim=(-2, -1))                       # (B, C)
        return self.conv(pooled.unsqueeze(1)).squeeze(1)    # (B, C)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        gate = _adaptive_gate(self.attention(f), dims=(-1,))
        return f * gate.unsqueeze(-1).unsqueeze(-1)


class SpatialAttentionModulation(nn.Module):
    """Per-pixel attention from channel pooling + 2-D conv (replicate padding)."""

    def __init__(self, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(1, 1, kernel_size, padding=kernel_size // 2, padding_mode="replicate")

    def attention(self, f: torch.Tensor) -> torch.Tensor:
        return self.conv(f.mean(dim=-3, keepdim=True))      # (B, 1, H, W)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        gate = _adaptive_gate(self.attention(f), dims=(-2, -1))
        return f * gate


class AcamStage(nn.Module):
    """Channel modulation, spatial modulation, then a 1x1 class head."""

    def __init__(self, in_ch: int, num_classes: int):
        super().__init__()
        self.channel_mod = ChannelAttentionModulation()
        self.spatial_mod = SpatialAttentionModulation()
        self.head = nn.Conv2d(in_ch, num_classes, 1)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.head(self.spatial_mod(self.channel_mod(f)))


class AcamAlignEncoder(nn.Module):
    """Four conv layers; a stage-i map enters at layer i and exits at layer 4.

    Layers 1-3 have stride 2 (one per resolution gap down to the deepest
    grid); layer 4 keeps resolution, so the stage-4 map passes exactly one
    layer and the stage-1 map passes three strided layers plus the final one.
    """

    STRIDES = (2, 2, 2, 1)

    def __init__(self, num_classes: int):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.Conv2d(num_classes, num_classes, 3, stride=s, padding=1) for s in self.STRIDES
        )

    def forward(self, acam: torch.Tensor, stage: int) -> torch.Tensor:
        if not 1 <= stage <= 4:
            raise ValidationError(f"alignment is defined for stages 1..4, got {stage}")
        x = acam
        for layer in self.layers[stage - 1 :]:
            x = layer(x)
        return x


class AcamBranch(nn.Module):
    """Per-stage activation map heads plus the shared alignment encoder."""

    def __init__(self, stage_channels: tuple[int, ...], num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        self.stages = nn.ModuleList(AcamStage(c, num_classes) for c in stage_channels)
        self.align_encoder = AcamAlignEncoder(num_classes)

    def forward(self, conv_features: list[torch.Tensor]) -> list[torch.Tensor]:
        """Raw (pre-sigmoid) activation maps for c1..c5."""
        return [stage(f) for stage, f in zip(self.stages, conv_features)]

    def align(self, acam: torch.Tensor, stage: int) -> torch.Tensor:
        return self.align_encoder(acam, stage)
