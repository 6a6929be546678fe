"""Dual segmentation heads over the shared encoder state.

The CNN decoder is UNet-like: each upsampling level concatenates the matching
encoder stage output before convolving. The transformer decoder fuses the
per-stage token sequences (layer-normalized, then summed), reshapes them to
the token grid and upsamples with interpolate+conv blocks to avoid
checkerboard artifacts.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import EncoderState

_CLS = -3  # class axis for (K, H, W) and (B, K, H, W)


class DoubleConv(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


def _up2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=True)


class CNNDecoder(nn.Module):
    """UNet-style path from c5 back to full resolution with c4..c1 skips."""

    def __init__(self, channels: tuple[int, ...], num_classes: int):
        super().__init__()
        c1, c2, c3, c4, c5 = channels
        self.fuse4 = DoubleConv(c5 + c4, c4)   # c5 and c4 share a resolution
        self.fuse3 = DoubleConv(c4 + c3, c3)
        self.fuse2 = DoubleConv(c3 + c2, c2)
        self.fuse1 = DoubleConv(c2 + c1, c1)
        self.final = DoubleConv(c1, c1)
        self.head = nn.Conv2d(c1, num_classes, 1)

    def forward(self, state: EncoderState) -> torch.Tensor:
        c1, c2, c3, c4, c5 = state.conv_features
        d = self.fuse4(torch.cat([c5, c4], dim=1))
        d = self.fuse3(torch.cat([_up2(d), c3], dim=1))
        d = self.fuse2(torch.cat([_up2(d), c2], dim=1))
        d = self.fuse1(torch.cat([_up2(d), c1], dim=1))
        d = self.final(_up2(d))
        return self.head(d)


class UpBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(_up2(x))


class TransformerDecoder(nn.Module):
    """Sum of normalized per-stage tokens, upsampled 16x to full resolution."""

    def __init__(self, token_dim: int, num_classes: int, num_stages: int = 3):
        super().__init__()
        self.norms = nn.ModuleList(nn.LayerNorm(token_dim) for _ in range(num_stages))
        widths = (token_dim, 64, 32, 16, 16)
        self.ups = nn.ModuleList(UpBlock(widths[i], widths[i + 1]) for i in range(4))
        self.head = nn.Conv2d(widths[-1], num_classes, 1)

    def forward(self, state: EncoderState) -> torch.Tensor:
        h, w = state.token_grid
        fused = sum(norm(t) for norm, t in zip(self.norms, state.per_stage_tokens))
        x = fused.transpose(1, 2).reshape(fused.shape[0], -1, h, w)
        for up in self.ups:
            x = up(x)
        return self.head(x)


def softmax_probs(logits: torch.Tensor) -> torch.Tensor:
    """Per-pixel class distribution (softmax over the class axis)."""
    return torch.softmax(logits, dim=_CLS)


def predict_mask(probs: torch.Tensor) -> torch.Tensor:
    """Per-pixel argmax; ties resolve to the lowest class index."""
    return probs.argmax(dim=_CLS)
