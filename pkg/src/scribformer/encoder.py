"""Hybrid encoder: a convolutional pyramid and a token stream coupled per stage.

The conv path emits five feature maps c1..c5 at 1/2, 1/4, 1/8, 1/16, 1/16 of
the input resolution. A patch projection of c2 seeds the token stream, whose
grid equals the c5 grid; inside each of the three paired stages the branches
exchange information through the feature coupling units (conv -> tokens via
pool/LayerNorm/GELU, tokens -> conv via BatchNorm/ReLU/interpolation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

TOTAL_STRIDE = 16  # input side / token grid side


@dataclass
class EncoderConfig:
    channels: tuple[int, int, int, int, int] = (16, 32, 64, 128, 128)
    token_dim: int = 128
    num_heads: int = 4
    mlp_ratio: int = 4
    patch_size: int = 4
    pos_grid: int = 16  # reference token grid side for the learned positional embedding

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 5:
            raise ConfigError("need exactly 5 stage channel counts")
        if any(a > b for a, b in zip(self.channels, self.channels[1:])):
            raise ConfigError(f"stage channels must be nondecreasing, got {self.channels}")
        if self.token_dim % self.num_heads:
            raise ConfigError(
                f"token_dim {self.token_dim} must be divisible by num_heads {self.num_heads}"
            )


@dataclass
class EncoderState:
    """Handoff between the encoder, the two decoders and the ACAM branch."""

    conv_features: list[torch.Tensor]          # c1..c5
    final_tokens: torch.Tensor                 # (B, N, D)
    per_stage_tokens: list[torch.Tensor] = field(default_factory=list)
    token_grid: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if len(self.conv_features) != 5:
            raise ConfigError(f"expected 5 conv stage outputs, got {len(self.conv_features)}")
        c5 = self.conv_features[4]
        if tuple(c5.shape[-2:]) != tuple(self.token_grid):
            raise ConfigError(
                f"c5 spatial size {tuple(c5.shape[-2:])} != token grid {self.token_grid}"
            )


class Stem(nn.Module):
    """Three conv blocks producing the two early embeddings (1/2 and 1/4 res)."""

    def __init__(self, ch1: int, ch2: int, in_channels: int = 1):
        super().__init__()
        self.block1 = nn.Sequential(
            nn.Conv2d(in_channels, ch1, 3, stride=2, padding=1),
            nn.BatchNorm2d(ch1),
            nn.ReLU(inplace=True),
        )
        self.block2 = nn.Sequential(
            nn.Conv2d(ch1, ch1, 3, padding=1),
            nn.BatchNorm2d(ch1),
            nn.ReLU(inplace=True),
        )
        self.block3 = nn.Sequential(
            nn.Conv2d(ch1, ch2, 3, stride=2, padding=1),
            nn.BatchNorm2d(ch2),
            nn.ReLU(inplace=True),
        )

    def forward(self, img: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        c1 = self.block2(self.block1(img))
        c2 = self.block3(c1)
        return c1, c2


class ConvBlock(nn.Module):
    """Residual bottleneck: 1x1 reduce, 3x3 spatial (optionally strided), 1x1 expand."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        mid = max(out_ch // 4, 8)
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, mid, 1),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, mid, 3, stride=stride, padding=1),
            nn.BatchNorm2d(mid),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid, out_ch, 1),
            nn.BatchNorm2d(out_ch),
        )
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride), nn.BatchNorm2d(out_ch)
            )
        else:
            self.shortcut = nn.Identity()
        self.act = nn.ReLU(inplace=True)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.act(self.body(f) + self.shortcut(f))


class TokenProjector(nn.Module):
    """Non-overlapping patch flattening + linear projection + positional embedding."""

    def __init__(self, in_ch: int, dim: int, patch_size: int, pos_grid: int):
        super().__init__()
        self.patch_size = patch_size
        self.pos_grid = pos_grid
        self.proj = nn.Conv2d(in_ch, dim, kernel_size=patch_size, stride=patch_size)
        self.pos_embed = nn.Parameter(torch.empty(1, pos_grid * pos_grid, dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def _pos(self, h: int, w: int) -> torch.Tensor:
        if (h, w) == (self.pos_grid, self.pos_grid):
            return self.pos_embed
        # resample the reference grid when the input size differs
        grid = self.pos_embed.transpose(1, 2).reshape(1, -1, self.pos_grid, self.pos_grid)
        grid = F.interpolate(grid, size=(h, w), mode="bilinear", align_corners=True)
        return grid.flatten(2).transpose(1, 2)

    def forward(self, f: torch.Tensor) -> tuple[torch.Tensor, tuple[int, int]]:
        if f.shape[-2] % self.patch_size or f.shape[-1] % self.patch_size:
            raise ConfigError(
                f"feature size {tuple(f.shape[-2:])} not divisible by patch {self.patch_size}"
            )
        x = self.proj(f)
        h, w = x.shape[-2:]
        tokens = x.flatten(2).transpose(1, 2) + self._pos(h, w)
        return tokens, (h, w)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim**-0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, return_attn: bool = False):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        out = self.proj(out)
        return (out, attn) if return_attn else out


class TransformerBlock(nn.Module):
    """Pre-norm residual self-attention followed by a pre-norm residual MLP."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim)
        )

    def forward(self, x: torch.Tensor, return_attn: bool = False):
        if return_attn:
            out, attn = self.attn(self.norm1(x), return_attn=True)
            x = x + out
            return x + self.mlp(self.norm2(x)), attn
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class FCUDown(nn.Module):
    """Conv features -> token space: 1x1 conv, average pool, LayerNorm, GELU."""

    def __init__(self, in_ch: int, dim: int):
        super().__init__()
        self.align = nn.Conv2d(in_ch, dim, 1)
        self.norm = nn.LayerNorm(dim)
        self.act = nn.GELU()

    def forward(self, f: torch.Tensor, grid: tuple[int, int]) -> torch.Tensor:
        h, w = grid
        if f.shape[-2] % h or f.shape[-1] % w:
            raise RuntimeError(
                f"feature map {tuple(f.shape[-2:])} not pool-compatible with token grid {grid}"
            )
        x = self.align(f)
        window = (f.shape[-2] // h, f.shape[-1] // w)
        if window != (1, 1):
            x = F.avg_pool2d(x, kernel_size=window)
        x = x.flatten(2).transpose(1, 2)
        return self.act(self.norm(x))


class FCUUp(nn.Module):
    """Tokens -> conv space: 1x1 conv, BatchNorm, ReLU, bilinear interpolation."""

    def __init__(self, dim: int, out_ch: int):
        super().__init__()
        self.align = nn.Conv2d(dim, out_ch, 1)
        self.norm = nn.BatchNorm2d(out_ch)
        self.act = nn.ReLU(inplace=True)

    def forward(
        self, tokens: torch.Tensor, grid: tuple[int, int], target_hw: tuple[int, int]
    ) -> torch.Tensor:
        h, w = grid
        x = tokens.transpose(1, 2).reshape(tokens.shape[0], -1, h, w)
        x = self.act(self.norm(self.align(x)))
        if tuple(target_hw) != (h, w):
            x = F.interpolate(x, size=tuple(target_hw), mode="bilinear", align_corners=True)
        return x


class _PairedStage(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, cfg: EncoderConfig):
        super().__init__()
        self.conv = ConvBlock(in_ch, out_ch, stride=stride)
        self.transformer = TransformerBlock(cfg.token_dim, cfg.num_heads, cfg.mlp_ratio)
        self.fcu_down = FCUDown(out_ch, cfg.token_dim)
        self.fcu_up = FCUUp(cfg.token_dim, out_ch)


class HybridEncoder(nn.Module):
    """Two stem embeddings plus three conv/transformer paired stages."""

    STAGE_STRIDES = (2, 2, 1)  # c2 -> c3 -> c4 -> c5

    def __init__(self, config: EncoderConfig, in_channels: int = 1, use_transformer: bool = True):
        super().__init__()
        self.config = config
        self.use_transformer = use_transformer
        ch = config.channels
        self.stem = Stem(ch[0], ch[1], in_channels)
        if use_transformer:
            self.projector = TokenProjector(
                ch[1], config.token_dim, config.patch_size, config.pos_grid
            )
        self.stages = nn.ModuleList(
            _PairedStage(ch[i + 1], ch[i + 2], self.STAGE_STRIDES[i], config) for i in range(3)
        )
        self._init_transformer_weights()

    def _init_transformer_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

    def forward(self, img: torch.Tensor) -> EncoderState:
        if img.shape[-2] % TOTAL_STRIDE or img.shape[-1] % TOTAL_STRIDE:
            raise ConfigError(f"input size {tuple(img.shape[-2:])} not divisible by {TOTAL_STRIDE}")
        c1, c2 = self.stem(img)
        feats = [c1, c2]
        f = c2
        if self.use_transformer:
            tokens, grid = self.projector(c2)
            per_stage = []
            for stage in self.stages:
                f = stage.conv(f)
                tokens = stage.transformer(tokens + stage.fcu_down(f, grid))
                f = f + stage.fcu_up(tokens, grid, f.shape[-2:])
                per_stage.append(tokens)
                feats.append(f)
            return EncoderState(feats, tokens, per_stage, grid)

        # pure conv pyramid: the token stream is identically zero
        for stage in self.stages:
            f = stage.conv(f)
            feats.append(f)
        grid = tuple(f.shape[-2:])
        zeros = f.new_zeros(f.shape[0], grid[0] * grid[1], self.config.token_dim)
        return EncoderState(feats, zeros, [zeros, zeros, zeros], grid)

    @torch.no_grad()
    def attention_maps(self, img: torch.Tensor) -> list[torch.Tensor]:
        """Per-stage attention tensors (B, heads, N, N); diagnostic only."""
        if not self.use_transformer:
            return []
        c1, c2 = self.stem(img)
        tokens, grid = self.projector(c2)
        f = c2
        maps = []
        for stage in self.stages:
            f = stage.conv(f)
            tokens, attn = stage.transformer(tokens + stage.fcu_down(f, grid), return_attn=True)
            f = f + stage.fcu_up(tokens, grid, f.shape[-2:])
            maps.append(attn)
        return maps


def expected_shapes(size: int, config: EncoderConfig) -> list[tuple[int, int, int]]:
    """(channels, H, W) for c1..c5 under the fixed resolution schedule."""
    divs = (2, 4, 8, 16, 16)
    return [(c, size // d, size // d) for c, d in zip(config.channels, divs)]


def token_count(size: int) -> int:
    return (size // TOTAL_STRIDE) ** 2
