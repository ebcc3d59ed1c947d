"""Hierarchical four-stage encoder shared by the RGB and noise branches.

Each stage halves the spatial resolution with an overlapping strided
convolution and then runs a stack of token-mixing blocks: efficient
self-attention with spatial reduction of the key/value grid (default), or a
depthwise-convolution mixer. Output channels follow (32, 64, 160, 256) at
scales (H/2, H/4, H/8, H/16) in the default configuration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

DOMAIN_TAGS = ("rgb", "noise", "fused_scale", "fused_domain")


@dataclass
class FeaturePyramid:
    """Four feature maps, finest first, tagged by which domain produced them."""

    levels: tuple[torch.Tensor, ...]
    domain_tag: str

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ValueError(f"pyramid must have exactly 4 levels, got {len(self.levels)}")
        if self.domain_tag not in DOMAIN_TAGS:
            raise ValueError(f"unknown domain tag {self.domain_tag!r}")

    def sizes(self) -> tuple[tuple[int, int], ...]:
        return tuple(t.shape[-2:] for t in self.levels)

    def channels(self) -> tuple[int, ...]:
        return tuple(t.shape[1] for t in self.levels)


def expect_tag(pyramid: FeaturePyramid, *tags: str) -> None:
    if pyramid.domain_tag not in tags:
        raise ValueError(f"expected pyramid tagged {tags}, got {pyramid.domain_tag!r}")


def validate_image_batch(x: torch.Tensor) -> None:
    """Network inputs are B x 3 x H x W with H, W divisible by 16."""
    if x.dim() != 4 or x.size(1) != 3:
        raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
    if x.size(0) < 1:
        raise ValueError("batch must contain at least one image")
    h, w = x.shape[-2:]
    if h % 16 != 0 or w % 16 != 0:
        raise ValueError(f"spatial dims must be divisible by 16, got {h}x{w}")
    if not torch.isfinite(x).all():
        raise ValueError("input contains NaN or Inf")


class SpatialReductionAttention(nn.Module):
    """Multi-head self-attention whose keys/values come from an sr-strided grid."""

    def __init__(self, dim: int, heads: int, sr_ratio: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        self.sr_ratio = sr_ratio
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, kernel_size=sr_ratio, stride=sr_ratio)
            self.sr_norm = nn.LayerNorm(dim)

    def forward(self, tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
        b, n, c = tokens.shape
        q = self.q(tokens).view(b, n, self.heads, self.head_dim).transpose(1, 2)
        src = tokens
        if self.sr_ratio > 1:
            grid = tokens.transpose(1, 2).reshape(b, c, h, w)
            grid = self.sr(grid)
            src = self.sr_norm(grid.flatten(2).transpose(1, 2))
        kv = self.kv(src).view(b, -1, 2, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class TokenMlp(nn.Module):
    """Pointwise MLP with a depthwise 3x3 between, so tokens keep position."""

    def __init__(self, dim: int, mlp_ratio: float):
        super().__init__()
        hidden = max(int(dim * mlp_ratio), dim)
        self.fc1 = nn.Linear(dim, hidden)
        self.dw = nn.Conv2d(hidden, hidden, 3, 1, 1, groups=hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
        b, n, _ = tokens.shape
        x = self.fc1(tokens)
        x = x.transpose(1, 2).reshape(b, -1, h, w)
        x = self.dw(x).flatten(2).transpose(1, 2)
        return self.fc2(F.gelu(x))


class AttentionBlock(nn.Module):
    def __init__(self, dim: int, heads: int, sr_ratio: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SpatialReductionAttention(dim, heads, sr_ratio)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = TokenMlp(dim, mlp_ratio)

    def forward(self, tokens: torch.Tensor, h: int, w: int) -> torch.Tensor:
        tokens = tokens + self.attn(self.norm1(tokens), h, w)
        tokens = tokens + self.mlp(self.norm2(tokens), h, w)
        return tokens


class ConvMixerBlock(nn.Module):
    """Depthwise 7x7 + pointwise alternative mixer; per-sample GroupNorm."""

    def __init__(self, dim: int, mlp_ratio: float):
        super().__init__()
        hidden = max(int(dim * mlp_ratio), dim)
        self.norm = nn.GroupNorm(1, dim)
        self.dw = nn.Conv2d(dim, dim, 7, 1, 3, groups=dim)
        self.pw1 = nn.Conv2d(dim, hidden, 1)
        self.pw2 = nn.Conv2d(hidden, dim, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.pw2(F.gelu(self.pw1(self.dw(self.norm(x)))))


class EncoderStage(nn.Module):
    def __init__(self, in_dim: int, dim: int, depth: int, heads: int,
                 sr_ratio: int, mixer: str, mlp_ratio: float):
        super().__init__()
        self.mixer = mixer
        self.down = nn.Conv2d(in_dim, dim, 3, 2, 1)
        self.down_norm = nn.LayerNorm(dim)
        if mixer == "attention":
            self.blocks = nn.ModuleList(
                AttentionBlock(dim, heads, sr_ratio, mlp_ratio) for _ in range(depth)
            )
            self.out_norm = nn.LayerNorm(dim)
        else:
            self.blocks = nn.ModuleList(ConvMixerBlock(dim, mlp_ratio) for _ in range(depth))
            self.out_norm = nn.GroupNorm(1, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.down(x)
        b, c, h, w = x.shape
        if self.mixer == "attention":
            tokens = self.down_norm(x.flatten(2).transpose(1, 2))
            for blk in self.blocks:
                tokens = blk(tokens, h, w)
            tokens = self.out_norm(tokens)
            return tokens.transpose(1, 2).reshape(b, c, h, w)
        x = self.down_norm(x.flatten(2).transpose(1, 2)).transpose(1, 2).reshape(b, c, h, w)
        for blk in self.blocks:
            x = blk(x)
        return self.out_norm(x)


def init_network_weights(module: nn.Module) -> None:
    """Truncated-normal projections, fan-out-scaled convolutions."""
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Conv2d):
        fan_out = module.kernel_size[0] * module.kernel_size[1] * module.out_channels
        fan_out //= module.groups
        nn.init.normal_(module.weight, mean=0.0, std=math.sqrt(2.0 / fan_out))
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class HierarchicalEncoder(nn.Module):
    """Four halving stages; forward returns a FeaturePyramid with this
    branch's domain tag."""

    def __init__(self, dims=(32, 64, 160, 256), depths=(2, 2, 2, 2),
                 heads=(1, 2, 5, 8), sr_ratios=(8, 4, 2, 1),
                 mixer: str = "attention", mlp_ratio: float = 4.0,
                 domain_tag: str = "rgb", in_channels: int = 3):
        super().__init__()
        if domain_tag not in ("rgb", "noise"):
            raise ValueError(f"encoder domain must be rgb or noise, got {domain_tag!r}")
        self.domain_tag = domain_tag
        self.dims = tuple(dims)
        prev = in_channels
        stages = []
        for dim, depth, nh, sr in zip(dims, depths, heads, sr_ratios):
            stages.append(EncoderStage(prev, dim, depth, nh, sr, mixer, mlp_ratio))
            prev = dim
        self.stages = nn.ModuleList(stages)
        self.apply(init_network_weights)

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        if x.dim() != 4 or x.size(1) != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % 16 != 0 or w % 16 != 0:
            raise ValueError(f"spatial dims must be divisible by 16, got {h}x{w}")
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        return FeaturePyramid(tuple(levels), self.domain_tag)
