"""Progressive edge-artifact prediction from the RGB feature pyramid.

An Edge Block is a fixed Sobel magnitude followed by a learnable 3x3
convolution (BN, ReLU). Level 1 sees only its features; every later level is
primed with the previous edge map, downsampled and either multiplied into the
features (default, as ``feat * (1 + prior)`` so a near-zero prior does not
annihilate the signal) or concatenated as an extra channel. Only the
coarsest map, at 1/16 resolution, receives supervision.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import FeaturePyramid, expect_tag, init_network_weights

SOBEL_X = ((-1.0, 0.0, 1.0), (-2.0, 0.0, 2.0), (-1.0, 0.0, 1.0))
SOBEL_Y = ((-1.0, -2.0, -1.0), (0.0, 0.0, 0.0), (1.0, 2.0, 1.0))
SOBEL_EPS = 1e-6


@dataclass
class EdgePyramid:
    """Single-channel sigmoid maps at the four pyramid scales, finest first."""

    maps: tuple[torch.Tensor, ...]

    def __post_init__(self):
        if len(self.maps) != 4:
            raise ValueError(f"edge pyramid must have 4 maps, got {len(self.maps)}")

    @property
    def supervised(self) -> torch.Tensor:
        return self.maps[3]


def sobel_gradients(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel correlation with the Sobel pair under reflect padding."""
    if x.dim() != 4:
        raise ValueError(f"expected (B, C, h, w), got {tuple(x.shape)}")
    b, c, h, w = x.shape
    if h < 3 or w < 3:
        raise ValueError(f"spatial size must be >= 3, got {h}x{w}")
    kernel = torch.tensor([SOBEL_X, SOBEL_Y], dtype=x.dtype, device=x.device).unsqueeze(1)
    pad = F.pad(x.reshape(b * c, 1, h, w), (1, 1, 1, 1), mode="reflect")
    g = F.conv2d(pad, kernel)
    g = g.view(b, c, 2, h, w)
    return g[:, :, 0], g[:, :, 1]


def sobel_magnitude(x: torch.Tensor, eps: float = SOBEL_EPS) -> torch.Tensor:
    gx, gy = sobel_gradients(x)
    return torch.sqrt(gx * gx + gy * gy + eps)


class EdgeBlock(nn.Module):
    """Sobel magnitude -> learnable 3x3 conv -> BN -> ReLU, channels kept."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, 1, 1, bias=False)
        self.bn = nn.BatchNorm2d(channels)
        init_network_weights(self.conv)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.relu(self.bn(self.conv(sobel_magnitude(x))))


class EdgeHead(nn.Module):
    def __init__(self, in_dims, width: int = 32, combine: str = "multiply"):
        super().__init__()
        if combine not in ("multiply", "concat"):
            raise ValueError(f"unknown combine mode {combine!r}")
        self.combine = combine
        self.width = width
        pre, blocks, post = [], [], []
        for i, c in enumerate(in_dims):
            extra = 1 if (combine == "concat" and i > 0) else 0
            pre.append(nn.Conv2d(c + extra, width, 1))
            blocks.append(EdgeBlock(width))
            post.append(nn.Conv2d(width, 1, 1))
        self.pre = nn.ModuleList(pre)
        self.blocks = nn.ModuleList(blocks)
        self.post = nn.ModuleList(post)
        for m in list(self.pre) + list(self.post):
            init_network_weights(m)

    def level_forward(self, i: int, feat: torch.Tensor,
                      prior: torch.Tensor | None) -> torch.Tensor:
        """One progressive step: combine prior, 1x1 conv, Edge Block, 1x1 conv,
        sigmoid. The prior must already live on feat's grid."""
        if prior is None:
            x = feat
        elif self.combine == "multiply":
            x = feat * (1.0 + prior)
        else:
            x = torch.cat([feat, prior], dim=1)
        return torch.sigmoid(self.post[i](self.blocks[i](self.pre[i](x))))

    def forward(self, rgb: FeaturePyramid) -> EdgePyramid:
        expect_tag(rgb, "rgb")
        maps = []
        prior = None
        for i, feat in enumerate(rgb.levels):
            if prior is not None:
                prior = F.interpolate(prior, size=feat.shape[-2:], mode="area")
            e = self.level_forward(i, feat, prior)
            maps.append(e)
            prior = e
        return EdgePyramid(tuple(maps))
