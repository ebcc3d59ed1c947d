"""Progressive mask prediction over the fused pyramid.

Each scale owns one attention head combining channel attention
(squeeze-excitation) and spatial attention (non-local dot-product affinity
over all positions). The two branch outputs pass through bias-free 1x1
output projections and are residual-summed with the input, so zeroing both
projections reduces the head to identity; a 3x3 convolution plus sigmoid
then emits the single-channel mask. Prediction runs coarse to fine: each
finer level is gated by the upsampled previous mask before its head.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import FeaturePyramid, expect_tag, init_network_weights

# Query rows per block when evaluating large affinities without grad.
_NONLOCAL_CHUNK = 4096


@dataclass
class MaskPyramid:
    """Single-channel sigmoid masks at the four fused scales, finest first."""

    masks: tuple[torch.Tensor, ...]

    def __post_init__(self):
        if len(self.masks) != 4:
            raise ValueError(f"mask pyramid must have 4 masks, got {len(self.masks)}")

    @property
    def final(self) -> torch.Tensor:
        """The finest mask is the network's output."""
        return self.masks[0]


class SqueezeExcite(nn.Module):
    """Global pool -> C/r bottleneck -> sigmoid channel gates."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels < reduction:
            raise ValueError(
                f"channels ({channels}) must be >= reduction ({reduction})"
            )
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = x.mean(dim=(2, 3))
        s = torch.sigmoid(self.fc2(F.relu(self.fc1(s))))
        return x * s[:, :, None, None]


class NonLocalAttention(nn.Module):
    """Dot-product affinity over all h*w positions, inner dimension C/2.

    Returns the aggregated (B, C/2, h, w) value map; the caller projects it
    back to C and adds the residual.
    """

    def __init__(self, channels: int):
        super().__init__()
        inner = max(channels // 2, 1)
        self.inner = inner
        self.scale = inner ** -0.5
        self.theta = nn.Conv2d(channels, inner, 1)
        self.phi = nn.Conv2d(channels, inner, 1)
        self.g = nn.Conv2d(channels, inner, 1)

    def forward(self, x: torch.Tensor, return_affinity: bool = False):
        b, _, h, w = x.shape
        n = h * w
        q = self.theta(x).flatten(2).transpose(1, 2)  # (B, N, d)
        k = self.phi(x).flatten(2)                    # (B, d, N)
        v = self.g(x).flatten(2).transpose(1, 2)      # (B, N, d)
        if return_affinity or torch.is_grad_enabled() or n <= _NONLOCAL_CHUNK:
            affinity = torch.softmax(torch.bmm(q, k) * self.scale, dim=-1)
            out = torch.bmm(affinity, v)
        else:
            # Row-blocked evaluation: identical values, bounded peak memory.
            chunks = []
            for start in range(0, n, _NONLOCAL_CHUNK):
                block = torch.softmax(
                    torch.bmm(q[:, start: start + _NONLOCAL_CHUNK], k) * self.scale, dim=-1
                )
                chunks.append(torch.bmm(block, v))
            out = torch.cat(chunks, dim=1)
            affinity = None
        out = out.transpose(1, 2).reshape(b, self.inner, h, w)
        if return_affinity:
            return out, affinity
        return out


class AttentionMaskHead(nn.Module):
    """Parallel channel + spatial attention with residual sum, then a 3x3
    conv + sigmoid mask."""

    def __init__(self, channels: int, se_reduction: int = 4):
        super().__init__()
        self.se = SqueezeExcite(channels, se_reduction)
        self.nonlocal_attn = NonLocalAttention(channels)
        self.channel_proj = nn.Conv2d(channels, channels, 1, bias=False)
        self.spatial_proj = nn.Conv2d(self.nonlocal_attn.inner, channels, 1, bias=False)
        self.mask_conv = nn.Conv2d(channels, 1, 3, 1, 1)
        # Small-normal projections: near-identity start, but gradients still
        # reach the attention parameters on the first step.
        nn.init.normal_(self.channel_proj.weight, std=0.02)
        nn.init.normal_(self.spatial_proj.weight, std=0.02)
        init_network_weights(self.mask_conv)

    def forward(self, feat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        attended = (
            feat
            + self.channel_proj(self.se(feat))
            + self.spatial_proj(self.nonlocal_attn(feat))
        )
        mask = torch.sigmoid(self.mask_conv(attended))
        return attended, mask


class LocalizationHead(nn.Module):
    """Four per-scale attention heads chained coarse to fine through mask
    priors."""

    def __init__(self, dims, se_reduction: int = 4):
        super().__init__()
        self.heads = nn.ModuleList(AttentionMaskHead(c, se_reduction) for c in dims)

    def level_forward(self, i: int, feat: torch.Tensor,
                      prior: torch.Tensor | None) -> torch.Tensor:
        """Gate feat with a coarser mask prior (already on feat's grid) and
        run head i."""
        if prior is not None:
            feat = feat * prior
        _, mask = self.heads[i](feat)
        return mask

    def forward(self, fused: FeaturePyramid) -> MaskPyramid:
        expect_tag(fused, "fused_domain")
        masks: list[torch.Tensor | None] = [None] * 4
        prior = None
        for i in (3, 2, 1, 0):
            feat = fused.levels[i]
            if prior is not None:
                prior = F.interpolate(prior, size=feat.shape[-2:],
                                      mode="bilinear", align_corners=False)
            masks[i] = self.level_forward(i, feat, prior)
            prior = masks[i]
        return MaskPyramid(tuple(masks))


def finalize_masks(pyramid: MaskPyramid, out_h: int, out_w: int,
                   threshold: float = 0.5) -> torch.Tensor:
    """Upsample the finest mask to (out_h, out_w) and binarize.

    A pixel is forged iff its probability is strictly greater than the
    threshold. Returns uint8 (B, out_h, out_w).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    prob = F.interpolate(pyramid.final, size=(out_h, out_w),
                         mode="bilinear", align_corners=False)
    return (prob[:, 0] > threshold).to(torch.uint8)
