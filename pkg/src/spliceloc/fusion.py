"""Cross-scale fusion within a domain and cross-domain fusion across branches.

Cross-scale fusion (CSF) aggregates each level with its pyramid neighbors:
resample neighbors to the level's grid (bilinear up, area down), concatenate
on channels, reduce with a 1x1 convolution to the level's fused width, then
BatchNorm and ReLU. Ends of the pyramid use the available neighbor only.

Cross-domain fusion (CDF) then merges the RGB and noise pyramids per level:
channel concat, 1x1 reduction, a conditional 3x3 convolution whose kernel is
a per-example sigmoid-routed mixture of expert kernels, BatchNorm, ReLU.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import FeaturePyramid, expect_tag, init_network_weights


def match_size(t: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Resample to a target grid: bilinear when growing, area-average when
    shrinking."""
    if tuple(t.shape[-2:]) == tuple(size):
        return t
    if t.shape[-2] > size[0]:
        return F.interpolate(t, size=size, mode="area")
    return F.interpolate(t, size=size, mode="bilinear", align_corners=False)


class CrossScaleFusion(nn.Module):
    def __init__(self, in_dims, out_dims=None):
        super().__init__()
        in_dims = tuple(in_dims)
        out_dims = tuple(out_dims) if out_dims is not None else in_dims
        self.in_dims = in_dims
        self.out_dims = out_dims
        self.reduce = nn.ModuleList()
        self.bn = nn.ModuleList()
        for i in range(4):
            cat_dim = sum(in_dims[max(0, i - 1): i + 2])
            self.reduce.append(nn.Conv2d(cat_dim, out_dims[i], 1, bias=False))
            self.bn.append(nn.BatchNorm2d(out_dims[i]))
        self.apply(init_network_weights)

    def forward(self, pyramid: FeaturePyramid) -> FeaturePyramid:
        expect_tag(pyramid, "rgb", "noise")
        levels = pyramid.levels
        fused = []
        for i in range(4):
            size = levels[i].shape[-2:]
            neighbors = [match_size(levels[j], size)
                         for j in range(max(0, i - 1), min(4, i + 2))]
            x = torch.cat(neighbors, dim=1)
            fused.append(F.relu(self.bn[i](self.reduce[i](x))))
        return FeaturePyramid(tuple(fused), "fused_scale")


class CondConv2d(nn.Module):
    """Convolution with a per-example kernel: sigmoid routing weights over K
    expert kernels, computed from globally pooled input features."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 num_experts: int = 4, padding: int = 1):
        super().__init__()
        if num_experts < 1:
            raise ValueError("num_experts must be >= 1")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.padding = padding
        self.num_experts = num_experts
        self.experts = nn.Parameter(
            torch.empty(num_experts, out_channels, in_channels, kernel_size, kernel_size)
        )
        self.expert_bias = nn.Parameter(torch.zeros(num_experts, out_channels))
        self.router = nn.Linear(in_channels, num_experts)
        fan_out = kernel_size * kernel_size * out_channels
        nn.init.normal_(self.experts, std=(2.0 / fan_out) ** 0.5)
        nn.init.trunc_normal_(self.router.weight, std=0.02)
        nn.init.zeros_(self.router.bias)

    def routing_weights(self, x: torch.Tensor) -> torch.Tensor:
        pooled = x.mean(dim=(2, 3))
        return torch.sigmoid(self.router(pooled))

    def forward(self, x: torch.Tensor, routing: torch.Tensor | None = None) -> torch.Tensor:
        b, _, h, w = x.shape
        r = self.routing_weights(x) if routing is None else routing
        weight = torch.einsum("bk,koihw->boihw", r, self.experts)
        bias = r @ self.expert_bias
        out = F.conv2d(
            x.reshape(1, b * self.in_channels, h, w),
            weight.reshape(b * self.out_channels, self.in_channels, *weight.shape[-2:]),
            bias.reshape(-1),
            padding=self.padding,
            groups=b,
        )
        return out.view(b, self.out_channels, *out.shape[-2:])


class CrossDomainFusion(nn.Module):
    def __init__(self, dims, num_experts: int = 4):
        super().__init__()
        dims = tuple(dims)
        self.dims = dims
        self.reduce = nn.ModuleList(nn.Conv2d(2 * c, c, 1) for c in dims)
        self.cond = nn.ModuleList(CondConv2d(c, c, 3, num_experts) for c in dims)
        self.bn = nn.ModuleList(nn.BatchNorm2d(c) for c in dims)
        for m in self.reduce:
            init_network_weights(m)

    def forward(self, rgb: FeaturePyramid, noise: FeaturePyramid) -> FeaturePyramid:
        expect_tag(rgb, "fused_scale")
        expect_tag(noise, "fused_scale")
        fused = []
        for i in range(4):
            a, b = rgb.levels[i], noise.levels[i]
            if a.shape != b.shape:
                raise ValueError(
                    f"branch shape mismatch at level {i + 1}: "
                    f"{tuple(a.shape)} vs {tuple(b.shape)}"
                )
            x = self.reduce[i](torch.cat([a, b], dim=1))
            x = self.cond[i](x)
            fused.append(F.relu(self.bn[i](x)))
        return FeaturePyramid(tuple(fused), "fused_domain")
