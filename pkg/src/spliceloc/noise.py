"""Noise-residual front-end feeding the noise-branch encoder.

Two modes behind one interface (config key ``noise.mode``):

* ``srm_fixed`` (default): a weight-free bank of three classic high-pass
  residual kernels. Output channel k applies kernel k across all three input
  channels with weight 1/3 each, so the residual image stays 3-channel and
  the noise encoder reuses the RGB encoder architecture unchanged. Responses
  are truncated to [-2/255, 2/255] (the usual +-2 gray levels, rescaled to
  [0, 1] input range).
* ``learned_highpass``: a single trainable 3x3 convolution kept high-pass by
  projecting every kernel slice after each optimizer step: center pinned to
  -1, the eight off-center weights shifted to sum to 1.

Reflect padding throughout, so a constant image yields an exactly-zero
residual including at borders. A drop-in pretrained extractor can replace
this module as long as it maps (B,3,H,W) -> (B,3,H,W).
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

# Second-order derivative along x.
SRM_SECOND_ORDER = [
    [0.0, 0.0, 0.0],
    [0.5, -1.0, 0.5],
    [0.0, 0.0, 0.0],
]
# 3x3 square Laplacian-type residual.
SRM_SQUARE_LAPLACIAN = [
    [-0.25, 0.5, -0.25],
    [0.5, -1.0, 0.5],
    [-0.25, 0.5, -0.25],
]
# First-order edge (horizontal forward difference).
SRM_FIRST_ORDER = [
    [0.0, 0.0, 0.0],
    [0.0, -1.0, 1.0],
    [0.0, 0.0, 0.0],
]

SRM_TRUNCATION = 2.0 / 255.0


def srm_weight(dtype=torch.float32) -> torch.Tensor:
    """Effective (3, 3, 3, 3) conv weight: out k = kernel k / 3 on every input
    channel."""
    kernels = torch.tensor(
        [SRM_SECOND_ORDER, SRM_SQUARE_LAPLACIAN, SRM_FIRST_ORDER], dtype=dtype
    )
    return kernels.unsqueeze(1).repeat(1, 3, 1, 1) / 3.0


class SrmResidual(nn.Module):
    """Fixed high-pass bank with truncation; carries no trainable weights."""

    def __init__(self, truncation: float = SRM_TRUNCATION):
        super().__init__()
        self.truncation = truncation
        self.register_buffer("weight", srm_weight())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pad = F.pad(x, (1, 1, 1, 1), mode="reflect")
        res = F.conv2d(pad, self.weight.to(x.dtype))
        return res.clamp(-self.truncation, self.truncation)


class ConstrainedHighPass(nn.Module):
    """Learnable residual extractor constrained to stay high-pass.

    Each (out, in) 3x3 slice satisfies center == -1 and sum(off-center) == 1
    after ``project()``, which the trainer calls after every optimizer step.
    """

    def __init__(self, channels: int = 3):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(channels, channels, 3, 3))
        with torch.no_grad():
            self.weight.normal_(0.0, 0.01)
            self.weight += torch.full((3, 3), 1.0 / 8.0)
        self.project()

    @torch.no_grad()
    def project(self) -> None:
        w = self.weight
        w[:, :, 1, 1] = -1.0
        off_sum = w.sum(dim=(2, 3)) + 1.0  # total minus the -1 center
        w -= ((off_sum - 1.0) / 8.0)[:, :, None, None]
        w[:, :, 1, 1] = -1.0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pad = F.pad(x, (1, 1, 1, 1), mode="reflect")
        return F.conv2d(pad, self.weight)


class NoiseExtractor(nn.Module):
    """Dispatches to the configured residual extractor."""

    def __init__(self, mode: str = "srm_fixed"):
        super().__init__()
        if mode not in ("srm_fixed", "learned_highpass"):
            raise ValueError(f"unknown noise mode {mode!r}")
        self.mode = mode
        self.extractor = SrmResidual() if mode == "srm_fixed" else ConstrainedHighPass()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.size(1) != 3:
            raise ValueError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        out = self.extractor(x)
        return out

    def project(self) -> None:
        if isinstance(self.extractor, ConstrainedHighPass):
            self.extractor.project()
