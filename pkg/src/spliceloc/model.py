"""The full dual-branch localization network.

Pipeline: the RGB image feeds one hierarchical encoder directly and, after
the high-pass residual front-end, a second independent encoder; each branch
is cross-scale fused, the two branches are cross-domain fused, the raw RGB
pyramid drives the progressive edge head, and the fused pyramid drives the
progressive localization head. The finest mask is the prediction; the
coarsest edge map is the supervised boundary output.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .edges import EdgeHead, EdgePyramid
from .encoder import FeaturePyramid, HierarchicalEncoder, validate_image_batch
from .fusion import CrossDomainFusion, CrossScaleFusion
from .heads import LocalizationHead, MaskPyramid
from .noise import NoiseExtractor


class NetOutputs(NamedTuple):
    masks: MaskPyramid
    edges: EdgePyramid
    rgb: FeaturePyramid
    noise: FeaturePyramid
    fused: FeaturePyramid


class SpliceLocNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = (cfg or ModelConfig()).validate()
        self.cfg = cfg
        enc = dict(dims=cfg.dims, depths=cfg.depths, heads=cfg.heads,
                   sr_ratios=cfg.sr_ratios, mixer=cfg.mixer, mlp_ratio=cfg.mlp_ratio)
        self.noise_front = NoiseExtractor(cfg.noise_mode)
        self.rgb_encoder = HierarchicalEncoder(domain_tag="rgb", **enc)
        self.noise_encoder = HierarchicalEncoder(domain_tag="noise", **enc)
        self.rgb_csf = CrossScaleFusion(cfg.dims, cfg.fused_dims)
        self.noise_csf = CrossScaleFusion(cfg.dims, cfg.fused_dims)
        self.cdf = CrossDomainFusion(cfg.fused_dims, cfg.condconv_experts)
        self.edge_head = EdgeHead(cfg.dims, cfg.edge_width, cfg.edge_combine)
        self.loc_head = LocalizationHead(cfg.fused_dims, cfg.se_reduction)

    def forward(self, x: torch.Tensor) -> NetOutputs:
        validate_image_batch(x)
        rgb = self.rgb_encoder(x)
        noise = self.noise_encoder(self.noise_front(x))
        fused = self.cdf(self.rgb_csf(rgb), self.noise_csf(noise))
        edges = self.edge_head(rgb)
        masks = self.loc_head(fused)
        return NetOutputs(masks, edges, rgb, noise, fused)

    def project_constraints(self) -> None:
        """Re-apply hard weight constraints; call after every optimizer step."""
        self.noise_front.project()


def pad_to_multiple(x: torch.Tensor, multiple: int = 16) -> tuple[torch.Tensor, tuple[int, int]]:
    """Reflect-pad right/bottom so H and W divide `multiple`; returns the
    padded tensor and the original (H, W)."""
    h, w = x.shape[-2:]
    if h < multiple or w < multiple:
        raise ValueError(f"inputs must be at least {multiple}x{multiple}, got {h}x{w}")
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="reflect")
    return x, (h, w)


def image_to_batch(image: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """(H, W, 3) float array in [0, 1] -> (1, 3, H, W) tensor."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))).to(dtype).unsqueeze(0)


@torch.no_grad()
def predict_probabilities(model: SpliceLocNet, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Run one image through the net; returns (mask_prob, edge_prob) as (H, W)
    float arrays at the input resolution. Non-multiple-of-16 inputs are
    reflect-padded for the forward pass and the outputs cropped back."""
    was_training = model.training
    model.eval()
    try:
        x, (h, w) = pad_to_multiple(image_to_batch(image))
        out = model(x)
        full = x.shape[-2:]
        mask = F.interpolate(out.masks.final, size=full, mode="bilinear", align_corners=False)
        edge = F.interpolate(out.edges.supervised, size=full, mode="bilinear", align_corners=False)
        return (
            mask[0, 0, :h, :w].cpu().numpy(),
            edge[0, 0, :h, :w].cpu().numpy(),
        )
    finally:
        model.train(was_training)
