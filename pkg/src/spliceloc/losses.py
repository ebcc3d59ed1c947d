"""Ground-truth pyramids, edge targets, and the composite training loss.

The total objective is the unweighted sum of per-scale mask BCE terms (each
averaged over its own pixels, so scales stay comparable) plus one Dice term
on the supervised coarse edge map. The edge target is derived automatically:
downsample the mask to the coarsest scale, mark every pixel with a nonzero
Sobel response.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .edges import EdgePyramid, sobel_gradients
from .heads import MaskPyramid

BCE_CLAMP = 1e-7
DICE_SMOOTH = 1.0


@dataclass
class TargetSet:
    """Binary mask targets at the four mask scales plus the edge target at
    the coarsest scale."""

    g_levels: tuple[torch.Tensor, ...]
    g_edge: torch.Tensor


@dataclass
class LossBreakdown:
    """total is exactly bce_per_scale[0] + ... + bce_per_scale[3] + dice_edge."""

    total: torch.Tensor
    bce_per_scale: tuple[torch.Tensor, ...]
    dice_edge: torch.Tensor

    def scalars(self) -> dict:
        return {
            "total": float(self.total.detach()),
            "bce_per_scale": [float(v.detach()) for v in self.bce_per_scale],
            "dice_edge": float(self.dice_edge.detach()),
        }


def build_targets(gt_mask: torch.Tensor, scales, edge_threshold: float = 0.0) -> TargetSet:
    """Nearest-neighbor downsample the {0,1} mask (B, 1, H, W) to each scale;
    the edge target fires wherever the coarsest target has any Sobel
    response above edge_threshold."""
    if gt_mask.dim() != 4 or gt_mask.size(1) != 1:
        raise ValueError(f"gt_mask must be (B, 1, H, W), got {tuple(gt_mask.shape)}")
    gt = gt_mask.to(torch.float32) if not gt_mask.dtype.is_floating_point else gt_mask
    levels = tuple(
        gt if tuple(gt.shape[-2:]) == tuple(s) else F.interpolate(gt, size=tuple(s), mode="nearest")
        for s in scales
    )
    gx, gy = sobel_gradients(levels[3])
    tol = max(edge_threshold, 1e-6)
    g_edge = ((gx.abs() > tol) | (gy.abs() > tol)).to(gt.dtype)
    return TargetSet(levels, g_edge)


def bce_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy; probabilities are clamped and converted to
    logits so the log terms stay finite."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP)
    logits = torch.log(p) - torch.log1p(-p)
    return F.binary_cross_entropy_with_logits(logits, target.to(pred.dtype))


def dice_loss(pred: torch.Tensor, target: torch.Tensor,
              smooth: float = DICE_SMOOTH) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    t = target.to(pred.dtype)
    inter = (pred * t).sum()
    return 1.0 - (2.0 * inter + smooth) / (pred.sum() + t.sum() + smooth)


def total_loss(masks: MaskPyramid, edges: EdgePyramid, targets: TargetSet) -> LossBreakdown:
    if len(targets.g_levels) != 4:
        raise ValueError("target set must carry 4 mask levels")
    bces = []
    for i, (m, g) in enumerate(zip(masks.masks, targets.g_levels)):
        if m.shape != g.shape:
            raise ValueError(
                f"scale {i + 1} misaligned: mask {tuple(m.shape)} vs target {tuple(g.shape)}"
            )
        bces.append(bce_loss(m, g))
    dice = dice_loss(edges.supervised, targets.g_edge)
    total = bces[0] + bces[1] + bces[2] + bces[3] + dice
    return LossBreakdown(total=total, bce_per_scale=tuple(bces), dice_edge=dice)
