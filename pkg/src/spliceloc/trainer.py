"""End-to-end optimization loop with deterministic, resumable checkpoints.

Adam at the configured rate, halved every lr_halve_every epochs. Every step
minimizes the four-scale mask BCE plus the edge Dice term; history records
the loss breakdown per step and periodic validation F1. Training aborts with
a diagnostic if the loss goes non-finite.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import cv2
import numpy as np
import torch

from . import checkpoint as ckpt
from .config import DEFAULTS, TrainConfig, config_digest
from .data import Sample, synthesize_corpus
from .heads import finalize_masks
from .losses import build_targets, total_loss
from .metrics import prf1
from .model import SpliceLocNet


def seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def flatten_train_config(tc: TrainConfig) -> dict:
    """TrainConfig -> the dotted-key mapping used for digests and manifests."""
    m = tc.model
    reduce = m.reduce_channels if m.reduce_channels == "native" else list(m.reduce_channels)
    flat = {
        "train.input_size": tc.input_size,
        "train.batch_size": tc.batch_size,
        "train.lr": tc.lr,
        "train.epochs": tc.epochs,
        "train.lr_halve_every": tc.lr_halve_every,
        "train.seed": tc.seed,
        "train.weight_decay": tc.weight_decay,
        "train.grad_clip": tc.grad_clip,
        "train.beta1": tc.beta1,
        "train.beta2": tc.beta2,
        "train.val_every": tc.val_every,
        "encoder.dims": list(m.dims),
        "encoder.depths": list(m.depths),
        "encoder.heads": list(m.heads),
        "encoder.sr_ratios": list(m.sr_ratios),
        "encoder.mixer": m.mixer,
        "encoder.mlp_ratio": m.mlp_ratio,
        "noise.mode": m.noise_mode,
        "fusion.condconv_experts": m.condconv_experts,
        "fusion.reduce_channels": reduce,
        "edge.combine": m.edge_combine,
        "edge.width": m.edge_width,
        "head.se_reduction": m.se_reduction,
        "head.threshold": tc.threshold,
    }
    assert set(flat) == set(DEFAULTS), "config keys drifted from DEFAULTS"
    return flat


@dataclass
class TrainResult:
    model: SpliceLocNet
    history: list[dict]
    checkpoint: dict
    config: TrainConfig


@dataclass
class SmokeResult:
    final_f1: float
    steps: int
    trace: list[tuple[int, float]] = field(default_factory=list)
    model: SpliceLocNet | None = None
    samples: list[Sample] | None = None


def _resize_pair(sample: Sample, size: int) -> tuple[np.ndarray, np.ndarray]:
    img, mask = sample.image, sample.gt_mask
    if img.shape[:2] != (size, size):
        img = cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)
        mask = cv2.resize(mask, (size, size), interpolation=cv2.INTER_NEAREST)
    return img, mask


def samples_to_tensors(samples: list[Sample], size: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack samples into (N, 3, S, S) images and (N, 1, S, S) {0,1} masks."""
    xs, gs = [], []
    for s in samples:
        img, mask = _resize_pair(s, size)
        xs.append(torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))))
        gs.append(torch.from_numpy(mask.astype(np.float32)).unsqueeze(0))
    return torch.stack(xs), torch.stack(gs)


def _capture_rng(batch_rng: np.random.Generator) -> dict:
    return {
        "torch": torch.get_rng_state(),
        "python": random.getstate(),
        "numpy": np.random.get_state(),
        "batch": batch_rng.bit_generator.state,
    }


def _restore_rng(states: dict, batch_rng: np.random.Generator) -> None:
    torch.set_rng_state(states["torch"].to(torch.uint8))
    random.setstate(states["python"])
    np.random.set_state(states["numpy"])
    batch_rng.bit_generator.state = states["batch"]


def capture_checkpoint(model, optimizer, scheduler, config: TrainConfig,
                       epoch: int, step: int, batch_rng: np.random.Generator) -> dict:
    flat = flatten_train_config(config)
    return {
        "config": flat,
        "config_digest": config_digest(flat),
        "epoch": epoch,
        "step": step,
        "model": dict(model.state_dict()),
        "optimizer": optimizer.state_dict(),
        "scheduler": scheduler.state_dict(),
        "rng": _capture_rng(batch_rng),
    }


def train_step(model, optimizer, x: torch.Tensor, gt: torch.Tensor, grad_clip: float = 0.0):
    """One optimization step on a batch; returns the LossBreakdown."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    out = model(x)
    targets = build_targets(gt, [m.shape[-2:] for m in out.masks.masks])
    breakdown = total_loss(out.masks, out.edges, targets)
    if not torch.isfinite(breakdown.total):
        raise RuntimeError(
            "training diverged: non-finite loss "
            f"(bce={[float(v) for v in breakdown.bce_per_scale]}, "
            f"dice={float(breakdown.dice_edge)})"
        )
    breakdown.total.backward()
    if grad_clip > 0.0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    model.project_constraints()
    return breakdown


@torch.no_grad()
def _val_f1(model, x: torch.Tensor, gt: torch.Tensor, threshold: float) -> float:
    was_training = model.training
    model.eval()
    out = model(x)
    pred = finalize_masks(out.masks, x.shape[-2], x.shape[-1], threshold)
    model.train(was_training)
    scores = [prf1(pred[i].numpy(), gt[i, 0].numpy())[2] for i in range(x.shape[0])]
    return float(np.mean(scores))


def train(
    config: TrainConfig,
    train_samples: list[Sample],
    val_samples: list[Sample] | None = None,
    resume: dict | str | None = None,
    log=None,
) -> TrainResult:
    config.validate()
    if not train_samples:
        raise ValueError("training set is empty")
    val_samples = val_samples or train_samples

    torch.use_deterministic_algorithms(True)
    seed_everything(config.seed)
    model = SpliceLocNet(config.model)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=config.lr_halve_every, gamma=0.5
    )
    batch_rng = np.random.default_rng(config.seed)
    start_epoch, step = 0, 0

    if resume is not None:
        state = ckpt.load(resume) if isinstance(resume, str) else resume
        # Everything but the epoch budget must match: extending a finished
        # run is fine, silently changing the model or schedule is not.
        ours = {k: v for k, v in flatten_train_config(config).items() if k != "train.epochs"}
        theirs = {k: v for k, v in state["config"].items() if k != "train.epochs"}
        if config_digest(ours) != config_digest(theirs):
            raise ValueError("resume checkpoint was written with a different config")
        model.load_state_dict(state["model"])
        optimizer.load_state_dict(state["optimizer"])
        scheduler.load_state_dict(state["scheduler"])
        _restore_rng(state["rng"], batch_rng)
        start_epoch, step = state["epoch"], state["step"]

    x_all, g_all = samples_to_tensors(train_samples, config.input_size)
    xv, gv = samples_to_tensors(val_samples, config.input_size)

    history: list[dict] = []
    n = x_all.shape[0]
    for epoch in range(start_epoch, config.epochs):
        order = batch_rng.permutation(n)
        lr_now = optimizer.param_groups[0]["lr"]
        for lo in range(0, n, config.batch_size):
            idx = torch.from_numpy(order[lo: lo + config.batch_size].copy())
            breakdown = train_step(model, optimizer, x_all[idx], g_all[idx], config.grad_clip)
            step += 1
            record = {"epoch": epoch + 1, "step": step, "lr": lr_now,
                      **breakdown.scalars()}
            history.append(record)
            if log:
                log(f"epoch {epoch + 1} step {step} lr {lr_now:.2e} "
                    f"loss {record['total']:.4f}")
        if config.val_every > 0 and (epoch + 1) % config.val_every == 0:
            f1 = _val_f1(model, xv, gv, config.threshold)
            history.append({"epoch": epoch + 1, "step": step, "val_f1": f1})
            if log:
                log(f"epoch {epoch + 1} val F1 {f1:.4f}")
        scheduler.step()

    capture = capture_checkpoint(model, optimizer, scheduler, config,
                                 config.epochs, step, batch_rng)
    return TrainResult(model=model, history=history, checkpoint=capture, config=config)


def overfit_smoke(
    config: TrainConfig,
    n_samples: int = 8,
    max_steps: int = 500,
    samples: list[Sample] | None = None,
    target_f1: float | None = None,
    eval_every: int = 20,
    log=None,
) -> SmokeResult:
    """Fit a handful of synthetic splices and score F1 on the same set.

    Stops early once target_f1 is reached (checked every eval_every steps).
    """
    config.validate()
    if samples is None:
        if n_samples > 16:
            raise ValueError("smoke runs are capped at 16 samples")
        samples = synthesize_corpus(n_samples, config.input_size, config.seed)

    torch.use_deterministic_algorithms(True)
    seed_everything(config.seed)
    model = SpliceLocNet(config.model)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2),
        weight_decay=config.weight_decay,
    )
    batch_rng = np.random.default_rng(config.seed)
    x_all, g_all = samples_to_tensors(samples, config.input_size)
    n = x_all.shape[0]

    trace: list[tuple[int, float]] = []
    f1 = 0.0
    step = 0
    while step < max_steps:
        idx = torch.from_numpy(batch_rng.choice(n, size=min(config.batch_size, n),
                                                replace=False))
        breakdown = train_step(model, optimizer, x_all[idx], g_all[idx], config.grad_clip)
        step += 1
        if step % eval_every == 0 or step == max_steps:
            f1 = _val_f1(model, x_all, g_all, config.threshold)
            trace.append((step, f1))
            if log:
                log(f"step {step} loss {float(breakdown.total):.4f} F1 {f1:.4f}")
            if target_f1 is not None and f1 >= target_f1:
                break
    if not trace:
        f1 = _val_f1(model, x_all, g_all, config.threshold)
        trace.append((step, f1))
    return SmokeResult(final_f1=f1, steps=step, trace=trace, model=model, samples=samples)
