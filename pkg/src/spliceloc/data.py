"""Synthetic splice generation, corpus IO, and robustness attacks.

A corpus on disk is laid out as::

    <root>/images/<stem>.png   RGB image
    <root>/masks/<stem>.png    single channel, 0 = real, 255 = forged

All functions here are pure given their inputs and seeds; per-call RNGs are
derived from the seed argument so parallel workers never share state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

MIN_REGION_FRACTION = 0.01
MAX_REGION_FRACTION = 0.5
MAX_FORGED_FRACTION = 0.9

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class DegenerateRegionError(ValueError):
    """Raised when a splice region rasterizes to nothing after clipping."""


@dataclass
class Sample:
    """One image with its per-pixel forgery ground truth.

    image: float32 (H, W, 3) in [0, 1]; gt_mask: uint8 (H, W) with 1 = forged.
    """

    image: np.ndarray
    gt_mask: np.ndarray
    meta: dict = field(default_factory=dict)

    def validate(self) -> "Sample":
        img, mask = self.image, self.gt_mask
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {img.shape}")
        if mask.shape != img.shape[:2]:
            raise ValueError(
                f"mask shape {mask.shape} does not match image {img.shape[:2]}"
            )
        if not np.isfinite(img).all():
            raise ValueError("image contains non-finite values")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        vals = np.unique(mask)
        if not np.isin(vals, (0, 1)).all():
            raise ValueError(f"mask values must be 0/1, got {vals[:8]}")
        frac = float(mask.mean())
        if not 0.0 < frac <= MAX_FORGED_FRACTION:
            raise ValueError(f"forged fraction {frac:.4f} outside (0, {MAX_FORGED_FRACTION}]")
        return self


@dataclass(frozen=True)
class AttackSpec:
    """Robustness attack applied to a Sample before evaluation."""

    kind: str = "none"  # none | resize | gaussian_noise
    resize_ratio: float = 0.9
    noise_variance: float = 3.0  # in squared 0-255 pixel units
    seed: int = 0

    def validate(self) -> "AttackSpec":
        if self.kind not in ("none", "resize", "gaussian_noise"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not 0.0 < self.resize_ratio <= 1.0:
            raise ValueError(f"resize_ratio must be in (0, 1], got {self.resize_ratio}")
        if self.noise_variance < 0.0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")
        return self

    def label(self) -> str:
        if self.kind == "resize":
            return f"resize_{self.resize_ratio:g}"
        if self.kind == "gaussian_noise":
            return f"noise_{self.noise_variance:g}"
        return "none"


@dataclass(frozen=True)
class RegionSpec:
    """Geometry of the donor region pasted into the host.

    kind "rect"/"ellipse" use center=(cy, cx) in pixels and size; for a rect
    size is (height, width), for an ellipse the (y, x) semi-axes. kind
    "polygon" uses vertices as (y, x) pixel coordinates.
    """

    kind: str
    center: tuple[float, float] = (0.0, 0.0)
    size: tuple[float, float] = (0.0, 0.0)
    vertices: tuple[tuple[float, float], ...] = ()


def rasterize_region(region: RegionSpec, h: int, w: int) -> np.ndarray:
    """Rasterize a RegionSpec to a uint8 {0,1} mask of shape (h, w)."""
    mask = np.zeros((h, w), dtype=np.uint8)
    if region.kind == "rect":
        cy, cx = region.center
        rh, rw = region.size
        top = int(round(cy - rh / 2.0))
        left = int(round(cx - rw / 2.0))
        bottom = top + int(round(rh))
        right = left + int(round(rw))
        top, left = max(top, 0), max(left, 0)
        bottom, right = min(bottom, h), min(right, w)
        if bottom > top and right > left:
            mask[top:bottom, left:right] = 1
    elif region.kind == "ellipse":
        cy, cx = region.center
        ay, ax = region.size
        if ay <= 0 or ax <= 0:
            raise ValueError(f"ellipse semi-axes must be positive, got {region.size}")
        yy = np.arange(h, dtype=np.float64)[:, None]
        xx = np.arange(w, dtype=np.float64)[None, :]
        inside = ((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2 <= 1.0
        mask[inside] = 1
    elif region.kind == "polygon":
        if len(region.vertices) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        pts = np.array([(x, y) for (y, x) in region.vertices], dtype=np.int32)
        cv2.fillPoly(mask, [pts], 1)
    else:
        raise ValueError(f"unknown region kind {region.kind!r}")
    return mask


def random_texture(h: int, w: int, seed: int | np.random.Generator) -> np.ndarray:
    """Procedural RGB texture: base color + gradient + band-limited noise + grain.

    Stands in for a real photographic corpus so the repository is
    self-sufficient; statistics differ draw-to-draw, which is what both the
    RGB and the noise-residual branch key on.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    base = rng.uniform(0.25, 0.75, size=3)

    theta = rng.uniform(0.0, 2.0 * math.pi)
    yy = np.linspace(-0.5, 0.5, h, dtype=np.float32)[:, None]
    xx = np.linspace(-0.5, 0.5, w, dtype=np.float32)[None, :]
    ramp = (math.cos(theta) * xx + math.sin(theta) * yy) * rng.uniform(0.1, 0.4)

    small = rng.normal(0.0, 1.0, size=(max(h // 16, 2), max(w // 16, 2), 3)).astype(np.float32)
    blotch = cv2.resize(small, (w, h), interpolation=cv2.INTER_LINEAR) * rng.uniform(0.04, 0.12)

    freq = rng.uniform(2.0, 12.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    stripes = np.sin(2.0 * math.pi * freq * (xx * math.cos(theta) - yy * math.sin(theta)) + phase)
    stripes = stripes.astype(np.float32) * rng.uniform(0.0, 0.08)

    grain = rng.normal(0.0, rng.uniform(0.004, 0.02), size=(h, w, 3)).astype(np.float32)

    img = base[None, None, :] + ramp[..., None] + blotch + stripes[..., None] + grain
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_splice(
    host: np.ndarray,
    donor: np.ndarray,
    region: RegionSpec,
    seed: int = 0,
    feather: float = 0.0,
) -> Sample:
    """Paste donor pixels into host inside region; mask marks pixel provenance.

    Feathering (gaussian alpha of width ~2*feather) blends image pixels near
    the boundary but never softens the mask: a feathered pixel that carries
    any donor content is still labeled forged.
    """
    host = np.asarray(host, dtype=np.float32)
    donor = np.asarray(donor, dtype=np.float32)
    if host.ndim != 3 or host.shape[2] != 3:
        raise ValueError(f"host must be (H, W, 3), got {host.shape}")
    if donor.ndim != 3 or donor.shape[2] != 3:
        raise ValueError(f"donor must be (H, W, 3), got {donor.shape}")
    h, w = host.shape[:2]
    if donor.shape[:2] != (h, w):
        donor = cv2.resize(donor, (w, h), interpolation=cv2.INTER_LINEAR)

    mask = rasterize_region(region, h, w)
    n_on = int(mask.sum())
    if n_on == 0:
        raise DegenerateRegionError(
            f"region kind={region.kind!r} is empty after clipping to {h}x{w}"
        )
    frac = n_on / float(h * w)
    if not MIN_REGION_FRACTION <= frac <= MAX_REGION_FRACTION:
        raise ValueError(
            f"region area fraction {frac:.4f} outside "
            f"[{MIN_REGION_FRACTION}, {MAX_REGION_FRACTION}]"
        )

    if feather > 0.0:
        alpha = cv2.GaussianBlur(mask.astype(np.float32), (0, 0), sigmaX=feather)
        alpha = np.clip(alpha, 0.0, 1.0)[..., None]
        image = alpha * donor + (1.0 - alpha) * host
    else:
        image = np.where(mask[..., None].astype(bool), donor, host)

    meta = {
        "seed": int(seed),
        "region_kind": region.kind,
        "region_area_fraction": frac,
        "feather": float(feather),
    }
    return Sample(image=np.clip(image, 0.0, 1.0).astype(np.float32), gt_mask=mask, meta=meta)


def apply_attack(sample: Sample, spec: AttackSpec) -> Sample:
    """Return an attacked copy of sample; kind='none' is the identity."""
    spec.validate()
    if spec.kind == "none":
        return Sample(sample.image.copy(), sample.gt_mask.copy(), dict(sample.meta))
    if spec.kind == "resize":
        h, w = sample.image.shape[:2]
        nh, nw = math.floor(h * spec.resize_ratio), math.floor(w * spec.resize_ratio)
        if nh < 1 or nw < 1:
            raise ValueError(f"resize ratio {spec.resize_ratio} collapses a {h}x{w} image")
        image = cv2.resize(sample.image, (nw, nh), interpolation=cv2.INTER_LINEAR)
        mask = cv2.resize(sample.gt_mask, (nw, nh), interpolation=cv2.INTER_NEAREST)
        return Sample(np.clip(image, 0.0, 1.0), mask, dict(sample.meta))
    # gaussian_noise: variance is in squared 0-255 units, images live in [0, 1]
    rng = np.random.default_rng(spec.seed)
    sigma = math.sqrt(spec.noise_variance) / 255.0
    noise = rng.normal(0.0, sigma, size=sample.image.shape).astype(np.float32)
    image = np.clip(sample.image + noise, 0.0, 1.0)
    return Sample(image, sample.gt_mask.copy(), dict(sample.meta))


def random_region(h: int, w: int, rng: np.random.Generator,
                  min_frac: float = 0.04, max_frac: float = 0.35) -> RegionSpec:
    """Draw a random rect/ellipse/polygon region with area fraction in bounds."""
    for _ in range(64):
        kind = str(rng.choice(("rect", "ellipse", "polygon")))
        cy = rng.uniform(0.3, 0.7) * h
        cx = rng.uniform(0.3, 0.7) * w
        if kind == "rect":
            spec = RegionSpec(kind, (cy, cx), (rng.uniform(0.2, 0.6) * h, rng.uniform(0.2, 0.6) * w))
        elif kind == "ellipse":
            spec = RegionSpec(kind, (cy, cx), (rng.uniform(0.12, 0.33) * h, rng.uniform(0.12, 0.33) * w))
        else:
            k = int(rng.integers(3, 8))
            ang = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=k))
            rad_y = rng.uniform(0.15, 0.35) * h
            rad_x = rng.uniform(0.15, 0.35) * w
            verts = tuple((cy + rad_y * math.sin(a), cx + rad_x * math.cos(a)) for a in ang)
            spec = RegionSpec(kind, vertices=verts)
        frac = rasterize_region(spec, h, w).mean()
        if min_frac <= frac <= max_frac:
            return spec
    raise RuntimeError("failed to draw a region within area bounds")


def synthesize_corpus(n: int, size: int, seed: int, feather: float = 0.0) -> list[Sample]:
    """Generate n spliced samples from procedural textures, fully seeded."""
    samples = []
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(max(n, 0))):
        rng = np.random.default_rng(ss)
        host = random_texture(size, size, rng)
        donor = random_texture(size, size, rng)
        region = random_region(size, size, rng)
        sample = generate_splice(host, donor, region, seed=seed, feather=feather)
        sample.meta["stem"] = f"{i:04d}"
        samples.append(sample.validate())
    return samples


def save_sample(sample: Sample, root: Path | str, stem: str) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    img8 = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    ok = cv2.imwrite(str(root / "images" / f"{stem}.png"), cv2.cvtColor(img8, cv2.COLOR_RGB2BGR))
    ok &= cv2.imwrite(str(root / "masks" / f"{stem}.png"), sample.gt_mask * np.uint8(255))
    if not ok:
        raise OSError(f"failed to write sample {stem!r} under {root}")


def load_corpus(root: Path | str) -> list[Sample]:
    """Load image/mask pairs matched by filename stem, sorted lexicographically.

    Masks are binarized at 0.5 of full scale, so 0/255 grayscale loads as {0,1}.
    """
    root = Path(root)
    images_dir = root / "images"
    masks_dir = root / "masks"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"corpus has no images directory: {images_dir}")
    stems = sorted(p.stem for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    samples = []
    for stem in stems:
        img_path = next(p for p in images_dir.glob(f"{stem}.*") if p.suffix.lower() in IMAGE_SUFFIXES)
        mask_path = masks_dir / f"{stem}.png"
        if not mask_path.is_file():
            raise FileNotFoundError(f"missing mask for image stem {stem!r}: {mask_path}")
        bgr = cv2.imread(str(img_path), cv2.IMREAD_COLOR)
        if bgr is None:
            raise OSError(f"unreadable image {img_path}")
        gray = cv2.imread(str(mask_path), cv2.IMREAD_GRAYSCALE)
        if gray is None:
            raise OSError(f"unreadable mask {mask_path}")
        image = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0
        mask = (gray.astype(np.float32) / 255.0 > 0.5).astype(np.uint8)
        samples.append(Sample(image, mask, {"stem": stem, "image_path": str(img_path)}))
    return samples
