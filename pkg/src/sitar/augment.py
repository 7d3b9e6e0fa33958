"""Clip-consistent random resized crop, Mixup and CutMix."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from sitar.sampling import FrameSequence


@dataclass(frozen=True)
class MixParams:
    mixup_alpha: float = 0.8
    cutmix_alpha: float = 1.0
    switch_prob: float = 0.5

    def __post_init__(self):
        if self.mixup_alpha < 0 or self.cutmix_alpha < 0:
            raise ValueError("mixing alphas must be non-negative")
        if not 0.0 <= self.switch_prob <= 1.0:
            raise ValueError("switch_prob must lie in [0, 1]")

    @property
    def enabled(self) -> bool:
        return self.mixup_alpha > 0 or self.cutmix_alpha > 0


@dataclass(frozen=True)
class CropBox:
    top: int
    left: int
    height: int
    width: int


def sample_crop(height: int, width: int, scale_range=(0.5, 1.0), ratio_range=(3 / 4, 4 / 3),
                rng: np.random.Generator | None = None, attempts: int = 10) -> CropBox:
    """Random area/aspect crop box in the style of Inception-style resized crops."""
    rng = rng if rng is not None else np.random.default_rng()
    area = height * width
    log_r = (math.log(ratio_range[0]), math.log(ratio_range[1]))
    for _ in range(attempts):
        target = area * rng.uniform(*scale_range)
        ratio = math.exp(rng.uniform(*log_r))
        w = int(round(math.sqrt(target * ratio)))
        h = int(round(math.sqrt(target / ratio)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return CropBox(top, left, h, w)
    # fall back to the largest centered crop within the ratio range
    in_ratio = width / height
    if in_ratio < ratio_range[0]:
        w, h = width, int(round(width / ratio_range[0]))
    elif in_ratio > ratio_range[1]:
        h, w = height, int(round(height * ratio_range[1]))
    else:
        w, h = width, height
    return CropBox((height - h) // 2, (width - w) // 2, h, w)


def crop_resize(frames: torch.Tensor, box: CropBox, out_side: int) -> torch.Tensor:
    """Crop (n, 3, H, W) frames with one box and bilinearly resize to out_side."""
    x = frames[..., box.top:box.top + box.height, box.left:box.left + box.width]
    if x.shape[-2:] == (out_side, out_side):
        return x
    return F.interpolate(x, size=(out_side, out_side), mode="bilinear", align_corners=False, antialias=True)


def random_resized_crop_clip(frames: FrameSequence, scale_range=(0.5, 1.0), rng: np.random.Generator | None = None,
                             out_side: int | None = None, ratio_range=(3 / 4, 4 / 3)) -> FrameSequence:
    """Crop every frame of a clip with the same randomly drawn rectangle."""
    if len(frames) == 0:
        raise ValueError("empty clip")
    n, H, W, _ = frames.frames.shape
    out_side = out_side or H
    box = sample_crop(H, W, scale_range, ratio_range, rng)
    x = torch.as_tensor(np.ascontiguousarray(frames.frames))
    if x.dtype == torch.uint8:
        x = x.float() / 255.0
    out = crop_resize(x.float().permute(0, 3, 1, 2), box, out_side).permute(0, 2, 3, 1).numpy()
    return FrameSequence(out, frames.indices)


def color_jitter_clip(frames: torch.Tensor, strength: float, rng: np.random.Generator) -> torch.Tensor:
    """One random channel permutation, per-channel gain and brightness shift
    for a whole (n, 3, h, w) clip in [0, 1]; ``strength`` 0 is the identity."""
    if strength <= 0:
        return frames
    perm = torch.as_tensor(rng.permutation(3))
    gain = torch.as_tensor(rng.uniform(1 - strength, 1 + strength, size=3), dtype=frames.dtype)
    shift = float(rng.uniform(-strength / 2, strength / 2))
    return (frames[:, perm] * gain[None, :, None, None] + shift).clamp(0.0, 1.0)


def _partner(B: int) -> torch.Tensor:
    # reversed batch: never pairs a sample with itself unless B is odd (middle row)
    return torch.arange(B - 1, -1, -1)


def mixup(pixels: torch.Tensor, label_dists: torch.Tensor, lam: float | None = None, alpha: float = 0.8,
          rng: np.random.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Convex combination of every sample with a partner from the same batch.

    The partner of sample i is sample B-1-i (batches arrive shuffled).
    ``lam`` defaults to a Beta(alpha, alpha) draw.
    """
    if lam is None:
        lam = float((rng or np.random.default_rng()).beta(alpha, alpha))
    perm = _partner(pixels.shape[0])
    return lam * pixels + (1 - lam) * pixels[perm], lam * label_dists + (1 - lam) * label_dists[perm]


def cutmix_box(H: int, W: int, lam: float, rng: np.random.Generator) -> CropBox:
    cut = math.sqrt(1.0 - lam)
    h, w = int(round(H * cut)), int(round(W * cut))
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    return CropBox(top, left, h, w)


def cutmix(pixels: torch.Tensor, label_dists: torch.Tensor, lam: float | None = None, alpha: float = 1.0,
           rng: np.random.Generator | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Paste a rectangle of area ~(1 - lam) from a partner sample.

    Labels are mixed with the realized pasted area, not the requested ``lam``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if lam is None:
        lam = float(rng.beta(alpha, alpha))
    H, W = pixels.shape[-2:]
    box = cutmix_box(H, W, lam, rng)
    perm = _partner(pixels.shape[0])
    out = pixels.clone()
    sl = (..., slice(box.top, box.top + box.height), slice(box.left, box.left + box.width))
    out[sl] = pixels[perm][sl]
    realized = 1.0 - box.height * box.width / (H * W)
    return out, realized * label_dists + (1 - realized) * label_dists[perm]


def mix_batch(pixels: torch.Tensor, label_dists: torch.Tensor, params: MixParams,
              rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Apply either Mixup or CutMix to a batch, chosen per batch."""
    if not params.enabled or pixels.shape[0] < 2:
        return pixels, label_dists
    use_cutmix = params.cutmix_alpha > 0 and (params.mixup_alpha == 0 or rng.random() < params.switch_prob)
    if use_cutmix:
        return cutmix(pixels, label_dists, alpha=params.cutmix_alpha, rng=rng)
    return mixup(pixels, label_dists, alpha=params.mixup_alpha, rng=rng)
