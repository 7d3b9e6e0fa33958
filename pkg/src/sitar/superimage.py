"""Super-image construction: grid sizing, temporal ordering, resize and padding."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from sitar.core_types import VideoRef
from sitar.sampling import FrameSequence, SampleMode, load_frames, segment_indices


class FrameOrder(enum.Enum):
    NORMAL = "normal"
    RANDOM = "random"
    REVERSE = "reverse"


@dataclass
class SuperImage:
    pixels: np.ndarray  # (m * frame_side, m * frame_side, 3) float32
    grid_side: int
    pad_count: int
    order: FrameOrder
    frame_side: int

    def cell(self, k: int) -> np.ndarray:
        """Pixels of grid cell ``k`` in row-major order."""
        r, c = divmod(k, self.grid_side)
        s = self.frame_side
        return self.pixels[r * s:(r + 1) * s, c * s:(c + 1) * s]


@dataclass
class SuperImageConfig:
    side: int = 576
    fast_frames: int = 8
    slow_frames: int = 4
    pad_value: float = 0.0
    order: FrameOrder = FrameOrder.NORMAL

    def frame_side(self, num_frames: int) -> int:
        m, _ = grid_dims(num_frames)
        if self.side % m:
            raise ValueError(f"super-image side {self.side} is not divisible by grid side {m}")
        return self.side // m


def grid_dims(num_frames: int) -> tuple[int, int]:
    if num_frames <= 0:
        raise ValueError(f"num_frames must be positive, got {num_frames}")
    m = math.isqrt(num_frames)
    if m * m < num_frames:
        m += 1
    return m, m * m - num_frames


def order_permutation(n: int, order: FrameOrder, rng: np.random.Generator | None = None) -> np.ndarray:
    if order is FrameOrder.NORMAL:
        return np.arange(n)
    if order is FrameOrder.REVERSE:
        return np.arange(n)[::-1].copy()
    if rng is None:
        raise ValueError("RANDOM order needs an rng")
    return rng.permutation(n)


def apply_order(frames: FrameSequence, order: FrameOrder, rng: np.random.Generator | None = None) -> FrameSequence:
    perm = order_permutation(len(frames), order, rng)
    return FrameSequence(frames.frames[perm], tuple(frames.indices[i] for i in perm))


def to_float_frames(frames: np.ndarray | torch.Tensor) -> torch.Tensor:
    """(n, H, W, 3) array -> (n, 3, H, W) float32 tensor; uint8 is scaled to [0, 1]."""
    t = torch.as_tensor(np.ascontiguousarray(frames)) if isinstance(frames, np.ndarray) else frames
    if t.dtype == torch.uint8:
        t = t.float() / 255.0
    return t.float().permute(0, 3, 1, 2)


def resize_frames(frames: torch.Tensor, side: int) -> torch.Tensor:
    """Bilinear resize of (n, 3, h, w) frames to (n, 3, side, side)."""
    if frames.shape[-2:] == (side, side):
        return frames
    return F.interpolate(frames, size=(side, side), mode="bilinear", align_corners=False, antialias=True)


def tile(frames: torch.Tensor, pad_value: float = 0.0) -> torch.Tensor:
    """Place (B, n, C, s, s) frames row-major on an m x m grid -> (B, C, m*s, m*s)."""
    B, n, C, s, _ = frames.shape
    m, pad = grid_dims(n)
    if pad:
        filler = frames.new_full((B, pad, C, s, s), pad_value)
        frames = torch.cat([frames, filler], dim=1)
    grid = frames.reshape(B, m, m, C, s, s).permute(0, 3, 1, 4, 2, 5)
    return grid.reshape(B, C, m * s, m * s)


def compose(frames: FrameSequence | Sequence[np.ndarray], frame_side: int, pad_value: float = 0.0,
            order: FrameOrder = FrameOrder.NORMAL) -> SuperImage:
    """Resize every frame to ``frame_side`` and tile them into one square image.

    ``order`` only records how the sequence was arranged; call
    :func:`apply_order` first to actually permute it.
    """
    if not isinstance(frames, FrameSequence):
        shapes = {np.shape(f) for f in frames}
        if len(shapes) > 1:
            raise ValueError(f"all frames must share one size, got {sorted(shapes)}")
        frames = FrameSequence(np.stack(frames), tuple(range(len(frames)))) if shapes else None
        if frames is None:
            raise ValueError("cannot compose an empty frame sequence")
    if frame_side < 1:
        raise ValueError(f"frame_side must be >= 1, got {frame_side}")
    if len(frames) == 0:
        raise ValueError("cannot compose an empty frame sequence")
    x = to_float_frames(frames.frames)
    x = resize_frames(x, frame_side)
    m, pad = grid_dims(len(frames))
    pixels = tile(x[None], pad_value)[0].permute(1, 2, 0).numpy()
    return SuperImage(pixels, m, pad, order, frame_side)


def super_image_pair(video: VideoRef, cfg: SuperImageConfig, rng: np.random.Generator,
                     mode: SampleMode = SampleMode.RANDOM_IN_SEGMENT,
                     loader: Callable[[VideoRef, list[int]], FrameSequence] = load_frames,
                     ) -> tuple[SuperImage, SuperImage]:
    """Fast (many frames, small cells) and slow (few frames, large cells) views of one video."""
    if cfg.slow_frames >= cfg.fast_frames:
        raise ValueError("slow pathway must use fewer frames than the fast pathway")
    out = []
    for n in (cfg.fast_frames, cfg.slow_frames):
        idx = segment_indices(video.frame_count, n, mode, rng)
        seq = apply_order(loader(video, idx), cfg.order, rng)
        out.append(compose(seq, cfg.frame_side(n), cfg.pad_value, cfg.order))
    return out[0], out[1]


def normalize(x: torch.Tensor) -> torch.Tensor:
    """Map [0, 1] pixels to [-1, 1] so that a pad value of 0 is mid-gray."""
    return (x - 0.5) / 0.5


def batch_super_images(videos: Sequence[VideoRef], num_frames: int, cfg: SuperImageConfig,
                       rng: np.random.Generator | None, train: bool,
                       loader: Callable[[VideoRef, list[int]], FrameSequence] = load_frames,
                       crop_scale: tuple[float, float] = (0.5, 1.0), color_jitter: float = 0.0) -> torch.Tensor:
    """Build a (B, 3, side, side) batch of normalized super images.

    Training samples one random frame per segment and one crop box per clip;
    evaluation takes segment centers with no crop. ``cfg.order`` is applied
    to every clip.
    """
    from sitar.augment import color_jitter_clip, crop_resize, sample_crop

    mode = SampleMode.RANDOM_IN_SEGMENT if train else SampleMode.CENTER_OF_SEGMENT
    side = cfg.frame_side(num_frames)
    clips = []
    for video in videos:
        idx = segment_indices(video.frame_count, num_frames, mode, rng)
        x = to_float_frames(loader(video, idx).frames)
        if train:
            box = sample_crop(x.shape[-2], x.shape[-1], crop_scale, rng=rng)
            x = crop_resize(x, box, side)
            x = color_jitter_clip(x, color_jitter, rng)
        else:
            x = resize_frames(x, side)
        x = x[torch.as_tensor(order_permutation(num_frames, cfg.order, rng))]
        clips.append(normalize(x))
    return tile(torch.stack(clips), cfg.pad_value)
