"""TSN-style segment sampling and frame loading."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from sitar.core_types import VideoRef

FRAME_NAME = "{:05d}.png"


class SampleMode(enum.Enum):
    RANDOM_IN_SEGMENT = "random"
    CENTER_OF_SEGMENT = "center"


@dataclass
class FrameSequence:
    """Frames of one clip as a uint8 or float array of shape (n, H, W, 3)."""

    frames: np.ndarray
    indices: tuple[int, ...]

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise ValueError(f"frames must have shape (n, H, W, 3), got {self.frames.shape}")
        if len(self.indices) != len(self.frames):
            raise ValueError("indices and frames disagree in length")

    def __len__(self) -> int:
        return len(self.frames)


def segment_bounds(total_frames: int, num_segments: int) -> list[tuple[int, int]]:
    """Half-open [lo, hi) bounds of the equal, non-overlapping segments."""
    return [(i * total_frames // num_segments, (i + 1) * total_frames // num_segments)
            for i in range(num_segments)]


def segment_indices(total_frames: int, num_segments: int, mode: SampleMode = SampleMode.CENTER_OF_SEGMENT,
                    rng: np.random.Generator | None = None) -> list[int]:
    """Pick one frame index per segment.

    When the clip has at least ``num_segments`` frames every segment is
    non-empty; CENTER takes ``lo + len // 2`` and RANDOM draws uniformly within
    the segment. Shorter clips are treated as a continuous timeline of length
    ``total_frames`` cut into ``num_segments`` pieces; the chosen position is
    floored, so frames repeat.
    """
    if total_frames <= 0 or num_segments <= 0:
        raise ValueError(f"total_frames and num_segments must be positive, got {total_frames}, {num_segments}")
    if mode is SampleMode.RANDOM_IN_SEGMENT and rng is None:
        raise ValueError("RANDOM_IN_SEGMENT needs an rng")
    T, M = total_frames, num_segments
    if T >= M:
        bounds = np.array(segment_bounds(T, M))
        lo, hi = bounds[:, 0], bounds[:, 1]
        if mode is SampleMode.CENTER_OF_SEGMENT:
            idx = lo + (hi - lo) // 2
        else:
            idx = rng.integers(lo, hi)
    else:
        seg = T / M
        if mode is SampleMode.CENTER_OF_SEGMENT:
            pos = (np.arange(M) + 0.5) * seg
        else:
            pos = (np.arange(M) + rng.random(M)) * seg
        idx = np.minimum(np.floor(pos).astype(np.int64), T - 1)
    return [int(i) for i in idx]


def frame_path(video: VideoRef, index: int) -> Path:
    return Path(video.path) / FRAME_NAME.format(index)


def read_frame(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing frame file {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_frames(video: VideoRef, indices: list[int]) -> FrameSequence:
    for i in indices:
        if not 0 <= i < video.frame_count:
            raise IndexError(f"frame index {i} outside [0, {video.frame_count}) for video {video.id!r}")
    frames = np.stack([read_frame(frame_path(video, i)) for i in indices])
    return FrameSequence(frames, tuple(int(i) for i in indices))


def load_video(video: VideoRef) -> np.ndarray:
    """All frames of a video, shape (T, H, W, 3) uint8."""
    return load_frames(video, list(range(video.frame_count))).frames
