"""Frame-directory ingestion, an in-memory frame cache, and a synthetic
moving-shape dataset whose class is the motion direction, never the speed."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from sitar import UNLABELED
from sitar.core_types import DataError, DatasetManifest, ManifestRecord, VideoRef, write_manifest
from sitar.sampling import FRAME_NAME, FrameSequence, load_frames, load_video

DIRECTIONS_8 = ["east", "northeast", "north", "northwest", "west", "southwest", "south", "southeast"]
DIRECTIONS_4 = ["east", "north", "west", "south"]


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    videos_per_class: int = 10
    frames_per_video: int = 16
    resolution: int = 64
    radius_range: tuple[float, float] = (5.0, 8.0)
    shapes: tuple[str, ...] = ("circle", "square")
    base_speed: float = 1.4  # pixels per frame at jitter 1
    speed_jitter: tuple[float, float] = (0.5, 2.0)
    noise_std: float = 8.0  # on the 0..255 scale
    seed: int = 0
    prefix: str = ""

    def __post_init__(self):
        if self.num_classes not in (4, 8):
            raise ValueError(f"num_classes must be 4 or 8, got {self.num_classes}")
        if self.frames_per_video < 1 or self.videos_per_class < 1:
            raise ValueError("frames_per_video and videos_per_class must be positive")
        lo, hi = self.speed_jitter
        if not 0 < lo <= hi:
            raise ValueError(f"speed_jitter must satisfy 0 < lo <= hi, got {self.speed_jitter}")

    @property
    def class_names(self) -> list[str]:
        return DIRECTIONS_8 if self.num_classes == 8 else DIRECTIONS_4


def direction_vector(label: int, num_classes: int = 8) -> np.ndarray:
    """Unit (dx, dy) in image coordinates (y grows downward); class 0 is east."""
    angle = 2 * math.pi * label / num_classes
    return np.array([math.cos(angle), -math.sin(angle)])


def render_video(label: int, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """One video as a (T, R, R, 3) uint8 array."""
    T, R = spec.frames_per_video, spec.resolution
    radius = rng.uniform(*spec.radius_range)
    shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
    lo, hi = spec.speed_jitter
    speed = spec.base_speed * math.exp(rng.uniform(math.log(lo), math.log(hi)))
    step = direction_vector(label, spec.num_classes) * speed
    travel = step * (T - 1)
    margin = radius + 1.0
    start = np.empty(2)
    for ax in range(2):
        a, b = margin - min(travel[ax], 0.0), R - margin - max(travel[ax], 0.0)
        if a > b:  # trajectory longer than the frame: center it
            a = b = (R - travel[ax]) / 2.0
        start[ax] = rng.uniform(a, b)
    fg = rng.uniform(150, 255, size=3)
    bg = rng.uniform(0, 90, size=3)

    ys, xs = np.mgrid[0:R, 0:R] + 0.5
    frames = np.empty((T, R, R, 3), dtype=np.uint8)
    for t in range(T):
        cx, cy = start + step * t
        if shape == "circle":
            dist = np.hypot(xs - cx, ys - cy)
        else:
            dist = np.maximum(np.abs(xs - cx), np.abs(ys - cy))
        alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
        img = alpha * fg + (1 - alpha) * bg
        img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
        frames[t] = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return frames


def write_frames(frames: np.ndarray, video_dir: Path) -> None:
    video_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(frames):
        Image.fromarray(frame).save(video_dir / FRAME_NAME.format(t), compress_level=1)


def generate_synthetic(spec: SyntheticSpec, out_dir: str | Path, manifest_name: str = "manifest.jsonl"
                       ) -> DatasetManifest:
    """Render ``videos_per_class`` videos per direction into ``out_dir`` and
    write ``out_dir/manifest_name``. Each video uses its own derived seed, so
    output does not depend on generation order."""
    out_dir = Path(out_dir)
    records = []
    for label, name in enumerate(spec.class_names):
        for i in range(spec.videos_per_class):
            rng = np.random.default_rng([spec.seed, label, i])
            vid = f"{spec.prefix}{name}_{i:04d}"
            vdir = out_dir / vid
            write_frames(render_video(label, spec, rng), vdir)
            records.append(ManifestRecord(VideoRef(vid, str(vdir), spec.frames_per_video), label))
    manifest = DatasetManifest(records, spec.num_classes, list(spec.class_names))
    write_manifest(manifest, out_dir / manifest_name)
    return manifest


_FRAME_RE = re.compile(r"^(\d+)\.(png|jpg|jpeg)$", re.IGNORECASE)


def _read_labels(labels_file: Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(labels_file.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = re.split(r"[,\s]+", line, maxsplit=1)
        if len(parts) != 2:
            raise DataError(f"{labels_file}:{n}: expected '<video_id> <class_name>'")
        out[parts[0]] = parts[1].strip()
    return out


def ingest_frame_dirs(root: str | Path, labels_file: str | Path | None = None) -> DatasetManifest:
    """Build a manifest from ``root/<video_id>/00000.png ...``.

    Videos missing from ``labels_file`` are recorded as unlabeled. Class
    indices follow the sorted class names. Every directory with gaps in its
    frame numbering is reported in one :class:`DataError`.
    """
    root = Path(root)
    labels = _read_labels(Path(labels_file)) if labels_file else {}
    class_names = sorted(set(labels.values()))
    index = {name: i for i, name in enumerate(class_names)}
    records, violations = [], []
    for vdir in sorted(p for p in root.iterdir() if p.is_dir()):
        nums = sorted(int(m.group(1)) for f in vdir.iterdir() if (m := _FRAME_RE.match(f.name)))
        if not nums:
            continue
        if nums != list(range(len(nums))):
            missing = sorted(set(range(max(nums) + 1)) - set(nums))
            violations.append(f"{vdir.name}: non-contiguous frame numbering (missing {missing[:5]})")
            continue
        label = index[labels[vdir.name]] if vdir.name in labels else UNLABELED
        records.append(ManifestRecord(VideoRef(vdir.name, str(vdir), len(nums)), label))
    if violations:
        raise DataError(f"{len(violations)} video(s) under {root} failed validation", violations)
    return DatasetManifest(records, max(len(class_names), 1), class_names or None)


class VideoBank:
    """In-memory cache of decoded videos keyed by video id.

    ``bank.loader`` has the same signature as :func:`sitar.sampling.load_frames`.
    """

    def __init__(self):
        self._videos: dict[str, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._videos)

    def get(self, video: VideoRef) -> np.ndarray:
        arr = self._videos.get(video.id)
        if arr is None:
            arr = self._videos[video.id] = load_video(video)
        return arr

    def preload(self, manifest: DatasetManifest) -> VideoBank:
        for rec in manifest.records:
            self.get(rec.video)
        return self

    def loader(self, video: VideoRef, indices: list[int]) -> FrameSequence:
        arr = self.get(video)
        return FrameSequence(arr[list(indices)], tuple(int(i) for i in indices))


__all__ = ["SyntheticSpec", "generate_synthetic", "ingest_frame_dirs", "render_video", "direction_vector",
           "VideoBank", "load_frames", "DIRECTIONS_8", "DIRECTIONS_4"]
