"""Manifest types, JSONL I/O and labeled/unlabeled splitting."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from sitar import UNLABELED


class DataError(ValueError):
    """Malformed dataset input; ``violations`` lists every problem found."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


@dataclass(frozen=True)
class VideoRef:
    id: str
    path: str
    frame_count: int


@dataclass(frozen=True)
class ManifestRecord:
    video: VideoRef
    label: int = UNLABELED

    @property
    def is_labeled(self) -> bool:
        return self.label != UNLABELED


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    num_classes: int
    class_names: list[str] | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def subset(self, records: list[ManifestRecord]) -> DatasetManifest:
        return DatasetManifest(list(records), self.num_classes, self.class_names)


@dataclass(frozen=True)
class SplitSpec:
    labeled_fraction: float
    seed: int = 0
    per_class_balanced: bool = True

    def __post_init__(self):
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValueError(f"labeled_fraction must lie in (0, 1], got {self.labeled_fraction}")


def validate_manifest(manifest: DatasetManifest) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid)."""
    violations = []
    if manifest.num_classes < 1:
        violations.append(f"num_classes must be >= 1, got {manifest.num_classes}")
    seen = set()
    for i, rec in enumerate(manifest.records):
        if not (UNLABELED <= rec.label < manifest.num_classes):
            violations.append(f"label out of range @record {i}")
        if rec.video.frame_count < 1:
            violations.append(f"frame_count < 1 @record {i}")
        if rec.video.id in seen:
            violations.append(f"duplicate id '{rec.video.id}'")
        seen.add(rec.video.id)
    return violations


def _n_labeled(fraction: float, count: int) -> int:
    # guard against 4/204*204 == 3.9999...
    return int(math.floor(fraction * count + 1e-9))


def split_dataset(manifest: DatasetManifest, spec: SplitSpec) -> tuple[DatasetManifest, DatasetManifest]:
    """Partition a fully labeled manifest into labeled and unlabeled manifests.

    Balanced mode labels floor(fraction * count_c) videos of every class c and
    refuses to produce a class with zero labeled videos. Unbalanced mode draws
    floor(fraction * N) videos uniformly. Output records keep input order.
    """
    if any(not r.is_labeled for r in manifest.records):
        raise DataError("split_dataset requires a fully labeled manifest")
    rng = np.random.default_rng(spec.seed)
    chosen: set[int] = set()
    if spec.per_class_balanced:
        by_class: dict[int, list[int]] = defaultdict(list)
        for i, rec in enumerate(manifest.records):
            by_class[rec.label].append(i)
        for c in sorted(by_class):
            idx = by_class[c]
            k = _n_labeled(spec.labeled_fraction, len(idx))
            if k == 0:
                name = manifest.class_names[c] if manifest.class_names else str(c)
                raise DataError(f"labeled_fraction {spec.labeled_fraction} leaves class {name!r} with no labeled videos")
            chosen.update(int(j) for j in rng.choice(idx, size=k, replace=False))
    else:
        k = _n_labeled(spec.labeled_fraction, len(manifest))
        chosen.update(int(j) for j in rng.choice(len(manifest), size=k, replace=False))

    labeled, unlabeled = [], []
    for i, rec in enumerate(manifest.records):
        if i in chosen:
            labeled.append(rec)
        else:
            unlabeled.append(replace(rec, label=UNLABELED))
    return manifest.subset(labeled), manifest.subset(unlabeled)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"num_classes": manifest.num_classes}
    if manifest.class_names is not None:
        header["class_names"] = list(manifest.class_names)
    lines = [json.dumps(header)]
    for rec in manifest.records:
        lines.append(json.dumps({"id": rec.video.id, "path": rec.video.path,
                                 "frames": rec.video.frame_count, "label": rec.label}))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"empty manifest file {path}")
    header = json.loads(lines[0])
    if "num_classes" not in header:
        raise DataError(f"{path}: first line must be a header with 'num_classes'")
    records = []
    for n, ln in enumerate(lines[1:], start=2):
        row = json.loads(ln)
        try:
            video = VideoRef(str(row["id"]), str(row["path"]), int(row["frames"]))
            records.append(ManifestRecord(video, int(row["label"])))
        except KeyError as e:
            raise DataError(f"{path}:{n}: missing key {e}") from None
    return DatasetManifest(records, int(header["num_classes"]), header.get("class_names"))
