"""Top-1 evaluation through the primary pathway only."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from sitar.core_types import DatasetManifest
from sitar.datasets import VideoBank
from sitar.superimage import FrameOrder, SuperImageConfig, batch_super_images


@dataclass
class EvalReport:
    top1: float
    per_class_acc: list[float | None]
    num_samples: int
    wall_time_per_video: float

    def to_json(self, path: str | Path | None = None, deterministic: bool = False) -> str:
        d = asdict(self)
        if deterministic:
            d.pop("wall_time_per_video")
        text = json.dumps(d, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def top1(logits: torch.Tensor | np.ndarray, labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels)
    if logits.shape[0] == 0:
        raise ValueError("top1 of an empty batch")
    return float((logits.argmax(-1) == labels).double().mean())


def evaluate(model: torch.nn.Module, manifest: DatasetManifest, side: int, fast_frames: int = 8,
             bank: VideoBank | None = None, batch_size: int = 64, pad_value: float = 0.0,
             order: FrameOrder | str = FrameOrder.NORMAL, seed: int = 0) -> EvalReport:
    """Single center-sampled fast super image per video.

    ``order`` should match the frame order used in training; RANDOM draws
    its permutations from a generator seeded with ``seed``.
    """
    if len(manifest) == 0:
        raise ValueError("cannot evaluate on an empty manifest")
    if any(not r.is_labeled for r in manifest):
        raise ValueError("evaluation manifest must be fully labeled")
    bank = bank if bank is not None else VideoBank()
    order = FrameOrder(order)
    cfg = SuperImageConfig(side=side, fast_frames=fast_frames, slow_frames=1, pad_value=pad_value, order=order)
    rng = np.random.default_rng(seed) if order is FrameOrder.RANDOM else None
    model.eval()
    dtype = next(model.parameters()).dtype
    t0 = time.perf_counter()
    preds = []
    with torch.no_grad():
        for i in range(0, len(manifest), batch_size):
            chunk = manifest.records[i:i + batch_size]
            x = batch_super_images([r.video for r in chunk], fast_frames, cfg, rng, False, bank.loader)
            preds.append(model(x.to(dtype)).argmax(-1))
    elapsed = time.perf_counter() - t0
    pred = torch.cat(preds).numpy()
    labels = manifest.labels
    correct = pred == labels
    per_class = []
    for c in range(manifest.num_classes):
        sel = labels == c
        per_class.append(float(correct[sel].mean()) if sel.any() else None)
    return EvalReport(float(correct.mean()), per_class, len(manifest), elapsed / len(manifest))
