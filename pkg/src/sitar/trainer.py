"""Phase 1 (supervised) and phase 2 (two-pathway semi-supervised) training."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from sitar import losses
from sitar.augment import MixParams, mix_batch
from sitar.config import dump
from sitar.core_types import DatasetManifest, ManifestRecord
from sitar.datasets import VideoBank
from sitar.encoder import (EncoderSpec, ReferenceEncoder, build_reference_encoder, load_checkpoint,
                           save_checkpoint)
from sitar.superimage import FrameOrder, SuperImageConfig, batch_super_images

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    phase1_epochs: int = 25
    phase2_epochs: int = 50
    labeled_batch: int = 8
    mu: int = 4
    temperature: float = 0.5
    gamma: float = 0.6
    beta: float = 1.0
    base_lr: float = 1e-4
    weight_decay: float = 0.05
    schedule: str = "cosine"
    fast_frames: int = 8
    slow_frames: int = 4
    super_image_side: int = 576
    label_smoothing: float = 0.1
    mixup_alpha: float = 0.8
    cutmix_alpha: float = 1.0
    mix_switch_prob: float = 0.5
    crop_scale_min: float = 0.5
    color_jitter: float = 0.0
    drop_path: float = 0.1
    pseudo_threshold: float | None = None
    loss_mode: str = "contrastive"  # or "pseudo_consistency"
    consistency_threshold: float = 0.95
    order: str = "normal"
    pad_value: float = 0.0
    encoder_width: int = 32
    encoder_depth: int = 2
    patch_size: int = 8
    head_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.mu < 1:
            raise ConfigError(f"mu must be >= 1, got {self.mu}")
        if self.labeled_batch < 1:
            raise ConfigError("labeled_batch must be >= 1")
        if self.base_lr <= 0 or self.temperature <= 0:
            raise ConfigError("base_lr and temperature must be positive")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.loss_mode not in ("contrastive", "pseudo_consistency"):
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}")
        FrameOrder(self.order)

    @property
    def super_images(self) -> SuperImageConfig:
        return SuperImageConfig(self.super_image_side, self.fast_frames, self.slow_frames, self.pad_value,
                                FrameOrder(self.order))

    @property
    def mix(self) -> MixParams:
        return MixParams(self.mixup_alpha, self.cutmix_alpha, self.mix_switch_prob)

    def encoder_spec(self, num_classes: int) -> EncoderSpec:
        return EncoderSpec(self.super_image_side, num_classes, self.encoder_width, self.encoder_depth,
                           self.patch_size, self.drop_path, self.head_hidden)


@dataclass
class EpochMetrics:
    phase: int
    epoch: int
    L_sup: float
    L_ic: float
    L_gc: float
    total: float
    lr: float
    pseudo_label_accept_rate: float
    wall_time: float = field(default=0.0, compare=False)

    def row(self) -> dict:
        """Deterministic part of the record (wall time is logged separately)."""
        d = asdict(self)
        d.pop("wall_time")
        return d


@dataclass
class TrainResult:
    checkpoint: Path
    model: ReferenceEncoder
    metrics: list[EpochMetrics]


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


def pseudo_label(logits: torch.Tensor, threshold: float | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Argmax class per row (ties go to the lowest index) and an acceptance mask."""
    logits = logits.detach()
    labels = logits.argmax(-1)  # torch returns the first maximal index
    if threshold is None:
        accept = torch.ones(logits.shape[0], dtype=torch.bool)
    else:
        accept = logits.softmax(-1).max(-1).values >= threshold
    return labels, accept


def _rng(seed: int, phase: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, phase, stream])


def _make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=cfg.base_lr, weight_decay=cfg.weight_decay)


def _set_lr(opt: torch.optim.Optimizer, cfg: TrainConfig, step: int, total: int) -> float:
    lr = cosine_lr(step, total, cfg.base_lr) if cfg.schedule == "cosine" else cfg.base_lr
    for g in opt.param_groups:
        g["lr"] = lr
    return lr


class _Cycler:
    """Endless shuffled passes over a list of records."""

    def __init__(self, records: list[ManifestRecord], rng: np.random.Generator):
        self.records, self.rng = records, rng
        self._order: list[int] = []

    def take(self, n: int) -> list[ManifestRecord]:
        out = []
        while len(out) < n:
            if not self._order:
                self._order = list(self.rng.permutation(len(self.records)))
            out.append(self.records[int(self._order.pop())])
        return out


class _MetricsLog:
    def __init__(self, out_dir: Path):
        self.path = out_dir / "metrics.jsonl"
        self.timing = out_dir / "timing.jsonl"
        self.path.write_text("")
        self.timing.write_text("")

    def append(self, m: EpochMetrics) -> None:
        for v in (m.L_sup, m.L_ic, m.L_gc, m.total, m.lr):
            if not math.isfinite(v):
                raise FloatingPointError(f"non-finite metric at phase {m.phase} epoch {m.epoch}: {m}")
        with self.path.open("a") as f:
            f.write(json.dumps(m.row()) + "\n")
        with self.timing.open("a") as f:
            f.write(json.dumps({"phase": m.phase, "epoch": m.epoch, "wall_time": m.wall_time}) + "\n")


def _prepare(out_dir, cfg: TrainConfig, bank: VideoBank | None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.txt").write_text(dump(cfg))
    bank = bank if bank is not None else VideoBank()
    torch.manual_seed(cfg.seed)
    return out_dir, bank


def _ckpt_meta(phase: int, cfg: TrainConfig) -> dict:
    # what evaluation needs to rebuild the primary-pathway input
    return {"phase": phase, "fast_frames": cfg.fast_frames, "pad_value": cfg.pad_value, "order": cfg.order}


def _onehot(records: list[ManifestRecord], C: int) -> torch.Tensor:
    return F.one_hot(torch.tensor([r.label for r in records]), C).float()


def train_phase1(cfg: TrainConfig, labeled: DatasetManifest, out_dir: str | Path,
                 model: ReferenceEncoder | None = None, bank: VideoBank | None = None,
                 on_step: Callable[[int, ReferenceEncoder], None] | None = None) -> TrainResult:
    """Supervised training of the primary (fast) pathway on labeled videos only."""
    if len(labeled) == 0:
        raise ConfigError("phase 1 needs a non-empty labeled manifest")
    if any(not r.is_labeled for r in labeled):
        raise ConfigError("phase 1 manifest contains unlabeled records")
    out_dir, bank = _prepare(out_dir, cfg, bank)
    C = labeled.num_classes
    if model is None:
        model = build_reference_encoder(cfg.encoder_spec(C), seed=cfg.seed)
    opt = _make_optimizer(model, cfg)
    si, mix = cfg.super_images, cfg.mix
    data_rng, mix_rng = _rng(cfg.seed, 1, 0), _rng(cfg.seed, 1, 1)
    records = list(labeled.records)
    steps_per_epoch = math.ceil(len(records) / cfg.labeled_batch)
    total = cfg.phase1_epochs * steps_per_epoch
    logger, history, step = _MetricsLog(out_dir), [], 0
    ckpt = out_dir / "last.ckpt"
    for epoch in range(cfg.phase1_epochs):
        t0, sums, lr = time.perf_counter(), 0.0, cfg.base_lr
        order = data_rng.permutation(len(records))
        for b in range(steps_per_epoch):
            batch = [records[int(i)] for i in order[b * cfg.labeled_batch:(b + 1) * cfg.labeled_batch]]
            lr = _set_lr(opt, cfg, step, total)
            x = batch_super_images([r.video for r in batch], cfg.fast_frames, si, data_rng, True, bank.loader,
                                   (cfg.crop_scale_min, 1.0), cfg.color_jitter)
            x, y = mix_batch(x, _onehot(batch, C), mix, mix_rng)
            model.train()
            model.reseed(cfg.seed * 1_000_003 + step)
            loss = losses.cross_entropy_smoothed(model(x), y, cfg.label_smoothing)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sums += loss.item()
            step += 1
            if on_step is not None:
                on_step(step, model)
        m = EpochMetrics(1, epoch, sums / steps_per_epoch, 0.0, 0.0, sums / steps_per_epoch, lr, 0.0,
                         time.perf_counter() - t0)
        logger.append(m)
        history.append(m)
        save_checkpoint(model, opt.state_dict(), epoch, ckpt, _ckpt_meta(1, cfg))
        log.info("phase1 epoch %d loss %.4f lr %.2e", epoch, m.total, lr)
    return TrainResult(ckpt, model, history)


def train_phase2(cfg: TrainConfig, labeled: DatasetManifest, unlabeled: DatasetManifest,
                 init_checkpoint: str | Path | ReferenceEncoder, out_dir: str | Path,
                 bank: VideoBank | None = None, supervised_only: bool = False,
                 max_steps: int | None = None,
                 on_step: Callable[[int, ReferenceEncoder], None] | None = None) -> TrainResult:
    """Semi-supervised training from a phase-1 model.

    Every step draws ``labeled_batch`` labeled videos (fast super images,
    smoothed cross-entropy) and ``mu * labeled_batch`` unlabeled videos, each
    rendered as a fast and a slow super image and passed through the same
    encoder. One epoch is one pass over the unlabeled set.

    ``supervised_only`` keeps the identical labeled batch schedule but skips the
    unlabeled branch entirely; it is the reference run for fine-tuning without
    the contrastive terms.
    """
    if isinstance(init_checkpoint, ReferenceEncoder):
        model = init_checkpoint
    else:
        if not Path(init_checkpoint).is_file():
            raise FileNotFoundError(f"phase 2 needs a phase-1 checkpoint; {init_checkpoint} does not exist")
        model, _, _ = load_checkpoint(init_checkpoint)
    if len(labeled) == 0:
        raise ConfigError("phase 2 needs a non-empty labeled manifest")
    out_dir, bank = _prepare(out_dir, cfg, bank)
    C = labeled.num_classes
    opt = _make_optimizer(model, cfg)
    si = cfg.super_images
    crop = (cfg.crop_scale_min, 1.0)
    lab_rng, unl_rng = _rng(cfg.seed, 2, 0), _rng(cfg.seed, 2, 1)
    lab_cycle = _Cycler(list(labeled.records), _rng(cfg.seed, 2, 2))
    u_records = list(unlabeled.records)
    B_u = cfg.mu * cfg.labeled_batch
    if len(u_records) < 2:
        log.warning("fewer than 2 unlabeled videos; phase 2 reduces to supervised fine-tuning")
        steps_per_epoch = math.ceil(len(labeled) / cfg.labeled_batch)
        use_unlabeled = False
    else:
        # drop-last, but never fewer than one step per epoch
        B_u = min(B_u, len(u_records))
        steps_per_epoch = max(1, len(u_records) // B_u)
        use_unlabeled = not supervised_only
    total = cfg.phase2_epochs * steps_per_epoch
    logger, history, step = _MetricsLog(out_dir), [], 0
    ckpt = out_dir / "last.ckpt"
    for epoch in range(cfg.phase2_epochs):
        t0, lr = time.perf_counter(), cfg.base_lr
        sums = np.zeros(4)
        accepted = seen = 0
        u_order = unl_rng.permutation(len(u_records)) if use_unlabeled else None
        for b in range(steps_per_epoch):
            if max_steps is not None and step >= max_steps:
                break
            lr = _set_lr(opt, cfg, step, total)
            batch = lab_cycle.take(cfg.labeled_batch)
            x = batch_super_images([r.video for r in batch], cfg.fast_frames, si, lab_rng, True, bank.loader, crop,
                                   cfg.color_jitter)
            y = torch.tensor([r.label for r in batch])
            model.train()
            model.reseed(cfg.seed * 1_000_003 + step)
            l_sup = losses.cross_entropy_smoothed(model(x), y, cfg.label_smoothing)
            l_ic = l_gc = torch.zeros(())
            if use_unlabeled:
                u_batch = [u_records[int(i)] for i in u_order[b * B_u:(b + 1) * B_u]]
                vids = [r.video for r in u_batch]
                xf = batch_super_images(vids, cfg.fast_frames, si, unl_rng, True, bank.loader, crop, cfg.color_jitter)
                xs = batch_super_images(vids, cfg.slow_frames, si, unl_rng, True, bank.loader, crop, cfg.color_jitter)
                z = model(torch.cat([xf, xs]))
                zf, zs = z[:len(vids)], z[len(vids):]
                if cfg.loss_mode == "contrastive":
                    yf, af = pseudo_label(zf, cfg.pseudo_threshold)
                    ys, as_ = pseudo_label(zs, cfg.pseudo_threshold)
                    accepted += int(af.sum() + as_.sum())
                    seen += 2 * len(vids)
                    l_ic = losses.instance_contrastive_loss(zf, zs, cfg.temperature)
                    summary = losses.group_averages(zf, zs, yf, ys, C, af, as_)
                    l_gc = losses.group_contrastive_loss(summary, cfg.temperature)
                    loss = losses.total_loss(l_sup, l_ic, l_gc, cfg.gamma, cfg.beta)
                else:
                    # FixMatch-style baseline: fast view is the weak view, slow view the strong one
                    l_gc = losses.pseudo_consistency_loss(zf, zs, cfg.consistency_threshold)
                    conf = zf.detach().softmax(-1).max(-1).values
                    accepted += int((conf >= cfg.consistency_threshold).sum())
                    seen += len(vids)
                    loss = l_sup + cfg.beta * l_gc
            else:
                loss = l_sup
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            sums += [l_sup.item(), l_ic.item(), l_gc.item(), loss.item()]
            step += 1
            if on_step is not None:
                on_step(step, model)
        n_steps = max(1, min(steps_per_epoch, step - epoch * steps_per_epoch))
        mean = sums / n_steps
        m = EpochMetrics(2, epoch, *map(float, mean), lr, accepted / seen if seen else 0.0,
                         time.perf_counter() - t0)
        logger.append(m)
        history.append(m)
        save_checkpoint(model, opt.state_dict(), epoch, ckpt, _ckpt_meta(2, cfg))
        log.info("phase2 epoch %d sup %.4f ic %.4f gc %.4f lr %.2e", epoch, m.L_sup, m.L_ic, m.L_gc, lr)
        if max_steps is not None and step >= max_steps:
            break
    return TrainResult(ckpt, model, history)
