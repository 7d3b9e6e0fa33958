"""Desk-scale semi-supervised experiment on the synthetic direction dataset,
and the ablation grids built on top of it."""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sitar.config import dump
from sitar.core_types import DatasetManifest, SplitSpec, read_manifest, split_dataset
from sitar.datasets import SyntheticSpec, VideoBank, generate_synthetic
from sitar.evalmetrics import evaluate
from sitar.trainer import TrainConfig, TrainResult, train_phase1, train_phase2

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    labeled_per_class: int = 4
    unlabeled_per_class: int = 200
    test_per_class: int = 100
    data_dir: str = "data/desk"
    seeds: tuple[int, ...] = (0, 1, 2)


def desk_train_config(**overrides) -> TrainConfig:
    """Default hyperparameters with the super image scaled to 96 px (fast 3x32, slow 2x48).

    Tuned for the tiny encoder on the synthetic set: clip-level color jitter,
    wider crop scale range and a slightly higher learning rate.
    """
    base = dict(super_image_side=96, labeled_batch=4, color_jitter=0.6, crop_scale_min=0.3, base_lr=2e-4)
    base.update(overrides)
    return TrainConfig(**base)


def prepare_data(exp: ExperimentConfig, syn: SyntheticSpec, bank: VideoBank | None = None
                 ) -> tuple[DatasetManifest, DatasetManifest]:
    """Generate (or reuse) the train and test sets under ``exp.data_dir``.

    A cached set is reused only if it was generated from identical settings.
    """
    root = Path(exp.data_dir)
    train_spec = dataclasses.replace(syn, videos_per_class=exp.labeled_per_class + exp.unlabeled_per_class,
                                     prefix="train_")
    test_spec = dataclasses.replace(syn, videos_per_class=exp.test_per_class, seed=syn.seed + 10_000, prefix="test_")
    out = []
    for name, spec in (("train", train_spec), ("test", test_spec)):
        d = root / name
        stamp = d / "synthetic_spec.txt"
        if stamp.exists() and stamp.read_text() == dump(spec) and (d / "manifest.jsonl").exists():
            manifest = read_manifest(d / "manifest.jsonl")
        else:
            log.info("generating %s set in %s", name, d)
            manifest = generate_synthetic(spec, d)
            stamp.write_text(dump(spec))
        out.append(manifest)
        if bank is not None:
            bank.preload(manifest)
    return out[0], out[1]


def split_for_seed(train: DatasetManifest, exp: ExperimentConfig, seed: int):
    frac = exp.labeled_per_class / (exp.labeled_per_class + exp.unlabeled_per_class)
    return split_dataset(train, SplitSpec(frac, seed=seed))


@dataclass
class RunResult:
    seed: int
    top1_phase1: float
    top1_phase2: float
    L_sup: float
    L_ic: float
    L_gc: float


def run_seed(cfg: TrainConfig, train: DatasetManifest, test: DatasetManifest, exp: ExperimentConfig,
             out_dir: str | Path, bank: VideoBank, phase1: TrainResult | None = None,
             eval_phase1: float | None = None) -> tuple[RunResult, TrainResult]:
    """Phase 1, evaluation, phase 2, evaluation for one seed.

    Passing ``phase1`` reuses an existing phase-1 model (its weights are copied,
    not modified).
    """
    out_dir = Path(out_dir)
    labeled, unlabeled = split_for_seed(train, exp, cfg.seed)
    if phase1 is None:
        phase1 = train_phase1(cfg, labeled, out_dir / "phase1", bank=bank)
    if eval_phase1 is None:
        eval_phase1 = evaluate(phase1.model, test, cfg.super_image_side, cfg.fast_frames, bank,
                               order=cfg.order).top1
    p2 = train_phase2(cfg, labeled, unlabeled, copy.deepcopy(phase1.model), out_dir / "phase2", bank=bank)
    report = evaluate(p2.model, test, cfg.super_image_side, cfg.fast_frames, bank, order=cfg.order)
    report.to_json(out_dir / "eval.json")
    last = p2.metrics[-1]
    result = RunResult(cfg.seed, eval_phase1, report.top1, last.L_sup, last.L_ic, last.L_gc)
    (out_dir / "result.json").write_text(json.dumps(dataclasses.asdict(result), indent=2) + "\n")
    log.info("seed %d: phase1 %.3f -> phase2 %.3f", cfg.seed, eval_phase1, report.top1)
    return result, phase1


def _layout_side(side: int, patch: int) -> int:
    """Smallest side >= 4/3 * side divisible by 4, 3 and the patch size."""
    step = np.lcm.reduce([4, 3, patch])
    target = -(-4 * side // 3)
    return int(-(-target // step) * step)


def study_grid(study: str, base: TrainConfig) -> list[tuple[str, dict]]:
    if study == "group_loss":
        return [("default", {}), ("beta=0", {"beta": 0.0}), ("pseudo_consistency", {"loss_mode": "pseudo_consistency"})]
    if study == "order":
        return [(o, {"order": o}) for o in ("normal", "random", "reverse")]
    if study == "layout":
        big = _layout_side(base.super_image_side, base.patch_size)
        return [(f"8/4@{base.super_image_side}", {}),
                (f"16/8@{base.super_image_side}", {"fast_frames": 16, "slow_frames": 8}),
                (f"16/8@{big}", {"fast_frames": 16, "slow_frames": 8, "super_image_side": big})]
    if study == "mu":
        return [(f"mu={m}", {"mu": m}) for m in (2, 4, 6, 8)]
    if study == "gamma":
        return [(f"gamma={g}", {"gamma": g}) for g in (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)]
    if study == "beta":
        return [(f"beta={b}", {"beta": b}) for b in (0.5, 1.0, 2.0, 4.0)]
    raise KeyError(study)


STUDIES = ("group_loss", "order", "layout", "mu", "gamma", "beta")
# studies whose variants differ only in phase-2 settings share one phase-1 model per seed
PHASE2_ONLY = {"group_loss", "mu", "gamma", "beta"}


def _run_variant(args):
    name, cfg, train, test, exp, out_dir, seeds, phase1_cache = args
    bank = VideoBank().preload(train).preload(test)
    results = []
    for seed in seeds:
        cfg_s = dataclasses.replace(cfg, seed=seed)
        cached = phase1_cache.get(seed) if phase1_cache else None
        res, p1 = run_seed(cfg_s, train, test, exp, Path(out_dir) / f"seed{seed}", bank,
                           phase1=cached[0] if cached else None, eval_phase1=cached[1] if cached else None)
        if phase1_cache is not None and seed not in phase1_cache:
            phase1_cache[seed] = (p1, res.top1_phase1)
        results.append(res)
    return name, results


def run_study(study: str, base: TrainConfig, exp: ExperimentConfig, syn: SyntheticSpec, out_dir: str | Path,
              parallel: int = 0) -> list[dict]:
    """Run every variant of ``study`` for every seed and return one row per variant."""
    if study not in STUDIES:
        raise KeyError(study)
    out_dir = Path(out_dir)
    train, test = prepare_data(exp, syn)
    grid = [(name, dataclasses.replace(base, **kw)) for name, kw in study_grid(study, base)]
    jobs = []
    shared: dict | None = {} if study in PHASE2_ONLY and not parallel else None
    for name, cfg in grid:
        vdir = out_dir / name.replace("/", "_").replace("@", "_at_")
        vdir.mkdir(parents=True, exist_ok=True)
        (vdir / "resolved_config.txt").write_text(dump(cfg))
        jobs.append((name, cfg, train, test, exp, vdir, exp.seeds, shared))
    if parallel:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(parallel) as pool:
            outcomes = list(pool.map(_run_variant, jobs))
    else:
        outcomes = [_run_variant(j) for j in jobs]
    rows = []
    for name, results in outcomes:
        rows.append({
            "variant": name,
            "seeds": [r.seed for r in results],
            "top1_phase1": float(np.mean([r.top1_phase1 for r in results])),
            "top1": float(np.mean([r.top1_phase2 for r in results])),
            "top1_per_seed": [r.top1_phase2 for r in results],
            "L_sup": float(np.mean([r.L_sup for r in results])),
            "L_ic": float(np.mean([r.L_ic for r in results])),
            "L_gc": float(np.mean([r.L_gc for r in results])),
        })
    return rows


def format_table(rows: list[dict]) -> str:
    cols = ["variant", "top1_phase1", "top1", "L_sup", "L_ic", "L_gc"]
    cells = [[r[c] if isinstance(r[c], str) else f"{r[c]:.4f}" for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"
