"""``sitar`` command line.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
``SITAR_SEED`` in the environment overrides any configured seed.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sitar import config as cfgio
from sitar.core_types import DataError, SplitSpec, read_manifest, split_dataset, write_manifest

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("sitar")


class UsageError(Exception):
    pass


@dataclass
class RunPaths:
    """Where a training command reads from and writes to."""
    labeled: str = ""
    unlabeled: str = ""
    init: str = ""
    out: str = "runs/default"


def _env_seed() -> int | None:
    raw = os.environ.get("SITAR_SEED")
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SITAR_SEED must be an integer, got {raw!r}")


def _load_values(path: str | None, overrides: list[str] | None) -> dict[str, str]:
    values: dict[str, str] = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        values.update(cfgio.read_config_file(p))
    values.update(cfgio.parse_overrides(overrides or []))
    return values


def _split_keys(values: dict[str, str], *classes: type, prefixes: tuple[str, ...] | None = None) -> list:
    """Route each key to exactly one dataclass; anything left over is an unknown key."""
    prefixes = prefixes or ("",) * len(classes)
    buckets: list[dict[str, str]] = [{} for _ in classes]
    for key, val in values.items():
        for i, (cls, pre) in enumerate(zip(classes, prefixes)):
            names = {f.name for f in dataclasses.fields(cls)}
            if key.startswith(pre) and key[len(pre):] in names:
                buckets[i][key[len(pre):]] = val
                break
        else:
            raise UsageError(f"unknown config key {key!r}")
    return [cfgio.build(cls, b) for cls, b in zip(classes, buckets)]


def _apply_seed(obj):
    seed = _env_seed()
    return dataclasses.replace(obj, seed=seed) if seed is not None else obj


def _snapshot(path: Path, *objs, prefixes: tuple[str, ...] | None = None) -> None:
    prefixes = prefixes or ("",) * len(objs)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(cfgio.dump(o, p) for o, p in zip(objs, prefixes)))


# ---------------------------------------------------------------- commands

def cmd_make_synthetic(args) -> int:
    from sitar.datasets import SyntheticSpec, generate_synthetic
    (spec,) = _split_keys(_load_values(args.spec, args.override), SyntheticSpec)
    spec = _apply_seed(spec)
    out = Path(args.out)
    manifest = generate_synthetic(spec, out)
    _snapshot(out / "resolved_config.txt", spec)
    print(out / "manifest.jsonl")
    log.info("%d videos, %d classes", len(manifest), manifest.num_classes)
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = read_manifest(args.manifest)
    seed = _env_seed()
    spec = SplitSpec(args.fraction, seed=args.seed if seed is None else seed, per_class_balanced=not args.unbalanced)
    labeled, unlabeled = split_dataset(manifest, spec)
    out = Path(args.out) if args.out else Path(args.manifest).parent
    out.mkdir(parents=True, exist_ok=True)
    lp = write_manifest(labeled, out / "labeled.jsonl")
    up = write_manifest(unlabeled, out / "unlabeled.jsonl")
    _snapshot(out / "split_config.txt", spec)
    print(lp)
    print(up)
    return EXIT_OK


def _train_setup(args):
    from sitar.trainer import TrainConfig
    cfg, paths = _split_keys(_load_values(args.config, args.override), TrainConfig, RunPaths)
    return _apply_seed(cfg), paths


def cmd_train_phase1(args) -> int:
    from sitar.trainer import train_phase1
    cfg, paths = _train_setup(args)
    if not paths.labeled:
        raise UsageError("train-phase1 needs labeled=<manifest>")
    labeled = read_manifest(paths.labeled)
    out = Path(paths.out)
    _snapshot(out / "run_config.txt", cfg, paths)
    result = train_phase1(cfg, labeled, out)
    print(result.checkpoint)
    return EXIT_OK


def cmd_train_phase2(args) -> int:
    from sitar.trainer import train_phase2
    cfg, paths = _train_setup(args)
    missing = [k for k in ("labeled", "unlabeled", "init") if not getattr(paths, k)]
    if missing:
        raise UsageError("train-phase2 needs " + ", ".join(f"{k}=<path>" for k in missing))
    labeled, unlabeled = read_manifest(paths.labeled), read_manifest(paths.unlabeled)
    if not Path(paths.init).is_file():
        raise DataError(f"init checkpoint not found: {paths.init}")
    out = Path(paths.out)
    _snapshot(out / "run_config.txt", cfg, paths)
    result = train_phase2(cfg, labeled, unlabeled, paths.init, out)
    print(result.checkpoint)
    return EXIT_OK


def cmd_eval(args) -> int:
    from sitar.encoder import checkpoint_extra, load_checkpoint
    from sitar.evalmetrics import evaluate
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    model, _, _ = load_checkpoint(ckpt)
    extra = checkpoint_extra(ckpt)
    fast = args.fast_frames or int(extra.get("fast_frames", 8))
    manifest = read_manifest(args.manifest)
    report = evaluate(model, manifest, model.spec.input_side, fast, pad_value=float(extra.get("pad_value", 0.0)),
                      order=extra.get("order", "normal"))
    out = Path(args.out) if args.out else ckpt.parent / "eval_report.json"
    report.to_json(out, deterministic=args.deterministic)
    (out.parent / "eval_config.txt").write_text(
        f"checkpoint={ckpt}\nmanifest={args.manifest}\nfast_frames={fast}\n")
    print(f"top1={report.top1:.6f}")
    return EXIT_OK


def cmd_compose(args) -> int:
    from PIL import Image

    from sitar.core_types import VideoRef
    from sitar.sampling import SampleMode, load_frames, segment_indices
    from sitar.superimage import FrameOrder, apply_order, compose
    if args.frames < 1:
        raise UsageError("--frames must be >= 1")
    vdir = Path(args.video)
    if not vdir.is_dir():
        raise DataError(f"video directory not found: {vdir}")
    count = sum(1 for f in vdir.iterdir() if re.fullmatch(r"\d{5}\.png", f.name))
    if count == 0:
        raise DataError(f"no frames (00000.png, ...) in {vdir}")
    video = VideoRef(vdir.name, str(vdir), count)
    seed = _env_seed()
    rng = np.random.default_rng(args.seed if seed is None else seed)
    idx = segment_indices(video.frame_count, args.frames, SampleMode.CENTER_OF_SEGMENT)
    frames = apply_order(load_frames(video, list(idx)), FrameOrder(args.order), rng)
    side = args.frame_side or frames.frames.shape[1]
    si = compose(frames, side, pad_value=0.0)
    pixels = np.clip(si.pixels * 255.0 + 0.5, 0, 255).astype(np.uint8)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(out)
    print(f"{out} grid={si.grid_side}x{si.grid_side} pad={si.pad_count} order={args.order} frames={list(frames.indices)}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from sitar.datasets import SyntheticSpec
    from sitar.experiment import STUDIES, ExperimentConfig, format_table, run_study
    from sitar.trainer import TrainConfig
    if args.study not in STUDIES:
        raise UsageError(f"unknown study {args.study!r}; valid studies: {', '.join(STUDIES)}")
    cfg, exp, syn = _split_keys(_load_values(args.config, args.override), TrainConfig, ExperimentConfig,
                                SyntheticSpec, prefixes=("", "experiment.", "synthetic."))
    seed = _env_seed()
    if seed is not None:
        exp = dataclasses.replace(exp, seeds=(seed,))
    out = Path(args.out)
    if args.parallel and args.parallel > 1 and out.exists() and any(out.iterdir()):
        raise UsageError(f"--parallel requires a fresh output directory; {out} is not empty")
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(out / "resolved_config.txt", cfg, exp, syn, prefixes=("", "experiment.", "synthetic."))
    rows = run_study(args.study, cfg, exp, syn, out, parallel=args.parallel if args.parallel > 1 else 0)
    (out / f"{args.study}.json").write_text(json.dumps({"study": args.study, "rows": rows}, indent=2) + "\n")
    table = format_table(rows)
    (out / f"{args.study}.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sitar", description="Super-image semi-supervised action recognition at desk scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-synthetic", help="render a synthetic moving-object dataset")
    s.add_argument("--spec", help="key=value file with SyntheticSpec fields")
    s.add_argument("--out", required=True)
    s.add_argument("--override", nargs="*", default=[], metavar="K=V")
    s.set_defaults(func=cmd_make_synthetic)

    s = sub.add_parser("split", help="split a manifest into labeled/unlabeled parts")
    s.add_argument("--manifest", required=True)
    s.add_argument("--fraction", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output directory (default: next to the manifest)")
    s.add_argument("--unbalanced", action="store_true", help="sample the labeled fraction globally")
    s.set_defaults(func=cmd_split)

    for name, fn in (("train-phase1", cmd_train_phase1), ("train-phase2", cmd_train_phase2)):
        s = sub.add_parser(name, help=f"{name.split('-')[1]} training")
        s.add_argument("--config", help="key=value file (TrainConfig fields plus labeled/unlabeled/init/out)")
        s.add_argument("--override", nargs="*", default=[], metavar="K=V")
        s.set_defaults(func=fn)

    s = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", help="EvalReport JSON path (default: next to the checkpoint)")
    s.add_argument("--fast-frames", type=int, default=0)
    s.add_argument("--deterministic", action="store_true", help="omit wall-clock timing from the report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compose-superimage", help="write one video's super image as PNG")
    s.add_argument("--video", required=True)
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--order", choices=("normal", "random", "reverse"), default="normal")
    s.add_argument("--out", required=True)
    s.add_argument("--frame-side", type=int, default=0, help="cell size in pixels (default: native)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_compose)

    s = sub.add_parser("ablate", help="run one of the fixed ablation grids")
    s.add_argument("--study", required=True, help="group_loss|order|layout|mu|gamma|beta")
    s.add_argument("--config", help="key=value file; experiment.* and synthetic.* keys allowed")
    s.add_argument("--override", nargs="*", default=[], metavar="K=V")
    s.add_argument("--out", default="runs/ablate")
    s.add_argument("--parallel", type=int, default=0, metavar="N", help="worker processes (opt-in)")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as e:
        print(f"sitar: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as e:  # unknown config key from config.build
        print(f"sitar: usage error: {e.args[0] if e.args else e}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, OverflowError) as e:
        print(f"sitar: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"sitar: data error: {e}", file=sys.stderr)
        for v in getattr(e, "violations", None) or []:
            print(f"  {v}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:  # bad config value, invalid spec
        print(f"sitar: usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
