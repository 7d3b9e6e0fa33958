"""Shared image encoder g(.) mapping super images to class logits, plus checkpoint I/O.

Any ``nn.Module`` that maps ``(B, 3, side, side)`` images to ``(B, C)`` logits
can be used by the trainer; :class:`ReferenceEncoder` is the small trunk used
for desk-scale runs and tests.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from sitar.superimage import SuperImage

CHECKPOINT_MAGIC = "SITAR-CKPT-1"


@dataclass(frozen=True)
class EncoderSpec:
    input_side: int = 96
    num_classes: int = 8
    width: int = 32
    depth: int = 2
    patch_size: int = 8
    drop_path_rate: float = 0.1
    head_hidden: int = 64

    def __post_init__(self):
        if self.input_side % self.patch_size:
            raise ValueError(f"input_side {self.input_side} not divisible by patch_size {self.patch_size}")
        if not 0.0 <= self.drop_path_rate < 1.0:
            raise ValueError(f"drop_path_rate must lie in [0, 1), got {self.drop_path_rate}")
        if self.num_classes < 2 or self.width < 1 or self.depth < 0:
            raise ValueError(f"invalid encoder spec {self}")


class Pathway(enum.Enum):
    FAST = "fast"
    SLOW = "slow"


@dataclass
class RepresentationBatch:
    values: torch.Tensor  # (B, C) logits
    pathway: Pathway

    def __len__(self) -> int:
        return self.values.shape[0]


class DropPath(nn.Module):
    """Stochastic depth on the residual branch, per sample."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self.generator: torch.Generator | None = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training or self.p == 0.0:
            return x
        keep = 1.0 - self.p
        shape = (x.shape[0],) + (1,) * (x.ndim - 1)
        mask = torch.rand(shape, generator=self.generator, dtype=x.dtype).lt(keep).to(x.dtype)
        return x * mask / keep


class ConvBlock(nn.Module):
    def __init__(self, width: int, drop_path: float):
        super().__init__()
        self.norm = nn.GroupNorm(1, width)
        self.conv = nn.Conv2d(width, width, 3, padding=1)
        self.act = nn.GELU()
        self.mix = nn.Conv2d(width, width, 1)
        self.drop_path = DropPath(drop_path)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.drop_path(self.mix(self.act(self.conv(self.norm(x)))))


class ReferenceEncoder(nn.Module):
    """Patch-embedding conv trunk with a position-aware (flattening) head.

    The head sees the whole token grid, so it can relate content in one grid
    cell of a super image to content in another, which is what temporal
    order recognition needs.
    """

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        w, g = spec.width, spec.input_side // spec.patch_size
        self.embed = nn.Conv2d(3, w, spec.patch_size, stride=spec.patch_size)
        rates = np.linspace(0.0, spec.drop_path_rate, spec.depth) if spec.depth else []
        self.blocks = nn.Sequential(*[ConvBlock(w, float(r)) for r in rates])
        self.norm = nn.GroupNorm(1, w)
        if spec.head_hidden:
            self.head = nn.Sequential(nn.Flatten(), nn.Linear(w * g * g, spec.head_hidden), nn.GELU(),
                                      nn.Linear(spec.head_hidden, spec.num_classes))
        else:
            self.head = nn.Sequential(nn.Flatten(), nn.Linear(w * g * g, spec.num_classes))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.norm(self.blocks(self.embed(x))))

    def reseed(self, seed: int) -> None:
        """Give every stochastic-depth layer one shared, freshly seeded generator."""
        gen = torch.Generator().manual_seed(int(seed))
        for m in self.modules():
            if isinstance(m, DropPath):
                m.generator = gen

    @property
    def final_layer(self) -> nn.Linear:
        return self.head[-1]


def num_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_reference_encoder(spec: EncoderSpec, seed: int = 0, zero_head: bool = False,
                            dtype: torch.dtype = torch.float32) -> ReferenceEncoder:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ReferenceEncoder(spec)
    if zero_head:
        nn.init.zeros_(model.final_layer.weight)
        nn.init.zeros_(model.final_layer.bias)
    return model.to(dtype)


def as_batch(images: Sequence[SuperImage] | torch.Tensor) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        return images
    return torch.stack([torch.from_numpy(np.ascontiguousarray(s.pixels)).permute(2, 0, 1) for s in images])


def encode(model: nn.Module, images: Sequence[SuperImage] | torch.Tensor, train_mode: bool = False,
           pathway: Pathway = Pathway.FAST) -> RepresentationBatch:
    """Run the shared encoder on a batch of super images.

    The fast and slow pathways differ only in the ``pathway`` tag; both go
    through the same module and therefore the same parameters.
    """
    x = as_batch(images)
    side = getattr(getattr(model, "spec", None), "input_side", None)
    if x.ndim != 4 or x.shape[1] != 3 or (side is not None and x.shape[-2:] != (side, side)):
        raise ValueError(f"expected (B, 3, {side}, {side}) super images, got {tuple(x.shape)}")
    model.train(train_mode)
    dtype = next(model.parameters()).dtype
    if train_mode:
        logits = model(x.to(dtype))
    else:
        with torch.no_grad():
            logits = model(x.to(dtype))
    return RepresentationBatch(logits, pathway)


def save_checkpoint(model: ReferenceEncoder, optimizer_state: dict | None, epoch: int, path: str | Path,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "magic": CHECKPOINT_MAGIC,
        "encoder_spec": asdict(model.spec),
        "dtype": str(next(model.parameters()).dtype).removeprefix("torch."),
        "state_dict": model.state_dict(),
        "optimizer": optimizer_state,
        "epoch": epoch,
        "extra": extra or {},
    }, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[ReferenceEncoder, dict | None, int]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint")
    model = ReferenceEncoder(EncoderSpec(**blob["encoder_spec"])).to(getattr(torch, blob["dtype"]))
    model.load_state_dict(blob["state_dict"])
    return model, blob["optimizer"], int(blob["epoch"])


def checkpoint_extra(path: str | Path) -> dict:
    """The free-form metadata stored alongside a checkpoint."""
    blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    return dict(blob.get("extra") or {})
