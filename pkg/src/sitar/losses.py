"""Supervised, instance-contrastive and group-contrastive objectives.

Representations are raw logits; cosine normalization happens only inside the
similarity kernel. All reductions are arithmetic means over ordered positive
pairs so loss scale does not depend on batch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from sitar.encoder import RepresentationBatch


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.5
    gamma: float = 0.6
    beta: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be non-negative")


@dataclass
class GroupSummary:
    means: torch.Tensor    # (2, C, D): pathway (fast, slow) x class x representation
    present: torch.Tensor  # (2, C) bool
    counts: torch.Tensor   # (2, C) int64


def _values(z) -> torch.Tensor:
    return z.values if isinstance(z, RepresentationBatch) else z


def _check_finite(x: torch.Tensor, what: str) -> None:
    if not torch.isfinite(x).all():
        raise FloatingPointError(f"non-finite values in {what}")


def cross_entropy_smoothed(logits: torch.Tensor, targets: torch.Tensor, smoothing: float = 0.0) -> torch.Tensor:
    """Batch-mean cross-entropy against smoothed targets.

    ``targets`` is either integer labels of shape (B,) or label distributions of
    shape (B, C) (as produced by Mixup/CutMix). Smoothing mixes the target with
    the uniform distribution: q = (1 - eps) * target + eps / C.
    """
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    _check_finite(logits, "logits")
    C = logits.shape[-1]
    if targets.ndim == 1:
        if targets.numel() and (targets.min() < 0 or targets.max() >= C):
            raise ValueError("labels outside [0, C)")
        q = F.one_hot(targets.long(), C).to(logits.dtype)
    else:
        q = targets.to(logits.dtype)
    q = (1.0 - smoothing) * q + smoothing / C
    return -(q * F.log_softmax(logits, dim=-1)).sum(-1).mean()


def sim_h(u: torch.Tensor, v: torch.Tensor, temperature: float) -> torch.Tensor:
    """exp(cos(u, v) / temperature)."""
    nu, nv = torch.linalg.vector_norm(u), torch.linalg.vector_norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("sim_h is undefined for zero vectors")
    return torch.exp(torch.dot(u, v) / (nu * nv) / temperature)


def _normalize_rows(z: torch.Tensor, what: str) -> torch.Tensor:
    norms = torch.linalg.vector_norm(z, dim=-1, keepdim=True)
    if (norms == 0).any():
        raise ValueError(f"zero-norm representation row in {what}")
    return z / norms


def _paired_nce(anchors: torch.Tensor, positives: torch.Tensor, bank: torch.Tensor,
                neg_mask: torch.Tensor, temperature: float) -> torch.Tensor:
    """Per-anchor -log(h(a, p) / (h(a, p) + sum_{masked n} h(a, n))) on unit rows."""
    pos = (anchors * positives).sum(-1) / temperature
    sims = anchors @ bank.T / temperature
    sims = sims.masked_fill(~neg_mask, float("-inf"))
    denom = torch.logsumexp(torch.cat([pos[:, None], sims], dim=1), dim=1)
    return denom - pos


def instance_contrastive_loss(z_fast, z_slow, temperature: float) -> torch.Tensor:
    """Fast/slow views of the same video are positives; every view of every
    other video in the batch (both pathways) is a negative. Averaged over the
    2B ordered pairs (fast->slow and slow->fast)."""
    zf, zs = _values(z_fast), _values(z_slow)
    if zf.shape != zs.shape or zf.ndim != 2:
        raise ValueError(f"fast/slow batches must share a (B, C) shape, got {tuple(zf.shape)} vs {tuple(zs.shape)}")
    B = zf.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    zf, zs = _normalize_rows(zf, "fast batch"), _normalize_rows(zs, "slow batch")
    anchors = torch.cat([zf, zs])
    positives = torch.cat([zs, zf])
    bank = torch.cat([zf, zs])
    vid = torch.arange(B).repeat(2)
    neg_mask = vid[:, None] != vid[None, :]
    return _paired_nce(anchors, positives, bank, neg_mask, temperature).mean()


def group_averages(z_fast, z_slow, labels_fast: torch.Tensor, labels_slow: torch.Tensor,
                   num_classes: int, accept_fast: torch.Tensor | None = None,
                   accept_slow: torch.Tensor | None = None) -> GroupSummary:
    """Per-pathway mean representation of every pseudo-class present in the batch.

    Rows whose accept mask is False are left out of every group.
    """
    means, present, counts = [], [], []
    for z, y, acc in ((_values(z_fast), labels_fast, accept_fast), (_values(z_slow), labels_slow, accept_slow)):
        y = torch.as_tensor(y, dtype=torch.long)
        onehot = F.one_hot(y, num_classes).to(z.dtype)
        if acc is not None:
            onehot = onehot * torch.as_tensor(acc, dtype=z.dtype)[:, None]
        n = onehot.sum(0)
        sums = onehot.T @ z
        means.append(sums / n.clamp_min(1)[:, None])
        present.append(n > 0)
        counts.append(n.round().long())
    return GroupSummary(torch.stack(means), torch.stack(present), torch.stack(counts))


def group_contrastive_loss(summary: GroupSummary, temperature: float) -> torch.Tensor:
    """Contrast fast and slow group means of the same pseudo-class against the
    means of other present classes in either pathway."""
    both = summary.present[0] & summary.present[1]
    zero = summary.means.sum() * 0.0
    if not both.any():
        return zero
    classes = torch.nonzero(both).flatten()
    rf, rs = summary.means[0], summary.means[1]
    # present rows only; absent means are zeros and must never be normalized
    bank_cls = torch.cat([torch.nonzero(summary.present[0]).flatten(), torch.nonzero(summary.present[1]).flatten()])
    bank = torch.cat([rf[summary.present[0]], rs[summary.present[1]]])
    bank = _normalize_rows(bank, "group means")
    a_f = _normalize_rows(rf[classes], "group means")
    a_s = _normalize_rows(rs[classes], "group means")
    anchors = torch.cat([a_f, a_s])
    positives = torch.cat([a_s, a_f])
    anchor_cls = classes.repeat(2)
    neg_mask = anchor_cls[:, None] != bank_cls[None, :]
    return _paired_nce(anchors, positives, bank, neg_mask, temperature).mean()


def total_loss(l_sup, l_ic, l_gc, gamma: float = 0.6, beta: float = 1.0):
    return l_sup + gamma * l_ic + beta * l_gc


def pseudo_consistency_loss(weak_logits: torch.Tensor, strong_logits: torch.Tensor,
                            threshold: float = 0.95) -> torch.Tensor:
    """Cross-entropy of ``strong_logits`` against the (detached) argmax of
    ``weak_logits``, on rows whose weak confidence reaches ``threshold``.

    Masked rows count as zeros in the batch mean (FixMatch convention).
    """
    weak = _values(weak_logits).detach()
    strong = _values(strong_logits)
    probs = weak.softmax(-1)
    conf, target = probs.max(-1)
    mask = (conf >= threshold).to(strong.dtype)
    ce = F.cross_entropy(strong, target, reduction="none")
    return (ce * mask).mean()
