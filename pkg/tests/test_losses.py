import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

import oracles
from sitar import losses
from sitar.encoder import Pathway, RepresentationBatch

T = torch.tensor
f64 = dict(dtype=torch.float64)


def test_ce_confident_is_zero():
    logits = torch.zeros(3, 4, **f64)
    labels = T([0, 2, 3])
    logits[torch.arange(3), labels] = 1e6
    assert losses.cross_entropy_smoothed(logits, labels, 0.0).item() == pytest.approx(0.0, abs=1e-12)


def test_ce_uniform_is_log_c():
    assert losses.cross_entropy_smoothed(torch.zeros(5, 7, **f64), T([0, 1, 2, 3, 6]), 0.0).item() == \
        pytest.approx(math.log(7), rel=1e-12)


def test_ce_smoothed_matches_oracle():
    expected = oracles.smoothed_ce([1.0, 2.0, 3.0], 2, 0.1)
    assert expected == pytest.approx(0.5076059644, rel=1e-9)
    got = losses.cross_entropy_smoothed(T([[1.0, 2.0, 3.0]], **f64), T([2]), 0.1).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_ce_soft_targets_equal_hard_for_onehot():
    logits = torch.randn(4, 5, **f64)
    y = T([0, 4, 2, 2])
    soft = torch.nn.functional.one_hot(y, 5).double()
    assert losses.cross_entropy_smoothed(logits, soft, 0.1).item() == \
        pytest.approx(losses.cross_entropy_smoothed(logits, y, 0.1).item(), rel=1e-12)


def test_ce_rejects_nonfinite():
    with pytest.raises(FloatingPointError):
        losses.cross_entropy_smoothed(T([[float("nan"), 0.0]]), T([0]))


def test_sim_h_examples():
    u = T([0.3, -2.0, 1.0], **f64)
    assert losses.sim_h(u, u, 0.5).item() == pytest.approx(math.e ** 2, rel=1e-12)
    assert losses.sim_h(T([1.0, 0.0], **f64), T([0.0, 3.0], **f64), 0.5).item() == pytest.approx(1.0, rel=1e-12)
    expected = oracles.h([1.0, 0.0], [1.0, 1.0], 0.5)
    assert expected == pytest.approx(4.1133, abs=1e-4)
    assert losses.sim_h(T([1.0, 0.0], **f64), T([1.0, 1.0], **f64), 0.5).item() == pytest.approx(expected, rel=1e-12)


def test_sim_h_zero_vector():
    with pytest.raises(ValueError):
        losses.sim_h(torch.zeros(2), T([1.0, 0.0]), 0.5)


def test_instance_single_video_is_zero():
    z = torch.randn(1, 6, **f64)
    assert losses.instance_contrastive_loss(z, torch.randn(1, 6, **f64), 0.5).item() == 0.0


def test_instance_two_videos_matches_enumeration():
    zf = [[1.0, 0.0], [0.0, 1.0]]
    expected = oracles.instance_loss(zf, zf, 0.5)
    # all four anchors see h = e^2 against the positive and 1 against both negatives
    assert expected == pytest.approx(math.log(1 + 2 * math.exp(-2)), rel=1e-12)
    got = losses.instance_contrastive_loss(T(zf, **f64), T(zf, **f64), 0.5).item()
    assert got == pytest.approx(expected, rel=1e-12)


def test_instance_accepts_representation_batches():
    z = torch.randn(3, 4, **f64)
    a = losses.instance_contrastive_loss(RepresentationBatch(z, Pathway.FAST), RepresentationBatch(-z, Pathway.SLOW), 0.5)
    assert a.item() == pytest.approx(losses.instance_contrastive_loss(z, -z, 0.5).item())


def test_instance_scale_invariance():
    zf, zs = torch.randn(5, 8, **f64), torch.randn(5, 8, **f64)
    a = losses.instance_contrastive_loss(zf, zs, 0.5).item()
    b = losses.instance_contrastive_loss(7 * zf, 7 * zs, 0.5).item()
    assert b == pytest.approx(a, rel=1e-12)


def test_instance_errors():
    with pytest.raises(ValueError):
        losses.instance_contrastive_loss(torch.zeros(0, 3), torch.zeros(0, 3), 0.5)
    with pytest.raises(ValueError):
        losses.instance_contrastive_loss(torch.zeros(2, 3), torch.ones(2, 3), 0.5)
    with pytest.raises(ValueError):
        losses.instance_contrastive_loss(torch.ones(2, 3), torch.ones(3, 3), 0.5)


def test_group_single_member_and_mean():
    z = T([[2.0, 0.0], [0.0, 2.0], [5.0, 5.0]], **f64)
    s = losses.group_averages(z, z, T([1, 1, 0]), T([0, 2, 2]), 3)
    assert s.means[0, 1].tolist() == [1.0, 1.0]       # two members averaged
    assert s.means[0, 0].tolist() == [5.0, 5.0]       # single member
    assert s.present.tolist() == [[True, True, False], [True, False, True]]
    assert s.counts.tolist() == [[1, 2, 0], [1, 0, 2]]


def test_group_one_common_class_is_zero():
    z = torch.randn(4, 3, **f64)
    s = losses.group_averages(z, z + 1, T([2, 2, 2, 2]), T([2, 2, 2, 2]), 3)
    assert losses.group_contrastive_loss(s, 0.5).item() == 0.0


def test_group_no_common_class_is_zero():
    z = torch.randn(2, 3, **f64)
    s = losses.group_averages(z, z, T([0, 0]), T([1, 1]), 3)
    assert losses.group_contrastive_loss(s, 0.5).item() == 0.0


def test_group_two_classes_matches_enumeration():
    zf, zs = [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.5], [0.2, 1.0]]
    expected = oracles.group_loss(zf, zs, [0, 1], [0, 1], 2, 0.5)
    assert expected == pytest.approx(0.487218246766834, rel=1e-12)
    s = losses.group_averages(T(zf, **f64), T(zs, **f64), T([0, 1]), T([0, 1]), 2)
    assert losses.group_contrastive_loss(s, 0.5).item() == pytest.approx(expected, rel=1e-12)


def test_fast_only_class_is_negative_only():
    zf = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.3]]
    zs = [[0.9, 0.1], [0.1, 0.9], [0.5, 0.5]]
    yf, ys = [0, 1, 2], [0, 1, 1]  # class 2 only in the fast pathway
    expected = oracles.group_loss(zf, zs, yf, ys, 3, 0.5)
    without = oracles.group_loss(zf[:2], zs[:2], yf[:2], ys[:2], 3, 0.5)
    assert expected != pytest.approx(without)
    s = losses.group_averages(T(zf, **f64), T(zs, **f64), T(yf), T(ys), 3)
    assert losses.group_contrastive_loss(s, 0.5).item() == pytest.approx(expected, rel=1e-12)


def test_rejected_rows_leave_groups():
    zf = torch.randn(4, 3, **f64)
    zs = torch.randn(4, 3, **f64)
    y = T([0, 1, 0, 1])
    acc = T([True, True, False, True])
    s = losses.group_averages(zf, zs, y, y, 2, acc, acc)
    assert torch.equal(s.means[0, 0], zf[0])
    expected = oracles.group_loss(zf.tolist(), zs.tolist(), y.tolist(), y.tolist(), 2, 0.5, acc.tolist(), acc.tolist())
    assert losses.group_contrastive_loss(s, 0.5).item() == pytest.approx(expected, rel=1e-12)


def test_rejected_rows_get_no_group_gradient():
    zf = torch.randn(4, 3, **f64, requires_grad=True)
    zs = torch.randn(4, 3, **f64, requires_grad=True)
    y = T([0, 1, 0, 1])
    acc = T([True, True, False, True])
    losses.group_contrastive_loss(losses.group_averages(zf, zs, y, y, 2, acc, acc), 0.5).backward()
    assert torch.all(zf.grad[2] == 0) and torch.all(zs.grad[2] == 0)
    assert zf.grad[0].abs().sum() > 0


@settings(max_examples=50, deadline=None)
@given(B=st.integers(1, 8), C=st.integers(2, 8), seed=st.integers(0, 2**32 - 1), tau=st.sampled_from([0.1, 0.5, 1.0]))
def test_permutation_equivariance(B, C, seed, tau):
    g = torch.Generator().manual_seed(seed)
    zf, zs = torch.randn(B, C, generator=g, **f64), torch.randn(B, C, generator=g, **f64)
    yf, ys = torch.randint(C, (B,), generator=g), torch.randint(C, (B,), generator=g)
    perm = torch.randperm(B, generator=g)
    a = losses.instance_contrastive_loss(zf, zs, tau).item()
    b = losses.instance_contrastive_loss(zf[perm], zs[perm], tau).item()
    assert b == pytest.approx(a, rel=1e-10, abs=1e-12)
    ga = losses.group_contrastive_loss(losses.group_averages(zf, zs, yf, ys, C), tau).item()
    gb = losses.group_contrastive_loss(losses.group_averages(zf[perm], zs[perm], yf[perm], ys[perm], C), tau).item()
    assert gb == pytest.approx(ga, rel=1e-10, abs=1e-12)


def test_losses_sharpen_as_temperature_drops():
    g = torch.Generator().manual_seed(0)
    zf = torch.randn(6, 5, generator=g, **f64)
    zs = zf + 2.0 * torch.randn(6, 5, generator=g, **f64)
    vals = [losses.instance_contrastive_loss(zf, zs, t).item() for t in (0.1, 0.5, 1.0)]
    assert all(math.isfinite(v) for v in vals)
    # higher temperature flattens the kernel toward the uniform value log(2B - 1)
    flat = math.log(2 * 6 - 1)
    assert abs(vals[0] - flat) > abs(vals[1] - flat) > abs(vals[2] - flat)


@pytest.mark.parametrize("l_sup,l_ic,l_gc,gamma,beta,expected", [
    (1.0, 2.0, 3.0, 0.6, 1.0, 5.2),
    (0.0, 1.0, 1.0, 0.6, 2.0, 2.6),
])
def test_total_loss(l_sup, l_ic, l_gc, gamma, beta, expected):
    assert losses.total_loss(l_sup, l_ic, l_gc, gamma, beta) == pytest.approx(expected)


def test_total_loss_degenerate():
    assert losses.total_loss(1.7, 9.0, 4.0, 0.0, 0.0) == 1.7


def test_pseudo_consistency():
    weak = T([[2.0, 0.5, -1.0], [0.1, 0.3, 0.2]], **f64)
    strong = T([[0.5, 0.5, 0.0], [1.0, -1.0, 2.0]], **f64)
    assert losses.pseudo_consistency_loss(weak, strong, 1.1).item() == 0.0
    # threshold 0: targets argmax(weak) = [0, 1]
    expected = (-math.log(oracles.softmax([0.5, 0.5, 0.0])[0]) - math.log(oracles.softmax([1.0, -1.0, 2.0])[1])) / 2
    assert losses.pseudo_consistency_loss(weak, strong, 0.0).item() == pytest.approx(expected, rel=1e-12)
    confident = T([[30.0, 0.0, 0.0]], **f64)
    assert losses.pseudo_consistency_loss(confident, confident, 0.9).item() == pytest.approx(0.0, abs=1e-12)


def test_pseudo_consistency_masks_unconfident_rows():
    weak = T([[5.0, 0.0], [0.0, 0.01]], **f64)
    strong = T([[0.0, 1.0], [3.0, 0.0]], **f64)
    expected = -math.log(oracles.softmax([0.0, 1.0])[0]) / 2
    assert losses.pseudo_consistency_loss(weak, strong, 0.9).item() == pytest.approx(expected, rel=1e-12)


def test_contrastive_config_validation():
    with pytest.raises(ValueError):
        losses.ContrastiveConfig(temperature=0.0)
    cfg = losses.ContrastiveConfig()
    assert (cfg.temperature, cfg.gamma, cfg.beta) == (0.5, 0.6, 1.0)
