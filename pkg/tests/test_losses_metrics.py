"""Loss and metric tests against hand-computed values and brute-force oracles."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from affkit.errors import EmptyGroundTruth, ShapeMismatch
from affkit.losses import LossConfig, dice_loss, focal_loss, total_loss
from affkit.metrics import (
    BACKGROUND,
    ConfusionAccumulator,
    MetricAccumulator,
    compute_metrics,
)


class TestFocal:
    def test_perfect_prediction_near_zero(self):
        t = torch.tensor([0.0, 1.0, 1.0, 0.0])
        assert focal_loss(t, t).item() < 1e-5

    def test_hand_value(self):
        # single pixel, target 1, prediction 0.5, gamma 2: 0.25 * ln 2
        loss = focal_loss(torch.tensor([0.5]), torch.tensor([1.0]))
        assert loss.item() == pytest.approx(0.25 * math.log(2), rel=1e-6)

    def test_gamma_zero_is_bce(self):
        rng = np.random.default_rng(2)
        y = torch.tensor(rng.uniform(0.01, 0.99, size=50))
        t = torch.tensor((rng.random(50) > 0.5).astype(float))
        got = focal_loss(y, t, LossConfig(gamma=0.0))
        bce = torch.nn.functional.binary_cross_entropy(y, t)
        assert got.item() == pytest.approx(bce.item(), rel=1e-6)

    def test_nonnegative_property(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            y = torch.tensor(rng.uniform(0, 1, size=30))
            t = torch.tensor((rng.random(30) > 0.5).astype(float))
            assert focal_loss(y, t).item() >= 0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            focal_loss(torch.zeros(3), torch.zeros(4))


class TestDice:
    def test_binary_match_zero(self):
        t = torch.tensor([1.0, 0.0, 1.0, 1.0])
        assert dice_loss(t, t).item() == pytest.approx(0.0)

    def test_hand_value(self):
        # y all 0, target all 1, n=4, eps=1: 1 - 1/5
        y = torch.zeros(4)
        t = torch.ones(4)
        assert dice_loss(y, t).item() == pytest.approx(0.8)

    def test_both_zero_saturates(self):
        z = torch.zeros(6)
        assert dice_loss(z, z).item() == pytest.approx(0.0)

    def test_bounded(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            y = torch.tensor(rng.uniform(0, 1, size=25))
            t = torch.tensor((rng.random(25) > 0.5).astype(float))
            v = dice_loss(y, t).item()
            assert 0.0 <= v <= 1.0


class TestTotal:
    def test_alpha_zero(self):
        y = torch.tensor([0.3, 0.7])
        t = torch.tensor([1.0, 0.0])
        cfg = LossConfig(alpha=0.0)
        assert total_loss(y, t, cfg).item() == pytest.approx(dice_loss(y, t, cfg).item())

    def test_sum(self):
        y = torch.tensor([0.3, 0.9, 0.1])
        t = torch.tensor([1.0, 1.0, 0.0])
        expect = focal_loss(y, t).item() + dice_loss(y, t).item()
        assert total_loss(y, t).item() == pytest.approx(expect, rel=1e-6)

    def test_gradient_matches_fd(self):
        torch.manual_seed(0)
        y = torch.rand(12, dtype=torch.float64, requires_grad=True).clamp(0.05, 0.95).detach().requires_grad_()
        t = (torch.rand(12, dtype=torch.float64) > 0.5).double()
        loss = total_loss(y, t)
        (g,) = torch.autograd.grad(loss, y)
        eps = 1e-7
        for i in range(12):
            yp = y.detach().clone(); yp[i] += eps
            ym = y.detach().clone(); ym[i] -= eps
            fd = (total_loss(yp, t).item() - total_loss(ym, t).item()) / (2 * eps)
            denom = max(abs(fd), abs(g[i].item()), 1e-4)
            assert abs(fd - g[i].item()) / denom < 1e-4

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(gamma=-1)
        with pytest.raises(ValueError):
            LossConfig(epsilon=0)


def brute_metrics(pred, gt, num_labels):
    ious, f1s = [], []
    for l in range(num_labels):
        if not (gt == l).any():
            continue
        tp = fp = fn = 0
        for p, g in zip(pred.ravel(), gt.ravel()):
            if p == l and g == l:
                tp += 1
            elif p == l:
                fp += 1
            elif g == l:
                fn += 1
        ious.append(tp / (tp + fp + fn))
        f1s.append(2 * tp / (2 * tp + fp + fn))
    fg = gt != BACKGROUND
    acc = (pred[fg] == gt[fg]).sum() / fg.sum()
    return float(np.mean(ious)), float(np.mean(f1s)), float(acc)


class TestMetrics:
    def test_perfect(self):
        gt = np.array([[0, 1], [BACKGROUND, 1]])
        assert compute_metrics(gt, gt, 2) == (1.0, 1.0, 1.0)

    def test_fully_disjoint(self):
        gt = np.full((4, 4), 0)
        pred = np.full((4, 4), 1)
        miou, f1, acc = compute_metrics(pred, gt, 2)
        assert (miou, f1, acc) == (0.0, 0.0, 0.0)

    def test_hand_confusion(self):
        # 1 label; gt has 100 foreground px; pred covers 50 of them plus 50
        # background-gt px -> IoU 50/150, F1 0.5, Acc 0.5
        gt = np.full((20, 10), BACKGROUND)
        gt[:10, :] = 0
        pred = np.full((20, 10), BACKGROUND)
        pred[5:15, :] = 0
        miou, f1, acc = compute_metrics(pred, gt, 1)
        assert miou == pytest.approx(1 / 3)
        assert f1 == pytest.approx(0.5)
        assert acc == pytest.approx(0.5)

    def test_empty_ground_truth(self):
        gt = np.full((3, 3), BACKGROUND)
        with pytest.raises(EmptyGroundTruth):
            compute_metrics(gt, gt, 2)

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        num_labels = int(rng.integers(1, 4))
        gt = rng.integers(-1, num_labels, size=(16, 16))
        pred = rng.integers(-1, num_labels, size=(16, 16))
        if not ((gt >= 0).any()):
            gt[0, 0] = 0
        assert compute_metrics(pred, gt, num_labels) == pytest.approx(
            brute_metrics(pred, gt, num_labels)
        )

    def test_relabel_invariance(self):
        rng = np.random.default_rng(9)
        gt = rng.integers(-1, 3, size=(12, 12))
        pred = rng.integers(-1, 3, size=(12, 12))
        gt[0, 0] = 0; gt[0, 1] = 1; gt[0, 2] = 2
        perm = {0: 2, 1: 0, 2: 1, BACKGROUND: BACKGROUND}
        gt2 = np.vectorize(perm.get)(gt)
        pred2 = np.vectorize(perm.get)(pred)
        assert compute_metrics(pred, gt, 3) == pytest.approx(compute_metrics(pred2, gt2, 3))


class TestAccumulators:
    def test_confusion_merge_associative(self):
        rng = np.random.default_rng(5)
        accs = []
        for _ in range(3):
            a = ConfusionAccumulator(2)
            a.add(rng.integers(-1, 2, size=(8, 8)), rng.integers(-1, 2, size=(8, 8)))
            accs.append(a)
        left = accs[0].merge(accs[1]).merge(accs[2])
        right = accs[0].merge(accs[1].merge(accs[2]))
        assert np.array_equal(left.counts, right.counts)

    def test_confusion_counts_sum(self):
        acc = ConfusionAccumulator(2)
        pred = np.array([[0, 1], [-1, 0]])
        gt = np.array([[0, 0], [1, -1]])
        acc.add(pred, gt)
        assert (acc.counts.sum(axis=1) == pred.size).all()

    def test_macro_average(self):
        acc = MetricAccumulator(1)
        gt = np.zeros((4, 4), dtype=int)
        acc.add(gt, gt)  # perfect image
        pred = np.full((4, 4), BACKGROUND)
        pred[:2] = 0
        acc.add(pred, gt)  # IoU 0.5 image
        s = acc.summary()
        assert s["images"] == 2
        assert s["miou"] == pytest.approx(0.75)
