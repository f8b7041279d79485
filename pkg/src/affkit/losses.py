"""Segmentation losses: focal + dice on per-label probability maps."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ShapeMismatch

PROB_CLAMP = 1e-7


@dataclass
class LossConfig:
    gamma: float = 2.0
    epsilon: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def _check(pred, target):
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")


def focal_loss(pred, target, cfg: LossConfig = LossConfig()):
    """Mean focal term over all pixels; pred clamped away from {0, 1}."""
    _check(pred, target)
    y = pred.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = target
    pos = t * (1.0 - y) ** cfg.gamma * torch.log(y)
    neg = (1.0 - t) * y ** cfg.gamma * torch.log(1.0 - y)
    return -(pos + neg).mean()


def dice_loss(pred, target, cfg: LossConfig = LossConfig()):
    _check(pred, target)
    inter = (pred * target).sum()
    return 1.0 - (2.0 * inter + cfg.epsilon) / (pred.sum() + target.sum() + cfg.epsilon)


def total_loss(pred, target, cfg: LossConfig = LossConfig()):
    return cfg.alpha * focal_loss(pred, target, cfg) + dice_loss(pred, target, cfg)
