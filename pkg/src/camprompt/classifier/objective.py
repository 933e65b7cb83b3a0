"""Multi-label training objective and learning-rate schedule.

These are the reference (numpy/scalar) forms; the training loop uses the
torch equivalents, which the tests cross-check against these.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import ContractViolation
from .config import ClassifierConfig

PROB_EPS = 1e-7


def bce_multilabel_loss(targets: np.ndarray, probs: np.ndarray) -> float:
    """Mean binary cross-entropy over the N+1 class positions.

    ``probs`` are clamped to [PROB_EPS, 1 - PROB_EPS] before the logs.
    """
    y = np.asarray(targets, dtype=np.float64).ravel()
    p = np.asarray(probs, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise ContractViolation(f"length mismatch: targets {y.shape} vs probs {p.shape}")
    if y.size == 0:
        raise ContractViolation("empty target vector")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    terms = y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    return float(-terms.mean())


def lr_at(step: int, total_steps: int, cfg: ClassifierConfig) -> float:
    """Learning rate at ``step``: linear warmup to base_lr, then cosine decay to 0."""
    if total_steps <= 0:
        raise ContractViolation("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside [0, {total_steps}]")
    warmup_steps = int(round(total_steps * cfg.warmup_epochs / cfg.epochs))
    if step < warmup_steps:
        return cfg.base_lr * step / warmup_steps
    span = total_steps - warmup_steps
    if span == 0:
        return 0.0
    progress = (step - warmup_steps) / span
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
