"""Classifier configuration and prediction result types."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import ContractViolation


@dataclass(frozen=True)
class ClassifierConfig:
    """Fine-tuning hyperparameters for the multi-label classifier."""

    num_classes: int
    input_resolution: int = 384
    epochs: int = 50
    warmup_epochs: int = 10
    base_lr: float = 2e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    decision_threshold: float = 0.5

    def __post_init__(self):
        if self.num_classes < 1:
            raise ContractViolation("num_classes must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ContractViolation(
                f"warmup_epochs={self.warmup_epochs} must be < epochs={self.epochs}"
            )
        if self.base_lr <= 0:
            raise ContractViolation("base_lr must be positive")
        if self.batch_size < 1:
            raise ContractViolation("batch_size must be >= 1")
        if not 0.0 < self.decision_threshold < 1.0:
            raise ContractViolation(
                f"decision_threshold={self.decision_threshold} outside (0, 1)"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PredictionResult:
    """Sigmoid probabilities plus the thresholded class set used for prompting.

    ``predicted_classes`` never contains the background id: background is not
    prompted downstream.
    """

    image_id: str
    probabilities: np.ndarray  # (N+1,), each in [0, 1]
    predicted_classes: set[int] = field(default_factory=set)
