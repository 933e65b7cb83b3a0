"""Inference: sigmoid probabilities and the thresholded class set."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from ..errors import ContractViolation, IngestionError
from .config import PredictionResult
from .model import LoadedModel, preprocess


def read_image(path: Path | str) -> np.ndarray:
    """Decode an image file to uint8 H x W x 3 pixels."""
    try:
        return np.asarray(Image.open(path).convert("RGB"))
    except (UnidentifiedImageError, OSError) as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc


def predict(
    pixels: np.ndarray,
    model: LoadedModel,
    threshold: Optional[float] = None,
    image_id: str = "",
) -> PredictionResult:
    """Run the classifier; background is excluded from the prompting class set."""
    if threshold is None:
        threshold = model.cfg.decision_threshold
    if not 0.0 < threshold < 1.0:
        raise ContractViolation(f"threshold={threshold} outside (0, 1)")
    x = preprocess(pixels, model.cfg.input_resolution)
    model.module.eval()
    with torch.no_grad():
        logits = model.module(x)
        probs = torch.sigmoid(logits)[0].numpy().astype(np.float64)
    background = model.catalog.background_id
    predicted = {
        int(i) for i in np.flatnonzero(probs >= threshold) if int(i) != background
    }
    return PredictionResult(
        image_id=image_id, probabilities=probs, predicted_classes=predicted
    )
