"""Run-length encoding for binary masks.

Wire format: row-major alternating run lengths, always starting with the
run of zeros (length 0 if the mask begins with a foreground pixel).
"""
from __future__ import annotations

import numpy as np

from .errors import ContractViolation


def encode(mask: np.ndarray) -> list[int]:
    """Encode a 2D binary mask into alternating zero/one run lengths."""
    if mask.ndim != 2:
        raise ContractViolation(f"expected a 2D mask, got shape {mask.shape}")
    flat = np.asarray(mask, dtype=bool).ravel(order="C")
    if flat.size == 0:
        return []
    edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], edges, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    """Decode alternating run lengths back into a bool mask of ``shape``."""
    height, width = shape
    total = int(height) * int(width)
    runs = list(runs)
    if any(r < 0 for r in runs):
        raise ContractViolation("negative run length")
    if sum(runs) != total:
        raise ContractViolation(
            f"run lengths sum to {sum(runs)}, expected {total} for shape {shape}"
        )
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, runs)
    return flat.reshape(height, width)
