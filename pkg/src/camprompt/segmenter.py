"""Promptable-segmentation driving: blur preprocessing, mask strategies, backends.

Point prompts are always computed from the original image; when
``input_mode="smoothed"`` only the image handed to the backend is blurred.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import ndimage

from . import rle
from .cam import PointPrompt
from .errors import CapabilityError, ContractViolation, EmptyProposal

INPUT_MODES = ("original", "smoothed")
MASK_STRATEGIES = ("single", "multi")


@dataclass(frozen=True)
class SegmenterConfig:
    input_mode: str = "original"
    blur_sigma: float = 10.0
    mask_strategy: str = "single"
    k_proposals: int = 3

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ContractViolation(f"input_mode must be one of {INPUT_MODES}")
        if self.mask_strategy not in MASK_STRATEGIES:
            raise ContractViolation(f"mask_strategy must be one of {MASK_STRATEGIES}")
        if self.k_proposals < 1:
            raise ContractViolation("k_proposals must be >= 1")
        if self.input_mode == "smoothed" and self.blur_sigma <= 0:
            raise ContractViolation("blur_sigma must be positive in smoothed mode")


@dataclass
class MaskProposalSet:
    """1..k binary masks with backend confidences for one prompt, score-descending."""

    image_id: str
    class_id: int
    prompt: PointPrompt
    masks: list[np.ndarray] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)


@runtime_checkable
class PromptableBackend(Protocol):
    """In-process adapter contract for a promptable segmentation backend."""

    def propose(
        self, image: np.ndarray, point: tuple[int, int], want_multi: bool, k: int
    ) -> list[tuple[np.ndarray, float]]:
        """Return (mask, score) pairs for a (x, y) point prompt."""
        ...


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian along both axes, kernel radius ceil(4*sigma), reflect edges.

    Integer inputs are filtered in float, rounded, and cast back; float inputs
    come back as float64.
    """
    if sigma <= 0:
        raise ContractViolation(f"sigma must be positive, got {sigma}")
    arr = np.asarray(image)
    kernel = _gaussian_kernel(sigma)
    out = arr.astype(np.float64)
    out = ndimage.correlate1d(out, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    if np.issubdtype(arr.dtype, np.integer):
        info = np.iinfo(arr.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(arr.dtype)
    return out


def _check_prompt_bounds(image: np.ndarray, prompt: PointPrompt) -> None:
    height, width = image.shape[:2]
    if not (0 <= prompt.x < width and 0 <= prompt.y < height):
        raise ContractViolation(
            f"prompt ({prompt.x}, {prompt.y}) outside image bounds {width}x{height}"
        )


def _query(
    image: np.ndarray, prompt: PointPrompt, backend: PromptableBackend, k: int
) -> tuple[list[np.ndarray], list[float]]:
    proposals = backend.propose(image, (prompt.x, prompt.y), want_multi=k > 1, k=k)
    if not proposals:
        raise EmptyProposal(
            f"backend returned no masks for class {prompt.class_id} at "
            f"({prompt.x}, {prompt.y})"
        )
    ranked = sorted(proposals, key=lambda pair: -pair[1])[:k]
    masks = [np.asarray(m, dtype=bool) for m, _ in ranked]
    for mask in masks:
        if mask.shape != image.shape[:2]:
            raise ContractViolation(
                f"backend mask shape {mask.shape} != image {image.shape[:2]}"
            )
    return masks, [float(s) for _, s in ranked]


def segment_single(
    image: np.ndarray,
    prompt: PointPrompt,
    backend: PromptableBackend,
    k: int = 3,
) -> MaskProposalSet:
    """Average the backend's valid masks into one (per-pixel majority, mean >= 0.5)."""
    _check_prompt_bounds(image, prompt)
    masks, scores = _query(image, prompt, backend, k)
    mean = np.mean(np.stack(masks).astype(np.float64), axis=0)
    merged = mean >= 0.5
    return MaskProposalSet(
        image_id="", class_id=prompt.class_id, prompt=prompt,
        masks=[merged], scores=[float(np.mean(scores))],
    )


def segment_multi(
    image: np.ndarray,
    prompt: PointPrompt,
    backend: PromptableBackend,
    k: int,
) -> MaskProposalSet:
    """Up to k backend masks, ordered by backend score descending, unmerged."""
    if k < 1:
        raise ContractViolation("k must be >= 1")
    _check_prompt_bounds(image, prompt)
    masks, scores = _query(image, prompt, backend, k)
    return MaskProposalSet(
        image_id="", class_id=prompt.class_id, prompt=prompt,
        masks=masks, scores=scores,
    )


def run_segmentation(
    image: np.ndarray,
    prompts: Sequence[PointPrompt],
    cfg: SegmenterConfig,
    backend: PromptableBackend,
    image_id: str = "",
) -> tuple[list[MaskProposalSet], list[tuple[PointPrompt, str]]]:
    """One MaskProposalSet per prompt; blur applied once per image, not per prompt.

    Per-prompt EmptyProposal signals are aggregated into the second return
    value instead of aborting the image.
    """
    backend_input = (
        gaussian_blur(image, cfg.blur_sigma) if cfg.input_mode == "smoothed" else image
    )
    results: list[MaskProposalSet] = []
    skipped: list[tuple[PointPrompt, str]] = []
    for prompt in prompts:
        try:
            if cfg.mask_strategy == "single":
                proposal = segment_single(backend_input, prompt, backend, cfg.k_proposals)
            else:
                proposal = segment_multi(backend_input, prompt, backend, cfg.k_proposals)
        except EmptyProposal as exc:
            skipped.append((prompt, str(exc)))
            continue
        proposal.image_id = image_id
        results.append(proposal)
    return results, skipped


def proposal_manifest(proposals: MaskProposalSet) -> dict:
    """JSON-safe manifest with run-length-encoded masks."""
    return {
        "image_id": proposals.image_id,
        "class_id": proposals.class_id,
        "prompt": {"x": proposals.prompt.x, "y": proposals.prompt.y},
        "size": {"height": int(proposals.masks[0].shape[0]),
                 "width": int(proposals.masks[0].shape[1])},
        "masks": [
            {"rle": rle.encode(mask), "score": score}
            for mask, score in zip(proposals.masks, proposals.scores)
        ],
    }


def save_proposal_manifest(proposals: MaskProposalSet, out_dir: Path | str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{proposals.image_id}.{proposals.class_id}.json"
    path.write_text(json.dumps(proposal_manifest(proposals), sort_keys=True) + "\n")
    return path


def load_proposal_manifest(path: Path | str) -> MaskProposalSet:
    data = json.loads(Path(path).read_text())
    shape = (data["size"]["height"], data["size"]["width"])
    prompt = PointPrompt(
        class_id=data["class_id"], x=data["prompt"]["x"], y=data["prompt"]["y"],
        activation=float("nan"),
    )
    return MaskProposalSet(
        image_id=data["image_id"],
        class_id=data["class_id"],
        prompt=prompt,
        masks=[rle.decode(m["rle"], shape) for m in data["masks"]],
        scores=[float(m["score"]) for m in data["masks"]],
    )


@dataclass
class FloodFillBackend:
    """Classical no-ML backend: connected component of seed-similar color.

    Proposes up to three nested regions from a tolerance ladder, scored by
    mean color similarity to the seed pixel. Deterministic, used for tests,
    demos, and CPU-only runs.
    """

    tolerances: tuple[float, ...] = (12.0, 25.0, 50.0)

    def propose(
        self, image: np.ndarray, point: tuple[int, int], want_multi: bool, k: int
    ) -> list[tuple[np.ndarray, float]]:
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[..., None]
        x, y = point
        seed = arr[y, x]
        dist = np.sqrt(((arr - seed) ** 2).sum(axis=-1))
        tolerances = self.tolerances if want_multi else self.tolerances[:1]
        proposals: list[tuple[np.ndarray, float]] = []
        full_range = math.sqrt(3.0) * 255.0
        for tol in tolerances[: max(k, 1)]:
            within = dist <= tol
            labels, _ = ndimage.label(within)
            mask = labels == labels[y, x]
            score = float(1.0 - dist[mask].mean() / full_range)
            proposals.append((mask, score))
        return proposals


class Sam2Backend:
    """Adapter over the external promptable-segmentation checkpoint.

    Imports lazily; raises CapabilityError when the backend package or
    checkpoint is unavailable (it is not shipped with this project).
    """

    def __init__(self, checkpoint: str, model_cfg: str, device: str = "cuda"):
        try:
            from sam2.build_sam import build_sam2
            from sam2.sam2_image_predictor import SAM2ImagePredictor
        except ImportError as exc:
            raise CapabilityError(
                "the 'sam2' package is not installed; install it and download "
                "the large checkpoint to use this backend"
            ) from exc
        self._predictor = SAM2ImagePredictor(build_sam2(model_cfg, checkpoint, device=device))
        self._cached_image: Optional[int] = None

    def propose(
        self, image: np.ndarray, point: tuple[int, int], want_multi: bool, k: int
    ) -> list[tuple[np.ndarray, float]]:
        if self._cached_image != id(image):
            self._predictor.set_image(image)
            self._cached_image = id(image)
        masks, scores, _ = self._predictor.predict(
            point_coords=np.asarray([point], dtype=np.float64),
            point_labels=np.ones(1, dtype=np.int64),
            multimask_output=want_multi,
        )
        order = np.argsort(-np.asarray(scores))
        return [(masks[i].astype(bool), float(scores[i])) for i in order[:k]]
