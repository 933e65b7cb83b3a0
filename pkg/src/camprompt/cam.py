"""Gradient-weighted class activation maps and point-prompt selection.

The engine hooks the classifier backbone's final normalization layer (after
all attention blocks, before the head), weights channel activations by the
spatially pooled gradient of the target class logit, clips negatives, then
upsamples to source-image resolution and max-normalizes to [0, 1].
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .classifier.model import LoadedModel, preprocess
from .errors import CapabilityError, ContractViolation, NoActivation


@dataclass(frozen=True)
class PointPrompt:
    """A pixel coordinate plus class identity used to query the segmentation backend."""

    class_id: int
    x: int  # column
    y: int  # row
    activation: float


@dataclass
class ClassActivationMap:
    """Per-class activation grid at source-image resolution, max-normalized to [0, 1]."""

    class_id: int
    grid: np.ndarray  # (H, W) float32 in [0, 1]
    raw_peak: float  # pre-normalization maximum


def select_prompt(cam: ClassActivationMap) -> PointPrompt:
    """Coordinate of the grid maximum; ties broken by smallest row, then column."""
    grid = cam.grid
    if grid.size == 0 or float(grid.max()) <= 0.0:
        raise NoActivation(f"class {cam.class_id}: activation map is identically zero")
    flat_index = int(np.argmax(grid))  # row-major scan = stated tie-break
    y, x = np.unravel_index(flat_index, grid.shape)
    return PointPrompt(
        class_id=cam.class_id, x=int(x), y=int(y), activation=float(grid[y, x])
    )


def upsample_bilinear(grid: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinearly upsample a 2D activation grid to ``size`` (height, width)."""
    t = torch.from_numpy(np.ascontiguousarray(grid)).float().unsqueeze(0).unsqueeze(0)
    t = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return t[0, 0].numpy()


def _infer_grid_hw(n_tokens: int, image_hw: tuple[int, int]) -> tuple[int, int]:
    """Choose (h, w) with h*w = n_tokens whose aspect best matches the input image."""
    target = image_hw[0] / image_hw[1]
    best = None
    for h in range(1, n_tokens + 1):
        if n_tokens % h:
            continue
        w = n_tokens // h
        score = abs(h / w - target)
        if best is None or score < best[0]:
            best = (score, h, w)
    return best[1], best[2]


class GradCamEngine:
    """Computes gradient-weighted activation maps for one classifier instance.

    Requires a gradient pass, so calls are serialized per engine; use one
    engine per model instance for parallelism.
    """

    def __init__(self, model: LoadedModel):
        self.model = model
        backbone = model.module.backbone
        try:
            layer = backbone.cam_target_layer()
        except (AttributeError, NotImplementedError) as exc:
            raise CapabilityError(
                "backbone does not expose its final normalization layer for hooking"
            ) from exc
        self._activations: torch.Tensor | None = None
        self._gradients: torch.Tensor | None = None
        self._handles = [
            layer.register_forward_hook(self._store_activations),
            layer.register_full_backward_hook(self._store_gradients),
        ]

    def _store_activations(self, module, inputs, output):
        self._activations = output

    def _store_gradients(self, module, grad_input, grad_output):
        self._gradients = grad_output[0]

    def close(self):
        for handle in self._handles:
            handle.remove()
        self._handles = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def compute(self, pixels: np.ndarray, class_id: int) -> ClassActivationMap:
        """Activation map for ``class_id`` at the resolution of ``pixels``."""
        num_classes = self.model.cfg.num_classes
        if not 0 <= class_id < num_classes:
            raise ContractViolation(f"class_id {class_id} outside catalog range")
        image_hw = pixels.shape[:2]
        module = self.model.module
        module.eval()
        module.zero_grad(set_to_none=True)
        self._activations = None
        self._gradients = None
        x = preprocess(pixels, self.model.cfg.input_resolution)
        with torch.enable_grad():
            logits = module(x)
            logits[0, class_id].backward()
        if self._activations is None or self._gradients is None:
            raise CapabilityError("hooks captured no activations; backbone incompatible")
        act = self._activations.detach()
        grad = self._gradients.detach()

        if act.ndim == 4:  # (B, H, W, C) channels-last grid
            grid_hw = act.shape[1:3]
            act = act.reshape(1, -1, act.shape[-1])
            grad = grad.reshape(1, -1, grad.shape[-1])
        else:  # (B, L, C) row-major tokens
            backbone = module.backbone
            input_hw = (self.model.cfg.input_resolution,) * 2
            try:
                grid_hw = backbone.feature_grid_hw(input_hw)
            except (AttributeError, NotImplementedError):
                grid_hw = _infer_grid_hw(act.shape[1], image_hw)

        weights = grad.mean(dim=1)  # (1, C): spatial pooling of gradients
        cam = torch.relu((act * weights.unsqueeze(1)).sum(dim=-1))  # (1, L)
        coarse = cam.reshape(grid_hw[0], grid_hw[1]).float().numpy()
        grid = upsample_bilinear(coarse, image_hw)
        raw_peak = float(grid.max())
        if raw_peak > 0:
            grid = grid / raw_peak
        return ClassActivationMap(class_id=class_id, grid=grid.astype(np.float32), raw_peak=raw_peak)


def save_cam_artifacts(
    cam: ClassActivationMap,
    prompt: PointPrompt | None,
    out_dir: Path | str,
    image_id: str,
) -> tuple[Path, Path]:
    """Dump an 8-bit grayscale PNG plus a JSON sidecar with the prompt coordinates."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    png_path = out_dir / f"{image_id}.{cam.class_id}.cam.png"
    Image.fromarray((cam.grid * 255.0).round().astype(np.uint8), mode="L").save(png_path)
    sidecar = {
        "image_id": image_id,
        "class_id": cam.class_id,
        "raw_peak": cam.raw_peak,
        "prompt": None if prompt is None else {"x": prompt.x, "y": prompt.y,
                                               "activation": prompt.activation},
    }
    sidecar_path = out_dir / f"{image_id}.{cam.class_id}.cam.json"
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return png_path, sidecar_path
