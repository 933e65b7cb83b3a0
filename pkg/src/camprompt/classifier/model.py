"""Multi-label classifier assembly, preprocessing, and model artifact I/O."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn as nn

from .. import __version__
from ..dataset import ClassCatalog
from ..errors import CapabilityError, ContractViolation
from .backbones import CamReadyBackbone, build_backbone
from .config import ClassifierConfig

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class MultiLabelClassifier(nn.Module):
    """Backbone tokens -> mean pool -> N+1 logits (sigmoid applied by callers)."""

    def __init__(self, backbone: CamReadyBackbone, num_classes: int):
        super().__init__()
        self.backbone = backbone
        self.head = nn.Linear(backbone.embed_dim, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        tokens = self.backbone.forward_features(x)
        return self.head(tokens.mean(dim=1))


def normalize_tensor(img: torch.Tensor) -> torch.Tensor:
    mean = torch.tensor(IMAGENET_MEAN, dtype=img.dtype).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD, dtype=img.dtype).view(3, 1, 1)
    return (img - mean) / std


def preprocess(pixels: np.ndarray, resolution: int) -> torch.Tensor:
    """uint8 H x W x 3 pixels -> normalized (1, 3, R, R) float tensor."""
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ContractViolation(f"expected H x W x 3 pixels, got shape {pixels.shape}")
    buf = pixels if pixels.flags.writeable else pixels.copy()
    img = torch.from_numpy(np.ascontiguousarray(buf)).permute(2, 0, 1).float() / 255.0
    if img.shape[-2:] != (resolution, resolution):
        img = torch.nn.functional.interpolate(
            img.unsqueeze(0), size=(resolution, resolution),
            mode="bilinear", align_corners=False, antialias=True,
        ).squeeze(0)
    return normalize_tensor(img).unsqueeze(0)


@dataclass
class LoadedModel:
    """A ready-to-run classifier plus the metadata it was trained with."""

    module: MultiLabelClassifier
    cfg: ClassifierConfig
    catalog: ClassCatalog
    backbone_name: str
    fingerprint: str
    artifact_dir: Optional[Path] = None


def _fingerprint(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()
    ).hexdigest()[:16]


def save_artifact(
    model: MultiLabelClassifier,
    cfg: ClassifierConfig,
    catalog: ClassCatalog,
    out_dir: Path | str,
    backbone_name: str,
    seed: int,
    backbone_kwargs: Optional[dict] = None,
) -> LoadedModel:
    """Persist weights plus a config fingerprint (catalog hash, cfg, seed, code version)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {
        "classifier_config": cfg.to_dict(),
        "catalog": {"classes": [list(c) for c in catalog.classes],
                    "background_id": catalog.background_id},
        "catalog_fingerprint": catalog.fingerprint(),
        "backbone": backbone_name,
        "backbone_kwargs": backbone_kwargs or {},
        "seed": seed,
        "code_version": __version__,
    }
    meta["fingerprint"] = _fingerprint(meta)
    torch.save(model.state_dict(), out_dir / "weights.pt")
    (out_dir / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return LoadedModel(
        module=model, cfg=cfg, catalog=catalog, backbone_name=backbone_name,
        fingerprint=meta["fingerprint"], artifact_dir=out_dir,
    )


def load_artifact(artifact_dir: Path | str, device: str = "cpu") -> LoadedModel:
    """Rebuild the model named in config.json and load its weights."""
    artifact_dir = Path(artifact_dir)
    config_path = artifact_dir / "config.json"
    if not config_path.exists():
        raise CapabilityError(f"model artifact missing config.json: {artifact_dir}")
    meta = json.loads(config_path.read_text())
    cfg = ClassifierConfig(**meta["classifier_config"])
    catalog = ClassCatalog(
        classes=tuple(tuple(c) for c in meta["catalog"]["classes"]),
        background_id=meta["catalog"]["background_id"],
    )
    backbone = build_backbone(meta["backbone"], **meta.get("backbone_kwargs", {}))
    model = MultiLabelClassifier(backbone, cfg.num_classes)
    state = torch.load(artifact_dir / "weights.pt", map_location=device, weights_only=True)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CapabilityError(f"checkpoint/architecture mismatch: {exc}") from exc
    model.eval()
    return LoadedModel(
        module=model, cfg=cfg, catalog=catalog, backbone_name=meta["backbone"],
        fingerprint=meta["fingerprint"], artifact_dir=artifact_dir,
    )
