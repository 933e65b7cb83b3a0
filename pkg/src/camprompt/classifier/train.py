"""Fine-tuning loop: fixed epoch budget, warmup + cosine schedule, JSONL log."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from ..dataset import AugmentationConfig, LabeledImage, SplitView, augment, sample_seed
from ..errors import CapabilityError, ContractViolation
from .backbones import CamReadyBackbone, build_backbone
from .config import ClassifierConfig
from .model import LoadedModel, MultiLabelClassifier, normalize_tensor, save_artifact
from .objective import lr_at

logger = logging.getLogger(__name__)


class _AugmentedSplit(Dataset):
    """Applies the augmentation recipe with per-(seed, epoch, image) randomness."""

    def __init__(self, split: Sequence[LabeledImage], aug_cfg: AugmentationConfig, global_seed: int):
        self.split = split
        self.aug_cfg = aug_cfg
        self.global_seed = global_seed
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.split)

    def __getitem__(self, index: int):
        item = self.split[index]
        seed = sample_seed(self.global_seed, self.epoch, item.image_id)
        img = augment(item, self.aug_cfg, seed)
        x = normalize_tensor(img)
        y = torch.from_numpy(item.label_vector.astype("float32"))
        return x, y


@dataclass
class TrainResult:
    artifact_dir: Path
    log_path: Path
    epoch_losses: list[float]
    model: LoadedModel


def train(
    dataset: Union[SplitView, Sequence[LabeledImage]],
    cfg: ClassifierConfig,
    out_dir: Path | str,
    backbone: Union[str, CamReadyBackbone] = "swin-b",
    backbone_kwargs: Optional[dict] = None,
    init_weights: Optional[Path] = None,
    augmentation: Optional[AugmentationConfig] = None,
    seed: int = 0,
    device: str = "cpu",
    keep_checkpoints: int = 3,
) -> TrainResult:
    """Train the multi-label head (and backbone) for cfg.epochs; no validation split.

    The final-epoch model is the retained artifact; the last ``keep_checkpoints``
    epoch states are kept alongside for safety.
    """
    if len(dataset) == 0:
        raise ContractViolation("training dataset is empty")
    catalog = getattr(dataset, "catalog", None)
    if catalog is None:
        raise ContractViolation("dataset must expose a .catalog to train against")
    if catalog.num_classes != cfg.num_classes:
        raise ContractViolation(
            f"cfg.num_classes={cfg.num_classes} != catalog size {catalog.num_classes}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(seed)
    backbone_kwargs = backbone_kwargs or {}
    if isinstance(backbone, str):
        backbone_name = backbone
        backbone_module = build_backbone(backbone, **backbone_kwargs)
    else:
        backbone_name = type(backbone).__name__
        backbone_module = backbone
    model = MultiLabelClassifier(backbone_module, cfg.num_classes).to(device)
    if init_weights is not None:
        state = torch.load(init_weights, map_location=device, weights_only=True)
        try:
            model.load_state_dict(state, strict=True)
        except RuntimeError as exc:
            raise CapabilityError(f"checkpoint/architecture mismatch: {exc}") from exc

    aug_cfg = augmentation or AugmentationConfig(crop_size=cfg.input_resolution)
    if aug_cfg.crop_size != cfg.input_resolution:
        raise ContractViolation(
            f"augmentation crop_size {aug_cfg.crop_size} != input_resolution {cfg.input_resolution}"
        )
    data = _AugmentedSplit(dataset, aug_cfg, seed)
    loader = DataLoader(
        data,
        batch_size=cfg.batch_size,
        shuffle=True,
        num_workers=0,
        generator=torch.Generator().manual_seed(seed),
    )
    total_steps = cfg.epochs * len(loader)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.base_lr, weight_decay=cfg.weight_decay)

    log_path = out_dir / "training_log.jsonl"
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    epoch_losses: list[float] = []
    global_step = 0
    with log_path.open("w") as log:
        for epoch in range(cfg.epochs):
            data.epoch = epoch
            model.train()
            running = 0.0
            for x, y in loader:
                lr = lr_at(global_step, total_steps, cfg)
                for group in optimizer.param_groups:
                    group["lr"] = lr
                optimizer.zero_grad(set_to_none=True)
                logits = model(x)
                loss = F.binary_cross_entropy_with_logits(logits, y)
                loss.backward()
                optimizer.step()
                running += loss.item() * len(y)
                log.write(json.dumps({
                    "epoch": epoch, "step": global_step,
                    "loss": round(loss.item(), 6), "lr": lr,
                }) + "\n")
                global_step += 1
            epoch_loss = running / len(data)
            epoch_losses.append(epoch_loss)
            log.write(json.dumps({"epoch": epoch, "epoch_loss": round(epoch_loss, 6)}) + "\n")
            log.flush()
            logger.info("epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, epoch_loss)
            torch.save(model.state_dict(), ckpt_dir / f"epoch_{epoch:04d}.pt")
            stale = sorted(ckpt_dir.glob("epoch_*.pt"))[:-keep_checkpoints]
            for path in stale:
                path.unlink()

    model.eval()
    loaded = save_artifact(
        model, cfg, catalog, out_dir,
        backbone_name=backbone_name, seed=seed, backbone_kwargs=backbone_kwargs,
    )
    return TrainResult(
        artifact_dir=out_dir, log_path=log_path,
        epoch_losses=epoch_losses, model=loaded,
    )
