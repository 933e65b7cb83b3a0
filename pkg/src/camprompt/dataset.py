"""Dataset ingestion, image-level label derivation, and training augmentations.

Expected dataset root layout (palette-mask convention: pixel value = class id):

    images/{split}/*.jpg|*.jpeg|*.png
    masks/{split}/*.png
    category.txt            # one "id<TAB>name" per line, id 0 = background
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from PIL import Image
from torchvision.transforms import InterpolationMode
from torchvision.transforms import functional as TF

from .errors import ContractViolation, IngestionError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


@dataclass(frozen=True)
class ClassCatalog:
    """Ordered class table for the N+1-way multi-label setting (N food classes + background)."""

    classes: tuple[tuple[int, str], ...]
    background_id: int = 0

    def __post_init__(self):
        ids = [cid for cid, _ in self.classes]
        if sorted(ids) != list(range(len(ids))):
            raise ContractViolation(f"class ids must be unique and contiguous from 0, got {ids}")
        if self.background_id not in ids:
            raise ContractViolation(f"background_id {self.background_id} not in catalog")

    @property
    def num_classes(self) -> int:
        """Total class count, i.e. N+1."""
        return len(self.classes)

    @property
    def food_class_ids(self) -> tuple[int, ...]:
        return tuple(cid for cid, _ in self.classes if cid != self.background_id)

    def name_of(self, class_id: int) -> str:
        for cid, name in self.classes:
            if cid == class_id:
                return name
        raise KeyError(class_id)

    def fingerprint(self) -> str:
        payload = json.dumps([list(c) for c in self.classes] + [self.background_id])
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @classmethod
    def from_category_file(cls, path: Path | str) -> "ClassCatalog":
        path = Path(path)
        if not path.exists():
            raise IngestionError(f"category file not found: {path}")
        classes = []
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line:
                continue
            cid, _, name = line.partition("\t")
            if not name:
                raise IngestionError(f"malformed category line (expected 'id<TAB>name'): {line!r}")
            classes.append((int(cid), name))
        return cls(classes=tuple(classes))


@dataclass
class LabeledImage:
    """An image with its derived image-level label vector; gt mask kept for evaluation only."""

    image_id: str
    pixels: np.ndarray  # H x W x 3, uint8
    label_vector: np.ndarray  # (N+1,), values in {0, 1}
    gt_mask: Optional[np.ndarray] = None  # H x W class ids
    source_path: Optional[Path] = None


@dataclass(frozen=True)
class AugmentationConfig:
    """Training-time augmentation recipe; stages are applied in field order."""

    crop_scale_range: tuple[float, float] = (0.8, 1.0)
    crop_size: int = 384
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    # (brightness, contrast, saturation, hue) as symmetric +- fractions
    jitter: tuple[float, float, float, float] = (0.20, 0.20, 0.15, 0.10)
    # (max rotation deg, max translate fraction, scale low, scale high)
    affine: tuple[float, float, float, float] = (30.0, 0.10, 0.90, 1.10)
    # (kernel size, sigma low, sigma high); None disables the blur stage
    blur: Optional[tuple[int, float, float]] = (3, 0.001, 2.0)
    erase_p: float = 0.3
    erase_area: tuple[float, float] = (0.02, 0.10)
    erase_aspect: tuple[float, float] = (0.3, 3.3)

    def __post_init__(self):
        for name in ("hflip_p", "vflip_p", "erase_p"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ContractViolation(f"{name}={p} outside [0, 1]")
        if self.crop_size <= 0:
            raise ContractViolation("crop_size must be positive")
        for name in ("crop_scale_range", "erase_area", "erase_aspect"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ContractViolation(f"{name} range ({lo}, {hi}) is empty")
        if self.blur is not None and self.blur[1] > self.blur[2]:
            raise ContractViolation("blur sigma range is empty")


def derive_image_labels(
    gt_mask: np.ndarray, catalog: ClassCatalog, min_pixel_count: int = 1
) -> np.ndarray:
    """Aggregate a pixel-level class mask into a binary image-level label vector.

    Entry i is 1 iff class i occupies at least ``min_pixel_count`` pixels;
    the background entry follows the same rule.
    """
    if min_pixel_count < 1:
        raise ContractViolation("min_pixel_count must be >= 1")
    mask = np.asarray(gt_mask)
    if mask.ndim != 2:
        raise ContractViolation(f"gt_mask must be 2D, got shape {mask.shape}")
    n = catalog.num_classes
    present = np.unique(mask)
    unknown = [int(i) for i in present if i < 0 or i >= n]
    if unknown:
        raise IngestionError(f"mask contains class ids not in catalog: {unknown}")
    counts = np.bincount(mask.ravel().astype(np.int64), minlength=n)
    return (counts >= min_pixel_count).astype(np.uint8)


def _load_palette_mask(path: Path, catalog: ClassCatalog) -> np.ndarray:
    img = Image.open(path)
    if img.mode not in ("P", "L", "I"):
        img = img.convert("L")
    mask = np.asarray(img).astype(np.int64)
    if mask.ndim != 2:
        raise IngestionError(f"mask {path.name} is not single-channel")
    if mask.max(initial=0) >= catalog.num_classes or mask.min(initial=0) < 0:
        bad = [int(v) for v in np.unique(mask) if v >= catalog.num_classes or v < 0]
        raise IngestionError(f"mask {path.name} contains class ids not in catalog: {bad}")
    return mask


class SplitView(Sequence[LabeledImage]):
    """Lazy, deterministically ordered view over one dataset split."""

    def __init__(
        self,
        entries: list[tuple[str, Path, Optional[Path]]],
        catalog: ClassCatalog,
        min_pixel_count: int = 1,
        split_name: str = "",
        root: Optional[Path] = None,
    ):
        self._entries = entries
        self.catalog = catalog
        self.min_pixel_count = min_pixel_count
        self.split_name = split_name
        self.root = root

    def __len__(self) -> int:
        return len(self._entries)

    def __getitem__(self, index):
        if isinstance(index, slice):
            view = SplitView(self._entries[index], self.catalog, self.min_pixel_count,
                             self.split_name, self.root)
            return view
        image_id, img_path, mask_path = self._entries[index]
        return self.load_entry(image_id, img_path, mask_path)

    def __iter__(self) -> Iterator[LabeledImage]:
        for i in range(len(self)):
            yield self[i]

    @property
    def image_ids(self) -> list[str]:
        return [e[0] for e in self._entries]

    def entry_path(self, image_id: str) -> Path:
        for eid, img_path, _ in self._entries:
            if eid == image_id:
                return img_path
        raise KeyError(image_id)

    def load_entry(
        self, image_id: str, img_path: Path, mask_path: Optional[Path]
    ) -> LabeledImage:
        pixels = np.asarray(Image.open(img_path).convert("RGB"))
        if mask_path is None:  # unlabeled split (review-only workflows)
            return LabeledImage(
                image_id=image_id,
                pixels=pixels,
                label_vector=np.zeros(self.catalog.num_classes, dtype=np.uint8),
                gt_mask=None,
                source_path=img_path,
            )
        gt_mask = _load_palette_mask(mask_path, self.catalog)
        if pixels.shape[:2] != gt_mask.shape:
            raise IngestionError(
                f"dimension mismatch for {image_id}: image {pixels.shape[:2]} vs mask {gt_mask.shape}"
            )
        labels = derive_image_labels(gt_mask, self.catalog, self.min_pixel_count)
        return LabeledImage(
            image_id=image_id,
            pixels=pixels,
            label_vector=labels,
            gt_mask=gt_mask,
            source_path=img_path,
        )

    def fingerprint(self) -> str:
        payload = json.dumps(self.image_ids) + self.catalog.fingerprint()
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_split(
    root: Path | str,
    split: str,
    catalog: Optional[ClassCatalog] = None,
    min_pixel_count: int = 1,
    require_masks: bool = True,
) -> SplitView:
    """Index one split, pairing every image with its palette mask by stem.

    With ``require_masks=False`` a split without a mask directory loads as
    unlabeled (review-only); a present mask directory is still validated.
    """
    root = Path(root)
    catalog = catalog or ClassCatalog.from_category_file(root / "category.txt")
    img_dir = root / "images" / split
    mask_dir = root / "masks" / split
    if not img_dir.is_dir():
        raise IngestionError(f"image directory not found: {img_dir}")
    images = sorted(
        (p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.stem,
    )
    if not images:
        raise IngestionError(f"empty split: no images under {img_dir}")
    if not mask_dir.is_dir() and not require_masks:
        entries = [(p.stem, p, None) for p in images]
        logger.info("split %s: %d items (unlabeled)", split, len(entries))
        return SplitView(entries, catalog, min_pixel_count, split_name=split, root=root)
    masks = {p.stem: p for p in mask_dir.glob("*.png")} if mask_dir.is_dir() else {}
    missing = [p.stem for p in images if p.stem not in masks]
    if missing:
        raise IngestionError(f"missing masks for stems: {missing[:20]}")
    orphans = sorted(set(masks) - {p.stem for p in images})
    if orphans:
        raise IngestionError(f"masks without matching images: {orphans[:20]}")
    entries = [(p.stem, p, masks[p.stem]) for p in images]
    logger.info("split %s: %d items", split, len(entries))
    return SplitView(entries, catalog, min_pixel_count, split_name=split, root=root)


def ingest_report(root: Path | str, min_pixel_count: int = 1) -> dict:
    """Scan every split and report per-split counts and per-class image frequency."""
    root = Path(root)
    catalog = ClassCatalog.from_category_file(root / "category.txt")
    splits = sorted(p.name for p in (root / "images").iterdir() if p.is_dir())
    report: dict = {
        "root": str(root),
        "catalog_fingerprint": catalog.fingerprint(),
        "num_classes": catalog.num_classes,
        "splits": {},
    }
    for split in splits:
        view = load_split(root, split, catalog, min_pixel_count)
        freq = np.zeros(catalog.num_classes, dtype=np.int64)
        for item in view:
            freq += item.label_vector
        report["splits"][split] = {
            "n_images": len(view),
            "class_frequency": {str(cid): int(freq[cid]) for cid, _ in catalog.classes},
        }
    return report


def sample_seed(global_seed: int, epoch: int, image_id: str) -> int:
    """Stable per-sample augmentation seed so runs are replayable."""
    digest = hashlib.sha256(f"{global_seed}:{epoch}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _resized_crop_params(
    rng: np.random.Generator, height: int, width: int, cfg: AugmentationConfig
) -> tuple[int, int, int]:
    """Sample a square crop covering an area fraction from crop_scale_range."""
    scale = float(rng.uniform(*cfg.crop_scale_range))
    side = int(math.floor(math.sqrt(scale * height * width)))
    if side > min(height, width):
        side = min(height, width)
        logger.debug("crop side clamped to %d (image %dx%d); resize-first fallback", side, height, width)
    side = max(side, 1)
    top = int(rng.integers(0, height - side + 1))
    left = int(rng.integers(0, width - side + 1))
    return top, left, side


def augment(
    image: LabeledImage | np.ndarray, cfg: AugmentationConfig, seed: int
) -> torch.Tensor:
    """Apply the augmentation recipe, returning a float tensor (3, S, S) in [0, 1].

    All randomness flows from ``seed``; identical seeds give bit-identical outputs.
    """
    pixels = image.pixels if isinstance(image, LabeledImage) else image
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ContractViolation(f"expected H x W x 3 pixels, got {pixels.shape}")
    rng = np.random.default_rng(seed)
    buf = pixels if pixels.flags.writeable else pixels.copy()
    img = torch.from_numpy(np.ascontiguousarray(buf)).permute(2, 0, 1)
    height, width = pixels.shape[:2]
    size = cfg.crop_size

    # (a) random resized square crop
    top, left, side = _resized_crop_params(rng, height, width, cfg)
    if not (side == height and side == width):
        img = TF.crop(img, top, left, side, side)
    if side != size:
        img = TF.resize(img, [size, size], InterpolationMode.BILINEAR, antialias=True)

    # (b) flips
    if rng.random() < cfg.hflip_p:
        img = TF.hflip(img)
    if rng.random() < cfg.vflip_p:
        img = TF.vflip(img)

    img = img.to(torch.float32) / 255.0

    # (c) color jitter, fixed order: brightness, contrast, saturation, hue
    b, c, s, h = cfg.jitter
    if b > 0:
        img = TF.adjust_brightness(img, float(rng.uniform(1 - b, 1 + b)))
    if c > 0:
        img = TF.adjust_contrast(img, float(rng.uniform(1 - c, 1 + c)))
    if s > 0:
        img = TF.adjust_saturation(img, float(rng.uniform(1 - s, 1 + s)))
    if h > 0:
        img = TF.adjust_hue(img, float(rng.uniform(-h, h)))

    # (d) affine
    max_deg, max_trans, scale_lo, scale_hi = cfg.affine
    if max_deg > 0 or max_trans > 0 or (scale_lo, scale_hi) != (1.0, 1.0):
        angle = float(rng.uniform(-max_deg, max_deg))
        tx = int(round(float(rng.uniform(-max_trans, max_trans)) * size))
        ty = int(round(float(rng.uniform(-max_trans, max_trans)) * size))
        scale = float(rng.uniform(scale_lo, scale_hi))
        img = TF.affine(
            img, angle=angle, translate=[tx, ty], scale=scale, shear=[0.0, 0.0],
            interpolation=InterpolationMode.BILINEAR,
        )

    # (e) gaussian blur
    if cfg.blur is not None:
        kernel, sig_lo, sig_hi = cfg.blur
        sigma = float(rng.uniform(sig_lo, sig_hi))
        img = TF.gaussian_blur(img, [kernel, kernel], [sigma, sigma])

    # (f) random erasing
    if rng.random() < cfg.erase_p:
        area = float(rng.uniform(*cfg.erase_area)) * size * size
        log_lo, log_hi = math.log(cfg.erase_aspect[0]), math.log(cfg.erase_aspect[1])
        for _ in range(10):
            aspect = math.exp(float(rng.uniform(log_lo, log_hi)))
            eh = int(round(math.sqrt(area * aspect)))
            ew = int(round(math.sqrt(area / aspect)))
            if 0 < eh <= size and 0 < ew <= size:
                ey = int(rng.integers(0, size - eh + 1))
                ex = int(rng.integers(0, size - ew + 1))
                img[:, ey : ey + eh, ex : ex + ew] = 0.0
                break

    return img.clamp(0.0, 1.0)
