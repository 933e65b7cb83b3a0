"""Synthetic colored-shapes dataset used by the test suite and CLI demos.

Writes the standard ingestion layout (images/, masks/, category.txt). Shapes
are solid-colored on a noisy gray background so a color flood-fill backend
recovers them exactly, which makes end-to-end oracle runs possible on CPU.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .dataset import ClassCatalog

SHAPE_CLASSES = ((1, "red_disk"), (2, "green_square"), (3, "blue_triangle"))
BASE_COLORS = {1: (205, 40, 40), 2: (40, 170, 60), 3: (45, 80, 205)}


def shapes_catalog() -> ClassCatalog:
    return ClassCatalog(classes=((0, "background"),) + SHAPE_CLASSES, background_id=0)


def _draw_shape(draw_img, draw_mask, class_id: int, center: tuple[int, int],
                half: int, color: tuple[int, int, int]) -> None:
    cx, cy = center
    box = (cx - half, cy - half, cx + half, cy + half)
    if class_id == 1:
        draw_img.ellipse(box, fill=color)
        draw_mask.ellipse(box, fill=class_id)
    elif class_id == 2:
        draw_img.rectangle(box, fill=color)
        draw_mask.rectangle(box, fill=class_id)
    else:
        points = [(cx, cy - half), (cx - half, cy + half), (cx + half, cy + half)]
        draw_img.polygon(points, fill=color)
        draw_mask.polygon(points, fill=class_id)


def _random_background(rng: np.random.Generator) -> np.ndarray:
    # any color far enough from every class color, so background pixels carry
    # no class information and flood fill cannot leak across shape boundaries
    while True:
        base = rng.integers(40, 216, size=3)
        gaps = [
            np.linalg.norm(base - np.asarray(color, dtype=np.int64))
            for color in BASE_COLORS.values()
        ]
        if min(gaps) >= 90:
            return base


def _render_image(
    rng: np.random.Generator, size: int
) -> tuple[np.ndarray, np.ndarray]:
    base = _random_background(rng)
    pixels = np.clip(
        rng.normal(base, 8.0, size=(size, size, 3)), 0, 255
    ).astype(np.uint8)
    img = Image.fromarray(pixels)
    mask = Image.new("L", (size, size), 0)
    draw_img = ImageDraw.Draw(img)
    draw_mask = ImageDraw.Draw(mask)

    class_ids = [cid for cid, _ in SHAPE_CLASSES]
    rng.shuffle(class_ids)
    n_shapes = int(rng.integers(1, len(class_ids) + 1))
    placed: list[tuple[int, int, int]] = []
    for class_id in class_ids[:n_shapes]:
        # large enough that activation grids have interior cells at patch 8..16
        half = int(rng.integers(size * 9 // 64, size * 15 // 64))
        for _ in range(30):
            cx = int(rng.integers(half + 1, size - half - 1))
            cy = int(rng.integers(half + 1, size - half - 1))
            if all(
                abs(cx - px) > half + ph + 2 or abs(cy - py) > half + ph + 2
                for px, py, ph in placed
            ):
                jitter = rng.integers(-12, 13, size=3)
                color = tuple(
                    int(np.clip(c + j, 0, 255))
                    for c, j in zip(BASE_COLORS[class_id], jitter)
                )
                _draw_shape(draw_img, draw_mask, class_id, (cx, cy), half, color)
                placed.append((cx, cy, half))
                break
    return np.asarray(img), np.asarray(mask)


def generate_shapes_dataset(
    root: Path | str,
    n_train: int = 200,
    n_test: int = 50,
    size: int = 128,
    seed: int = 0,
) -> Path:
    """Write a train/test colored-shapes dataset under ``root``; returns ``root``."""
    root = Path(root)
    catalog = shapes_catalog()
    lines = [f"{cid}\t{name}" for cid, name in catalog.classes]
    root.mkdir(parents=True, exist_ok=True)
    (root / "category.txt").write_text("\n".join(lines) + "\n")
    rng = np.random.default_rng(seed)
    for split, count in (("train", n_train), ("test", n_test)):
        img_dir = root / "images" / split
        mask_dir = root / "masks" / split
        img_dir.mkdir(parents=True, exist_ok=True)
        mask_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            pixels, mask = _render_image(rng, size)
            stem = f"{split}_{i:05d}"
            Image.fromarray(pixels).save(img_dir / f"{stem}.png")
            Image.fromarray(mask, mode="L").save(mask_dir / f"{stem}.png")
    return root
