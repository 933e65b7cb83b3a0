"""Evaluation reports: JSON + CSV tables, a Markdown summary table, and figures.

The Markdown table mirrors the results-table layout of the evaluation
protocol: one row per run configuration, mIoU first, then per-class IoU for
the ten most frequent classes. Figures are rendered with matplotlib to files
alongside the delimited output.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Optional

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from PIL import Image

from .metrics import MiouResult
from .rle import decode as rle_decode

BOTH_EMPTY_NOTE = (
    "IoU of an empty prediction against an empty ground-truth mask counts as "
    "1.0; classes with zero evaluation records are excluded from the mean."
)

INPUT_LABELS = {"original": "Original (no preprocessing)",
                "smoothed": "Smoothed (Gaussian blur)"}
STRATEGY_LABELS = {"single": "Single", "multi": "Multi"}


def build_report(result: MiouResult, manifest: dict) -> dict:
    counts = manifest.get("counts", {})
    n_images = max(counts.get("n_images", 0), 1)
    cfg = manifest.get("segmenter_config", {})
    return {
        "run_id": manifest.get("run_id", ""),
        "split": manifest.get("split", ""),
        "input_mode": cfg.get("input_mode", ""),
        "mask_strategy": cfg.get("mask_strategy", ""),
        "summary": {
            "miou": result.miou,
            "n_classes": result.n_classes,
            "n_records": result.n_records,
            "n_proposal_sets": counts.get("n_proposal_sets", result.n_records),
            "n_proposal_masks": counts.get("n_proposal_masks", 0),
            "records_per_image": result.n_records / n_images,
            "proposal_masks_per_image": counts.get("n_proposal_masks", 0) / n_images,
        },
        "per_class": [
            {"class_id": c.class_id, "name": c.name,
             "n_records": c.n_records, "iou": c.iou}
            for c in result.per_class
        ],
        "notes": BOTH_EMPTY_NOTE,
    }


def render_csv(report: dict) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["class_id", "name", "n_records", "iou"])
    for row in report["per_class"]:
        writer.writerow([row["class_id"], row["name"], row["n_records"],
                         f"{row['iou']:.6f}"])
    return buffer.getvalue()


def render_markdown(report: dict) -> str:
    """One-row results table: mIoU plus IoU for the ten most frequent classes."""
    top = sorted(report["per_class"], key=lambda r: (-r["n_records"], r["class_id"]))[:10]
    header = ["Input image", "Mask strategy", "mIoU"] + [r["name"] for r in top]
    row = [
        INPUT_LABELS.get(report["input_mode"], report["input_mode"]),
        STRATEGY_LABELS.get(report["mask_strategy"], report["mask_strategy"]),
        f"{report['summary']['miou']:.2f}",
    ] + [f"{r['iou']:.2f}" for r in top]
    lines = [
        "| " + " | ".join(header) + " |",
        "| " + " | ".join("---" for _ in header) + " |",
        "| " + " | ".join(row) + " |",
        "",
        f"Records: {report['summary']['n_records']} over "
        f"{report['summary']['n_classes']} classes; "
        f"proposal masks: {report['summary']['n_proposal_masks']} "
        f"({report['summary']['proposal_masks_per_image']:.2f} per image, "
        f"{report['summary']['records_per_image']:.2f} prompted classes per image).",
        "",
        f"Note: {report['notes']}",
    ]
    return "\n".join(lines) + "\n"


def write_report_files(report: dict, run_dir: Path | str) -> dict[str, Path]:
    run_dir = Path(run_dir)
    paths = {
        "json": run_dir / "report.json",
        "csv": run_dir / "report.csv",
        "md": run_dir / "report.md",
    }
    paths["json"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    paths["csv"].write_text(render_csv(report))
    paths["md"].write_text(render_markdown(report))
    return paths


def render_iou_figure(report: dict, out_path: Path) -> Path:
    """Horizontal bar chart of per-class IoU, most frequent classes first."""
    rows = sorted(report["per_class"], key=lambda r: (-r["n_records"], r["class_id"]))
    rows = rows[:20]
    names = [f"{r['name']} (n={r['n_records']})" for r in rows]
    values = [r["iou"] for r in rows]
    fig, ax = plt.subplots(figsize=(8, max(2.5, 0.45 * len(rows))))
    ax.barh(range(len(rows)), values, color="#4477aa")
    ax.set_yticks(range(len(rows)), names)
    ax.invert_yaxis()
    ax.set_xlim(0, 1)
    ax.set_xlabel("IoU")
    miou_value = report["summary"]["miou"]
    ax.axvline(miou_value, color="#cc3311", linestyle="--",
               label=f"mIoU = {miou_value:.2f}")
    ax.legend(loc="lower right")
    ax.set_title(
        f"{INPUT_LABELS.get(report['input_mode'], report['input_mode'])} / "
        f"{STRATEGY_LABELS.get(report['mask_strategy'], report['mask_strategy'])}"
    )
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def _overlay(pixels: np.ndarray, mask: np.ndarray, color, alpha=0.5) -> np.ndarray:
    out = pixels.astype(np.float64).copy()
    out[mask] = (1 - alpha) * out[mask] + alpha * np.asarray(color, dtype=np.float64)
    return out.astype(np.uint8)


def render_qualitative_figure(
    pixels: np.ndarray,
    gt_mask: Optional[np.ndarray],
    cam_png: Optional[Path],
    prompt_xy: tuple[int, int],
    masks: list[np.ndarray],
    scores: list[float],
    out_path: Path,
    title: str,
    chosen_index: Optional[int] = None,
) -> Path:
    """Panel row: image | gt | CAM with prompt cross | candidate masks."""
    panels: list[tuple[str, np.ndarray]] = [("image", pixels)]
    if gt_mask is not None:
        panels.append(("ground truth", _overlay(pixels, gt_mask, (255, 215, 0))))
    if cam_png is not None and Path(cam_png).exists():
        cam = np.asarray(Image.open(cam_png))
        panels.append(("CAM", cam))
    for index, (mask, score) in enumerate(zip(masks, scores)):
        label = f"mask {index} ({score:.2f})"
        if chosen_index is not None and index == chosen_index:
            label += " *"
        panels.append((label, _overlay(pixels, mask, (68, 119, 170))))

    fig, axes = plt.subplots(1, len(panels), figsize=(2.6 * len(panels), 2.9))
    if len(panels) == 1:
        axes = [axes]
    for ax, (label, content) in zip(axes, panels):
        if content.ndim == 2:
            ax.imshow(content, cmap="inferno")
        else:
            ax.imshow(content)
        if label == "CAM" or label.startswith("mask"):
            ax.plot(prompt_xy[0], prompt_xy[1], "+", color="white",
                    markersize=12, markeredgewidth=2)
        ax.set_title(label, fontsize=9)
        ax.axis("off")
    fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_run_figures(run_dir: Path | str, n_qualitative: int = 4) -> list[Path]:
    """Render the bar chart plus qualitative panels for the first few records."""
    run_dir = Path(run_dir)
    figures_dir = run_dir / "figures"
    figures_dir.mkdir(exist_ok=True)
    produced: list[Path] = []

    report_path = run_dir / "report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text())
        produced.append(render_iou_figure(report, figures_dir / "iou_per_class.png"))

    manifest = json.loads((run_dir / "manifest.json").read_text())
    image_paths = json.loads((run_dir / "image_paths.json").read_text())
    names = {cid: name for cid, name in manifest["catalog"]["classes"]}
    chosen: dict[tuple[str, int], int] = {}
    records_path = run_dir / "records.json"
    if records_path.exists():
        for row in json.loads(records_path.read_text())["records"]:
            chosen[(row["image_id"], row["class_id"])] = row["chosen_mask_index"]

    proposal_files = sorted((run_dir / "proposals").glob("*.json"))[:n_qualitative]
    for proposal_file in proposal_files:
        data = json.loads(proposal_file.read_text())
        image_id, class_id = data["image_id"], data["class_id"]
        source = image_paths.get(image_id)
        if source is None or not Path(source).exists():
            continue
        pixels = np.asarray(Image.open(source).convert("RGB"))
        gt_mask = None
        root = manifest.get("dataset_root", "")
        split = manifest.get("split", "")
        gt_path = Path(root) / "masks" / split / f"{image_id}.png" if root else None
        if gt_path is not None and gt_path.exists():
            gt_mask = np.asarray(Image.open(gt_path)) == class_id
        shape = (data["size"]["height"], data["size"]["width"])
        masks = [rle_decode(m["rle"], shape) for m in data["masks"]]
        scores = [m["score"] for m in data["masks"]]
        out_path = figures_dir / f"qualitative_{image_id}.{class_id}.png"
        render_qualitative_figure(
            pixels=pixels,
            gt_mask=gt_mask,
            cam_png=run_dir / "cams" / f"{image_id}.{class_id}.cam.png",
            prompt_xy=(data["prompt"]["x"], data["prompt"]["y"]),
            masks=masks,
            scores=scores,
            out_path=out_path,
            title=f"{image_id} / {names.get(class_id, class_id)}",
            chosen_index=chosen.get((image_id, class_id)),
        )
        produced.append(out_path)
    return produced
