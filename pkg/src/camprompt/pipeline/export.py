"""Review decisions and export of accepted masks as an ingestible dataset."""
from __future__ import annotations

import json
import shutil
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ..errors import ContractViolation
from ..segmenter import load_proposal_manifest

DECISIONS_FILE = "decisions.jsonl"


@dataclass
class ReviewDecision:
    """One reviewer verdict for an (image, class) proposal set."""

    image_id: str
    class_id: int
    decision: str  # "accept" | "reject_all"
    mask_index: Optional[int] = None
    reviewer: str = "anonymous"
    decided_at: str = ""

    def __post_init__(self):
        if self.decision not in ("accept", "reject_all"):
            raise ContractViolation(f"unknown decision {self.decision!r}")
        if self.decision == "accept" and self.mask_index is None:
            raise ContractViolation("accept decisions must carry a mask_index")
        if not self.decided_at:
            self.decided_at = time.strftime("%Y-%m-%dT%H:%M:%S%z")


def proposal_path(run_dir: Path, image_id: str, class_id: int) -> Path:
    return Path(run_dir) / "proposals" / f"{image_id}.{class_id}.json"


def append_decision(run_dir: Path | str, decision: ReviewDecision) -> int:
    """Validate against the proposal set and append; returns the item's history length.

    Decisions are append-only; the latest entry per (image, class) wins.
    """
    run_dir = Path(run_dir)
    path = proposal_path(run_dir, decision.image_id, decision.class_id)
    if not path.exists():
        raise ContractViolation(
            f"no proposals for ({decision.image_id}, {decision.class_id})"
        )
    if decision.decision == "accept":
        n_masks = len(json.loads(path.read_text())["masks"])
        if not 0 <= decision.mask_index < n_masks:
            raise ContractViolation(
                f"mask_index {decision.mask_index} out of range for {n_masks} masks"
            )
    log = run_dir / DECISIONS_FILE
    with log.open("a") as handle:
        handle.write(json.dumps(asdict(decision), sort_keys=True) + "\n")
    history = load_decision_history(run_dir)
    return sum(
        1 for d in history
        if d.image_id == decision.image_id and d.class_id == decision.class_id
    )


def load_decision_history(run_dir: Path | str) -> list[ReviewDecision]:
    log = Path(run_dir) / DECISIONS_FILE
    if not log.exists():
        return []
    history = []
    for line in log.read_text().splitlines():
        if line.strip():
            history.append(ReviewDecision(**json.loads(line)))
    return history


def latest_decisions(run_dir: Path | str) -> dict[tuple[str, int], ReviewDecision]:
    """Last-write-wins view over the append-only decision log."""
    latest: dict[tuple[str, int], ReviewDecision] = {}
    for decision in load_decision_history(run_dir):
        latest[(decision.image_id, decision.class_id)] = decision
    return latest


def export_dataset(
    run_dir: Path | str,
    out_dir: Optional[Path | str] = None,
    split_name: str = "review",
) -> dict:
    """Write accepted masks as a palette-mask dataset in the ingestion layout.

    Overlapping accepted masks are resolved deterministically: the pixel goes
    to the mask with the higher backend score; exact ties go to the lower
    class id.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "export"
    manifest = json.loads((run_dir / "manifest.json").read_text())
    image_paths = json.loads((run_dir / "image_paths.json").read_text())
    decisions = latest_decisions(run_dir)

    accepted: dict[str, list[tuple[float, int, np.ndarray]]] = {}
    n_accepted = n_rejected = 0
    for (image_id, class_id), decision in sorted(decisions.items()):
        if decision.decision == "reject_all":
            n_rejected += 1
            continue
        proposals = load_proposal_manifest(proposal_path(run_dir, image_id, class_id))
        mask = proposals.masks[decision.mask_index]
        score = proposals.scores[decision.mask_index]
        accepted.setdefault(image_id, []).append((score, class_id, mask))
        n_accepted += 1

    img_out = out_dir / "images" / split_name
    mask_out = out_dir / "masks" / split_name
    img_out.mkdir(parents=True, exist_ok=True)
    mask_out.mkdir(parents=True, exist_ok=True)
    lines = [f"{cid}\t{name}" for cid, name in manifest["catalog"]["classes"]]
    (out_dir / "category.txt").write_text("\n".join(lines) + "\n")

    for image_id, layers in sorted(accepted.items()):
        shape = layers[0][2].shape
        palette = np.zeros(shape, dtype=np.uint8)
        # ascending (score, -class_id): later paints win, so the highest score
        # lands on top and score ties resolve to the lower class id
        for score, class_id, mask in sorted(layers, key=lambda t: (t[0], -t[1])):
            palette[mask] = class_id
        Image.fromarray(palette, mode="L").save(mask_out / f"{image_id}.png")
        source = image_paths.get(image_id)
        if source is None or not Path(source).exists():
            raise ContractViolation(f"source image for {image_id} is unavailable")
        shutil.copy(source, img_out / f"{image_id}{Path(source).suffix}")

    report = {
        "out_dir": str(out_dir),
        "split": split_name,
        "n_images": len(accepted),
        "n_accepted": n_accepted,
        "n_rejected": n_rejected,
        "n_undecided": _count_undecided(run_dir, decisions),
    }
    (out_dir / "export_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )
    return report


def _count_undecided(run_dir: Path, decisions: dict) -> int:
    items = {
        (p.stem.rsplit(".", 1)[0], int(p.stem.rsplit(".", 1)[1]))
        for p in (run_dir / "proposals").glob("*.json")
    }
    return len(items - set(decisions))
