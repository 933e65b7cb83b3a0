"""Batch orchestration: classify -> CAM -> prompt -> segment -> evaluate/persist.

Run artifacts are written as flat JSON manifests so runs stay portable and
diffable. Everything under manifest.json and proposals/ is deterministic for
a fixed (dataset, model, config, seed, backend) tuple; wall-clock metadata
lives separately in run_meta.json.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from ..cam import GradCamEngine, save_cam_artifacts, select_prompt
from ..classifier import LoadedModel, predict
from ..dataset import SplitView
from ..errors import ContractViolation, EmptyEvaluation, NoActivation
from ..metrics import EvalRecord, MiouResult, best_case_select, miou, tp_filter
from ..segmenter import (
    MaskProposalSet,
    PromptableBackend,
    SegmenterConfig,
    run_segmentation,
    save_proposal_manifest,
)
from ..report import build_report, write_report_files

logger = logging.getLogger(__name__)

MODES = ("auto-eval", "review")


@dataclass
class RunManifest:
    """Deterministic run description plus wall-clock timestamps (run_meta.json)."""

    run_id: str
    mode: str
    split: str
    dataset_root: str
    dataset_fingerprint: str
    classifier_fingerprint: str
    segmenter_config: dict
    catalog: dict
    code_version: str = __version__
    statuses: dict = field(default_factory=dict)  # image_id -> terminal status
    skips: list = field(default_factory=list)  # per (image, class) skip events
    counts: dict = field(default_factory=dict)
    flagged: bool = False
    timestamps: dict = field(default_factory=dict)

    def deterministic_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data.pop("timestamps")
        return data


@dataclass
class RunResult:
    run_dir: Path
    manifest: RunManifest
    records: list[EvalRecord]
    miou_result: Optional[MiouResult]


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def derive_run_id(
    dataset_fp: str, classifier_fp: str, cfg: SegmenterConfig, mode: str
) -> str:
    payload = json.dumps(
        [dataset_fp, classifier_fp, dataclasses.asdict(cfg), mode], sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


def _record_row(record: EvalRecord, proposals: MaskProposalSet) -> dict:
    return {
        "image_id": record.image_id,
        "class_id": record.class_id,
        "chosen_mask_index": record.chosen_mask_index,
        "iou": record.iou,
        "tp": record.counts.tp,
        "fp": record.counts.fp,
        "fn": record.counts.fn,
        "prompt": {"x": proposals.prompt.x, "y": proposals.prompt.y},
    }


def run_batch(
    split: SplitView,
    model: LoadedModel,
    cfg: SegmenterConfig,
    backend: PromptableBackend,
    mode: str,
    out_root: Path | str,
    run_id: Optional[str] = None,
    threshold: Optional[float] = None,
    dump_cams: bool = True,
    failure_flag_ratio: float = 0.10,
) -> RunResult:
    """Process a split end to end.

    auto-eval mode restricts prompting to true-positive predicted classes and
    emits metric reports; review mode prompts every predicted class (no ground
    truth needed) and persists proposals for the review UI. Per-image failures
    are recorded and the run continues; runs with more than
    ``failure_flag_ratio`` failures are flagged.
    """
    if mode not in MODES:
        raise ContractViolation(f"mode must be one of {MODES}")
    out_root = Path(out_root)
    rid = run_id or derive_run_id(
        split.fingerprint(), model.fingerprint, cfg, mode
    )
    run_dir = out_root / rid
    if run_dir.exists():
        raise ContractViolation(f"run directory already exists: {run_dir}")
    (run_dir / "proposals").mkdir(parents=True)
    cams_dir = run_dir / "cams"

    catalog = split.catalog
    manifest = RunManifest(
        run_id=rid,
        mode=mode,
        split=split.split_name,
        dataset_root=str(split.root) if split.root is not None else "",
        dataset_fingerprint=split.fingerprint(),
        classifier_fingerprint=model.fingerprint,
        segmenter_config=dataclasses.asdict(cfg),
        catalog={
            "classes": [list(c) for c in catalog.classes],
            "background_id": catalog.background_id,
        },
    )
    manifest.timestamps["started_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    records: list[EvalRecord] = []
    record_rows: list[dict] = []
    image_paths: dict[str, str] = {}
    n_tp_total = 0
    n_failures = 0
    n_proposal_masks = 0

    with GradCamEngine(model) as engine:
        for index in range(len(split)):
            image_id = split.image_ids[index]
            try:
                item = split[index]
                if item.source_path is not None:
                    image_paths[image_id] = str(item.source_path)
                prediction = predict(item.pixels, model, threshold, image_id=image_id)
                if mode == "auto-eval":
                    if item.gt_mask is None:
                        raise ContractViolation(
                            f"auto-eval requires ground-truth masks ({image_id})"
                        )
                    class_ids = sorted(tp_filter(prediction, item.label_vector))
                else:
                    class_ids = sorted(prediction.predicted_classes)
                n_tp_total += len(class_ids)

                prompts = []
                no_activation = 0
                for class_id in class_ids:
                    cam = engine.compute(item.pixels, class_id)
                    try:
                        prompt = select_prompt(cam)
                    except NoActivation:
                        no_activation += 1
                        manifest.skips.append(
                            {"image_id": image_id, "class_id": class_id,
                             "reason": "NoActivation"}
                        )
                        continue
                    prompts.append(prompt)
                    if dump_cams:
                        save_cam_artifacts(cam, prompt, cams_dir, image_id)

                proposal_sets, skipped = run_segmentation(
                    item.pixels, prompts, cfg, backend, image_id=image_id
                )
                for prompt, reason in skipped:
                    manifest.skips.append(
                        {"image_id": image_id, "class_id": prompt.class_id,
                         "reason": "EmptyProposal"}
                    )
                for proposals in proposal_sets:
                    save_proposal_manifest(proposals, run_dir / "proposals")
                    n_proposal_masks += len(proposals.masks)
                    if mode == "auto-eval":
                        gt = item.gt_mask == proposals.class_id
                        record = best_case_select(proposals, gt)
                        records.append(record)
                        record_rows.append(_record_row(record, proposals))

                if class_ids and no_activation == len(class_ids):
                    manifest.statuses[image_id] = "skipped:NoActivation"
                elif prompts and not proposal_sets:
                    manifest.statuses[image_id] = "skipped:EmptyProposal"
                else:
                    manifest.statuses[image_id] = "done"
            except Exception as exc:  # per-image isolation; the run continues
                logger.exception("image %s failed", image_id)
                n_failures += 1
                manifest.statuses[image_id] = f"failed:{type(exc).__name__}"

    n_images = len(manifest.statuses)
    n_skips = len(manifest.skips)
    manifest.counts = {
        "n_images": n_images,
        "n_prompt_classes": n_tp_total,
        "n_records": len(records),
        "n_skips": n_skips,
        "n_proposal_sets": n_tp_total - n_skips,
        "n_proposal_masks": n_proposal_masks,
        "n_failures": n_failures,
    }
    manifest.flagged = n_images > 0 and n_failures / n_images > failure_flag_ratio
    if manifest.flagged:
        logger.warning("run %s flagged: %d/%d images failed", rid, n_failures, n_images)

    _dump_json(run_dir / "image_paths.json", image_paths)
    miou_result: Optional[MiouResult] = None
    if mode == "auto-eval":
        _dump_json(run_dir / "records.json", {"records": record_rows})
        try:
            miou_result = miou(records, catalog)
        except EmptyEvaluation:
            logger.warning("run %s produced no evaluation records", rid)
        if miou_result is not None:
            report = build_report(miou_result, manifest.deterministic_dict())
            write_report_files(report, run_dir)

    manifest.timestamps["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    _dump_json(run_dir / "manifest.json", manifest.deterministic_dict())
    _dump_json(run_dir / "run_meta.json", {"timestamps": manifest.timestamps})
    return RunResult(
        run_dir=run_dir, manifest=manifest, records=records, miou_result=miou_result
    )
