"""Per-class IoU and mIoU under the true-positive-restricted protocol.

Aggregation follows the sum-then-divide convention: per-class pixel counts
are summed over the whole split before the IoU division, and mIoU is the
unweighted mean over classes with at least one evaluation record.

Conventions: IoU of two empty masks is 1.0 (correct absence); classes with
zero records are excluded from the mean rather than scored 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .classifier.config import PredictionResult
from .dataset import ClassCatalog
from .errors import ContractViolation, EmptyEvaluation, EmptyProposal
from .segmenter import MaskProposalSet


@dataclass
class ConfusionCounts:
    """Pixel-level confusion counts for one class; additive across images."""

    class_id: int
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if self.class_id != other.class_id:
            raise ContractViolation("cannot add counts across classes")
        return ConfusionCounts(
            self.class_id, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn
        )

    @property
    def iou(self) -> float:
        denom = self.tp + self.fp + self.fn
        return 1.0 if denom == 0 else self.tp / denom


@dataclass
class EvalRecord:
    """Outcome of evaluating one (image, class) proposal set against ground truth."""

    image_id: str
    class_id: int
    chosen_mask_index: int
    iou: float
    counts: ConfusionCounts


def _as_bool(mask: np.ndarray) -> np.ndarray:
    return np.asarray(mask, dtype=bool)


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union; 1.0 when both masks are empty, 0.0 when one is."""
    pred = _as_bool(pred)
    gt = _as_bool(gt)
    if pred.shape != gt.shape:
        raise ContractViolation(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(pred, gt).sum()) / union


def confusion(pred: np.ndarray, gt: np.ndarray, class_id: int) -> ConfusionCounts:
    pred = _as_bool(pred)
    gt = _as_bool(gt)
    if pred.shape != gt.shape:
        raise ContractViolation(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.logical_and(pred, gt).sum())
    return ConfusionCounts(
        class_id=class_id,
        tp=tp,
        fp=int(pred.sum()) - tp,
        fn=int(gt.sum()) - tp,
    )


def best_case_select(proposals: MaskProposalSet, gt: np.ndarray) -> EvalRecord:
    """Pick the proposal with the highest IoU; ties go to the lower index
    (which carries the higher backend score)."""
    if not proposals.masks:
        raise EmptyProposal(
            f"no masks to select from for ({proposals.image_id}, {proposals.class_id})"
        )
    ious = [iou(mask, gt) for mask in proposals.masks]
    chosen = int(np.argmax(ious))
    return EvalRecord(
        image_id=proposals.image_id,
        class_id=proposals.class_id,
        chosen_mask_index=chosen,
        iou=ious[chosen],
        counts=confusion(proposals.masks[chosen], gt, proposals.class_id),
    )


def tp_filter(predictions: PredictionResult, gt_labels: np.ndarray) -> set[int]:
    """Classes both predicted and present; only these are prompted in evaluation."""
    gt_positive = {int(i) for i in np.flatnonzero(np.asarray(gt_labels) == 1)}
    return predictions.predicted_classes & gt_positive


@dataclass
class ClassIoU:
    class_id: int
    name: str
    n_records: int
    iou: float


@dataclass
class MiouResult:
    per_class: list[ClassIoU]
    miou: float
    n_classes: int
    n_records: int

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "n_classes": self.n_classes,
            "n_records": self.n_records,
            "per_class": [
                {"class_id": c.class_id, "name": c.name,
                 "n_records": c.n_records, "iou": c.iou}
                for c in self.per_class
            ],
        }


def miou(
    records: Iterable[EvalRecord],
    catalog: ClassCatalog,
    exclude_background: bool = True,
) -> MiouResult:
    """Per-class IoU from split-summed counts, then the unweighted class mean."""
    sums: dict[int, ConfusionCounts] = {}
    tallies: dict[int, int] = {}
    for record in records:
        cid = record.counts.class_id
        if exclude_background and cid == catalog.background_id:
            continue
        if cid in sums:
            sums[cid] = sums[cid] + record.counts
        else:
            sums[cid] = ConfusionCounts(cid, record.counts.tp,
                                        record.counts.fp, record.counts.fn)
        tallies[cid] = tallies.get(cid, 0) + 1
    if not sums:
        raise EmptyEvaluation("no evaluation records to aggregate")
    per_class = [
        ClassIoU(class_id=cid, name=catalog.name_of(cid),
                 n_records=tallies[cid], iou=sums[cid].iou)
        for cid in sorted(sums)
    ]
    return MiouResult(
        per_class=per_class,
        miou=float(np.mean([c.iou for c in per_class])),
        n_classes=len(per_class),
        n_records=sum(tallies.values()),
    )
