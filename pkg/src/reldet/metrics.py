"""Frame-level detection evaluation: per-class average precision and mAP.

Per class, detections are sorted by confidence (descending, ties keep
submission order) and greedily matched to the not-yet-matched ground truth
of the same frame with the highest IoU at or above the threshold.  AP uses
all-point interpolation (area under the precision envelope as a function of
recall); mAP averages over classes that have at least one ground-truth
instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import ActorBox, iou
from .errors import DataError, ValidationError


@dataclass(frozen=True)
class Detection:
    frame_id: str
    box: ActorBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence must lie in [0,1]: {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    frame_id: str
    box: ActorBox
    class_id: int


@dataclass
class MapResult:
    per_class: dict[int, float]
    mean: float

    def report_lines(self) -> list[str]:
        lines = [f"class {cid} ap {ap:.6f}" for cid, ap in sorted(self.per_class.items())]
        lines.append(f"map {self.mean:.6f}")
        return lines


def _class_average_precision(dets: list[Detection], gts: list[GroundTruth],
                             iou_thresh: float) -> float:
    n_gt = len(gts)
    gt_by_frame: dict[str, list[int]] = {}
    for i, gt in enumerate(gts):
        gt_by_frame.setdefault(gt.frame_id, []).append(i)
    matched = [False] * n_gt

    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j in gt_by_frame.get(det.frame_id, ()):
            if matched[j]:
                continue
            v = iou(det.box, gts[j].box)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= iou_thresh:
            tp[rank] = 1.0
            matched[best_j] = True
    if len(order) == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, len(order) + 1)
    recall = cum_tp / n_gt
    # precision envelope: best precision achievable at recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


def frame_map(detections: list[Detection], ground_truth: list[GroundTruth],
              iou_thresh: float = 0.5) -> MapResult:
    """AP per class (classes with >= 1 GT) and their mean."""
    if not ground_truth:
        raise DataError("mAP undefined: no ground-truth instances at all")
    classes = sorted({gt.class_id for gt in ground_truth})
    per_class = {}
    for cid in classes:
        dets = [d for d in detections if d.class_id == cid]
        gts = [g for g in ground_truth if g.class_id == cid]
        per_class[cid] = _class_average_precision(dets, gts, iou_thresh)
    return MapResult(per_class, float(np.mean(list(per_class.values()))))
