"""Actor boxes and the geometry around them: IoU, train/inference box
filtering, and quantization-free RoI extraction via bilinear sampling.

Boxes are axis-aligned rectangles in normalized [0,1] image coordinates
(x across columns, y down rows).  Feature maps are (C, H, W) with H rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .tensor import Tensor, wrap

ROI_SIZE = 7          # output grid of roi_align, fixed by the head's actor embedder
ROI_SAMPLING = 2      # bilinear sample points per output-cell axis

TRAIN_IOU_THRESHOLD = 0.75   # proposals kept for training when IoU with a GT exceeds this
INFERENCE_SCORE_THRESHOLD = 0.85  # strict: score must exceed this


@dataclass(frozen=True)
class ActorBox:
    x1: float
    y1: float
    x2: float
    y2: float
    score: float = 1.0

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"box coordinates must lie in [0,1]: {self}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValidationError(f"box corners out of order: {self}")
        if not 0.0 <= self.score <= 1.0:
            raise ValidationError(f"box score must lie in [0,1]: {self.score}")

    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2, self.score]


def iou(a: ActorBox, b: ActorBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def filter_boxes(proposals, ground_truth, mode: str):
    """Select the boxes a clip is trained or evaluated on.

    mode="train": every ground-truth box (with its own labels), plus each
    proposal whose best IoU against a GT box exceeds 0.75, inheriting the
    labels of that best-matching GT.
    mode="infer": proposals with score strictly greater than 0.85.

    `ground_truth` is a list of (ActorBox, label-vector) pairs; returns a
    list of (ActorBox, label-vector-or-None) pairs.
    """
    if mode not in ("train", "infer"):
        raise ValidationError(f"filter_boxes: mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer":
        return [(p, None) for p in proposals if p.score > INFERENCE_SCORE_THRESHOLD]
    retained = [(box, labels) for box, labels in ground_truth]
    for p in proposals:
        best, best_labels = 0.0, None
        for gt_box, labels in ground_truth:
            v = iou(p, gt_box)
            if v > best:
                best, best_labels = v, labels
        if best > TRAIN_IOU_THRESHOLD:
            retained.append((p, best_labels))
    return retained


# -- RoI extraction ---------------------------------------------------------
#
# Each 7x7 output cell averages ROI_SAMPLING^2 bilinear samples placed at
# even fractions of the cell.  Bilinear weights along rows and columns
# factorize, so the whole extraction is two small constant matrices:
# out[c] = M_rows @ fmap[c] @ M_cols^T.  Gradients then come for free
# through the tape's matmul.


def _axis_weights(coord: float, size: int) -> list[tuple[int, float]]:
    # continuous coordinate in pixel-center space: pixel i sits at i, the
    # image spans [-0.5, size - 0.5]; out-of-range samples contribute zero
    if coord < -1.0 or coord > size:
        return []
    c = max(coord, 0.0)
    low = int(np.floor(c))
    if low >= size - 1:
        return [(size - 1, 1.0)]
    frac = c - low
    return [(low, 1.0 - frac), (low + 1, frac)]


def _sampling_matrix(lo: float, hi: float, size: int, out: int, samples: int) -> np.ndarray:
    span = hi - lo
    bin_width = span / out
    m = np.zeros((out, size), dtype=np.float64)
    for cell in range(out):
        for s in range(samples):
            coord = lo + (cell + (s + 0.5) / samples) * bin_width
            for idx, w in _axis_weights(coord, size):
                m[cell, idx] += w / samples
    return m


def roi_sampling_matrices(box: ActorBox, height: int, width: int,
                          out: int = ROI_SIZE, samples: int = ROI_SAMPLING):
    """The two per-axis averaging matrices implementing RoI extraction."""
    if box.x2 <= box.x1 or box.y2 <= box.y1:
        raise ValidationError(f"degenerate (zero-area) box: {box}")
    # normalized -> pixel-center coordinates
    y_lo, y_hi = box.y1 * height - 0.5, box.y2 * height - 0.5
    x_lo, x_hi = box.x1 * width - 0.5, box.x2 * width - 0.5
    m_rows = _sampling_matrix(y_lo, y_hi, height, out, samples)
    m_cols = _sampling_matrix(x_lo, x_hi, width, out, samples)
    return m_rows, m_cols


def roi_align(fmap, box: ActorBox, out: int = ROI_SIZE,
              samples: int = ROI_SAMPLING) -> Tensor:
    """Extract a (C, out, out) feature patch for `box` from a (C, H, W) map."""
    fmap = wrap(fmap)
    if fmap.ndim != 3:
        raise DimensionError(f"roi_align: feature map must be (C, H, W), got {fmap.shape}")
    _, height, width = fmap.shape
    m_rows, m_cols = roi_sampling_matrices(box, height, width, out, samples)
    m_rows = Tensor(m_rows.astype(fmap.dtype))
    m_cols = Tensor(m_cols.astype(fmap.dtype))
    return (m_rows @ fmap) @ m_cols.swapaxes(0, 1)
