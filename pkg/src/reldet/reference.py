"""Slow, independent reference implementations used for verification.

Nothing here shares code with the fast paths: attention is a per-head
python loop, average precision re-runs matching from scratch at every
confidence threshold, RoI extraction samples point by point.  The test
suite and the `selftest` command compare the production implementations
against these.
"""

from __future__ import annotations

import numpy as np


def naive_cross_attention(x: np.ndarray, y: np.ndarray, params: dict,
                          heads: int) -> np.ndarray:
    """Per-head loop over column blocks of the packed projection matrices."""
    wq, wk, wv, wo = (np.asarray(params[k].data if hasattr(params[k], "data") else params[k])
                      for k in ("wq", "wk", "wv", "wo"))
    d = wq.shape[0]
    dk = d // heads
    outs = []
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        q = x @ wq[:, sl]
        k = y @ wk[:, sl]
        v = y @ wv[:, sl]
        scores = q @ k.T / np.sqrt(dk)
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=1, keepdims=True)
        outs.append(attn @ v)
    return np.concatenate(outs, axis=1) @ wo


def naive_self_attention(x, params, heads):
    return naive_cross_attention(x, x, params, heads)


def block_average_pool(fmap: np.ndarray, side: int) -> np.ndarray:
    """Adaptive average pooling by explicit region loops."""
    c, w, h = fmap.shape
    out = np.zeros((c, side, side), dtype=np.float64)
    for i in range(side):
        r0, r1 = (i * w) // side, -(-(i + 1) * w // side)
        for j in range(side):
            c0, c1 = (j * h) // side, -(-(j + 1) * h // side)
            out[:, i, j] = fmap[:, r0:r1, c0:c1].mean(axis=(1, 2))
    return out


def bilinear_roi(fmap: np.ndarray, box, out: int = 7, samples: int = 2) -> np.ndarray:
    """Point-by-point bilinear RoI extraction (same coordinate convention as
    boxes.roi_align: pixel centers at integer coordinates, normalized box
    edge u mapping to u*size - 0.5)."""
    c, height, width = fmap.shape
    y_lo, y_hi = box.y1 * height - 0.5, box.y2 * height - 0.5
    x_lo, x_hi = box.x1 * width - 0.5, box.x2 * width - 0.5
    bh, bw = (y_hi - y_lo) / out, (x_hi - x_lo) / out

    def sample(yc, xc):
        if yc < -1.0 or yc > height or xc < -1.0 or xc > width:
            return np.zeros(c, dtype=fmap.dtype)
        yc, xc = max(yc, 0.0), max(xc, 0.0)
        y0 = int(np.floor(yc))
        x0 = int(np.floor(xc))
        if y0 >= height - 1:
            y0, fy = height - 1, 0.0
        else:
            fy = yc - y0
        if x0 >= width - 1:
            x0, fx = width - 1, 0.0
        else:
            fx = xc - x0
        y1 = min(y0 + 1, height - 1)
        x1 = min(x0 + 1, width - 1)
        return ((1 - fy) * (1 - fx) * fmap[:, y0, x0]
                + (1 - fy) * fx * fmap[:, y0, x1]
                + fy * (1 - fx) * fmap[:, y1, x0]
                + fy * fx * fmap[:, y1, x1])

    result = np.zeros((c, out, out), dtype=np.float64)
    for cy in range(out):
        for cx in range(out):
            acc = np.zeros(c, dtype=np.float64)
            for sy in range(samples):
                for sx in range(samples):
                    yc = y_lo + (cy + (sy + 0.5) / samples) * bh
                    xc = x_lo + (cx + (sx + 0.5) / samples) * bw
                    acc += sample(yc, xc)
            result[:, cy, cx] = acc / (samples * samples)
    return result


def _box_iou(a, b) -> float:
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a.x2 - a.x1) * (a.y2 - a.y1)
    area_b = (b.x2 - b.x1) * (b.y2 - b.y1)
    return inter / (area_a + area_b - inter)


def _match_counts(dets, gts, iou_thresh):
    """Greedy matching over a detection subset; returns (tp, fp)."""
    matched = [False] * len(gts)
    tp = fp = 0
    for det in dets:
        best, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if matched[j] or gt.frame_id != det.frame_id:
                continue
            v = _box_iou(det.box, gt.box)
            if v > best:
                best, best_j = v, j
        if best_j >= 0 and best >= iou_thresh:
            matched[best_j] = True
            tp += 1
        else:
            fp += 1
    return tp, fp


def brute_force_average_precision(dets, gts, iou_thresh: float = 0.5) -> float:
    """AP by enumerating every confidence threshold.

    For each distinct confidence (descending), matching is re-run from
    scratch on the detections at or above it, yielding one precision/recall
    point; the all-point interpolated area under those points is returned.
    Detections must have distinct confidences for the threshold set to be
    unambiguous.
    """
    n_gt = len(gts)
    if n_gt == 0:
        return 0.0
    if not dets:
        return 0.0
    dets = sorted(dets, key=lambda d: -d.confidence)
    thresholds = sorted({d.confidence for d in dets}, reverse=True)
    points = []
    for tau in thresholds:
        subset = [d for d in dets if d.confidence >= tau]
        tp, fp = _match_counts(subset, gts, iou_thresh)
        recall = tp / n_gt
        precision = tp / (tp + fp) if tp + fp else 0.0
        points.append((recall, precision))
    recalls = np.array([r for r, _ in points])
    precisions = np.array([p for _, p in points])
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    prev = np.concatenate([[0.0], recalls[:-1]])
    return float(np.sum((recalls - prev) * envelope))


def brute_force_map(dets, gts, iou_thresh: float = 0.5):
    classes = sorted({g.class_id for g in gts})
    per_class = {
        cid: brute_force_average_precision(
            [d for d in dets if d.class_id == cid],
            [g for g in gts if g.class_id == cid],
            iou_thresh,
        )
        for cid in classes
    }
    return per_class, float(np.mean(list(per_class.values())))
