"""Dense-inference post-processing: decode, paste, NMS, calibration and AP."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .assignment import PIXEL_CENTER, WindowSpec, decode_box
from .core import StructuredTensor, coord_range
from .nn import sigmoid

SCORE_THRESH = 0.05
TOPK = 200
NMS_IOU = 0.5
CALIBRATED_DISPLAY_THRESH = 0.6


class NMSMode(enum.Enum):
    REGRESSED_BOX = "box"
    MASK_BB = "mask-bb"


@dataclass(eq=False)
class Detection:
    score: float
    category: int
    window: WindowSpec
    soft_mask: np.ndarray
    box: tuple[float, float, float, float] | None = None
    binary_mask: np.ndarray | None = field(default=None, repr=False)
    calibrated_score: float | None = None

    def order_key(self):
        w = self.window
        return (-self.score, self.category, w.y, w.x, w.size, w.level, w.size_index)


def decode(cls_logits, mask_logits, box_deltas=None, num_classes: int = 1,
           score_thresh: float = SCORE_THRESH, topk: int = TOPK) -> list[Detection]:
    """Turn one image's dense outputs into scored candidate detections.

    ``cls_logits[k]`` is ``(S*K, H, W)`` for level ``k``; ``mask_logits[k][s]``
    is the natural :class:`StructuredTensor` of window size ``s``;
    ``box_deltas[k]`` is ``(S*4, H, W)`` or ``None``. Each window yields one
    candidate carrying its best class; candidates with a sigmoid score at or
    above ``score_thresh`` are kept, best ``topk`` first.
    """
    cands = []
    for k, logits in enumerate(cls_logits):
        S = len(mask_logits[k])
        probs = sigmoid(np.asarray(logits)).reshape(S, num_classes, *logits.shape[-2:])
        for s in range(S):
            size = mask_logits[k][s].shape[:2]
            best = probs[s].argmax(axis=0)
            score = probs[s].max(axis=0)
            for y, x in zip(*np.nonzero(score >= score_thresh)):
                cands.append((-float(score[y, x]), int(best[y, x]), int(y), int(x), size, k, s))
    cands.sort()
    dets = []
    for neg_score, c, y, x, _size, k, s in cands[:topk]:
        t: StructuredTensor = mask_logits[k][s]
        w = WindowSpec(k, y, x, t.shape[:2], t.units, s)
        box = None
        if box_deltas is not None and box_deltas[k] is not None:
            box = decode_box(box_deltas[k][4 * s:4 * s + 4, y, x], w.center, w.side)
        dets.append(Detection(-neg_score, c, w, sigmoid(t.data[:, :, y, x]), box))
    return dets


def _paste_weights(center: float, n: int, sigma_vu: float, n_pix: int) -> np.ndarray:
    lo, hi = coord_range(n)
    s = (np.arange(n_pix) + PIXEL_CENTER - center) / sigma_vu
    inside = (s >= lo - 0.5) & (s < hi + 0.5)
    sc = np.clip(s, lo, hi)
    f = np.floor(sc).astype(np.intp)
    w = sc - f
    f1 = np.minimum(f + 1, hi)
    A = np.zeros((n_pix, n))
    rows = np.arange(n_pix)
    np.add.at(A, (rows, f - lo), (1.0 - w) * inside)
    np.add.at(A, (rows, f1 - lo), w * inside)
    return A


def paste_soft(det: Detection, image_size) -> np.ndarray:
    """Bilinear resize of the window's soft mask onto its image footprint (0 outside)."""
    H, W = image_size
    V, U = det.soft_mask.shape
    sv = det.window.units.sigma_vu
    cy, cx = det.window.center
    Ay = _paste_weights(cy, V, sv, H)
    Ax = _paste_weights(cx, U, sv, W)
    return Ay @ det.soft_mask @ Ax.T


def paste_mask(det: Detection, image_size, bin_thresh: float = 0.5) -> np.ndarray:
    """Binary image-resolution mask: pasted probabilities ``>= bin_thresh``, clipped to the image."""
    m = paste_soft(det, image_size) >= bin_thresh
    det.binary_mask = m
    return m


def mask_box(mask: np.ndarray) -> tuple[float, float, float, float]:
    if not mask.any():
        return 0.0, 0.0, 0.0, 0.0
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return float(rows[0]), float(cols[0]), float(rows[-1] + 1), float(cols[-1] + 1)


def iou(a, b) -> float:
    """IoU of ``(y0, x0, y1, x1)`` rectangles."""
    ih = min(a[2], b[2]) - max(a[0], b[0])
    iw = min(a[3], b[3]) - max(a[1], b[1])
    if ih <= 0 or iw <= 0:
        return 0.0
    inter = ih * iw
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def box_iou_matrix(boxes: np.ndarray) -> np.ndarray:
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    ih = np.clip(np.minimum(b[:, None, 2], b[None, :, 2]) - np.maximum(b[:, None, 0], b[None, :, 0]), 0, None)
    iw = np.clip(np.minimum(b[:, None, 3], b[None, :, 3]) - np.maximum(b[:, None, 1], b[None, :, 1]), 0, None)
    inter = ih * iw
    area = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area[:, None] + area[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    inter = np.logical_and(a, b).sum()
    union = np.logical_or(a, b).sum()
    return float(inter / union) if union else 0.0


def nms_boxes(dets: list[Detection], mode: NMSMode, image_size=None) -> np.ndarray:
    if mode is NMSMode.MASK_BB:
        if image_size is None and any(d.binary_mask is None for d in dets):
            raise ValueError("mask-bb NMS needs image_size to paste masks")
        return np.array([mask_box(d.binary_mask if d.binary_mask is not None
                                  else paste_mask(d, image_size)) for d in dets]).reshape(-1, 4)
    if any(d.box is None for d in dets):
        raise ValueError("regressed-box NMS needs a box on every detection")
    return np.array([d.box for d in dets], dtype=np.float64).reshape(-1, 4)


def nms(dets: list[Detection], iou_thresh: float = NMS_IOU, mode: NMSMode = NMSMode.REGRESSED_BOX,
        image_size=None) -> list[Detection]:
    """Greedy per-category suppression in descending score order.

    A detection is dropped when its IoU with an already kept detection of
    the same category exceeds ``iou_thresh``. Equal scores are ordered by
    ``(category, y, x, size)``.
    """
    if not dets:
        return []
    mode = NMSMode(mode)
    order = sorted(dets, key=Detection.order_key)
    boxes = nms_boxes(order, mode, image_size)
    cats = np.array([d.category for d in order])
    keep = []
    for c in np.unique(cats):
        idx = np.flatnonzero(cats == c)
        ious = box_iou_matrix(boxes[idx])
        alive = np.ones(len(idx), dtype=bool)
        for i in range(len(idx)):
            if not alive[i]:
                continue
            keep.append(idx[i])
            alive[i + 1:] &= ious[i, i + 1:] <= iou_thresh
    return [order[i] for i in sorted(keep)]


# ---------------------------------------------------------------------------
# matching, calibration, AP
# ---------------------------------------------------------------------------


def _pair_iou(det: Detection, gt, iou_type: str) -> float:
    if iou_type == "mask":
        return mask_iou(det.binary_mask, gt.mask)
    box = det.box if det.box is not None else mask_box(det.binary_mask)
    return iou(box, gt.bbox)


def match_category(dets_per_image, gts_per_image, category: int, iou_thresh: float,
                   iou_type: str = "mask"):
    """Greedy score-ordered matching for one category across images.

    Returns ``(scores, is_tp, n_gt)`` with scores sorted descending. Each
    detection takes the unmatched ground truth of highest IoU, if at least
    ``iou_thresh``.
    """
    items = []
    n_gt = 0
    for img, (dets, gts) in enumerate(zip(dets_per_image, gts_per_image)):
        n_gt += sum(1 for g in gts if g.category == category)
        for d in dets:
            if d.category == category:
                items.append((d, img))
    items.sort(key=lambda di: (di[0].order_key(), di[1]))
    used = [set() for _ in gts_per_image]
    scores, tp = [], []
    for d, img in items:
        best, best_j = iou_thresh, -1
        for j, g in enumerate(gts_per_image[img]):
            if g.category != category or j in used[img]:
                continue
            v = _pair_iou(d, g, iou_type)
            if v >= best:
                best, best_j = v, j
        if best_j >= 0:
            used[img].add(best_j)
        scores.append(d.score)
        tp.append(best_j >= 0)
    return np.array(scores), np.array(tp, dtype=bool), n_gt


def pr_curve(is_tp: np.ndarray, n_gt: int):
    tp = np.cumsum(is_tp)
    k = np.arange(1, len(is_tp) + 1)
    precision = tp / k
    recall = tp / n_gt if n_gt else np.zeros(len(is_tp))
    return precision, recall


class Calibration:
    """Per-category monotone map from raw score to PR-curve precision."""

    def __init__(self, tables: dict[int, tuple[np.ndarray, np.ndarray]]):
        self.tables = tables

    def __call__(self, score: float, category: int) -> float:
        if category not in self.tables:
            return float(score)
        scores, prec = self.tables[category]
        n = int(np.sum(scores >= score))
        return float(prec[max(n, 1) - 1])

    def apply(self, dets: list[Detection]) -> list[Detection]:
        for d in dets:
            d.calibrated_score = self(d.score, d.category)
        return dets

    def to_json(self) -> dict:
        return {str(c): {"scores": s.tolist(), "precision": p.tolist()} for c, (s, p) in self.tables.items()}

    @classmethod
    def from_json(cls, obj: dict) -> Calibration:
        return cls({int(c): (np.asarray(v["scores"], dtype=np.float64), np.asarray(v["precision"], dtype=np.float64))
                    for c, v in obj.items()})


def calibrate(dets_per_image, gts_per_image, iou_thresh: float = 0.5,
              iou_type: str = "mask") -> Calibration:
    """Fit score-to-precision maps from a validation split.

    A raw score maps to the precision at the operating point that keeps
    every validation detection scoring at least as high. Precision is the
    interpolated (running maximum from low scores upward) value, so the map is
    monotone and never reorders detections within a category.
    """
    cats = sorted({d.category for dets in dets_per_image for d in dets})
    tables = {}
    for c in cats:
        scores, tp, n_gt = match_category(dets_per_image, gts_per_image, c, iou_thresh, iou_type)
        if len(scores) == 0:
            continue
        precision, _ = pr_curve(tp, n_gt)
        interp = np.maximum.accumulate(precision[::-1])[::-1]
        tables[c] = (scores, interp)
    return Calibration(tables)


def average_precision(is_tp: np.ndarray, n_gt: int, n_points: int = 101) -> float:
    """101-point interpolated AP of a score-sorted TP/FP sequence."""
    if n_gt == 0:
        return float("nan")
    if len(is_tp) == 0:
        return 0.0
    precision, recall = pr_curve(is_tp, n_gt)
    env = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    for r in np.linspace(0.0, 1.0, n_points):
        i = np.searchsorted(recall, r, side="left")
        ap += env[i] if i < len(env) else 0.0
    return float(ap / n_points)


def eval_ap(dets_per_image, gts_per_image, iou_threshes=(0.5, 0.75),
            iou_type: str = "mask") -> dict[float, float]:
    """Mean over ground-truth categories of 101-point AP at each IoU threshold.

    A simplified single-dataset proxy; not the COCO protocol.
    """
    cats = sorted({g.category for gts in gts_per_image for g in gts})
    out = {}
    for thr in iou_threshes:
        aps = []
        for c in cats:
            _, tp, n_gt = match_category(dets_per_image, gts_per_image, c, thr, iou_type)
            aps.append(average_precision(tp, n_gt))
        out[thr] = float(np.mean(aps)) if aps else 0.0
    return out
