"""Detection evaluation: greedy matching, AP at one IoU, COCO-averaged AP/AR.

All AP values use 101-point interpolation (recall grid 0.00, 0.01, ..., 1.00)
including AP50, so AP50/AP75/AP are mutually consistent. Predictions with
equal scores keep their input order, which is part of the contract:
images in ``gts.images`` order, then detection order within an image.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotations import AnnotationSet
from .errors import NoGroundTruthError, UnknownImageError
from .geometry import BBox, Detection, boxes_to_array, iou_matrix

COCO_IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_GRID = np.arange(101) / 100.0
MAX_DETS = 100


@dataclass(frozen=True)
class EvalReport:
    ap50: float
    ap75: float
    ap: float
    ar: float

    def as_dict(self) -> dict[str, float]:
        return {"ap50": self.ap50, "ap75": self.ap75, "ap": self.ap, "ar": self.ar}


def score_order(dets: Sequence[Detection]) -> list[int]:
    """Indices by descending score, ties kept in input order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_greedy(
    preds: Sequence[Detection], gts: Sequence[BBox], iou_thr: float
) -> list[int | None]:
    """Match each prediction to at most one ground-truth box.

    Predictions are visited by descending score; each takes the unmatched
    ground truth with the highest IoU (lowest index on ties) provided that
    IoU is at least ``iou_thr``. Returns, per prediction index, the matched
    ground-truth index or ``None`` for a false positive.
    """
    if not 0 < iou_thr <= 1:
        raise ValueError(f"iou_thr must lie in (0, 1], got {iou_thr}")
    result: list[int | None] = [None] * len(preds)
    if not preds or not gts:
        return result
    ious = iou_matrix(boxes_to_array(d.box for d in preds), boxes_to_array(gts))
    taken = np.zeros(len(gts), dtype=bool)
    for i in score_order(preds):
        row = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(row))
        if row[j] >= iou_thr:
            result[i] = j
            taken[j] = True
    return result


def _check_images(preds: AnnotationSet, gts: AnnotationSet) -> None:
    for image_id in preds.image_ids:
        if image_id not in gts:
            raise UnknownImageError(image_id)


def _gt_boxes(gts: AnnotationSet, image_id: str) -> list[BBox]:
    return [d.box for d in gts.get(image_id)]


def _num_gt(gts: AnnotationSet) -> int:
    n = gts.num_boxes()
    if n == 0:
        raise NoGroundTruthError("no ground truth boxes in the dataset")
    return n


def _pred_list(preds: AnnotationSet, image_id: str, max_dets: int | None) -> list[Detection]:
    dets = preds.get(image_id) if image_id in preds else []
    if max_dets is not None and len(dets) > max_dets:
        dets = [dets[i] for i in score_order(dets)[:max_dets]]
    return dets


def interpolated_ap(tp_flags: np.ndarray, n_gt: int) -> float:
    """101-point AP from true-positive flags sorted by descending score."""
    tp_flags = np.asarray(tp_flags, dtype=bool)
    if tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.sum() / len(RECALL_GRID))


def average_precision(
    preds: AnnotationSet,
    gts: AnnotationSet,
    iou_thr: float,
    max_dets: int | None = None,
) -> float:
    """AP at one IoU threshold, matching pooled over all images."""
    _check_images(preds, gts)
    n_gt = _num_gt(gts)
    scores: list[float] = []
    flags: list[bool] = []
    for image_id in gts.image_ids:
        dets = _pred_list(preds, image_id, max_dets)
        match = match_greedy(dets, _gt_boxes(gts, image_id), iou_thr)
        scores.extend(d.score for d in dets)
        flags.extend(m is not None for m in match)
    if not scores:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    return interpolated_ap(np.asarray(flags)[order], n_gt)


def coco_ap(preds: AnnotationSet, gts: AnnotationSet) -> float:
    """Mean AP over IoU thresholds 0.50:0.05:0.95."""
    aps = [average_precision(preds, gts, t) for t in COCO_IOU_THRESHOLDS]
    return sum(aps) / len(aps)


def recall_at(
    preds: AnnotationSet, gts: AnnotationSet, iou_thr: float, max_dets: int | None = MAX_DETS
) -> float:
    _check_images(preds, gts)
    n_gt = _num_gt(gts)
    matched = 0
    for image_id in gts.image_ids:
        dets = _pred_list(preds, image_id, max_dets)
        match = match_greedy(dets, _gt_boxes(gts, image_id), iou_thr)
        matched += sum(m is not None for m in match)
    return matched / n_gt


def average_recall(preds: AnnotationSet, gts: AnnotationSet) -> float:
    """Mean recall over IoU 0.50:0.05:0.95, top-100 predictions per image."""
    rs = [recall_at(preds, gts, t) for t in COCO_IOU_THRESHOLDS]
    return sum(rs) / len(rs)


def evaluate(preds: AnnotationSet, gts: AnnotationSet) -> EvalReport:
    return EvalReport(
        ap50=average_precision(preds, gts, 0.5),
        ap75=average_precision(preds, gts, 0.75),
        ap=coco_ap(preds, gts),
        ar=average_recall(preds, gts),
    )


@dataclass(frozen=True)
class MatchCounts:
    tp: int
    n_pred: int
    n_gt: int

    @property
    def precision(self) -> float:
        return self.tp / self.n_pred if self.n_pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.n_gt if self.n_gt else 0.0

    @property
    def f1(self) -> float:
        denom = self.n_pred + self.n_gt
        return 2 * self.tp / denom if denom else 1.0


def match_counts(labels: AnnotationSet, gts: AnnotationSet, iou_thr: float = 0.5) -> MatchCounts:
    """Greedy-matching counts of a label set against reference boxes."""
    _check_images(labels, gts)
    tp = n_pred = n_gt = 0
    for image_id in gts.image_ids:
        dets = labels.get(image_id) if image_id in labels else []
        gt_boxes = _gt_boxes(gts, image_id)
        match = match_greedy(dets, gt_boxes, iou_thr)
        tp += sum(m is not None for m in match)
        n_pred += len(dets)
        n_gt += len(gt_boxes)
    return MatchCounts(tp, n_pred, n_gt)
