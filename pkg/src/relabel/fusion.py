"""Pseudo-label generation: TTA inference plus confidence-weighted box fusion."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .annotations import AnnotationSet
from .errors import DetectorError
from .geometry import BBox, Detection, ViewTransform, clip, invert_view, iou

DEFAULT_ACCEPT_THR = 0.05


@dataclass(frozen=True)
class FusionConfig:
    cluster_iou_thr: float = 0.55
    skip_score_thr: float = 0.0
    n_views: int = 20

    def __post_init__(self) -> None:
        if not 0 < self.cluster_iou_thr <= 1:
            raise ValueError("cluster_iou_thr must lie in (0, 1]")
        if not 0 <= self.skip_score_thr < 1:
            raise ValueError("skip_score_thr must lie in [0, 1)")
        if self.n_views < 1:
            raise ValueError("n_views must be positive")


@dataclass
class BoxCluster:
    members: list[Detection] = field(default_factory=list)
    fused: Detection | None = None

    def refresh(self, n_views: int) -> Detection:
        self.fused = fuse_members(self.members, n_views)
        return self.fused


def fuse_members(members: Sequence[Detection], n_views: int) -> Detection:
    """Confidence-weighted mean of member corners; score rescaled by support.

    Each corner coordinate is ``sum(c_i * x_i) / sum(c_i)``. The fused score
    is the mean member score times ``min(T, n_views) / n_views``.
    """
    coords = np.array([m.box.as_tuple() for m in members], dtype=np.float64)
    scores = np.array([m.score for m in members], dtype=np.float64)
    total = scores.sum()
    if total > 0:
        fused = (scores[:, None] * coords).sum(axis=0) / total
    else:
        fused = coords.mean(axis=0)
    # exact result is a convex combination; guard against last-ulp overshoot
    fused = np.clip(fused, coords.min(axis=0), coords.max(axis=0))
    t = len(members)
    score = float(scores.mean()) * min(t, n_views) / n_views
    return Detection(BBox(*(float(v) for v in fused)), min(score, 1.0))


def wbf_cluster(dets: Sequence[Detection], cfg: FusionConfig = FusionConfig()) -> list[BoxCluster]:
    kept = [d for d in dets if d.score >= cfg.skip_score_thr]
    kept.sort(key=lambda d: -d.score)
    clusters: list[BoxCluster] = []
    for det in kept:
        for cluster in clusters:
            if iou(cluster.fused.box, det.box) >= cfg.cluster_iou_thr:
                cluster.members.append(det)
                cluster.refresh(cfg.n_views)
                break
        else:
            cluster = BoxCluster([det])
            cluster.refresh(cfg.n_views)
            clusters.append(cluster)
    return clusters


def wbf_fuse(dets: Sequence[Detection], cfg: FusionConfig = FusionConfig()) -> list[Detection]:
    """Greedy weighted boxes fusion of one image's detections.

    Boxes are visited by descending score; each joins the first cluster
    whose current fused box overlaps it with IoU >= ``cluster_iou_thr``,
    otherwise it opens a new cluster. Output is sorted by fused score.
    """
    fused = [c.fused for c in wbf_cluster(dets, cfg)]
    fused.sort(key=lambda d: -d.score)
    return fused


class DetectorInterface(Protocol):
    def detect(self, image_id: str, view: ViewTransform) -> list[Detection]:
        """Detections for one image under ``view``, in view coordinates."""
        ...


def _pool_key(d: Detection) -> tuple:
    return (-d.score, d.box.x1, d.box.y1, d.box.x2, d.box.y2)


def tta_predict(
    detector: DetectorInterface,
    image_id: str,
    width: float,
    height: float,
    views: Sequence[ViewTransform],
    cfg: FusionConfig = FusionConfig(),
) -> list[Detection]:
    """Run ``detector`` on every view, map back, clip, pool and fuse."""
    if not views:
        raise ValueError("at least one view is required")
    pooled: list[Detection] = []
    for view in views:
        try:
            raw = detector.detect(image_id, view)
        except DetectorError:
            raise
        except Exception as exc:
            raise DetectorError(f"detector failed on {image_id!r} view {view.name}: {exc}", view) from exc
        for det in raw:
            box = clip(invert_view(det.box, view, width, height), width, height)
            if box is not None:
                pooled.append(Detection(box, det.score, det.class_id))
    # sort so the result does not depend on view iteration order
    pooled.sort(key=_pool_key)
    return wbf_fuse(pooled, cfg)


def correct_labels(
    current: AnnotationSet,
    detector: DetectorInterface,
    views: Sequence[ViewTransform],
    cfg: FusionConfig = FusionConfig(),
    accept_thr: float = DEFAULT_ACCEPT_THR,
) -> AnnotationSet:
    """Replace every image's labels with accepted fused TTA detections."""
    if accept_thr < 0:
        raise ValueError("accept_thr must be non-negative")
    updates = {}
    for info in current.images:
        fused = tta_predict(detector, info.id, info.width, info.height, views, cfg)
        updates[info.id] = [d for d in fused if d.score >= accept_thr]
    return current.replaced(updates)


class FileDetector:
    """Detector backed by per-view prediction files.

    Each file is an annotation JSON document with a top-level ``view``
    object (``{"flip": "none"|"h"|"v"|"hv", "scale": float}``) whose boxes
    are expressed in that view's coordinates.
    """

    def __init__(self, predictions: dict[ViewTransform, AnnotationSet]):
        self.predictions = dict(predictions)

    @property
    def views(self) -> list[ViewTransform]:
        return sorted(self.predictions, key=lambda v: (v.scale, v.flip.value))

    @classmethod
    def from_directory(cls, path: str | Path) -> "FileDetector":
        from .io import read_view_predictions

        preds = {}
        for f in sorted(Path(path).glob("*.json")):
            view, aset = read_view_predictions(f)
            if view in preds:
                raise DetectorError(f"duplicate view {view.name} in {f}", view)
            preds[view] = aset
        if not preds:
            raise DetectorError(f"no view prediction files in {path}")
        return cls(preds)

    def detect(self, image_id: str, view: ViewTransform) -> list[Detection]:
        try:
            aset = self.predictions[view]
        except KeyError:
            raise DetectorError(f"no predictions for view {view.name}", view) from None
        if image_id not in aset:
            return []
        return aset.get(image_id)
