"""Desk-scale iterative self-training loop with a simulated detector.

The detector is a parametric stand-in for a trained network: its recall
grows as ``r_max * (1 - exp(-epoch / tau))`` and, past ``mem_epoch``, it
increasingly reproduces the labels it is trained on (memorization). The
loop watches AP50 against the weak labels, starts label correction at the
detected transition, and from then on regenerates pseudo labels (TTA +
fusion) and synthetic images each epoch. Quality is tracked against a
hidden ground truth that the loop itself never reads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .annotations import AnnotationSet, ImageInfo
from .cloning import BlurStrength, compose_synthetic
from .curvewatch import CurveSeries, transition_reached
from .errors import UnknownImageError
from .fusion import DEFAULT_ACCEPT_THR, FusionConfig, correct_labels
from .geometry import (
    IDENTITY_VIEW,
    BBox,
    Detection,
    ViewTransform,
    apply_view,
    boxes_to_array,
    clip,
    default_views,
    iou,
    iou_matrix,
)
from .imgproc import gaussian_blur
from .metrics import average_precision, match_counts

log = logging.getLogger(__name__)

_FLIP_CODES = {"none": 0, "h": 1, "v": 2, "hv": 3}
# stream tags keep the per-purpose random streams independent
_LATENT, _VIEW, _BATCH, _FP, _RENDER, _LAYOUT = 101, 202, 303, 404, 505, 606


@dataclass(frozen=True)
class WorldConfig:
    n_images: int = 12
    width: int = 128
    height: int = 128
    min_cells: int = 6
    max_cells: int = 10
    min_radius: float = 6.0
    max_radius: float = 11.0
    n_source: int = 24

    def __post_init__(self) -> None:
        if self.n_images < 1 or self.n_source < 1:
            raise ValueError("need at least one target and one source image")
        if not 1 <= self.min_cells <= self.max_cells:
            raise ValueError("need 1 <= min_cells <= max_cells")
        if not 0 < self.min_radius <= self.max_radius:
            raise ValueError("need 0 < min_radius <= max_radius")
        if 2 * self.max_radius + 4 > min(self.width, self.height):
            raise ValueError("cells do not fit in the image")


@dataclass(frozen=True)
class CorruptionConfig:
    drop_prob: float = 0.3
    jitter_sigma: float = 2.0
    fp_rate: float = 0.5

    def __post_init__(self) -> None:
        if not 0 <= self.drop_prob <= 1:
            raise ValueError("drop_prob must lie in [0, 1]")
        if self.jitter_sigma < 0 or self.fp_rate < 0:
            raise ValueError("jitter_sigma and fp_rate must be non-negative")


@dataclass(frozen=True)
class SimDetectorConfig:
    r_max: float = 0.95
    tau: float = 2.0
    mem_epoch: int = 8
    mem_rate: float = 0.1
    jitter_sigma: float = 2.0
    fp_rate: float = 0.5
    score_alpha: float = 4.0

    def __post_init__(self) -> None:
        vals = (self.r_max, self.tau, self.mem_epoch, self.mem_rate, self.jitter_sigma, self.fp_rate, self.score_alpha)
        if any(v < 0 for v in vals):
            raise ValueError("detector parameters must be non-negative")
        if self.r_max > 1:
            raise ValueError("r_max must not exceed 1")

    def recall(self, epoch: int) -> float:
        if self.tau == 0:
            return self.r_max
        return self.r_max * -math.expm1(-epoch / self.tau)

    def memorization(self, epoch: int) -> float:
        if epoch <= self.mem_epoch:
            return 0.0
        return min(0.5, self.mem_rate * (epoch - self.mem_epoch))


@dataclass
class SimWorld:
    hidden_gt: AnnotationSet
    weak_labels: AnnotationSet
    images: dict[str, np.ndarray]
    rng_seed: int
    source_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._order = {image_id: i for i, image_id in enumerate(self.hidden_gt.image_ids)}

    @property
    def image_ids(self) -> list[str]:
        return self.hidden_gt.image_ids

    def index(self, image_id: str) -> int:
        try:
            return self._order[image_id]
        except KeyError:
            raise UnknownImageError(image_id) from None


# -- world construction ------------------------------------------------------


def _jittered(box: BBox, noise: np.ndarray, sigma: float) -> BBox | None:
    x1, y1, x2, y2 = np.asarray(box.as_tuple()) + sigma * noise
    x1, x2 = sorted((x1, x2))
    y1, y2 = sorted((y1, y2))
    if x2 - x1 < 1 or y2 - y1 < 1:
        return None
    return BBox(float(x1), float(y1), float(x2), float(y2))


def _random_box(rng: np.random.Generator, width: int, height: int) -> BBox:
    w, h = rng.uniform(6.0, 22.0, size=2)
    x = rng.uniform(0, width - w)
    y = rng.uniform(0, height - h)
    return BBox(float(x), float(y), float(x + w), float(y + h))


def corrupt_labels(
    gt: AnnotationSet, drop_prob: float, jitter_sigma: float, fp_rate: float, seed: int
) -> AnnotationSet:
    """Noisy, incomplete copy of ``gt``.

    Each box is dropped with ``drop_prob``; survivors get Gaussian corner
    noise; a Poisson(``fp_rate``) number of random boxes is appended per
    image. Random draws are made for every box whether or not it is
    dropped, so changing one rate leaves the other perturbations intact.
    """
    if not 0 <= drop_prob <= 1:
        raise ValueError("drop_prob must lie in [0, 1]")
    out: dict[str, list[Detection]] = {}
    for i, info in enumerate(gt.images):
        rng = np.random.default_rng([seed, i])
        fp_rng = np.random.default_rng([seed, _FP, i])
        dets: list[Detection] = []
        for d in gt.get(info.id):
            u = rng.random()
            noise = rng.standard_normal(4)
            if u < drop_prob:
                continue
            box = _jittered(d.box, noise, jitter_sigma)
            box = clip(box, info.width, info.height) if box is not None else None
            if box is not None:
                dets.append(Detection(box, 1.0))
        for _ in range(int(fp_rng.poisson(fp_rate))):
            dets.append(Detection(_random_box(fp_rng, info.width, info.height), 1.0))
        out[info.id] = dets
    return AnnotationSet(list(gt.images), out)


def _layout_cells(rng: np.random.Generator, cfg: WorldConfig) -> list[tuple[float, float, float]]:
    n = int(rng.integers(cfg.min_cells, cfg.max_cells + 1))
    cells: list[tuple[float, float, float]] = []
    for _ in range(200 * n):
        if len(cells) == n:
            break
        r = rng.uniform(cfg.min_radius, cfg.max_radius)
        cx = rng.uniform(r + 1, cfg.width - r - 1)
        cy = rng.uniform(r + 1, cfg.height - r - 1)
        if all(math.hypot(cx - x, cy - y) > r + rr + 2 for x, y, rr in cells):
            cells.append((cx, cy, r))
    return cells


def render_cells(cells, width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Bright textured disks on a smooth, mildly noisy background."""
    yy, xx = np.mgrid[:height, :width] + 0.5
    background = 60.0 + 100.0 * gaussian_blur(rng.standard_normal((height, width)), 15, 15)
    img = background + 4.0 * rng.standard_normal((height, width))
    for cx, cy, r in cells:
        d = np.hypot(xx - cx, yy - cy)
        body = np.clip(r + 0.5 - d, 0.0, 1.0)
        texture = 20.0 * np.cos(d / 1.7) + 10.0 * rng.standard_normal((height, width))
        img = img + body * (110.0 + texture)
    return np.clip(img, 0.0, 255.0)


def make_world(
    cfg: WorldConfig = WorldConfig(),
    corruption: CorruptionConfig = CorruptionConfig(),
    seed: int = 7,
) -> SimWorld:
    images: list[ImageInfo] = []
    gt: dict[str, list[Detection]] = {}
    rasters: dict[str, np.ndarray] = {}
    for i in range(cfg.n_images):
        image_id = f"cl{i:03d}"
        cells = _layout_cells(np.random.default_rng([seed, _LAYOUT, i]), cfg)
        images.append(ImageInfo(image_id, cfg.width, cfg.height))
        gt[image_id] = [
            Detection(clip(BBox(cx - r, cy - r, cx + r, cy + r), cfg.width, cfg.height), 1.0)
            for cx, cy, r in cells
        ]
        rasters[image_id] = render_cells(cells, cfg.width, cfg.height, np.random.default_rng([seed, _RENDER, i]))
    hidden = AnnotationSet(images, gt)
    weak = corrupt_labels(hidden, corruption.drop_prob, corruption.jitter_sigma, corruption.fp_rate, seed)
    source_ids = [f"cp{i:03d}" for i in range(cfg.n_source)]
    return SimWorld(hidden, weak, rasters, seed, source_ids)


# -- simulated detector ------------------------------------------------------


def _view_seed(seed: int, epoch: int, idx: int, view: ViewTransform) -> list[int]:
    return [seed, _VIEW, epoch, idx, _FLIP_CODES[view.flip.value], int(round(view.scale * 1000))]


def sim_detect(
    world: SimWorld,
    cfg: SimDetectorConfig,
    epoch: int,
    image_id: str,
    view: ViewTransform = IDENTITY_VIEW,
    train_labels: AnnotationSet | None = None,
) -> list[Detection]:
    """Simulated detections for one image and view, in view coordinates.

    A hidden box is found once its fixed per-box difficulty drops below the
    current recall, so easy cells are found first and recall grows with
    the epoch. Found boxes get independent corner jitter per view and a
    score ``exp(-score_alpha * (1 - IoU))``. Past ``mem_epoch`` each found
    box is, with the memorization probability, replaced by the nearest
    training-label box; if no training label overlaps the cell the cell is
    not reported at all (the missing label has been learned). Training
    labels default to the world's weak labels.
    """
    if epoch < 1:
        raise ValueError("epoch must be >= 1")
    idx = world.index(image_id)
    info = world.hidden_gt.image(image_id)
    w, h = info.width, info.height
    truth = [d.box for d in world.hidden_gt.get(image_id)]
    labels = [d.box for d in (train_labels or world.weak_labels).get(image_id)]

    difficulty = np.random.default_rng([world.rng_seed, _LATENT, idx]).random(len(truth))
    recall = cfg.recall(epoch)
    p_mem = cfg.memorization(epoch)
    rng = np.random.default_rng(_view_seed(world.rng_seed, epoch, idx, view))

    label_arr = boxes_to_array(labels)
    out: list[Detection] = []
    for j, gt_box in enumerate(truth):
        noise = rng.standard_normal(4)
        m = rng.random()
        if difficulty[j] >= recall:
            continue
        box = _jittered(gt_box, noise, cfg.jitter_sigma)
        box = clip(box, w, h) if box is not None else None
        if box is None:
            continue
        if m < p_mem and len(labels):
            overlaps = iou_matrix(np.array([gt_box.as_tuple()]), label_arr)[0]
            if overlaps.max() <= 0:
                continue
            cx, cy = gt_box.center
            dist = [math.hypot(cx - b.center[0], cy - b.center[1]) for b in labels]
            box = labels[int(np.argmin(dist))]
        score = math.exp(-cfg.score_alpha * (1.0 - iou(box, gt_box)))
        out.append(Detection(apply_view(box, view, w, h), min(score, 1.0)))
    for _ in range(int(rng.poisson(cfg.fp_rate / 4))):
        box = _random_box(rng, w, h)
        score = float(rng.uniform(0.0, 0.5))
        out.append(Detection(apply_view(box, view, w, h), score))
    return out


class SimDetector:
    """Binds the simulator to one epoch so it satisfies the detector protocol."""

    def __init__(self, world: SimWorld, cfg: SimDetectorConfig, epoch: int, train_labels: AnnotationSet | None = None):
        self.world = world
        self.cfg = cfg
        self.epoch = epoch
        self.train_labels = train_labels

    def detect(self, image_id: str, view: ViewTransform) -> list[Detection]:
        return sim_detect(self.world, self.cfg, self.epoch, image_id, view, self.train_labels)


def predict_identity(world: SimWorld, cfg: SimDetectorConfig, epoch: int, train_labels=None) -> AnnotationSet:
    dets = {i: sim_detect(world, cfg, epoch, i, IDENTITY_VIEW, train_labels) for i in world.image_ids}
    return AnnotationSet(list(world.hidden_gt.images), dets)


# -- mixed batches -----------------------------------------------------------


def mixed_batches(
    target_ids: Sequence[str], source_ids: Sequence[str], batch_size: int, seed
) -> list[list[str]]:
    """One epoch of batches, each half target and half source images.

    Both sides are shuffled and drawn without replacement; the epoch lasts
    until the longer side is exhausted and the shorter side (and any
    final partial batch) is topped up by sampling with replacement.
    """
    if batch_size < 2 or batch_size % 2:
        raise ValueError(f"batch_size must be even and >= 2, got {batch_size}")
    if not target_ids or not source_ids:
        raise ValueError("both id lists must be non-empty")
    half = batch_size // 2
    rng = np.random.default_rng(seed)
    n_batches = math.ceil(max(len(target_ids), len(source_ids)) / half)

    def stream(ids: Sequence[str]) -> list[str]:
        order = [ids[i] for i in rng.permutation(len(ids))]
        extra = n_batches * half - len(order)
        if extra > 0:
            order += [ids[i] for i in rng.integers(0, len(ids), size=extra)]
        return order

    t = stream(target_ids)
    s = stream(source_ids)
    return [t[k * half : (k + 1) * half] + s[k * half : (k + 1) * half] for k in range(n_batches)]


# -- the loop ----------------------------------------------------------------


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    phase: str
    ap50_vs_weak: float
    f1: float
    precision: float
    recall: float
    n_labels: int
    n_batches: int
    synth_mad: float = float("nan")

    FIELDS = ("epoch", "phase", "ap50_vs_weak", "f1", "precision", "recall", "n_labels", "n_batches", "synth_mad")


@dataclass
class LoopState:
    epoch: int = 0
    phase: str = "early"
    current_labels: AnnotationSet | None = None
    curve: CurveSeries = field(default_factory=lambda: CurveSeries((), ()))
    history: list[EpochRecord] = field(default_factory=list)
    transition_epoch: int | None = None
    initial_f1: float = float("nan")
    warnings: list[str] = field(default_factory=list)
    snapshots: dict[int, AnnotationSet] = field(default_factory=dict)
    frames: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    def correction_records(self) -> list[EpochRecord]:
        return [r for r in self.history if r.phase == "semi_supervised"]


def run_self_training(
    world: SimWorld,
    det_cfg: SimDetectorConfig = SimDetectorConfig(),
    fusion_cfg: FusionConfig = FusionConfig(),
    blur: BlurStrength = BlurStrength.weak(),
    max_epochs: int = 12,
    threshold: float = 0.9,
    *,
    views: Sequence[ViewTransform] | None = None,
    accept_thr: float = DEFAULT_ACCEPT_THR,
    batch_size: int = 8,
    margin_px: int = 2,
    start_epoch: int | None = None,
    frame_ids: Sequence[str] | None = None,
    synthesize: bool = True,
) -> LoopState:
    """Run the full early-learning + correction loop.

    ``start_epoch`` forces correction to begin at a fixed epoch instead of
    the curve-based transition (the "stop on a fixed schedule" baseline).
    Synthetic frames are kept for ``frame_ids`` (default: first image).
    """
    if max_epochs < 3:
        raise ValueError("max_epochs must be >= 3")
    views = list(views) if views is not None else default_views()
    frame_ids = list(frame_ids) if frame_ids is not None else world.image_ids[:1]
    gt = world.hidden_gt
    state = LoopState(current_labels=world.weak_labels)
    state.initial_f1 = match_counts(world.weak_labels, gt).f1

    for epoch in range(1, max_epochs + 1):
        state.epoch = epoch
        batches = mixed_batches(world.image_ids, world.source_ids, batch_size, [world.rng_seed, _BATCH, epoch])
        preds = predict_identity(world, det_cfg, epoch, state.current_labels)
        ap50 = average_precision(preds, world.weak_labels, 0.5) if world.weak_labels.num_boxes() else 0.0
        synth_mad = float("nan")

        if state.phase == "early":
            state.curve = state.curve.append(epoch, ap50)
            if start_epoch is not None:
                triggered = epoch >= start_epoch
            else:
                triggered = transition_reached(state.curve, threshold)
            if triggered:
                state.phase = "semi_supervised"
                state.transition_epoch = epoch
                log.info("label correction starts at epoch %d", epoch)

        if state.phase == "semi_supervised":
            detector = SimDetector(world, det_cfg, epoch, state.current_labels)
            state.current_labels = correct_labels(state.current_labels, detector, views, fusion_cfg, accept_thr)
            if synthesize:
                diffs = []
                for image_id in world.image_ids:
                    original = world.images[image_id]
                    synth = compose_synthetic(original, state.current_labels.get(image_id), blur, margin_px)
                    diffs.append(float(np.abs(synth - original).mean()))
                    if image_id in frame_ids:
                        state.frames.setdefault(epoch, {})[image_id] = synth
                synth_mad = float(np.mean(diffs))
            state.snapshots[epoch] = state.current_labels

        counts = match_counts(state.current_labels, gt)
        state.history.append(
            EpochRecord(
                epoch=epoch,
                phase=state.phase,
                ap50_vs_weak=ap50,
                f1=counts.f1,
                precision=counts.precision,
                recall=counts.recall,
                n_labels=state.current_labels.num_boxes(),
                n_batches=len(batches),
                synth_mad=synth_mad,
            )
        )

    if state.transition_epoch is None:
        msg = f"no transition detected within {max_epochs} epochs; labels were never corrected"
        state.warnings.append(msg)
        log.warning(msg)
    return state
