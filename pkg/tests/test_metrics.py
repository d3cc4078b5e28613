from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_set, random_box
from oracles import ap_by_threshold_enumeration, box_iou
from relabel.errors import NoGroundTruthError, UnknownImageError
from relabel.geometry import BBox, Detection
from relabel.metrics import (
    COCO_IOU_THRESHOLDS,
    average_precision,
    average_recall,
    coco_ap,
    evaluate,
    interpolated_ap,
    match_counts,
    match_greedy,
)


def random_instance(rng, max_boxes=20, n_images=2):
    """Random predictions/GT with distinct scores; preds are GT-jittered or random."""
    gts, preds = {}, {}
    n_total = int(rng.integers(1, max_boxes + 1))
    for i in range(n_images):
        n_gt = int(rng.integers(1 if i == 0 else 0, max(2, n_total // n_images + 1)))
        g = [random_box(rng) for _ in range(n_gt)]
        p = []
        for b in g:
            if rng.random() < 0.7:
                d = rng.normal(0, 3, 4)
                x1, y1 = b.x1 + d[0], b.y1 + d[1]
                p.append((x1, y1, max(b.x2 + d[2], x1 + 1), max(b.y2 + d[3], y1 + 1)))
        p += [random_box(rng).as_tuple() for _ in range(int(rng.integers(0, 4)))]
        gts[f"im{i}"] = [b.as_tuple() for b in g]
        preds[f"im{i}"] = p
    n_pred = sum(len(v) for v in preds.values())
    scores = iter(rng.permutation(n_pred) / max(n_pred, 1) * 0.98 + 0.01)
    preds = {k: [(*b, float(next(scores))) for b in v] for k, v in preds.items()}
    return preds, gts


def to_sets(preds, gts):
    return make_set(preds, (200, 200)), make_set(gts, (200, 200))


def oracle_ap(preds, gts, thr):
    return ap_by_threshold_enumeration(
        {k: [(b[:4], b[4]) for b in v] for k, v in preds.items()}, gts, thr
    )


def test_match_examples():
    gt = [BBox(0, 0, 10, 10)]
    assert match_greedy([Detection(BBox(0, 0, 10, 10), 0.9)], gt, 0.5) == [0]
    two = [Detection(BBox(0, 0, 10, 10), 0.8), Detection(BBox(0, 0, 10, 10), 0.9)]
    assert match_greedy(two, gt, 0.5) == [None, 0]
    # IoU 0.4 < 0.5: (0,0,10,10) vs (0,0,4,10) has IoU 40/100
    assert match_greedy([Detection(BBox(0, 0, 4, 10), 0.9)], gt, 0.5) == [None]


def test_match_prefers_highest_iou_gt():
    gts = [BBox(0, 0, 10, 10), BBox(1, 0, 11, 10)]
    assert match_greedy([Detection(BBox(1, 0, 11, 10), 0.9)], gts, 0.5) == [1]


def test_match_ties_keep_input_order():
    gt = [BBox(0, 0, 10, 10)]
    dets = [Detection(BBox(0, 0, 10, 10), 0.5), Detection(BBox(0, 0, 10, 10), 0.5)]
    assert match_greedy(dets, gt, 0.5) == [0, None]


def test_match_rejects_bad_threshold():
    with pytest.raises(ValueError):
        match_greedy([], [], 0.0)


def test_two_gt_one_tp_one_fp_is_51_over_101():
    gts = make_set({"a": [(0, 0, 10, 10), (50, 50, 60, 60)]})
    preds = make_set({"a": [(0, 0, 10, 10, 0.9), (20, 20, 30, 30, 0.8)]})
    assert average_precision(preds, gts, 0.5) == pytest.approx(51 / 101, abs=1e-12)


def test_perfect_and_empty_predictions():
    gts = make_set({"a": [(0, 0, 10, 10), (50, 50, 60, 60)], "b": [(5, 5, 25, 25)]})
    rep = evaluate(gts, gts)
    assert (rep.ap50, rep.ap75, rep.ap, rep.ar) == (1.0, 1.0, 1.0, 1.0)
    empty = gts.empty_like()
    assert evaluate(empty, gts).as_dict() == {"ap50": 0.0, "ap75": 0.0, "ap": 0.0, "ar": 0.0}


def test_no_ground_truth_raises():
    gts = make_set({"a": []})
    with pytest.raises(NoGroundTruthError):
        average_precision(gts, gts, 0.5)
    with pytest.raises(NoGroundTruthError):
        coco_ap(gts, gts)
    with pytest.raises(NoGroundTruthError):
        average_recall(gts, gts)


def test_unknown_image_raises():
    gts = make_set({"a": [(0, 0, 10, 10)]})
    preds = make_set({"zz": [(0, 0, 10, 10)]})
    with pytest.raises(UnknownImageError, match="zz"):
        evaluate(preds, gts)


def test_ap_matches_threshold_enumeration_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        preds, gts = random_instance(rng)
        p, g = to_sets(preds, gts)
        for thr in (0.5, 0.75):
            assert average_precision(p, g, thr) == pytest.approx(oracle_ap(preds, gts, thr), abs=1e-9)


def test_coco_ap_is_mean_of_thresholds():
    rng = np.random.default_rng(5)
    preds, gts = random_instance(rng, max_boxes=10, n_images=1)
    p, g = to_sets(preds, gts)
    aps = [average_precision(p, g, t) for t in COCO_IOU_THRESHOLDS]
    assert coco_ap(p, g) == sum(aps) / 10
    assert COCO_IOU_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def test_average_recall_half_covered():
    gts = make_set({"a": [(0, 0, 10, 10), (50, 50, 60, 60)], "b": [(0, 0, 20, 20), (40, 40, 60, 60)]})
    preds = make_set({"a": [(0, 0, 10, 10)], "b": [(40, 40, 60, 60)]})
    assert average_recall(preds, gts) == pytest.approx(0.5, abs=1e-15)


def test_average_recall_caps_at_100_per_image():
    gts = make_set({"a": [(500, 500, 510, 510)]}, (1000, 1000))
    boxes = [(i * 3, 0, i * 3 + 2, 2, 1.0 - i / 1000) for i in range(150)]
    boxes[119] = (500, 500, 510, 510, 1.0 - 119 / 1000)
    preds = make_set({"a": boxes}, (1000, 1000))
    assert average_recall(preds, gts) == 0.0
    # AP is not capped: the 120th prediction still counts
    assert average_precision(preds, gts, 0.5) > 0


def test_match_counts():
    gts = make_set({"a": [(0, 0, 10, 10), (50, 50, 60, 60)]})
    labels = make_set({"a": [(0, 0, 10, 10), (20, 20, 30, 30), (21, 20, 30, 30)]})
    c = match_counts(labels, gts)
    assert (c.tp, c.n_pred, c.n_gt) == (1, 3, 2)
    assert c.f1 == pytest.approx(2 / 5)
    assert match_counts(gts.empty_like(), gts.empty_like()).f1 == 1.0


def test_interpolated_ap_direct():
    assert interpolated_ap(np.array([], dtype=bool), 3) == 0.0
    assert interpolated_ap(np.array([True, True]), 2) == 1.0
    # FP first then TP: precision 0.5 at recall 1
    assert interpolated_ap(np.array([False, True]), 1) == pytest.approx(0.5)


@given(st.integers(0, 10_000))
def test_metric_properties(seed):
    rng = np.random.default_rng(seed)
    preds, gts = random_instance(rng, max_boxes=12)
    p, g = to_sets(preds, gts)
    rep = evaluate(p, g)
    for v in rep.as_dict().values():
        assert 0.0 <= v <= 1.0

    # adding a perfect, top-scoring prediction for a GT no other prediction
    # can reach never lowers AP
    for thr in (0.5, 0.75):
        free = [(k, b) for k, v in gts.items() for b in v if not _reachable(preds[k], b, thr)]
        if not free:
            continue
        img, box = free[0]
        extra = {k: list(v) for k, v in preds.items()}
        extra[img].append((*box, 1.0))
        after = average_precision(make_set(extra, (200, 200)), g, thr)
        assert after >= average_precision(p, g, thr) - 1e-12

    # removing false positives never lowers AP
    for thr in (0.5, 0.75):
        cleaned = _drop_false_positives(p, g, thr)
        assert average_precision(cleaned, g, thr) >= average_precision(p, g, thr) - 1e-12


def _reachable(preds, gt_box, thr):
    return any(box_iou(b[:4], gt_box) >= thr for b in preds)


def _drop_false_positives(p, g, thr):
    updates = {}
    for im in g.image_ids:
        dets = p.get(im)
        m = match_greedy(dets, [d.box for d in g.get(im)], thr)
        updates[im] = [d for d, j in zip(dets, m) if j is not None]
    return p.replaced(updates)
