"""PR curves, AP, LRP, and LRP-optimal thresholds.

Frozen expectations below are hand-derived; the derivations live in the
comments next to each constant.
"""
import math

import numpy as np
import pytest

from detaware import (
    BoundingBox,
    ClassUniverse,
    DegenerateInstance,
    Detection,
    DetectionSet,
    EmptyCurve,
    GroundTruth,
    GroundTruthSet,
    ImageRecord,
    average_precision,
    class_ap,
    coco_ap,
    dataset_ap,
    dataset_lrp,
    lrp,
    lrp_optimal_thresholds,
    match_class,
    pr_curve,
)


def det(score, x0=0.0, x1=10.0, image=1, cls=1):
    return Detection(image_id=image, class_id=cls, score=score,
                     box=BoundingBox(x0, 0.0, x1, 1.0))


def gt(x0=0.0, x1=10.0, image=1, cls=1):
    return GroundTruth(image_id=image, class_id=cls, box=BoundingBox(x0, 0.0, x1, 1.0))


def wrap(dets, gts, K=1):
    uni = ClassUniverse(K=K)
    images = tuple(
        ImageRecord(image_id=i)
        for i in sorted({r.image_id for r in dets} | {r.image_id for r in gts})
    )
    return (
        DetectionSet(universe=uni, records=tuple(dets)),
        GroundTruthSet(universe=uni, records=tuple(gts), images=images),
    )


def test_pr_curve_interpolation_respects_recall_plateaus():
    # labels [1, 0, 1], two gts:
    #   precision 1, 1/2, 2/3; recall 1/2, 1/2, 1
    # the first two entries share recall 1/2, so both interpolate to the
    # best precision at recall >= 1/2, which is 1 (not 2/3)
    curve = pr_curve((1, 0, 1), 2)
    assert np.allclose(curve.precision, [1.0, 0.5, 2 / 3])
    assert np.allclose(curve.recall, [0.5, 0.5, 1.0])
    assert np.allclose(curve.interpolated, [1.0, 1.0, 2 / 3])


def test_average_precision_exact_value():
    # AP = 0.5 * 1 + 0 * 1 + 0.5 * 2/3 = 5/6
    curve = pr_curve((1, 0, 1), 2)
    assert average_precision(curve) == pytest.approx(5 / 6, abs=1e-12)


def test_average_precision_101_grid():
    # grid points 0.00..0.50 read precision 1 (51 points), the rest 2/3
    curve = pr_curve((1, 0, 1), 2)
    expected = (51 * 1.0 + 50 * (2 / 3)) / 101
    assert average_precision(curve, grid_101=True) == pytest.approx(expected, abs=1e-12)


def test_pr_curve_empty_cases():
    with pytest.raises(EmptyCurve):
        pr_curve((), 0)
    curve = pr_curve((), 3)  # no detections, some gts
    assert average_precision(curve) == 0.0
    curve = pr_curve((0, 0), 0)  # detections, no gts: recall pinned to 0
    assert average_precision(curve) == 0.0


def test_class_ap_perfect_single_detection():
    dets, gts = wrap([det(0.9)], [gt()])
    assert class_ap(dets, gts, 1, 0.1) == 1.0


def test_coco_ap_strict_threshold_boundary():
    # det [0,7.5] inside gt [0,10]: IoU exactly 0.75; strict matching
    # makes it a TP for tau in {0.50..0.70} only: 5 of 10 thresholds
    dets, gts = wrap([det(0.9, 0, 7.5)], [gt()])
    assert coco_ap(dets, gts) == pytest.approx(0.5, abs=1e-12)


def test_lrp_value_and_components():
    # TPs with IoU 0.8 and 0.6, one far FP, tau 0.5:
    #   1 - lq = 1 - (iou - 0.5)/0.5 -> 0.4 and 0.8
    #   lrp = (1 + 0 + 1.2) / 3 = 2.2/3
    dets = [det(0.9, 0, 8), det(0.8, 0, 6, image=2), det(0.7, 100, 110, image=3)]
    gts = [gt(), gt(image=2)]
    a = match_class(dets, gts, 0.5)
    r = lrp(a)
    assert r.lrp == pytest.approx(2.2 / 3, abs=1e-9)
    assert r.lrp_loc == pytest.approx(0.3, abs=1e-9)  # mean(0.2, 0.4)
    assert r.lrp_fp == pytest.approx(1 / 3, abs=1e-12)
    assert r.lrp_fn == 0.0
    assert (r.n_tp, r.n_fp, r.n_fn) == (2, 1, 0)


def test_lrp_bounded_component_conventions():
    # no TPs at all: localisation component defined as 0
    a = match_class([det(0.9, 100, 110)], [gt()], 0.5)
    r = lrp(a)
    assert r.lrp_loc == 0.0
    assert r.lrp_fp == 1.0
    assert r.lrp_fn == 1.0
    assert r.lrp == 1.0


def test_lrp_degenerate_instance():
    with pytest.raises(DegenerateInstance):
        lrp(match_class([], [], 0.5))


def test_lrp_optimal_threshold_prefers_dropping_the_fp():
    # keep both: lrp (1 + 1/9)/2; keep top only: 1/9 -> threshold 0.9
    dets, gts = wrap([det(0.9, 0, 9), det(0.4, 100, 110, image=2)], [gt()])
    out = lrp_optimal_thresholds(dets, gts, 0.1)
    assert out[1] == 0.9


def test_lrp_optimal_threshold_all_fp_class_keeps_none():
    # every cutoff ties the keep-none baseline at lrp 1; inf wins the tie
    dets, gts = wrap([det(0.9, 100, 110), det(0.5, 200, 210)], [gt()])
    out = lrp_optimal_thresholds(dets, gts, 0.1)
    assert out[1] == math.inf


def test_lrp_optimal_threshold_missing_data_maps_to_inf():
    dets, gts = wrap([], [gt()])
    assert lrp_optimal_thresholds(dets, gts, 0.1)[1] == math.inf
    dets, gts = wrap([det(0.5)], [])
    assert lrp_optimal_thresholds(dets, gts, 0.1)[1] == math.inf


def test_lrp_optimal_threshold_grouped_equal_scores():
    # two dets share score 0.6; the cutoff keeps or drops them together
    dets, gts = wrap(
        [det(0.6, 0, 9), det(0.6, 100, 110, image=2), det(0.2, 200, 210, image=3)],
        [gt()],
    )
    out = lrp_optimal_thresholds(dets, gts, 0.1)
    assert out[1] == 0.6


def test_dataset_ap_skips_unevaluable_classes():
    dets, gts = wrap([det(0.9)], [gt()], K=3)
    mean, per_class = dataset_ap(dets, gts, 0.1)
    assert set(per_class) == {1}
    assert mean == 1.0


def test_dataset_ap_empty_everything():
    dets, gts = wrap([], [], K=2)
    mean, per_class = dataset_ap(dets, gts, 0.1)
    assert mean == 0.0 and per_class == {}


def test_dataset_lrp_class_with_gts_only():
    dets, gts = wrap([], [gt(cls=1), gt(image=2, cls=2)], K=2)
    mean, per_class = dataset_lrp(dets, gts, 0.1)
    assert per_class[1].lrp == 1.0 and per_class[2].lrp == 1.0
    assert mean == 1.0
