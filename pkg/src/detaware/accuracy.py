"""Precision-recall curves, average precision, and the LRP error.

AP integrates the all-points interpolated PR curve exactly; a 101-point
sampled variant is available behind a flag for cross-checks against
external tools.  LRP combines false positives, false negatives, and the
normalized localisation quality (iou - tau) / (1 - tau) of the true
positives into a single lower-is-better error in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datamodel import DetectionSet, GroundTruthSet, InputDataError
from .matching import DEFAULT_TAU, MatchAssignment, match_class

__all__ = [
    "EmptyCurve",
    "DegenerateInstance",
    "PRCurve",
    "LrpResult",
    "pr_curve",
    "average_precision",
    "class_ap",
    "dataset_ap",
    "coco_ap",
    "lrp",
    "dataset_lrp",
    "lrp_optimal_thresholds",
]

COCO_TAUS = tuple(t / 100 for t in range(50, 100, 5))


class EmptyCurve(InputDataError):
    """No detections and no ground truths: there is no curve."""


class DegenerateInstance(InputDataError):
    """LRP is undefined when there are no TPs, FPs, or FNs at all."""


@dataclass(frozen=True)
class PRCurve:
    """Per-rank PR values plus the interpolated envelope.

    The envelope arrays extend the curve with the two conventional
    endpoints: (recall 0, first interpolated precision) at the start and
    (final recall, precision 0) at the end.
    """

    precision: np.ndarray
    recall: np.ndarray
    interpolated: np.ndarray
    env_recall: np.ndarray
    env_precision: np.ndarray
    num_gt: int


def pr_curve(labels: Sequence[int], num_gt: int) -> PRCurve:
    """Build a PR curve from rank-ordered TP/FP labels.

    labels must already be sorted by descending score (1 = TP, 0 = FP);
    num_gt is the ground-truth count of the class.  Precision at rank i
    is the TP count so far over i; recall divides by num_gt.  The
    interpolated precision at rank i is the maximum precision over all
    ranks whose recall is at least recall_i.
    """
    if len(labels) == 0 and num_gt == 0:
        raise EmptyCurve("no detections and no ground truths")
    lab = np.asarray(labels, dtype=np.int64)
    if lab.size == 0:
        empty = np.zeros(0)
        return PRCurve(empty, empty, empty, empty.copy(), empty.copy(), num_gt)
    cum = np.cumsum(lab)
    ranks = np.arange(1, lab.size + 1, dtype=np.float64)
    precision = cum / ranks
    recall = cum / num_gt if num_gt > 0 else np.zeros(lab.size)
    suffix_max = np.maximum.accumulate(precision[::-1])[::-1]
    # ranks sharing a TP count share a recall value; interpolation spans
    # back to the first rank of each recall plateau
    first_at_recall = np.searchsorted(cum, cum, side="left")
    interpolated = suffix_max[first_at_recall]
    env_recall = np.concatenate(([0.0], recall, [recall[-1]]))
    env_precision = np.concatenate(([interpolated[0]], interpolated, [0.0]))
    return PRCurve(precision, recall, interpolated, env_recall, env_precision, num_gt)


def average_precision(curve: PRCurve, *, grid_101: bool = False) -> float:
    """Area under the interpolated step curve, in [0, 1].

    With grid_101 the area is replaced by the mean interpolated
    precision over the 101 recall points {0.00, 0.01, ..., 1.00}.
    """
    if curve.recall.size == 0:
        return 0.0
    if not grid_101:
        widths = np.diff(curve.recall, prepend=0.0)
        return float(np.sum(widths * curve.interpolated))
    grid = np.linspace(0.0, 1.0, 101)
    idx = np.searchsorted(curve.recall, grid, side="left")
    values = np.where(idx < curve.recall.size, curve.interpolated[np.minimum(idx, curve.recall.size - 1)], 0.0)
    return float(np.mean(values))


def class_ap(
    dets: DetectionSet, gts: GroundTruthSet, class_id: int, tau: float = DEFAULT_TAU,
    *, grid_101: bool = False,
) -> float:
    """AP of a single class at one IoU threshold, dataset-wide."""
    class_dets = dets.by_class(class_id)
    class_gts = gts.by_class(class_id)
    assignment = match_class(class_dets, class_gts, tau)
    curve = pr_curve(assignment.labels_in_rank_order(), len(class_gts))
    return average_precision(curve, grid_101=grid_101)


def _evaluable_classes(dets: DetectionSet, gts: GroundTruthSet) -> list[int]:
    # classes with neither ground truths nor detections are skipped
    return [
        c for c in dets.universe.class_ids
        if len(dets.by_class(c)) > 0 or len(gts.by_class(c)) > 0
    ]


def dataset_ap(
    dets: DetectionSet, gts: GroundTruthSet, tau: float = DEFAULT_TAU,
    *, grid_101: bool = False,
) -> tuple[float, dict[int, float]]:
    """Equal-weight class mean AP at one threshold, plus per-class values."""
    per_class = {
        c: class_ap(dets, gts, c, tau, grid_101=grid_101)
        for c in _evaluable_classes(dets, gts)
    }
    mean = sum(per_class.values()) / len(per_class) if per_class else 0.0
    return mean, per_class


def coco_ap(dets: DetectionSet, gts: GroundTruthSet, *, grid_101: bool = False) -> float:
    """AP averaged over the IoU thresholds 0.50, 0.55, ..., 0.95."""
    means = [dataset_ap(dets, gts, tau, grid_101=grid_101)[0] for tau in COCO_TAUS]
    return float(sum(means) / len(means))


@dataclass(frozen=True)
class LrpResult:
    """LRP error with its three components and the raw counts.

    lrp_loc is the average (1 - IoU) over TPs, lrp_fp is 1 - precision,
    lrp_fn is 1 - recall.  A component whose denominator is empty (no
    TPs, no detections, no ground truths respectively) is reported as 0.
    """

    lrp: float
    lrp_loc: float
    lrp_fp: float
    lrp_fn: float
    n_tp: int
    n_fp: int
    n_fn: int


def lrp(assignment: MatchAssignment) -> LrpResult:
    """LRP error of one matched class.

    lrp = (N_FP + N_FN + sum over TPs of (1 - lq)) / (N_FP + N_FN + N_TP)
    with lq = (iou - tau) / (1 - tau).  All-TP perfect overlap gives 0;
    no TPs at all gives 1.
    """
    n_tp, n_fp, n_fn = assignment.n_tp, assignment.n_fp, assignment.n_fn
    total = n_tp + n_fp + n_fn
    if total == 0:
        raise DegenerateInstance("no TP, FP, or FN: LRP undefined")
    tau = assignment.tau
    ious = assignment.tp_ious()
    one_minus_lq = sum(1.0 - (v - tau) / (1.0 - tau) for v in ious)
    value = (n_fp + n_fn + one_minus_lq) / total
    return LrpResult(
        lrp=value,
        lrp_loc=(sum(1.0 - v for v in ious) / n_tp) if n_tp else 0.0,
        lrp_fp=(n_fp / (n_tp + n_fp)) if (n_tp + n_fp) else 0.0,
        lrp_fn=(n_fn / (n_tp + n_fn)) if (n_tp + n_fn) else 0.0,
        n_tp=n_tp,
        n_fp=n_fp,
        n_fn=n_fn,
    )


def dataset_lrp(
    dets: DetectionSet, gts: GroundTruthSet, tau: float = DEFAULT_TAU
) -> tuple[float, dict[int, LrpResult]]:
    """Equal-weight class mean LRP with per-class results.

    Counts are pooled dataset-wide per class before the formula applies;
    classes with nothing to evaluate are skipped.
    """
    per_class: dict[int, LrpResult] = {}
    for c in _evaluable_classes(dets, gts):
        assignment = match_class(dets.by_class(c), gts.by_class(c), tau)
        per_class[c] = lrp(assignment)
    mean = sum(r.lrp for r in per_class.values()) / len(per_class) if per_class else 0.0
    return mean, per_class


def lrp_optimal_thresholds(
    dets: DetectionSet, gts: GroundTruthSet, tau: float = DEFAULT_TAU
) -> dict[int, float]:
    """Per-class score threshold minimizing the class LRP.

    Keeping detections means score >= threshold.  Candidates are the
    class's distinct scores plus +inf (keep none); ties resolve toward
    the larger threshold.  Classes with no detections, or nothing but
    false positives and no ground truths, map to +inf.
    """
    out: dict[int, float] = {}
    for c in dets.universe.class_ids:
        class_dets = dets.by_class(c)
        class_gts = gts.by_class(c)
        m = len(class_gts)
        if not class_dets or m == 0:
            out[c] = math.inf
            continue
        assignment = match_class(class_dets, class_gts, tau)
        order = assignment.processing_order
        scores = [class_dets[i].score for i in order]
        # greedy assignment of a score-ordered prefix equals the full
        # run truncated at the prefix, so one match covers every cutoff
        cum_tp = 0
        cum_one_minus_lq = 0.0
        best_v = math.inf
        best_lrp = 1.0  # keep-none baseline: every ground truth missed
        j = 0
        n = len(order)
        while j < n:
            v = scores[j]
            while j < n and scores[j] == v:
                match = assignment.det_matches[order[j]]
                if match.is_tp:
                    cum_tp += 1
                    cum_one_minus_lq += 1.0 - (match.iou - tau) / (1.0 - tau)
                j += 1
            n_fp = j - cum_tp
            n_fn = m - cum_tp
            value = (n_fp + n_fn + cum_one_minus_lq) / (n_fp + n_fn + cum_tp)
            if value < best_lrp:
                best_lrp = value
                best_v = v
        out[c] = best_v
    return out
