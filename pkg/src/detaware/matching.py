"""Greedy score-ordered assignment of detections to ground truths.

Detections of one class are processed in descending score order (ties
keep input order).  A detection becomes a true positive when some
unassigned ground truth in the same image overlaps it with IoU strictly
above tau; among eligible ground truths the largest IoU wins, and exact
IoU ties go to the lowest ground-truth index.  Everything downstream
(PR curves, LRP, calibration) consumes the resulting assignment.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .datamodel import ConfigurationError, Detection, GroundTruth, iou

__all__ = ["InvalidTau", "DetectionMatch", "MatchAssignment", "match_class"]

DEFAULT_TAU = 0.10


class InvalidTau(ConfigurationError):
    """IoU threshold outside the accepted range [0, 1)."""


@dataclass(frozen=True)
class DetectionMatch:
    """Outcome for one detection: TP with an assigned GT, or FP."""

    is_tp: bool
    gt_index: Optional[int]
    """Index into the ground-truth sequence given to match_class; None for FP."""
    iou: float
    """Overlap with the assigned ground truth; 0.0 for FP."""


@dataclass(frozen=True)
class MatchAssignment:
    """Full matching result for one class at one IoU threshold."""

    tau: float
    det_matches: tuple[DetectionMatch, ...]
    """Aligned with the input detection order."""
    gt_matched: tuple[bool, ...]
    processing_order: tuple[int, ...]
    """Detection indices sorted by descending score (ties: input order)."""
    n_tp: int
    n_fp: int
    n_fn: int

    def labels_in_rank_order(self) -> tuple[int, ...]:
        """1 for TP and 0 for FP, ordered by descending score."""
        return tuple(1 if self.det_matches[i].is_tp else 0 for i in self.processing_order)

    def tp_ious(self) -> tuple[float, ...]:
        """IoU values of the true positives, ordered by descending score."""
        return tuple(
            self.det_matches[i].iou for i in self.processing_order if self.det_matches[i].is_tp
        )


def match_class(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], tau: float = DEFAULT_TAU
) -> MatchAssignment:
    """Match same-class detections against same-class ground truths.

    Both sequences may span many images; assignment never crosses image
    boundaries.  tau must lie in [0, 1); the match criterion is strict
    (IoU equal to tau is a miss).
    """
    if not 0.0 <= tau < 1.0:
        raise InvalidTau(f"tau {tau} outside [0, 1)")
    classes = {r.class_id for r in dets} | {r.class_id for r in gts}
    if len(classes) > 1:
        raise ValueError(f"records span classes {sorted(classes)}; one class expected")

    gt_by_image: dict[int, list[int]] = {}
    for j, gt in enumerate(gts):
        gt_by_image.setdefault(gt.image_id, []).append(j)

    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    matched = [False] * len(gts)
    results: list[Optional[DetectionMatch]] = [None] * len(dets)
    n_tp = 0
    for i in order:
        det = dets[i]
        best_j = -1
        best_iou = tau  # only strictly larger overlaps are eligible
        for j in gt_by_image.get(det.image_id, ()):
            if matched[j]:
                continue
            ov = iou(det.box, gts[j].box)
            if ov > best_iou:
                best_iou = ov
                best_j = j
        if best_j >= 0:
            matched[best_j] = True
            results[i] = DetectionMatch(is_tp=True, gt_index=best_j, iou=best_iou)
            n_tp += 1
        else:
            results[i] = DetectionMatch(is_tp=False, gt_index=None, iou=0.0)

    return MatchAssignment(
        tau=tau,
        det_matches=tuple(results),  # type: ignore[arg-type]
        gt_matched=tuple(matched),
        processing_order=tuple(order),
        n_tp=n_tp,
        n_fp=len(dets) - n_tp,
        n_fn=len(gts) - n_tp,
    )
