"""Localisation-aware calibration error, reliability data, and calibrators.

A class's detections are binned by confidence into J equal intervals.
Within a bin the target performance is precision times the mean IoU of
the bin's true positives (zero when the bin holds no TP), and the class
calibration error is the detection-weighted mean absolute gap between
bin confidence and bin performance.  Calibrators map raw confidence to
calibrated confidence per class and are trained on pairs of confidence
and target, where the target is the matched IoU for a TP and 0 for a FP.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .datamodel import (
    Detection,
    DetectionSet,
    GroundTruthSet,
    InputDataError,
    iou as _box_iou,
)
from .matching import DEFAULT_TAU, MatchAssignment, match_class

__all__ = [
    "NoDetections",
    "MissingClassModel",
    "DEFAULT_BINS",
    "BinStats",
    "CalibratorModel",
    "ReliabilityDiagram",
    "class_bin_stats",
    "laece_class",
    "laece",
    "laece_per_class",
    "calibration_targets",
    "fit_calibrator",
    "apply_calibrator",
    "reliability_diagram",
    "calibrator_to_json_obj",
    "calibrator_from_json_obj",
    "save_calibrator",
    "load_calibrator",
    "write_reliability_csv",
]

DEFAULT_BINS = 25
CALIBRATOR_KINDS = ("HB", "LR", "IR")


class NoDetections(InputDataError):
    """The class has no detections, so its calibration error is undefined."""


class MissingClassModel(InputDataError):
    """The calibrator does not cover a class present in the detections."""


def bin_of(score: float, J: int) -> int:
    """Index of the half-open bin [j/J, (j+1)/J); score 1.0 joins the top bin."""
    return min(int(score * J), J - 1)


@dataclass(frozen=True)
class BinStats:
    """Per-bin statistics of one class's detections.

    Arrays have length J.  mean_conf and precision are NaN for empty
    bins; mean_tp_iou is NaN for bins without TPs.  performance is
    precision * mean_tp_iou, with TP-free (but occupied) bins pinned to
    0 because zero precision annihilates the IoU term.
    """

    J: int
    count: np.ndarray
    mean_conf: np.ndarray
    precision: np.ndarray
    mean_tp_iou: np.ndarray
    performance: np.ndarray


def class_bin_stats(
    scores: Sequence[float], tp_flags: Sequence[bool], ious: Sequence[float], J: int
) -> BinStats:
    """Bin one class's detections by confidence."""
    count = np.zeros(J, dtype=np.int64)
    conf_sum = np.zeros(J)
    tp_count = np.zeros(J, dtype=np.int64)
    iou_sum = np.zeros(J)
    for s, is_tp, ov in zip(scores, tp_flags, ious):
        j = bin_of(s, J)
        count[j] += 1
        conf_sum[j] += s
        if is_tp:
            tp_count[j] += 1
            iou_sum[j] += ov
    occupied = count > 0
    has_tp = tp_count > 0
    mean_conf = np.full(J, math.nan)
    precision = np.full(J, math.nan)
    mean_tp_iou = np.full(J, math.nan)
    performance = np.full(J, math.nan)
    mean_conf[occupied] = conf_sum[occupied] / count[occupied]
    precision[occupied] = tp_count[occupied] / count[occupied]
    mean_tp_iou[has_tp] = iou_sum[has_tp] / tp_count[has_tp]
    performance[occupied] = 0.0
    performance[has_tp] = precision[has_tp] * mean_tp_iou[has_tp]
    return BinStats(J, count, mean_conf, precision, mean_tp_iou, performance)


def _assignment_arrays(
    dets: Sequence[Detection], assignment: MatchAssignment
) -> tuple[list[float], list[bool], list[float]]:
    scores = [d.score for d in dets]
    tp_flags = [m.is_tp for m in assignment.det_matches]
    ious = [m.iou for m in assignment.det_matches]
    return scores, tp_flags, ious


def laece_class(
    dets: Sequence[Detection], assignment: MatchAssignment, J: int = DEFAULT_BINS
) -> float:
    """Calibration error of one class: detection-weighted mean |conf - perf|."""
    if len(dets) == 0:
        raise NoDetections("class has no detections")
    stats = class_bin_stats(*_assignment_arrays(dets, assignment), J)
    total = int(stats.count.sum())
    occupied = stats.count > 0
    gaps = np.abs(stats.mean_conf[occupied] - stats.performance[occupied])
    return float(np.sum(stats.count[occupied] / total * gaps))


def laece(
    dets: DetectionSet, gts: GroundTruthSet, tau: float = DEFAULT_TAU, J: int = DEFAULT_BINS
) -> float:
    """Unweighted mean of the class calibration errors.

    Classes without detections are excluded; an entirely empty detection
    set yields 0.0 (nothing measurable is miscalibrated).
    """
    values = []
    for c in dets.universe.class_ids:
        class_dets = dets.by_class(c)
        if not class_dets:
            continue
        assignment = match_class(class_dets, gts.by_class(c), tau)
        values.append(laece_class(class_dets, assignment, J))
    return float(sum(values) / len(values)) if values else 0.0


def laece_per_class(
    dets: DetectionSet, gts: GroundTruthSet, tau: float = DEFAULT_TAU, J: int = DEFAULT_BINS
) -> dict[int, float]:
    """Per-class calibration errors, restricted to classes with detections."""
    out: dict[int, float] = {}
    for c in dets.universe.class_ids:
        class_dets = dets.by_class(c)
        if not class_dets:
            continue
        assignment = match_class(class_dets, gts.by_class(c), tau)
        out[c] = laece_class(class_dets, assignment, J)
    return out


def calibration_targets(assignment: MatchAssignment) -> np.ndarray:
    """Per-detection training target: matched IoU for a TP, 0 for a FP.

    Aligned with the detection order handed to match_class; uses the raw
    IoU, not the normalized localisation quality.
    """
    return np.array([m.iou if m.is_tp else 0.0 for m in assignment.det_matches])


@dataclass(frozen=True)
class CalibratorModel:
    """Fitted per-class confidence map of one kind (HB, LR, or IR).

    HB parameters: {"values": [J floats or None for empty bins]} where an
    empty bin leaves the score unchanged.  LR: {"slope", "intercept"},
    output clamped to [0, 1].  IR: {"x": knots, "y": non-decreasing
    values}; empty knots mean identity.
    """

    kind: str
    classes: Mapping[int, dict]

    def apply_one(self, class_id: int, score: float) -> float:
        if class_id not in self.classes:
            raise MissingClassModel(f"no model for class {class_id}")
        params = self.classes[class_id]
        if self.kind == "HB":
            value = params["values"][bin_of(score, len(params["values"]))]
            return score if value is None else value
        if self.kind == "LR":
            return min(1.0, max(0.0, params["slope"] * score + params["intercept"]))
        x, y = params["x"], params["y"]
        if not x:
            return score
        idx = np.searchsorted(x, score, side="right") - 1
        return float(y[max(idx, 0)])


def _fit_hb(conf: np.ndarray, target: np.ndarray, J: int) -> dict:
    values: list = [None] * J
    sums = np.zeros(J)
    counts = np.zeros(J, dtype=np.int64)
    for p, t in zip(conf, target):
        j = bin_of(float(p), J)
        sums[j] += t
        counts[j] += 1
    for j in range(J):
        if counts[j]:
            values[j] = float(sums[j] / counts[j])
    return {"values": values}


def _fit_lr(conf: np.ndarray, target: np.ndarray) -> dict:
    mp = float(np.mean(conf))
    var = float(np.mean((conf - mp) ** 2))
    if var == 0.0:
        return {"slope": 0.0, "intercept": float(np.mean(target))}
    slope = float(np.mean((conf - mp) * (target - np.mean(target))) / var)
    return {"slope": slope, "intercept": float(np.mean(target) - slope * mp)}


def _fit_ir(conf: np.ndarray, target: np.ndarray) -> dict:
    order = np.argsort(conf, kind="stable")
    x = conf[order]
    t = target[order]
    # collapse ties in x to their mean target, keeping multiplicity
    ux, start = np.unique(x, return_index=True)
    sums = np.add.reduceat(t, start)
    weights = np.diff(np.append(start, t.size)).astype(float)
    y = sums / weights
    # pool adjacent violators until the sequence is non-decreasing
    vals: list[float] = []
    wts: list[float] = []
    cnts: list[int] = []
    for v, w in zip(y, weights):
        vals.append(float(v))
        wts.append(float(w))
        cnts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            tot = wts[-2] + wts[-1]
            vals[-2] = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / tot
            wts[-2] = tot
            cnts[-2] += cnts[-1]
            del vals[-1], wts[-1], cnts[-1]
    fitted = np.repeat(vals, cnts)
    fitted = np.clip(fitted, 0.0, 1.0)
    return {"x": [float(v) for v in ux], "y": [float(v) for v in fitted]}


_IDENTITY = {
    "HB": lambda J: {"values": [None] * J},
    "LR": lambda J: {"slope": 1.0, "intercept": 0.0},
    "IR": lambda J: {"x": [], "y": []},
}


def fit_calibrator(
    kind: str,
    pairs: Mapping[int, tuple[Sequence[float], Sequence[float]]],
    class_ids: Sequence[int],
    J: int = DEFAULT_BINS,
) -> CalibratorModel:
    """Fit one calibrator per class from (confidence, target) pairs.

    Every id in class_ids receives a model; classes with no pairs fall
    back to the identity map.
    """
    if kind not in CALIBRATOR_KINDS:
        raise ValueError(f"unknown calibrator kind {kind!r}")
    models: dict[int, dict] = {}
    for c in class_ids:
        conf_t = pairs.get(c)
        if conf_t is None or len(conf_t[0]) == 0:
            models[c] = _IDENTITY[kind](J)
            continue
        conf = np.asarray(conf_t[0], dtype=float)
        target = np.asarray(conf_t[1], dtype=float)
        if kind == "HB":
            models[c] = _fit_hb(conf, target, J)
        elif kind == "LR":
            models[c] = _fit_lr(conf, target)
        else:
            models[c] = _fit_ir(conf, target)
    return CalibratorModel(kind=kind, classes=models)


def apply_calibrator(model: CalibratorModel, dets: DetectionSet) -> DetectionSet:
    """Replace every score by its calibrated value; order and boxes stay."""
    return dets.with_scores(
        [model.apply_one(d.class_id, d.score) for d in dets.records]
    )


@dataclass(frozen=True)
class ReliabilityDiagram:
    """Class-averaged per-bin confidence and performance bars.

    Arrays have length J; bins no class occupies carry NaN and a zero
    class count (they draw no bar).
    """

    J: int
    mean_conf: np.ndarray
    mean_perf: np.ndarray
    n_classes: np.ndarray

    @property
    def bin_edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.J + 1)


def reliability_diagram(
    dets: DetectionSet, gts: GroundTruthSet, tau: float = DEFAULT_TAU, J: int = DEFAULT_BINS
) -> ReliabilityDiagram:
    """Reliability bars averaged with equal weight over occupying classes."""
    conf_acc = np.zeros(J)
    perf_acc = np.zeros(J)
    n_classes = np.zeros(J, dtype=np.int64)
    for c in dets.universe.class_ids:
        class_dets = dets.by_class(c)
        if not class_dets:
            continue
        assignment = match_class(class_dets, gts.by_class(c), tau)
        stats = class_bin_stats(*_assignment_arrays(class_dets, assignment), J)
        occupied = stats.count > 0
        conf_acc[occupied] += stats.mean_conf[occupied]
        perf_acc[occupied] += stats.performance[occupied]
        n_classes[occupied] += 1
    mean_conf = np.full(J, math.nan)
    mean_perf = np.full(J, math.nan)
    drawn = n_classes > 0
    mean_conf[drawn] = conf_acc[drawn] / n_classes[drawn]
    mean_perf[drawn] = perf_acc[drawn] / n_classes[drawn]
    return ReliabilityDiagram(J, mean_conf, mean_perf, n_classes)


def calibrator_to_json_obj(model: CalibratorModel) -> dict:
    return {"kind": model.kind, "classes": {str(c): p for c, p in model.classes.items()}}


def calibrator_from_json_obj(obj: dict) -> CalibratorModel:
    kind = obj.get("kind")
    if kind not in CALIBRATOR_KINDS:
        raise ValueError(f"unknown calibrator kind {kind!r}")
    return CalibratorModel(
        kind=kind, classes={int(c): p for c, p in obj.get("classes", {}).items()}
    )


def save_calibrator(model: CalibratorModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(calibrator_to_json_obj(model), fh, sort_keys=True)


def load_calibrator(path) -> CalibratorModel:
    with open(path, "r", encoding="utf-8") as fh:
        return calibrator_from_json_obj(json.load(fh))


def write_reliability_csv(diagram: ReliabilityDiagram, path) -> None:
    """One row per bin: bin_low, bin_high, mean_conf, mean_perf, n_classes."""
    edges = diagram.bin_edges
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "mean_conf", "mean_perf", "n_classes"])
        for j in range(diagram.J):
            writer.writerow(
                [
                    repr(float(edges[j])),
                    repr(float(edges[j + 1])),
                    repr(float(diagram.mean_conf[j])),
                    repr(float(diagram.mean_perf[j])),
                    int(diagram.n_classes[j]),
                ]
            )
