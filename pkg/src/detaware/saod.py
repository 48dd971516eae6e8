"""The self-aware pipeline and its composite evaluation.

A self-aware configuration bundles an image-level acceptance threshold,
per-class detection score thresholds, and a fitted calibrator.
Inference either rejects an image outright (empty detection set) or
keeps the detections above their class threshold with calibrated
scores.  The composite evaluation scores acceptance (BA between ID and
OOD splits), in-distribution quality (IDQ, the harmonic mean of 1-LRP
and 1-LaECE), robustness under corruption (IDQ_T), and their harmonic
mean DAQ.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from .accuracy import LrpResult, dataset_lrp, lrp_optimal_thresholds
from .calibration import (
    DEFAULT_BINS,
    CalibratorModel,
    MissingClassModel,
    calibration_targets,
    calibrator_from_json_obj,
    calibrator_to_json_obj,
    fit_calibrator,
    laece,
)
from .datamodel import (
    Detection,
    DetectionSet,
    GroundTruthSet,
    InputDataError,
)
from .matching import DEFAULT_TAU, match_class
from .uncertainty import (
    EmptySplit,
    OodDecisionStats,
    aggregate,
    balanced_accuracy,
    select_threshold_ba,
    uncertainty_score,
)

__all__ = [
    "SplitOverlap",
    "MissingSeverity",
    "MissingDecisions",
    "SelfAwareConfig",
    "SaodReport",
    "harmonic_mean",
    "compose_idq",
    "daq",
    "make_self_aware",
    "self_aware_inference",
    "idq",
    "idq_t",
    "evaluate_saod",
    "config_to_json_obj",
    "config_from_json_obj",
    "save_self_aware_config",
    "load_self_aware_config",
    "report_to_json_obj",
    "report_table",
]


class SplitOverlap(InputDataError):
    """A detection file references an image belonging to another split."""


class MissingSeverity(InputDataError):
    """A corrupted image does not carry its severity level."""


class MissingDecisions(InputDataError):
    """An image in the evaluation pool has no accept/reject decision."""


@dataclass(frozen=True)
class SelfAwareConfig:
    """Everything inference needs: thresholds, calibrator, aggregation."""

    image_threshold: float
    detection_thresholds: Mapping[int, float]
    """Per-class score cutoffs; +inf means the class keeps nothing."""
    calibrator: CalibratorModel
    aggregation: str = "top_3"
    val_stats: Optional[OodDecisionStats] = None
    """Decision rates observed on the validation pseudo splits."""


def harmonic_mean(values: Sequence[float]) -> float:
    """Harmonic mean, defined as 0 when any argument is 0 (or below)."""
    if any(v <= 0.0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


def compose_idq(lrp_value: float, laece_value: float) -> float:
    """Harmonic mean of 1 - LRP and 1 - LaECE."""
    return harmonic_mean((1.0 - lrp_value, 1.0 - laece_value))


def daq(ba: float, idq_value: float, idq_t_value: float) -> float:
    """Harmonic mean of BA, IDQ, and IDQ_T."""
    return harmonic_mean((ba, idq_value, idq_t_value))


def make_self_aware(
    val_dets: DetectionSet,
    val_gts: GroundTruthSet,
    pseudo_ood_dets: DetectionSet,
    tau: float = DEFAULT_TAU,
    J: int = DEFAULT_BINS,
    aggregation: str = "top_3",
    calibrator_kind: str = "LR",
) -> SelfAwareConfig:
    """Derive thresholds and a calibrator from validation data.

    The image threshold maximizes balanced accuracy between the
    validation images and their pseudo-OOD twins (detections on copies
    whose labeled regions were blanked out).  Detection thresholds
    minimize per-class LRP, and the calibrator trains on the detections
    surviving those thresholds.
    """
    image_ids = val_gts.image_ids()
    if not image_ids:
        raise EmptySplit("validation set holds no images")
    id_values = [
        aggregate([uncertainty_score(d) for d in val_dets.by_image(iid)], aggregation).value
        for iid in image_ids
    ]
    pseudo_values = [
        aggregate([uncertainty_score(d) for d in pseudo_ood_dets.by_image(iid)], aggregation).value
        for iid in image_ids
    ]
    threshold, stats = select_threshold_ba(id_values, pseudo_values)
    det_thresholds = lrp_optimal_thresholds(val_dets, val_gts, tau)

    surviving = DetectionSet(
        universe=val_dets.universe,
        records=tuple(
            d for d in val_dets.records if d.score >= det_thresholds[d.class_id]
        ),
    )
    pairs: dict[int, tuple[list[float], list[float]]] = {}
    for c in surviving.universe.class_ids:
        class_dets = surviving.by_class(c)
        if not class_dets:
            continue
        assignment = match_class(class_dets, val_gts.by_class(c), tau)
        targets = calibration_targets(assignment)
        pairs[c] = ([d.score for d in class_dets], [float(t) for t in targets])
    calibrator = fit_calibrator(calibrator_kind, pairs, list(val_dets.universe.class_ids), J)

    return SelfAwareConfig(
        image_threshold=threshold,
        detection_thresholds=det_thresholds,
        calibrator=calibrator,
        aggregation=aggregation,
        val_stats=stats,
    )


def self_aware_inference(
    config: SelfAwareConfig, dets: Sequence[Detection]
) -> tuple[bool, tuple[Detection, ...]]:
    """Accept or reject one image and produce its final detections.

    Rejection returns an empty tuple.  Acceptance keeps detections whose
    score reaches their class threshold and replaces every kept score by
    its calibrated value.
    """
    g = aggregate([uncertainty_score(d) for d in dets], config.aggregation)
    if not g.value < config.image_threshold:
        return False, ()
    kept = []
    for d in dets:
        if d.class_id not in config.detection_thresholds:
            raise MissingClassModel(f"no detection threshold for class {d.class_id}")
        if d.score >= config.detection_thresholds[d.class_id]:
            kept.append(replace(d, score=config.calibrator.apply_one(d.class_id, d.score)))
    return True, tuple(kept)


def idq(
    survivors: DetectionSet,
    gts: GroundTruthSet,
    image_ids: Sequence[int],
    tau: float = DEFAULT_TAU,
    J: int = DEFAULT_BINS,
) -> tuple[float, float, float]:
    """(IDQ, LaECE, LRP) over an image pool.

    survivors holds the final detections of the accepted images; a
    rejected image simply contributes no detections, so its ground
    truths surface as false negatives in LRP while LaECE sees nothing.
    """
    pool = survivors.subset(image_ids)
    sub_gts = gts.subset(image_ids)
    lrp_mean, _ = dataset_lrp(pool, sub_gts, tau)
    laece_value = laece(pool, sub_gts, tau, J)
    return compose_idq(lrp_mean, laece_value), laece_value, lrp_mean


def idq_t(
    survivors: DetectionSet,
    decisions: Mapping[int, bool],
    gts: GroundTruthSet,
    corrupt_image_ids: Sequence[int],
    tau: float = DEFAULT_TAU,
    J: int = DEFAULT_BINS,
) -> tuple[float, float, float]:
    """(IDQ_T, LaECE_T, LRP_T) over the corrupted split.

    Mild corruptions (severity 1 and 3) count like in-distribution
    images: rejecting one turns its ground truths into false negatives.
    Severity-5 images leave the pool entirely when rejected and are
    evaluated normally when accepted.
    """
    pool = []
    for iid in corrupt_image_ids:
        record = gts.image_index.get(iid)
        if record is None or record.severity is None:
            raise MissingSeverity(f"image {iid} lacks a severity tag")
        if iid not in decisions:
            raise MissingDecisions(f"image {iid} has no accept/reject decision")
        if record.severity == 5 and not decisions[iid]:
            continue
        pool.append(iid)
    return idq(survivors, gts, pool, tau, J)


@dataclass(frozen=True)
class SaodReport:
    """Composite evaluation output."""

    daq: float
    ba: float
    tpr: float
    tnr: float
    idq: float
    laece_id: float
    lrp_id: float
    idq_t: float
    laece_t: float
    lrp_t: float
    acceptance_rates: Mapping[str, float]
    per_class_lrp_id: Mapping[int, LrpResult]


def _check_split(dets: DetectionSet, gts: GroundTruthSet, split: str) -> None:
    for d in dets.records:
        record = gts.image_index.get(d.image_id)
        if record is None:
            raise SplitOverlap(f"detection references unknown image {d.image_id}")
        if record.split_tag != split:
            raise SplitOverlap(
                f"image {d.image_id} belongs to split {record.split_tag}, not {split}"
            )


def evaluate_saod(
    config: SelfAwareConfig,
    gts: GroundTruthSet,
    id_dets: DetectionSet,
    corrupt_dets: DetectionSet,
    ood_dets: DetectionSet,
    tau: float = DEFAULT_TAU,
    J: int = DEFAULT_BINS,
) -> SaodReport:
    """Run inference over all three splits and compose the report.

    BA compares the accept decisions of the ID split against the OOD
    split only; the corrupted split feeds IDQ_T.
    """
    splits = {
        "ID": (id_dets, gts.image_ids("ID")),
        "CORRUPT": (corrupt_dets, gts.image_ids("CORRUPT")),
        "OOD": (ood_dets, gts.image_ids("OOD")),
    }
    for split, (dets, image_ids) in splits.items():
        if not image_ids:
            raise EmptySplit(f"split {split} holds no images")
        _check_split(dets, gts, split)

    decisions: dict[str, dict[int, bool]] = {}
    survivors: dict[str, DetectionSet] = {}
    for split, (dets, image_ids) in splits.items():
        split_decisions: dict[int, bool] = {}
        kept_records: list[Detection] = []
        for iid in image_ids:
            accept, kept = self_aware_inference(config, dets.by_image(iid))
            split_decisions[iid] = accept
            kept_records.extend(kept)
        decisions[split] = split_decisions
        survivors[split] = DetectionSet(universe=gts.universe, records=tuple(kept_records))

    rates = {
        split: sum(decisions[split].values()) / len(decisions[split]) for split in splits
    }
    tpr = rates["ID"]
    tnr = 1.0 - rates["OOD"]
    ba = balanced_accuracy(tpr, tnr)

    idq_value, laece_id, lrp_id = idq(survivors["ID"], gts, splits["ID"][1], tau, J)
    idq_t_value, laece_t, lrp_t = idq_t(
        survivors["CORRUPT"], decisions["CORRUPT"], gts, splits["CORRUPT"][1], tau, J
    )
    _, per_class = dataset_lrp(
        survivors["ID"].subset(splits["ID"][1]), gts.subset(splits["ID"][1]), tau
    )

    return SaodReport(
        daq=daq(ba, idq_value, idq_t_value),
        ba=ba,
        tpr=tpr,
        tnr=tnr,
        idq=idq_value,
        laece_id=laece_id,
        lrp_id=lrp_id,
        idq_t=idq_t_value,
        laece_t=laece_t,
        lrp_t=lrp_t,
        acceptance_rates=rates,
        per_class_lrp_id=per_class,
    )


def _num_to_json(value: float):
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _num_from_json(value) -> float:
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return float(value)


def config_to_json_obj(config: SelfAwareConfig) -> dict:
    obj = {
        "image_threshold": _num_to_json(config.image_threshold),
        "aggregation": config.aggregation,
        "detection_thresholds": {
            str(c): _num_to_json(v) for c, v in config.detection_thresholds.items()
        },
        "calibrator": calibrator_to_json_obj(config.calibrator),
    }
    if config.val_stats is not None:
        stats = config.val_stats
        obj["val_stats"] = {
            "tpr": stats.tpr,
            "tnr": stats.tnr,
            "ba": stats.ba,
            "threshold": _num_to_json(stats.threshold),
        }
    return obj


def config_from_json_obj(obj: dict) -> SelfAwareConfig:
    stats = None
    if "val_stats" in obj:
        raw = obj["val_stats"]
        stats = OodDecisionStats(
            tpr=float(raw["tpr"]),
            tnr=float(raw["tnr"]),
            ba=float(raw["ba"]),
            threshold=_num_from_json(raw["threshold"]),
        )
    return SelfAwareConfig(
        image_threshold=_num_from_json(obj["image_threshold"]),
        detection_thresholds={
            int(c): _num_from_json(v) for c, v in obj["detection_thresholds"].items()
        },
        calibrator=calibrator_from_json_obj(obj["calibrator"]),
        aggregation=obj.get("aggregation", "top_3"),
        val_stats=stats,
    )


def save_self_aware_config(config: SelfAwareConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_json_obj(config), fh, sort_keys=True, indent=2)


def load_self_aware_config(path) -> SelfAwareConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return config_from_json_obj(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputDataError(f"cannot load self-aware config {path}: {exc}") from exc


def report_to_json_obj(report: SaodReport) -> dict:
    return {
        "daq": report.daq,
        "ba": report.ba,
        "tpr": report.tpr,
        "tnr": report.tnr,
        "idq": report.idq,
        "laece_id": report.laece_id,
        "lrp_id": report.lrp_id,
        "idq_t": report.idq_t,
        "laece_t": report.laece_t,
        "lrp_t": report.lrp_t,
        "acceptance_rates": dict(report.acceptance_rates),
        "per_class_lrp_id": {
            str(c): {
                "lrp": r.lrp,
                "lrp_loc": r.lrp_loc,
                "lrp_fp": r.lrp_fp,
                "lrp_fn": r.lrp_fn,
                "n_tp": r.n_tp,
                "n_fp": r.n_fp,
                "n_fn": r.n_fn,
            }
            for c, r in report.per_class_lrp_id.items()
        },
    }


_TABLE_COLUMNS = (
    ("DAQ", "daq"),
    ("BA", "ba"),
    ("IDQ", "idq"),
    ("LaECE", "laece_id"),
    ("LRP", "lrp_id"),
    ("IDQ_T", "idq_t"),
    ("LaECE_T", "laece_t"),
    ("LRP_T", "lrp_t"),
)


def report_table(report: SaodReport) -> str:
    """Plain-text one-row summary; values are percentages."""
    header = "".join(f"{name:>9}" for name, _ in _TABLE_COLUMNS)
    row = "".join(f"{getattr(report, attr) * 100:9.1f}" for _, attr in _TABLE_COLUMNS)
    return header + "\n" + row + "\n"
