"""Synthetic fixtures and straight-line reference evaluators.

The generator simulates a detector on a 640 x 640 canvas: ground truths
sit in disjoint grid cells, each true positive is its ground truth
shifted horizontally to hit a drawn IoU exactly, and false positives
live in a separate strip far outside the canvas so they can never steal
a match.  All randomness flows through one counter-based generator
seeded explicitly, and coordinates are quantized to 1/256 pixel so that
box arithmetic and file round-trips are exact.

The brute-force evaluators re-implement matching, AP, LRP, and the
calibration error with plain loops, sharing no code with the production
paths; the test suite holds both sides to twelve decimal places.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .datamodel import (
    BoundingBox,
    ClassUniverse,
    ConfigurationError,
    Detection,
    DetectionSet,
    GroundTruth,
    GroundTruthSet,
    ImageRecord,
)

__all__ = [
    "InfeasibleSpec",
    "SyntheticSpec",
    "generate",
    "generate_bundle",
    "oracle_bundle",
    "inject_dummies",
    "brute_force_ap",
    "brute_force_lrp",
    "brute_force_laece",
]

_CANVAS = 640
_CELL = 160  # 4 x 4 grid of disjoint ground-truth cells
_MAX_GTS = 16


class InfeasibleSpec(ConfigurationError):
    """The synthetic spec asks for something the generator cannot honor."""


@dataclass(frozen=True)
class SyntheticSpec:
    """Knobs of the simulated detector."""

    seed: int = 0
    num_images: int = 12
    gts_per_image: int = 4
    num_classes: int = 3
    tp_rate: float = 0.85
    """Chance that a ground truth receives a matching detection."""
    iou_low: float = 0.3
    iou_high: float = 0.95
    confidence: str = "calibrated"
    """One of calibrated, overconfident, underconfident."""
    delta: float = 0.0
    """Confidence shift for the two biased modes."""
    fp_per_image: float = 1.0
    """Expected count of spurious detections per image."""
    ood_shift: float = 0.0
    """Downward score shift for detections on OOD images."""


def _validate(spec: SyntheticSpec) -> None:
    checks = [
        spec.num_images >= 1,
        0 <= spec.gts_per_image <= _MAX_GTS,
        spec.num_classes >= 1,
        0.0 <= spec.tp_rate <= 1.0,
        0.0 < spec.iou_low <= spec.iou_high <= 1.0,
        spec.confidence in ("calibrated", "overconfident", "underconfident"),
        spec.delta >= 0.0,
        spec.fp_per_image >= 0.0,
        spec.ood_shift >= 0.0,
    ]
    if not all(checks):
        raise InfeasibleSpec(f"invalid spec {spec}")
    if spec.confidence == "calibrated" and spec.iou_low < 0.05:
        # false positives get scores below 0.01; true positives must
        # stay clear of that bottom bin for the low-error guarantee
        raise InfeasibleSpec("calibrated mode needs iou_low >= 0.05")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _q(value: float) -> float:
    """Quantize to 1/256 pixel so sums and differences stay exact."""
    return round(value * 256.0) / 256.0


def _tp_score(spec: SyntheticSpec, realized_iou: float) -> float:
    if spec.confidence == "calibrated":
        return realized_iou
    if spec.confidence == "overconfident":
        return min(1.0, realized_iou + spec.delta)
    return max(0.0, realized_iou - spec.delta)


def _fp_score(spec: SyntheticSpec, rng: np.random.Generator) -> float:
    base = float(rng.uniform(0.0, 0.01))
    if spec.confidence == "overconfident":
        return min(1.0, base + spec.delta)
    if spec.confidence == "underconfident":
        return max(0.0, base - spec.delta)
    return base


def _fp_box(rng: np.random.Generator) -> BoundingBox:
    # a strip far to the right of the canvas: IoU 0 with every GT
    w = _q(float(rng.uniform(20.0, 60.0)))
    h = _q(float(rng.uniform(20.0, 60.0)))
    x = _q(float(rng.uniform(700.0, 1200.0)))
    y = _q(float(rng.uniform(0.0, 500.0)))
    return BoundingBox(x, y, x + w, y + h)


def generate(
    spec: SyntheticSpec,
    split: str = "ID",
    severity: Optional[int] = None,
    first_image_id: int = 1,
) -> tuple[GroundTruthSet, DetectionSet]:
    """Simulate one split; deterministic under spec.seed.

    Calibrated mode pins every TP score to its exact IoU and keeps FP
    scores below 0.01, which forces the dataset calibration error under
    0.01 by construction.  An OOD split carries no ground truths and its
    detections get scores lowered by ood_shift.
    """
    _validate(spec)
    rng = _rng(spec.seed)
    universe = ClassUniverse(K=spec.num_classes)
    images = []
    gt_records: list[GroundTruth] = []
    det_records: list[Detection] = []
    gt_counter = 0
    for n in range(spec.num_images):
        image_id = first_image_id + n
        images.append(
            ImageRecord(
                image_id=image_id,
                split_tag=split,
                severity=severity,
                width=_CANVAS,
                height=_CANVAS,
            )
        )
        if split == "OOD":
            for _ in range(max(1, spec.gts_per_image)):
                score = min(1.0, max(0.0, float(rng.uniform(0.05, 0.95)) - spec.ood_shift))
                class_id = int(rng.integers(1, spec.num_classes + 1))
                det_records.append(
                    Detection(image_id=image_id, class_id=class_id, score=score, box=_fp_box(rng))
                )
            continue
        for slot in range(spec.gts_per_image):
            w = _q(float(rng.uniform(40.0, 90.0)))
            h = _q(float(rng.uniform(40.0, 90.0)))
            # a 50 px reserve on the right keeps the shifted TP inside the cell
            x = (slot % 4) * _CELL + _q(float(rng.uniform(0.0, _CELL - w - 50.0)))
            y = (slot // 4) * _CELL + _q(float(rng.uniform(0.0, _CELL - h)))
            box = BoundingBox(x, y, x + w, y + h)
            class_id = 1 + gt_counter % spec.num_classes  # round-robin coverage
            gt_counter += 1
            gt_records.append(GroundTruth(image_id=image_id, class_id=class_id, box=box))
            if float(rng.random()) < spec.tp_rate:
                u = float(rng.uniform(spec.iou_low, spec.iou_high))
                dx = _q(w * (1.0 - u) / (1.0 + u))
                det_box = BoundingBox(x + dx, y, x + dx + w, y + h)
                realized = _iou_ref(box, det_box)
                det_records.append(
                    Detection(
                        image_id=image_id,
                        class_id=class_id,
                        score=_tp_score(spec, realized),
                        box=det_box,
                    )
                )
        for _ in range(int(rng.poisson(spec.fp_per_image))):
            class_id = int(rng.integers(1, spec.num_classes + 1))
            det_records.append(
                Detection(
                    image_id=image_id,
                    class_id=class_id,
                    score=_fp_score(spec, rng),
                    box=_fp_box(rng),
                )
            )
    gts = GroundTruthSet(universe=universe, records=tuple(gt_records), images=tuple(images))
    return gts, DetectionSet(universe=universe, records=tuple(det_records))


def _merge_gts(parts: Sequence[GroundTruthSet]) -> GroundTruthSet:
    universe = parts[0].universe
    return GroundTruthSet(
        universe=universe,
        records=tuple(g for p in parts for g in p.records),
        images=tuple(r for p in parts for r in p.images),
    )


def _merge_dets(universe: ClassUniverse, parts: Sequence[DetectionSet]) -> DetectionSet:
    return DetectionSet(
        universe=universe, records=tuple(d for p in parts for d in p.records)
    )


def generate_bundle(seed: int, base: Optional[SyntheticSpec] = None) -> dict:
    """A full evaluation bundle: ID, VAL, CORRUPT (severities 1/3/5), OOD.

    Also produces pseudo-OOD detections over the validation images
    (mimicking a detector run on copies with the labeled regions
    blanked): mostly nothing, occasionally a low-scoring box.  Returns
    {"gt", "id", "val", "corrupt", "ood", "pseudo_ood"}.
    """
    spec = base if base is not None else SyntheticSpec()
    spec = replace(spec, seed=seed)
    next_id = 1
    id_gts, id_dets = generate(spec, split="ID", first_image_id=next_id)
    next_id += spec.num_images
    val_spec = replace(spec, seed=seed + 1000)
    val_gts, val_dets = generate(val_spec, split="VAL", first_image_id=next_id)
    next_id += val_spec.num_images

    corrupt_parts = []
    corrupt_det_parts = []
    for i, severity in enumerate((1, 3, 5)):
        drop = 0.12 * (i + 1)
        sev_spec = replace(
            spec,
            seed=seed + 2000 + severity,
            num_images=max(1, spec.num_images // 3),
            tp_rate=max(0.0, spec.tp_rate - drop),
            iou_low=max(0.12, spec.iou_low - drop / 2),
            iou_high=max(0.2, spec.iou_high - drop),
            fp_per_image=spec.fp_per_image * (1 + i),
        )
        g, d = generate(sev_spec, split="CORRUPT", severity=severity, first_image_id=next_id)
        next_id += sev_spec.num_images
        corrupt_parts.append(g)
        corrupt_det_parts.append(d)
    corrupt_gts = _merge_gts(corrupt_parts)
    corrupt_dets = _merge_dets(id_gts.universe, corrupt_det_parts)

    ood_spec = replace(spec, seed=seed + 3000, ood_shift=max(spec.ood_shift, 0.75))
    ood_gts, ood_dets = generate(ood_spec, split="OOD", first_image_id=next_id)
    next_id += ood_spec.num_images

    rng = _rng(seed + 4000)
    pseudo_records = []
    for iid in val_gts.image_ids():
        if float(rng.random()) < 0.7:
            continue  # the blanked image yields nothing: sentinel uncertainty
        for _ in range(int(rng.integers(1, 3))):
            pseudo_records.append(
                Detection(
                    image_id=iid,
                    class_id=int(rng.integers(1, spec.num_classes + 1)),
                    score=float(rng.uniform(0.0, 0.2)),
                    box=_fp_box(rng),
                )
            )
    pseudo_dets = DetectionSet(universe=id_gts.universe, records=tuple(pseudo_records))

    return {
        "gt": _merge_gts([id_gts, val_gts, corrupt_gts, ood_gts]),
        "id": id_dets,
        "val": val_dets,
        "corrupt": corrupt_dets,
        "ood": ood_dets,
        "pseudo_ood": pseudo_dets,
    }


def oracle_bundle(seed: int = 0, num_images: int = 6) -> dict:
    """A bundle a perfect detector would produce: exact boxes, score 1,
    no false positives, and silent OOD images."""
    perfect = SyntheticSpec(
        seed=seed,
        num_images=num_images,
        gts_per_image=4,
        num_classes=2,
        tp_rate=1.0,
        iou_low=1.0,
        iou_high=1.0,
        confidence="calibrated",
        fp_per_image=0.0,
    )
    next_id = 1
    id_gts, id_dets = generate(perfect, split="ID", first_image_id=next_id)
    next_id += num_images
    val_gts, val_dets = generate(
        replace(perfect, seed=seed + 1), split="VAL", first_image_id=next_id
    )
    next_id += num_images
    corrupt_parts = []
    corrupt_det_parts = []
    for severity in (1, 3, 5):
        g, d = generate(
            replace(perfect, seed=seed + 2 + severity, num_images=2),
            split="CORRUPT",
            severity=severity,
            first_image_id=next_id,
        )
        next_id += 2
        corrupt_parts.append(g)
        corrupt_det_parts.append(d)
    ood_images = tuple(
        ImageRecord(image_id=next_id + n, split_tag="OOD", width=_CANVAS, height=_CANVAS)
        for n in range(num_images)
    )
    ood_gts = GroundTruthSet(universe=id_gts.universe, records=(), images=ood_images)
    empty = DetectionSet(universe=id_gts.universe, records=())
    return {
        "gt": _merge_gts([id_gts, val_gts, _merge_gts(corrupt_parts), ood_gts]),
        "id": id_dets,
        "val": val_dets,
        "corrupt": _merge_dets(id_gts.universe, corrupt_det_parts),
        "ood": empty,
        "pseudo_ood": empty,
    }


def inject_dummies(dets: DetectionSet, k: int, seed: int = 0) -> DetectionSet:
    """Pad every image (that has detections) to k detections per image.

    Dummies carry score 0, a one-pixel box far outside the canvas, and a
    uniformly drawn class.  They are appended after the real records, so
    score ties still resolve toward the real detections.
    """
    rng = _rng(seed)
    per_image: dict[int, int] = {}
    for d in dets.records:
        per_image[d.image_id] = per_image.get(d.image_id, 0) + 1
    extra = []
    offset = 0
    for iid in per_image:  # insertion order: first appearance per image
        for _ in range(max(0, k - per_image[iid])):
            x = 1000.0 + offset
            offset += 2
            extra.append(
                Detection(
                    image_id=iid,
                    class_id=int(rng.integers(1, dets.universe.K + 1)),
                    score=0.0,
                    box=BoundingBox(x, 1000.0, x + 1.0, 1001.0),
                )
            )
    return DetectionSet(universe=dets.universe, records=dets.records + tuple(extra))


def _iou_ref(a: BoundingBox, b: BoundingBox) -> float:
    """Reference IoU used by the oracles; written independently."""
    width = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    height = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if width <= 0 or height <= 0:
        return 0.0
    inter = width * height
    area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min)
    area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min)
    if area_a + area_b - inter <= 0:
        return 0.0
    if inter == area_a + area_b - inter:
        return 1.0
    return inter / (area_a + area_b - inter)


def _greedy_ref(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], tau: float
) -> list[tuple[int, Optional[int], float]]:
    """Literal greedy matching; returns (det_index, gt_index or None, iou)
    in descending-score processing order."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken: set[int] = set()
    out = []
    for i in order:
        best_j = None
        best_ov = tau
        for j in range(len(gts)):
            if j in taken or gts[j].image_id != dets[i].image_id:
                continue
            if gts[j].class_id != dets[i].class_id:
                continue
            ov = _iou_ref(dets[i].box, gts[j].box)
            if ov > best_ov:
                best_ov = ov
                best_j = j
        if best_j is None:
            out.append((i, None, 0.0))
        else:
            taken.add(best_j)
            out.append((i, best_j, best_ov))
    return out


def brute_force_ap(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], tau: float
) -> float:
    """Reference AP for one tiny single-class instance, all plain loops."""
    matches = _greedy_ref(dets, gts, tau)
    labels = [1 if gt_j is not None else 0 for _, gt_j, _ in matches]
    m = len(gts)
    if not labels or m == 0:
        return 0.0
    pr = []
    re = []
    tp = 0
    for rank, label in enumerate(labels, start=1):
        tp += label
        pr.append(tp / rank)
        re.append(tp / m)
    ap = 0.0
    prev = 0.0
    for i in range(len(labels)):
        interpolated = max(pr[j] for j in range(len(labels)) if re[j] >= re[i])
        ap += (re[i] - prev) * interpolated
        prev = re[i]
    return ap


def brute_force_lrp(
    dets: Sequence[Detection], gts: Sequence[GroundTruth], tau: float
) -> float:
    """Reference LRP for one single-class instance."""
    matches = _greedy_ref(dets, gts, tau)
    n_tp = sum(1 for _, gt_j, _ in matches if gt_j is not None)
    n_fp = len(dets) - n_tp
    n_fn = len(gts) - n_tp
    loc = sum(
        1.0 - (ov - tau) / (1.0 - tau) for _, gt_j, ov in matches if gt_j is not None
    )
    total = n_tp + n_fp + n_fn
    if total == 0:
        raise ValueError("degenerate instance")
    return (n_fp + n_fn + loc) / total


def brute_force_laece(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    tau: float,
    J: int,
) -> float:
    """Reference dataset calibration error: class mean of binned gaps."""
    class_ids = sorted({d.class_id for d in dets})
    errors = []
    for c in class_ids:
        class_dets = [d for d in dets if d.class_id == c]
        class_gts = [g for g in gts if g.class_id == c]
        matches = _greedy_ref(class_dets, class_gts, tau)
        by_det = {i: (gt_j, ov) for i, gt_j, ov in matches}
        bins: dict[int, list[tuple[float, Optional[int], float]]] = {}
        for i, det in enumerate(class_dets):
            j = min(int(det.score * J), J - 1)
            gt_j, ov = by_det[i]
            bins.setdefault(j, []).append((det.score, gt_j, ov))
        error = 0.0
        for members in bins.values():
            conf = sum(s for s, _, _ in members) / len(members)
            tp = [(s, ov) for s, gt_j, ov in members if gt_j is not None]
            if tp:
                precision = len(tp) / len(members)
                mean_iou = sum(ov for _, ov in tp) / len(tp)
                perf = precision * mean_iou
            else:
                perf = 0.0
            error += len(members) / len(class_dets) * abs(conf - perf)
        errors.append(error)
    return sum(errors) / len(errors) if errors else 0.0
