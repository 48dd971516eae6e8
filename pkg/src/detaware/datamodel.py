"""Core domain types and file I/O for detection evaluation.

Ground truths and detections arrive as JSON files using the familiar
[x, y, width, height] box convention; internally every box is corner
based.  Loaded sets are immutable, preserve input order (input order is
the universal tie-breaker downstream), and index their records by image
and by class.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

__all__ = [
    "ToolkitError",
    "InputDataError",
    "ConfigurationError",
    "MalformedFile",
    "UnknownClass",
    "DuplicateImageId",
    "ScoreOutOfRange",
    "CovarianceNotPositive",
    "BoundingBox",
    "GroundTruth",
    "Detection",
    "ImageRecord",
    "ClassUniverse",
    "GroundTruthSet",
    "DetectionSet",
    "SPLIT_TAGS",
    "iou",
    "load_ground_truth",
    "load_detections",
    "save_ground_truth",
    "save_detections",
]

SPLIT_TAGS = ("ID", "CORRUPT", "OOD", "VAL")


class ToolkitError(Exception):
    """Base class for every error this package raises on purpose."""


class InputDataError(ToolkitError):
    """Bad input data (files, records, splits). Maps to CLI exit code 2."""


class ConfigurationError(ToolkitError):
    """Bad parameter or configuration value. Maps to CLI exit code 3."""


class MalformedFile(InputDataError):
    """File does not conform to the documented schema."""


class UnknownClass(InputDataError):
    """A record references a class id outside the declared universe."""


class DuplicateImageId(InputDataError):
    """The image index declares the same image id twice."""


class ScoreOutOfRange(InputDataError):
    """A detection score lies outside [0, 1]."""


class CovarianceNotPositive(InputDataError):
    """A covariance diagonal carries a non-positive variance."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in real pixel coordinates, corner form."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError(
                f"negative extent: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "BoundingBox":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max - self.x_min, self.y_max - self.y_min)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes.

    Returns 0.0 whenever the boxes are disjoint or either box has zero
    area, and exactly 1.0 for identical boxes of positive area.
    """
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    if inter == union:
        return 1.0
    return inter / union


@dataclass(frozen=True)
class GroundTruth:
    """One labeled object."""

    image_id: int
    class_id: int
    box: BoundingBox


@dataclass(frozen=True)
class Detection:
    """One scored prediction, optionally carrying raw model outputs."""

    image_id: int
    class_id: int
    score: float
    box: BoundingBox
    raw_class_logits: Optional[tuple[float, ...]] = None
    """Raw classification logits, length K or K+1."""
    covariance_diag: Optional[tuple[float, float, float, float]] = None
    """Diagonal of the predicted box covariance; entries must be positive."""

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ScoreOutOfRange(f"score {self.score} outside [0, 1]")
        if self.covariance_diag is not None:
            if len(self.covariance_diag) != 4 or any(v <= 0.0 for v in self.covariance_diag):
                raise CovarianceNotPositive(f"covariance diagonal {self.covariance_diag}")

    @property
    def is_probabilistic(self) -> bool:
        return self.covariance_diag is not None


@dataclass(frozen=True)
class ImageRecord:
    """Image metadata: identity, size, and split membership."""

    image_id: int
    split_tag: str = "ID"
    severity: Optional[int] = None
    """Corruption severity in {1, 3, 5}; present exactly when split_tag is CORRUPT."""
    width: Optional[int] = None
    height: Optional[int] = None

    def __post_init__(self) -> None:
        if self.split_tag not in SPLIT_TAGS:
            raise MalformedFile(f"unknown split tag {self.split_tag!r}")
        if (self.severity is not None) != (self.split_tag == "CORRUPT"):
            raise MalformedFile(
                f"severity must be present iff split is CORRUPT (image {self.image_id})"
            )
        if self.severity is not None and self.severity not in (1, 3, 5):
            raise MalformedFile(f"severity {self.severity} not in {{1, 3, 5}}")


@dataclass(frozen=True)
class ClassUniverse:
    """The declared dense class ids 1..K."""

    K: int
    names: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.names is not None and len(self.names) != self.K:
            raise ValueError("names length must equal K")

    def contains(self, class_id: int) -> bool:
        return 1 <= class_id <= self.K

    @property
    def class_ids(self) -> range:
        return range(1, self.K + 1)


@dataclass(frozen=True)
class _RecordSet:
    """Shared indexing over records that carry image_id and class_id."""

    universe: ClassUniverse
    records: tuple = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @cached_property
    def _by_image(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.image_id, []).append(r)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def _by_class(self) -> dict:
        out: dict = {}
        for r in self.records:
            out.setdefault(r.class_id, []).append(r)
        return {k: tuple(v) for k, v in out.items()}

    def by_image(self, image_id: int) -> tuple:
        return self._by_image.get(image_id, ())

    def by_class(self, class_id: int) -> tuple:
        return self._by_class.get(class_id, ())

    def by_image_class(self, image_id: int, class_id: int) -> tuple:
        return tuple(r for r in self.by_image(image_id) if r.class_id == class_id)


@dataclass(frozen=True)
class GroundTruthSet(_RecordSet):
    """Immutable collection of ground truths plus the image index."""

    images: tuple[ImageRecord, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for rec in self.images:
            if rec.image_id in seen:
                raise DuplicateImageId(f"image id {rec.image_id} declared twice")
            seen.add(rec.image_id)
        for gt in self.records:
            if not self.universe.contains(gt.class_id):
                raise UnknownClass(f"class id {gt.class_id} outside 1..{self.universe.K}")

    @cached_property
    def image_index(self) -> Mapping[int, ImageRecord]:
        return {rec.image_id: rec for rec in self.images}

    @property
    def num_images(self) -> int:
        return len(self.images)

    def image_ids(self, split_tag: Optional[str] = None) -> tuple[int, ...]:
        """Image ids in declaration order, optionally restricted to one split."""
        if split_tag is None:
            return tuple(rec.image_id for rec in self.images)
        return tuple(rec.image_id for rec in self.images if rec.split_tag == split_tag)

    def subset(self, image_ids: Iterable[int]) -> "GroundTruthSet":
        keep = set(image_ids)
        return GroundTruthSet(
            universe=self.universe,
            records=tuple(g for g in self.records if g.image_id in keep),
            images=tuple(r for r in self.images if r.image_id in keep),
        )


@dataclass(frozen=True)
class DetectionSet(_RecordSet):
    """Immutable collection of detections in their original input order."""

    def __post_init__(self) -> None:
        for det in self.records:
            if not self.universe.contains(det.class_id):
                raise UnknownClass(f"class id {det.class_id} outside 1..{self.universe.K}")

    def subset(self, image_ids: Iterable[int]) -> "DetectionSet":
        keep = set(image_ids)
        return DetectionSet(
            universe=self.universe,
            records=tuple(d for d in self.records if d.image_id in keep),
        )

    def with_scores(self, scores: Sequence[float]) -> "DetectionSet":
        """Copy with scores replaced positionally; order and boxes untouched."""
        if len(scores) != len(self.records):
            raise ValueError("score vector length mismatch")
        return DetectionSet(
            universe=self.universe,
            records=tuple(
                replace(d, score=float(s)) for d, s in zip(self.records, scores)
            ),
        )


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise MalformedFile(message)


def _read_json(path) -> object:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise MalformedFile(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path} is not valid JSON: {exc}") from exc


def _parse_bbox(raw: object, where: str, allow_degenerate: bool) -> BoundingBox:
    _require(
        isinstance(raw, (list, tuple)) and len(raw) == 4
        and all(isinstance(v, (int, float)) for v in raw),
        f"{where}: bbox must be four numbers [x, y, w, h]",
    )
    x, y, w, h = (float(v) for v in raw)
    _require(w >= 0.0 and h >= 0.0, f"{where}: negative box extent")
    if not allow_degenerate:
        _require(w > 0.0 and h > 0.0, f"{where}: zero-area box not allowed here")
    return BoundingBox.from_xywh(x, y, w, h)


def load_ground_truth(path) -> GroundTruthSet:
    """Load a ground-truth file.

    Expected shape: {"categories": [{"id", "name"}], "images": [{"id",
    "width"?, "height"?, "split"?, "severity"?}], "annotations":
    [{"image_id", "category_id", "bbox": [x, y, w, h]}]}.  Class ids must
    be dense 1..K.  Zero-area ground-truth boxes are rejected.
    """
    obj = _read_json(path)
    _require(isinstance(obj, dict), f"{path}: top level must be an object")
    for key in ("categories", "images", "annotations"):
        _require(isinstance(obj.get(key), list), f"{path}: missing list field {key!r}")

    cats = sorted(obj["categories"], key=lambda c: c.get("id", 0))
    _require(len(cats) >= 1, f"{path}: at least one category required")
    ids = [c.get("id") for c in cats]
    _require(ids == list(range(1, len(ids) + 1)), f"{path}: category ids must be dense 1..K")
    names = tuple(str(c.get("name", f"class-{c['id']}")) for c in cats)
    universe = ClassUniverse(K=len(cats), names=names)

    images = []
    for rec in obj["images"]:
        _require(isinstance(rec, dict) and isinstance(rec.get("id"), int), f"{path}: bad image record")
        images.append(
            ImageRecord(
                image_id=rec["id"],
                split_tag=rec.get("split", "ID"),
                severity=rec.get("severity"),
                width=rec.get("width"),
                height=rec.get("height"),
            )
        )
    known_images = {rec.image_id for rec in images}

    annotations = []
    for i, ann in enumerate(obj["annotations"]):
        where = f"{path}: annotation {i}"
        _require(isinstance(ann, dict), f"{where}: not an object")
        _require(ann.get("image_id") in known_images, f"{where}: unknown image_id")
        class_id = ann.get("category_id")
        if not (isinstance(class_id, int) and universe.contains(class_id)):
            raise UnknownClass(f"{where}: category_id {class_id}")
        box = _parse_bbox(ann.get("bbox"), where, allow_degenerate=False)
        annotations.append(GroundTruth(image_id=ann["image_id"], class_id=class_id, box=box))

    return GroundTruthSet(universe=universe, records=tuple(annotations), images=tuple(images))


def load_detections(path, universe: ClassUniverse) -> DetectionSet:
    """Load a detection file: a JSON array of scored boxes.

    Each entry: {"image_id", "category_id", "bbox": [x, y, w, h],
    "score", "raw_logits"?, "cov_diag"?}.  Zero-area boxes are legal for
    detections.  Input order is preserved.
    """
    arr = _read_json(path)
    _require(isinstance(arr, list), f"{path}: top level must be an array")
    out = []
    for i, rec in enumerate(arr):
        where = f"{path}: detection {i}"
        _require(isinstance(rec, dict), f"{where}: not an object")
        _require(isinstance(rec.get("image_id"), int), f"{where}: bad image_id")
        class_id = rec.get("category_id")
        if not (isinstance(class_id, int) and universe.contains(class_id)):
            raise UnknownClass(f"{where}: category_id {class_id}")
        score = rec.get("score")
        _require(isinstance(score, (int, float)), f"{where}: bad score")
        if not 0.0 <= float(score) <= 1.0:
            raise ScoreOutOfRange(f"{where}: score {score}")
        box = _parse_bbox(rec.get("bbox"), where, allow_degenerate=True)

        logits = rec.get("raw_logits")
        if logits is not None:
            _require(
                isinstance(logits, list)
                and len(logits) in (universe.K, universe.K + 1)
                and all(isinstance(v, (int, float)) for v in logits),
                f"{where}: raw_logits must hold K or K+1 numbers",
            )
            logits = tuple(float(v) for v in logits)

        cov = rec.get("cov_diag")
        if cov is not None:
            _require(
                isinstance(cov, list) and len(cov) == 4
                and all(isinstance(v, (int, float)) for v in cov),
                f"{where}: cov_diag must hold four numbers",
            )
            if any(float(v) <= 0.0 for v in cov):
                raise CovarianceNotPositive(f"{where}: cov_diag {cov}")
            cov = tuple(float(v) for v in cov)

        out.append(
            Detection(
                image_id=rec["image_id"],
                class_id=class_id,
                score=float(score),
                box=box,
                raw_class_logits=logits,
                covariance_diag=cov,
            )
        )
    return DetectionSet(universe=universe, records=tuple(out))


def _image_to_json(rec: ImageRecord) -> dict:
    out: dict = {"id": rec.image_id, "split": rec.split_tag}
    if rec.severity is not None:
        out["severity"] = rec.severity
    if rec.width is not None:
        out["width"] = rec.width
    if rec.height is not None:
        out["height"] = rec.height
    return out


def save_ground_truth(gts: GroundTruthSet, path) -> None:
    """Write a ground-truth set back to its file form (inverse of load)."""
    names = gts.universe.names or tuple(f"class-{c}" for c in gts.universe.class_ids)
    obj = {
        "categories": [{"id": c, "name": names[c - 1]} for c in gts.universe.class_ids],
        "images": [_image_to_json(rec) for rec in gts.images],
        "annotations": [
            {"image_id": g.image_id, "category_id": g.class_id, "bbox": list(g.box.to_xywh())}
            for g in gts.records
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def save_detections(dets: DetectionSet, path) -> None:
    """Write a detection set back to its file form (inverse of load)."""
    arr = []
    for d in dets.records:
        rec: dict = {
            "image_id": d.image_id,
            "category_id": d.class_id,
            "bbox": list(d.box.to_xywh()),
            "score": d.score,
        }
        if d.raw_class_logits is not None:
            rec["raw_logits"] = list(d.raw_class_logits)
        if d.covariance_diag is not None:
            rec["cov_diag"] = list(d.covariance_diag)
        arr.append(rec)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(arr, fh)
