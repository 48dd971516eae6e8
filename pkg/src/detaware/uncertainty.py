"""Detection and image level uncertainty, and OOD acceptance metrics.

Detection-level estimators turn a detection (its score, raw logits, or
covariance diagonal) into a non-negative uncertainty.  Image-level
aggregation reduces the per-detection values of one image to a single
number; an image without detections receives a large sentinel so it is
always rejected.  The acceptance decision compares the aggregate
against a threshold chosen to maximize the balanced accuracy between
in-distribution and out-of-distribution splits.
"""
from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .datamodel import (
    BoundingBox,
    ConfigurationError,
    CovarianceNotPositive,
    Detection,
    InputDataError,
)

__all__ = [
    "NonFiniteLogit",
    "DegenerateBounds",
    "EmptySplit",
    "SENTINEL_UNCERTAINTY",
    "UncertaintyRecord",
    "ImageUncertainty",
    "OodDecisionStats",
    "uncertainty_score",
    "entropy_softmax",
    "dempster_shafer",
    "loc_uncertainty",
    "combine_cls_loc",
    "aggregate",
    "image_uncertainty_map",
    "mask_boxes",
    "save_raster",
    "load_raster",
    "auroc",
    "balanced_accuracy",
    "select_threshold_ba",
    "threshold_at_tpr",
    "write_uncertainty_dump",
    "load_uncertainty_dump",
]

SENTINEL_UNCERTAINTY = 1.0e12


class NonFiniteLogit(InputDataError):
    """Raw logits must be finite to carry any information."""


class DegenerateBounds(ConfigurationError):
    """Normalization bounds with max <= min cannot scale anything."""


class EmptySplit(InputDataError):
    """A split that must hold at least one value is empty."""


@dataclass(frozen=True)
class UncertaintyRecord:
    """Per-detection uncertainties of one image under one estimator."""

    image_id: int
    values: tuple[float, ...]
    estimator: str


@dataclass(frozen=True)
class ImageUncertainty:
    """Aggregated image-level uncertainty; sentinel when no detections."""

    image_id: Optional[int]
    value: float
    is_sentinel: bool = False


@dataclass(frozen=True)
class OodDecisionStats:
    """Accept/reject rates at one threshold.

    tpr is the accepted fraction of in-distribution images, tnr the
    rejected fraction of out-of-distribution images, and ba their
    harmonic mean (0 whenever either rate is 0).
    """

    tpr: float
    tnr: float
    ba: float
    threshold: float


def uncertainty_score(det: Detection) -> float:
    """One minus the confidence score."""
    return 1.0 - det.score


def entropy_softmax(
    values: Sequence[float], mode: str = "softmax", *, probabilities: bool = False
) -> float:
    """Entropy (nats) of the classification distribution of one detection.

    mode "softmax" treats values as the K+1 logits of a softmax head;
    mode "sigmoid_categorical" treats them as the K logits of a
    class-wise sigmoid head and builds a categorical distribution by
    softmaxing them, which is the variant that separates best.  With
    probabilities=True, values are taken as an already normalized
    distribution.
    """
    if mode not in ("softmax", "sigmoid_categorical"):
        raise ConfigurationError(f"unknown entropy mode {mode!r}")
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise NonFiniteLogit(f"bad logit vector {values!r}")
    if probabilities:
        if np.any(arr < 0.0) or arr.sum() <= 0.0:
            raise NonFiniteLogit("probabilities must be non-negative with positive sum")
        p = arr / arr.sum()
    else:
        shifted = np.exp(arr - arr.max())
        p = shifted / shifted.sum()
    nonzero = p[p > 0.0]
    return float(-np.sum(nonzero * np.log(nonzero)))


def dempster_shafer(logits: Sequence[float], k: Optional[int] = None) -> float:
    """Evidence-based uncertainty K / (K + sum(exp(logits))).

    k defaults to the logit count (use K for sigmoid heads and K+1 for
    softmax heads).  Decreases toward 0 as total evidence grows.
    """
    arr = np.asarray(logits, dtype=float)
    kk = float(len(arr) if k is None else k)
    return float(kk / (kk + np.sum(np.exp(arr))))


def loc_uncertainty(cov_diag: Sequence[float], kind: str = "det") -> float:
    """Localisation uncertainty from a diagonal box covariance.

    kind "det" is the determinant (product of variances), "trace" their
    sum, and "gaussian_entropy" the differential entropy of the
    4-variate Gaussian: 2 + 2 ln(2 pi) + 0.5 ln(det).
    """
    if len(cov_diag) != 4 or any(v <= 0.0 for v in cov_diag):
        raise CovarianceNotPositive(f"covariance diagonal {cov_diag!r}")
    if kind == "det":
        return float(np.prod(np.asarray(cov_diag, dtype=float)))
    if kind == "trace":
        return float(sum(cov_diag))
    if kind == "gaussian_entropy":
        log_det = float(np.sum(np.log(np.asarray(cov_diag, dtype=float))))
        return 2.0 + 2.0 * math.log(2.0 * math.pi) + 0.5 * log_det
    raise ConfigurationError(f"unknown localisation uncertainty kind {kind!r}")


def combine_cls_loc(
    u_cls: float,
    u_loc: float,
    cls_bounds: tuple[float, float],
    loc_bounds: tuple[float, float],
) -> float:
    """Balanced combination 4 * norm(u_cls) + norm(u_loc).

    Each value is min-max normalized by bounds observed on validation
    data (and clipped to [0, 1] when it falls outside them); the
    classification term is scaled by 4 to weigh both heads evenly.
    """
    out = 0.0
    for value, (lo, hi), weight in ((u_cls, cls_bounds, 4.0), (u_loc, loc_bounds, 1.0)):
        if hi <= lo:
            raise DegenerateBounds(f"bounds ({lo}, {hi})")
        out += weight * min(1.0, max(0.0, (value - lo) / (hi - lo)))
    return out


def _parse_strategy(strategy: str) -> tuple[str, int]:
    if strategy in ("sum", "mean", "min"):
        return strategy, 0
    if strategy.startswith("top_"):
        try:
            m = int(strategy[4:])
        except ValueError:
            m = 0
        if m >= 1:
            return "top", m
    raise ConfigurationError(f"unknown aggregation strategy {strategy!r}")


def aggregate(
    values: Sequence[float], strategy: str = "top_3", image_id: Optional[int] = None
) -> ImageUncertainty:
    """Reduce per-detection uncertainties to one image-level value.

    Strategies: "sum", "mean", "min", or "top_m" (mean of the m smallest
    values; all of them when fewer than m exist).  An empty input maps
    to the sentinel 1e12, which no sane threshold accepts.
    """
    name, m = _parse_strategy(strategy)
    if len(values) == 0:
        return ImageUncertainty(image_id, SENTINEL_UNCERTAINTY, is_sentinel=True)
    arr = np.asarray(values, dtype=float)
    if name == "sum":
        out = float(arr.sum())
    elif name == "mean":
        out = float(arr.mean())
    elif name == "min":
        out = float(arr.min())
    else:
        out = float(np.sort(arr)[: min(m, arr.size)].mean())
    return ImageUncertainty(image_id, out)


def image_uncertainty_map(
    dets_by_image: dict[int, Sequence[Detection]],
    image_ids: Iterable[int],
    strategy: str = "top_3",
) -> dict[int, ImageUncertainty]:
    """Score-based image uncertainties for every listed image."""
    out = {}
    for iid in image_ids:
        values = [uncertainty_score(d) for d in dets_by_image.get(iid, ())]
        out[iid] = aggregate(values, strategy, image_id=iid)
    return out


def mask_boxes(raster: np.ndarray, boxes: Sequence[BoundingBox]) -> np.ndarray:
    """Zero the pixels inside the boxes; everything else is untouched.

    Box bounds round outward (floor the minimum, ceil the maximum) and
    clip to the raster; fully outside boxes are no-ops.  Returns a copy.
    """
    if raster.ndim not in (2, 3):
        raise ValueError("raster must be H x W or H x W x C")
    out = raster.copy()
    height, width = out.shape[0], out.shape[1]
    for box in boxes:
        x0 = max(0, math.floor(box.x_min))
        y0 = max(0, math.floor(box.y_min))
        x1 = min(width, math.ceil(box.x_max))
        y1 = min(height, math.ceil(box.y_max))
        if x0 < x1 and y0 < y1:
            out[y0:y1, x0:x1] = 0
    return out


_RASTER_MAGIC = b"RAS1"
_DTYPE_CODES = {0: np.dtype("uint8"), 1: np.dtype("<f4")}


def save_raster(path, array: np.ndarray) -> None:
    """Write an image array as a little-endian raw raster file.

    Header: magic "RAS1", then H, W, C as unsigned 32-bit integers and a
    dtype code byte (0 = u8, 1 = f32), followed by the row-major data.
    2-D input is stored with C = 1.
    """
    if array.ndim == 2:
        array = array[:, :, np.newaxis]
    if array.ndim != 3:
        raise ValueError("raster must be H x W or H x W x C")
    if array.dtype == np.uint8:
        code, data = 0, array
    else:
        code, data = 1, array.astype("<f4")
    height, width, channels = data.shape
    with open(path, "wb") as fh:
        fh.write(_RASTER_MAGIC)
        fh.write(struct.pack("<IIIB", height, width, channels, code))
        fh.write(np.ascontiguousarray(data).tobytes())


def load_raster(path) -> np.ndarray:
    """Read a raster file written by save_raster; C = 1 comes back 2-D."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _RASTER_MAGIC or len(blob) < 17:
        raise InputDataError(f"{path}: not a raster file")
    height, width, channels, code = struct.unpack("<IIIB", blob[4:17])
    if code not in _DTYPE_CODES:
        raise InputDataError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    expected = height * width * channels * dtype.itemsize
    if len(blob) - 17 != expected:
        raise InputDataError(f"{path}: payload size mismatch")
    arr = np.frombuffer(blob[17:], dtype=dtype).reshape(height, width, channels)
    if code == 1:
        arr = arr.astype(np.float32)
    if channels == 1:
        arr = arr.reshape(height, width)
    return arr.copy()


def _average_ranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="mergesort")
    sorted_vals = pooled[order]
    _, start, counts = np.unique(sorted_vals, return_index=True, return_counts=True)
    group_mean = start + (counts + 1) / 2.0  # 1-based average rank per tie group
    ranks = np.empty(pooled.size)
    ranks[order] = np.repeat(group_mean, counts)
    return ranks


def auroc(id_uncertainties: Sequence[float], ood_uncertainties: Sequence[float]) -> float:
    """Probability a random ID value lies below a random OOD value.

    Computed as a rank statistic with ties credited one half; 1.0 means
    perfect separation, 0.5 is chance.
    """
    if len(id_uncertainties) == 0 or len(ood_uncertainties) == 0:
        raise EmptySplit("both splits must be non-empty")
    id_arr = np.asarray(id_uncertainties, dtype=float)
    ood_arr = np.asarray(ood_uncertainties, dtype=float)
    ranks = _average_ranks(np.concatenate([id_arr, ood_arr]))
    n_id, n_ood = id_arr.size, ood_arr.size
    u_stat = ranks[n_id:].sum() - n_ood * (n_ood + 1) / 2.0
    return float(u_stat / (n_id * n_ood))


def balanced_accuracy(tpr: float, tnr: float) -> float:
    """Harmonic mean of the two rates; 0 when either rate is 0."""
    if tpr <= 0.0 or tnr <= 0.0:
        return 0.0
    return 2.0 * tpr * tnr / (tpr + tnr)


def _decision_stats(
    id_arr: np.ndarray, ood_arr: np.ndarray, threshold: float
) -> OodDecisionStats:
    tpr = float(np.mean(id_arr < threshold))
    tnr = float(np.mean(ood_arr >= threshold))
    return OodDecisionStats(tpr=tpr, tnr=tnr, ba=balanced_accuracy(tpr, tnr), threshold=threshold)


def select_threshold_ba(
    pseudo_id_unc: Sequence[float], pseudo_ood_unc: Sequence[float]
) -> tuple[float, OodDecisionStats]:
    """Pick the acceptance threshold maximizing balanced accuracy.

    Accepting means uncertainty strictly below the threshold (so the
    empty-image sentinel always rejects).  Candidates are the midpoints
    between consecutive distinct pooled values plus both infinities;
    ties resolve toward the larger threshold.
    """
    if len(pseudo_id_unc) == 0 or len(pseudo_ood_unc) == 0:
        raise EmptySplit("both pseudo splits must be non-empty")
    id_arr = np.asarray(pseudo_id_unc, dtype=float)
    ood_arr = np.asarray(pseudo_ood_unc, dtype=float)
    distinct = np.unique(np.concatenate([id_arr, ood_arr]))
    candidates = [-math.inf]
    candidates.extend(((distinct[:-1] + distinct[1:]) / 2.0).tolist())
    candidates.append(math.inf)
    best: Optional[OodDecisionStats] = None
    for threshold in candidates:  # ascending; >= keeps the larger threshold on ties
        stats = _decision_stats(id_arr, ood_arr, threshold)
        if best is None or stats.ba >= best.ba:
            best = stats
    assert best is not None
    if best.ba == 0.0:
        warnings.warn("no threshold separates the pseudo splits; balanced accuracy is 0")
    return best.threshold, best


def threshold_at_tpr(id_uncertainties: Sequence[float], target_tpr: float = 0.95) -> float:
    """Smallest threshold accepting at least the target fraction of ID values."""
    if len(id_uncertainties) == 0:
        raise EmptySplit("need at least one ID value")
    if not 0.0 <= target_tpr <= 1.0:
        raise ConfigurationError(f"target rate {target_tpr} outside [0, 1]")
    n = len(id_uncertainties)
    k = math.ceil(target_tpr * n - 1e-12)
    if k <= 0:
        return -math.inf
    kth = float(np.sort(np.asarray(id_uncertainties, dtype=float))[k - 1])
    return math.nextafter(kth, math.inf)


def write_uncertainty_dump(entries: Sequence[tuple[int, float, str]], path) -> None:
    """Write [{"image_id", "uncertainty", "split"}, ...]."""
    payload = [
        {"image_id": iid, "uncertainty": value, "split": split}
        for iid, value, split in entries
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_uncertainty_dump(path) -> list[tuple[int, float, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise InputDataError(f"{path}: top level must be an array")
    out = []
    for rec in payload:
        try:
            out.append((int(rec["image_id"]), float(rec["uncertainty"]), str(rec["split"])))
        except (TypeError, KeyError, ValueError) as exc:
            raise InputDataError(f"{path}: bad record {rec!r}") from exc
    return out
