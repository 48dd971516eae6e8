"""Evaluation toolkit for self-aware object detection.

The library scores a detector on three fronts: accuracy (AP and LRP),
confidence calibration (binned gap between confidence and the precision
times IoU it should predict), and the quality of accept/reject
decisions on out-of-distribution images.  The three meet in a single
composite, the harmonic mean of balanced accuracy and the thresholded,
calibrated detection quality on clean and corrupted data.
"""
from .datamodel import (
    BoundingBox,
    ClassUniverse,
    ConfigurationError,
    CovarianceNotPositive,
    Detection,
    DetectionSet,
    DuplicateImageId,
    GroundTruth,
    GroundTruthSet,
    ImageRecord,
    InputDataError,
    MalformedFile,
    ScoreOutOfRange,
    ToolkitError,
    UnknownClass,
    iou,
    load_detections,
    load_ground_truth,
    save_detections,
    save_ground_truth,
)
from .matching import DEFAULT_TAU, DetectionMatch, InvalidTau, MatchAssignment, match_class
from .accuracy import (
    COCO_TAUS,
    DegenerateInstance,
    EmptyCurve,
    LrpResult,
    PRCurve,
    average_precision,
    class_ap,
    coco_ap,
    dataset_ap,
    dataset_lrp,
    lrp,
    lrp_optimal_thresholds,
    pr_curve,
)
from .calibration import (
    CALIBRATOR_KINDS,
    DEFAULT_BINS,
    CalibratorModel,
    MissingClassModel,
    NoDetections,
    ReliabilityDiagram,
    apply_calibrator,
    calibration_targets,
    fit_calibrator,
    laece,
    laece_class,
    laece_per_class,
    load_calibrator,
    reliability_diagram,
    save_calibrator,
    write_reliability_csv,
)
from .uncertainty import (
    SENTINEL_UNCERTAINTY,
    DegenerateBounds,
    EmptySplit,
    ImageUncertainty,
    NonFiniteLogit,
    OodDecisionStats,
    aggregate,
    auroc,
    balanced_accuracy,
    combine_cls_loc,
    dempster_shafer,
    entropy_softmax,
    image_uncertainty_map,
    load_raster,
    loc_uncertainty,
    mask_boxes,
    save_raster,
    select_threshold_ba,
    threshold_at_tpr,
    uncertainty_score,
)
from .saod import (
    MissingDecisions,
    MissingSeverity,
    SaodReport,
    SelfAwareConfig,
    SplitOverlap,
    daq,
    compose_idq,
    evaluate_saod,
    harmonic_mean,
    idq,
    idq_t,
    load_self_aware_config,
    make_self_aware,
    report_table,
    save_self_aware_config,
    self_aware_inference,
)
from .testkit import (
    InfeasibleSpec,
    SyntheticSpec,
    brute_force_ap,
    brute_force_laece,
    brute_force_lrp,
    generate,
    generate_bundle,
    inject_dummies,
    oracle_bundle,
)

__version__ = "0.1.0"
