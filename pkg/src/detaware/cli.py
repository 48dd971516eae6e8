"""Command line front end.

Subcommands cover the full workflow: synthesize fixtures, evaluate a
detection file, derive the self-aware configuration from validation
data, and score the three-split composite.  Every run is deterministic
for fixed inputs; reports are written as sorted JSON plus a fixed-width
text table, with figures rendered next to the delimited outputs.

Exit codes: 0 on success, 2 when input data is unreadable or invalid,
3 when the configuration (flags or config file) is at fault.  Errors
print one line to stderr: ``error: <ExceptionClassName>: <message>``.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .accuracy import (
    coco_ap,
    dataset_ap,
    dataset_lrp,
    lrp_optimal_thresholds,
    pr_curve,
)
from .calibration import (
    CALIBRATOR_KINDS,
    DEFAULT_BINS,
    apply_calibrator,
    calibration_targets,
    fit_calibrator,
    laece,
    laece_per_class,
    reliability_diagram,
    save_calibrator,
    write_reliability_csv,
)
from .datamodel import (
    SPLIT_TAGS,
    ConfigurationError,
    DetectionSet,
    GroundTruthSet,
    InputDataError,
    ToolkitError,
    load_detections,
    load_ground_truth,
    save_detections,
    save_ground_truth,
)
from .matching import DEFAULT_TAU, match_class
from .saod import (
    evaluate_saod,
    load_self_aware_config,
    make_self_aware,
    report_table,
    report_to_json_obj,
    save_self_aware_config,
)
from .testkit import generate_bundle
from .uncertainty import (
    EmptySplit,
    _parse_strategy,
    aggregate,
    uncertainty_score,
    write_uncertainty_dump,
)

__all__ = ["main"]

_CONFIG_KEYS = (
    "gt",
    "dets",
    "dets_corrupt",
    "dets_ood",
    "sa",
    "split",
    "tau",
    "bins",
    "agg",
    "calibrator",
    "out",
    "seed",
)

_DEFAULTS = {
    "tau": DEFAULT_TAU,
    "bins": DEFAULT_BINS,
    "agg": "top_3",
    "calibrator": "LR",
    "out": ".",
    "seed": 0,
}

_CASTS = {"tau": float, "bins": int, "seed": int}


class _Parser(argparse.ArgumentParser):
    """argparse normally exits on its own; route through our codes."""

    def error(self, message: str):  # noqa: D102 - argparse hook
        raise ConfigurationError(message)


def _load_config_file(path: str) -> dict[str, str]:
    """Flat ``key = value`` lines; blank lines and # comments skipped."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _CONFIG_KEYS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            mapping[key] = value.strip()
    return mapping


def _resolve(ns: argparse.Namespace) -> dict:
    """Effective settings: flag beats config file beats default."""
    from_file: dict[str, str] = {}
    if getattr(ns, "config", None):
        from_file = _load_config_file(ns.config)
    settings: dict = {}
    for key in _CONFIG_KEYS:
        value = getattr(ns, key, None)
        if value is None and key in from_file:
            raw = from_file[key]
            cast = _CASTS.get(key, str)
            try:
                value = cast(raw)
            except ValueError:
                raise ConfigurationError(f"config key {key}={raw!r} is not a {cast.__name__}")
        if value is None:
            value = _DEFAULTS.get(key)
        settings[key] = value
    if not 0.0 <= settings["tau"] < 1.0:
        raise ConfigurationError(f"tau {settings['tau']} outside [0, 1)")
    if settings["bins"] < 1:
        raise ConfigurationError(f"bins must be positive, got {settings['bins']}")
    if settings["calibrator"] not in CALIBRATOR_KINDS:
        raise ConfigurationError(f"calibrator must be one of {CALIBRATOR_KINDS}")
    if settings["split"] is not None and settings["split"] not in SPLIT_TAGS:
        raise ConfigurationError(f"split must be one of {SPLIT_TAGS}")
    _parse_strategy(settings["agg"])
    return settings


def _need(settings: dict, key: str) -> str:
    value = settings.get(key)
    if value is None:
        flag = "--" + key.replace("_", "-")
        raise ConfigurationError(f"missing required setting {flag}")
    return value


def _out_dir(settings: dict) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_pair(settings: dict) -> tuple[GroundTruthSet, DetectionSet]:
    gts = load_ground_truth(_need(settings, "gt"))
    dets = load_detections(_need(settings, "dets"), gts.universe)
    split = settings.get("split")
    if split is not None:
        ids = gts.image_ids(split)
        if not ids:
            raise EmptySplit(f"split {split} holds no images")
        gts = gts.subset(ids)
        dets = dets.subset(ids)
    return gts, dets


def cmd_evaluate(settings: dict) -> int:
    """Accuracy and calibration tables for one detection file."""
    gts, dets = _load_pair(settings)
    tau, bins = settings["tau"], settings["bins"]
    out = _out_dir(settings)

    mean_ap, per_ap = dataset_ap(dets, gts, tau)
    coco = coco_ap(dets, gts)
    mean_lrp, per_lrp = dataset_lrp(dets, gts, tau)
    laece_value = laece(dets, gts, tau, bins)
    per_laece = laece_per_class(dets, gts, tau, bins)

    per_class = {}
    for c in sorted(per_ap):
        row = {"ap": per_ap[c]}
        r = per_lrp[c]
        row.update(lrp=r.lrp, lrp_loc=r.lrp_loc, lrp_fp=r.lrp_fp, lrp_fn=r.lrp_fn)
        row["laece"] = per_laece.get(c)
        per_class[str(c)] = row
    _write_json(
        {
            "ap": mean_ap,
            "coco_ap": coco,
            "lrp": mean_lrp,
            "laece": laece_value,
            "tau": tau,
            "bins": bins,
            "per_class": per_class,
        },
        out / "metrics.json",
    )

    with open(out / "per_class.csv", "w", encoding="utf-8") as fh:
        fh.write("class,ap,lrp,lrp_loc,lrp_fp,lrp_fn,laece\n")
        for c in sorted(per_ap):
            r = per_lrp[c]
            cells = [per_ap[c], r.lrp, r.lrp_loc, r.lrp_fp, r.lrp_fn]
            laece_cell = per_laece.get(c)
            tail = repr(laece_cell) if laece_cell is not None else ""
            fh.write(f"{c}," + ",".join(repr(v) for v in cells) + f",{tail}\n")

    diagram = reliability_diagram(dets, gts, tau, bins)
    write_reliability_csv(diagram, out / "reliability.csv")

    from .plots import save_pr_figure, save_reliability_figure

    curves = {}
    for c in sorted(per_ap):
        class_dets = dets.by_class(c)
        class_gts = gts.by_class(c)
        assignment = match_class(class_dets, class_gts, tau)
        curves[c] = pr_curve(assignment.labels_in_rank_order(), len(class_gts))
    save_pr_figure(curves, str(out / "pr_curves.png"))
    save_reliability_figure(diagram, str(out / "reliability.png"))

    print(
        f"AP {mean_ap:.4f}  COCO-AP {coco:.4f}  LRP {mean_lrp:.4f}  "
        f"LaECE {laece_value:.4f}  ({len(per_ap)} classes, tau {tau})"
    )
    return 0


def cmd_make_self_aware(settings: dict) -> int:
    """Fit thresholds and calibrator from the validation split."""
    gts = load_ground_truth(_need(settings, "gt"))
    val_ids = gts.image_ids("VAL")
    val_gts = gts.subset(val_ids) if val_ids else gts
    universe = gts.universe
    val_dets = load_detections(_need(settings, "dets"), universe)
    if val_ids:
        val_dets = val_dets.subset(val_ids)
    pseudo = load_detections(_need(settings, "dets_ood"), universe)
    config = make_self_aware(
        val_dets,
        val_gts,
        pseudo,
        tau=settings["tau"],
        J=settings["bins"],
        aggregation=settings["agg"],
        calibrator_kind=settings["calibrator"],
    )
    out = _out_dir(settings)
    save_self_aware_config(config, out / "selfaware.json")
    stats = config.val_stats
    ba = stats.ba if stats is not None else float("nan")
    print(f"image threshold {config.image_threshold:.6g}  validation BA {ba:.4f}")
    return 0


def cmd_saod(settings: dict) -> int:
    """Three-split composite evaluation under a self-aware config."""
    gts = load_ground_truth(_need(settings, "gt"))
    universe = gts.universe
    id_dets = load_detections(_need(settings, "dets"), universe)
    corrupt_dets = load_detections(_need(settings, "dets_corrupt"), universe)
    ood_dets = load_detections(_need(settings, "dets_ood"), universe)
    config = load_self_aware_config(_need(settings, "sa"))
    report = evaluate_saod(
        config, gts, id_dets, corrupt_dets, ood_dets,
        tau=settings["tau"], J=settings["bins"],
    )
    out = _out_dir(settings)
    _write_json(report_to_json_obj(report), out / "report.json")
    table = report_table(report)
    with open(out / "report.txt", "w", encoding="utf-8") as fh:
        fh.write(table)

    from .plots import save_component_figure

    save_component_figure(
        {
            "DAQ": report.daq,
            "BA": report.ba,
            "IDQ": report.idq,
            "IDQ_T": report.idq_t,
        },
        str(out / "components.png"),
    )
    sys.stdout.write(table)
    return 0


def cmd_synth(settings: dict) -> int:
    """Write a deterministic synthetic bundle for the given seed."""
    bundle = generate_bundle(settings["seed"])
    out = _out_dir(settings)
    save_ground_truth(bundle["gt"], out / "gt.json")
    names = ["id", "val", "corrupt", "ood", "pseudo_ood"]
    for name in names:
        save_detections(bundle[name], out / f"dets_{name}.json")
    print(f"wrote gt.json and dets_{{{','.join(names)}}}.json to {out}")
    return 0


def cmd_calibrate(settings: dict) -> int:
    """Fit a per-class calibrator on matched detections."""
    gts, dets = _load_pair(settings)
    tau, bins = settings["tau"], settings["bins"]
    pairs = {}
    for c in dets.universe.class_ids:
        class_dets = dets.by_class(c)
        if not class_dets:
            continue
        assignment = match_class(class_dets, gts.by_class(c), tau)
        targets = calibration_targets(assignment)
        pairs[c] = ([d.score for d in class_dets], [float(t) for t in targets])
    model = fit_calibrator(settings["calibrator"], pairs, list(dets.universe.class_ids), bins)
    out = _out_dir(settings)
    save_calibrator(model, out / "calibrator.json")
    calibrated = apply_calibrator(model, dets)
    before = laece(dets, gts, tau, bins)
    after = laece(calibrated, gts, tau, bins)
    save_detections(calibrated, out / "dets_calibrated.json")
    print(f"{settings['calibrator']} calibrator: LaECE {before:.4f} -> {after:.4f}")
    return 0


def cmd_threshold(settings: dict) -> int:
    """Per-class score thresholds minimizing the class LRP."""
    gts, dets = _load_pair(settings)
    thresholds = lrp_optimal_thresholds(dets, gts, settings["tau"])
    out = _out_dir(settings)
    payload = {
        str(c): ("inf" if v == float("inf") else v) for c, v in thresholds.items()
    }
    _write_json(payload, out / "thresholds.json")
    finite = [v for v in thresholds.values() if v != float("inf")]
    print(f"{len(finite)}/{len(thresholds)} classes with finite thresholds")
    return 0


def cmd_uncertainty(settings: dict) -> int:
    """Image-level uncertainties for every image in the ground truth."""
    gts, dets = _load_pair(settings)
    entries = []
    for rec in gts.images:
        values = [uncertainty_score(d) for d in dets.by_image(rec.image_id)]
        result = aggregate(values, settings["agg"], image_id=rec.image_id)
        entries.append((rec.image_id, result.value, rec.split_tag))
    out = _out_dir(settings)
    write_uncertainty_dump(entries, out / "uncertainties.json")
    print(f"wrote {len(entries)} image uncertainties ({settings['agg']})")
    return 0


_COMMANDS = {
    "evaluate": cmd_evaluate,
    "make-self-aware": cmd_make_self_aware,
    "saod-eval": cmd_saod,
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
    "threshold": cmd_threshold,
    "uncertainty": cmd_uncertainty,
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="detaware", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def add(name: str, help_text: str, *flags: str) -> None:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key = value settings file; flags win")
        for flag in flags:
            dest = flag.replace("-", "_")
            kwargs: dict = {"default": None}
            if dest in _CASTS:
                kwargs["type"] = _CASTS[dest]
            p.add_argument(f"--{flag}", dest=dest, **kwargs)

    add("evaluate", "accuracy and calibration of one detection file",
        "gt", "dets", "split", "tau", "bins", "out")
    add("make-self-aware", "derive thresholds and calibrator from validation data",
        "gt", "dets", "dets-ood", "tau", "bins", "agg", "calibrator", "out")
    add("saod-eval", "composite three-split evaluation",
        "gt", "dets", "dets-corrupt", "dets-ood", "sa", "tau", "bins", "out")
    add("synth", "write a deterministic synthetic bundle", "seed", "out")
    add("calibrate", "fit a confidence calibrator", "gt", "dets", "split", "tau",
        "bins", "calibrator", "out")
    add("threshold", "per-class LRP-optimal score thresholds",
        "gt", "dets", "split", "tau", "out")
    add("uncertainty", "image-level uncertainties", "gt", "dets", "split", "agg", "out")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise ConfigurationError("no command given; see --help")
        settings = _resolve(ns)
        return _COMMANDS[ns.command](settings)
    except ConfigurationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except InputDataError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ToolkitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
