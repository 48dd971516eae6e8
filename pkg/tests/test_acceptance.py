"""Acceptance gate: nine criteria, one pass/fail line each.

Each test prints ``criterion N: PASS/FAIL - detail`` (visible under
``pytest -s``; pytest's own report carries the verdict either way) and
then asserts.  Tolerances are pinned in the asserts, not in fixtures.

Criteria:
  1. composite recomposition from stored components (abs 0.001, < 1 s)
  2. balanced-accuracy formula anchor (abs 0.001)
  3. score-0 dummy invariance and low-score TP monotonicity of AP over
     >= 10,000 seeded random instances (< 30 s)
  4. dummy padding drives calibration error down and LRP up while AP
     stays put, through padding targets {none, 100, 300, 500}
  5. production AP / LRP / calibration error vs line-by-line reference
     evaluators on 1,000 tiny instances (abs 1e-12)
  6. score-replacement optimality of the calibration target, and all
     three calibrator fits improving an overconfident detector
  7. calibration error invariant to the matching threshold when every
     TP overlap clears the swept range (bit-identical)
  8. aggregation ordering on 10,000 vectors; rank-statistic invariance
     under strictly increasing transforms on 1,000 pairs
  9. end-to-end determinism: byte-identical reruns, perfect-detector
     composite exactly 1, accept-everything composite exactly 0
"""
import struct
import time
from dataclasses import replace

import numpy as np

from detaware import (
    BoundingBox,
    ClassUniverse,
    Detection,
    DetectionSet,
    GroundTruth,
    GroundTruthSet,
    ImageRecord,
    SyntheticSpec,
    aggregate,
    auroc,
    average_precision,
    balanced_accuracy,
    brute_force_ap,
    brute_force_laece,
    brute_force_lrp,
    compose_idq,
    daq,
    dataset_ap,
    dataset_lrp,
    evaluate_saod,
    fit_calibrator,
    generate,
    inject_dummies,
    laece,
    lrp,
    make_self_aware,
    match_class,
    oracle_bundle,
    pr_curve,
)
from detaware.calibration import calibration_targets
from detaware.cli import main as cli_main
from detaware.testkit import brute_force_ap as bf_ap  # alias used in loops


def _verdict(n: int, ok: bool, detail: str) -> None:
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {n}: {detail}"


def test_criterion_1_composite_recomposition():
    t0 = time.perf_counter()
    idq_v = compose_idq(0.749, 0.173)
    daq_v = daq(0.877, 0.385, 0.262)
    daq_av = daq(0.858, 0.435, 0.308)
    elapsed = time.perf_counter() - t0
    ok = (
        abs(idq_v - 0.385) <= 0.001
        and abs(daq_v - 0.397) <= 0.001
        and abs(daq_av - 0.447) <= 0.001
        and elapsed < 1.0
    )
    _verdict(1, ok, f"idq {idq_v:.4f} daq {daq_v:.4f}/{daq_av:.4f} in {elapsed * 1e3:.1f} ms")


def test_criterion_2_balanced_accuracy_anchor():
    ba = balanced_accuracy(0.947, 0.816)
    _verdict(2, abs(ba - 0.877) <= 0.001, f"ba(0.947, 0.816) = {ba:.4f}")


def _random_instance(rng):
    """One tiny single-class instance: boxes near each other on purpose."""
    n_gt = int(rng.integers(0, 5))
    n_det = int(rng.integers(0, 9))
    if n_gt == 0 and n_det == 0:
        n_det = 1
    gts = []
    for _ in range(n_gt):
        x = float(rng.uniform(0, 40))
        y = float(rng.uniform(0, 40))
        w = float(rng.uniform(2, 12))
        h = float(rng.uniform(2, 12))
        gts.append(GroundTruth(image_id=1, class_id=1, box=BoundingBox(x, y, x + w, y + h)))
    dets = []
    for _ in range(n_det):
        if gts and rng.random() < 0.7:
            base = gts[int(rng.integers(0, len(gts)))].box
            dx = float(rng.uniform(-4, 4))
            dy = float(rng.uniform(-4, 4))
            box = BoundingBox(base.x_min + dx, base.y_min + dy, base.x_max + dx, base.y_max + dy)
        else:
            x = float(rng.uniform(0, 40))
            y = float(rng.uniform(0, 40))
            box = BoundingBox(x, y, x + float(rng.uniform(2, 12)), y + float(rng.uniform(2, 12)))
        score = float(rng.uniform(0.05, 1.0))
        dets.append(Detection(image_id=1, class_id=1, score=score, box=box))
    return dets, gts


def _ap_of(dets, gts, tau):
    a = match_class(dets, gts, tau)
    return average_precision(pr_curve(a.labels_in_rank_order(), len(gts)))


def test_criterion_3_dummy_invariance_and_tp_monotonicity():
    rng = np.random.Generator(np.random.Philox(1234))
    taus = (0.1, 0.25, 0.5)
    trials = 10_000
    worst_drift = 0.0
    worst_drop = 0.0
    t0 = time.perf_counter()
    for trial in range(trials):
        dets, gts = _random_instance(rng)
        tau = taus[trial % 3]
        base = _ap_of(dets, gts, tau)

        k = int(rng.integers(1, 4))
        dummies = [
            Detection(image_id=1, class_id=1, score=0.0,
                      box=BoundingBox(2000.0 + 2 * i, 0.0, 2001.0 + 2 * i, 1.0))
            for i in range(k)
        ]
        drift = abs(_ap_of(dets + dummies, gts, tau) - base)
        worst_drift = max(worst_drift, drift)

        assignment = match_class(dets, gts, tau)
        missed = [gts[j] for j in range(len(gts)) if not assignment.gt_matched[j]]
        if missed:
            floor = min((d.score for d in dets), default=1.0)
            extras = [
                Detection(image_id=1, class_id=1, score=floor * 0.5 / (i + 1), box=g.box)
                for i, g in enumerate(missed)
            ]
            gained = _ap_of(dets + extras, gts, tau) - base
            worst_drop = max(worst_drop, -gained)
    elapsed = time.perf_counter() - t0
    ok = worst_drift <= 1e-12 and worst_drop <= 1e-12 and elapsed < 30.0
    _verdict(
        3,
        ok,
        f"{trials} instances: max dummy drift {worst_drift:.2e}, "
        f"max TP-append drop {worst_drop:.2e}, {elapsed:.1f} s",
    )


def test_criterion_4_dummy_padding_pathology():
    gts, dets = generate(SyntheticSpec(seed=77, num_images=10, fp_per_image=1.0))
    levels = [dets] + [inject_dummies(dets, k, seed=5) for k in (100, 300, 500)]
    aps = []
    laeces = []
    lrps = []
    for level in levels:
        aps.append(dataset_ap(level, gts, 0.1)[0])
        laeces.append(laece(level, gts, 0.1, 25))
        lrps.append(dataset_lrp(level, gts, 0.1)[0])
    ap_constant = all(abs(v - aps[0]) <= 1e-12 for v in aps)
    laece_down = all(b < a for a, b in zip(laeces, laeces[1:]))
    lrp_up = all(b > a for a, b in zip(lrps, lrps[1:]))
    ok = ap_constant and laece_down and lrp_up
    _verdict(
        4,
        ok,
        f"ap {aps[0]:.4f} constant; laece {laeces[0]:.4f}->{laeces[-1]:.4f} down; "
        f"lrp {lrps[0]:.4f}->{lrps[-1]:.4f} up",
    )


def test_criterion_5_oracle_equivalence():
    rng = np.random.Generator(np.random.Philox(4321))
    taus = (0.1, 0.3, 0.5)
    worst = 0.0
    for trial in range(1_000):
        dets, gts = _random_instance(rng)
        tau = taus[trial % 3]

        prod_ap = _ap_of(dets, gts, tau)
        worst = max(worst, abs(prod_ap - bf_ap(dets, gts, tau)))

        assignment = match_class(dets, gts, tau)
        if assignment.n_tp + assignment.n_fp + assignment.n_fn > 0:
            worst = max(worst, abs(lrp(assignment).lrp - brute_force_lrp(dets, gts, tau)))

        # widen to two classes for the dataset-level calibration error
        split = [replace(d, class_id=1 + i % 2) for i, d in enumerate(dets)]
        split_gts = [replace(g, class_id=1 + i % 2) for i, g in enumerate(gts)]
        uni = ClassUniverse(K=2)
        dset = DetectionSet(universe=uni, records=tuple(split))
        gset = GroundTruthSet(
            universe=uni, records=tuple(split_gts), images=(ImageRecord(image_id=1),)
        )
        if split:
            prod_laece = laece(dset, gset, tau, 25)
            ref_laece = brute_force_laece(split, split_gts, tau, 25)
            worst = max(worst, abs(prod_laece - ref_laece))
    _verdict(5, worst <= 1e-12, f"1,000 instances, max |production - reference| {worst:.2e}")


def _replace_scores_by_targets(dets: DetectionSet, gts: GroundTruthSet, tau: float) -> DetectionSet:
    scores = [d.score for d in dets.records]
    index_of = {id(d): i for i, d in enumerate(dets.records)}
    for c in dets.universe.class_ids:
        class_dets = dets.by_class(c)
        if not class_dets:
            continue
        targets = calibration_targets(match_class(class_dets, gts.by_class(c), tau))
        for d, t in zip(class_dets, targets):
            scores[index_of[id(d)]] = float(t)
    return dets.with_scores(scores)


def test_criterion_6_calibration_target_optimality():
    # replacing every score by its target zeroes the binned error; the
    # generator guarantees an unambiguous assignment, so re-matching
    # under the new scores cannot change any label
    gts, dets = generate(SyntheticSpec(seed=101, num_images=12, fp_per_image=1.5))
    replaced = _replace_scores_by_targets(dets, gts, 0.1)
    laece_replaced = laece(replaced, gts, 0.1, 25)

    # held-out improvement for every calibrator kind
    over = SyntheticSpec(seed=202, confidence="overconfident", delta=0.2,
                         num_images=16, fp_per_image=1.0)
    train_gts, train_dets = generate(over)
    held_gts, held_dets = generate(replace(over, seed=303))
    pairs = {}
    for c in train_dets.universe.class_ids:
        class_dets = train_dets.by_class(c)
        if not class_dets:
            continue
        targets = calibration_targets(match_class(class_dets, train_gts.by_class(c), 0.1))
        pairs[c] = ([d.score for d in class_dets], [float(t) for t in targets])
    before = laece(held_dets, held_gts, 0.1, 25)
    after = {}
    for kind in ("HB", "LR", "IR"):
        model = fit_calibrator(kind, pairs, list(train_dets.universe.class_ids), 25)
        calibrated = held_dets.with_scores(
            [model.apply_one(d.class_id, d.score) for d in held_dets.records]
        )
        after[kind] = laece(calibrated, held_gts, 0.1, 25)
    improved = all(v < before for v in after.values())
    ok = laece_replaced < 1e-12 and improved
    _verdict(
        6,
        ok,
        f"target-replaced laece {laece_replaced:.2e}; overconfident {before:.3f} -> "
        + " ".join(f"{k} {v:.3f}" for k, v in after.items()),
    )


def test_criterion_7_tau_insensitivity_below_tp_overlap():
    gts, dets = generate(
        SyntheticSpec(seed=55, num_images=10, iou_low=0.55, iou_high=0.95, fp_per_image=2.0)
    )
    values = [laece(dets, gts, tau, 25) for tau in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)]
    blobs = {struct.pack("<d", v) for v in values}
    ok = len(blobs) == 1
    _verdict(7, ok, f"laece {values[0]:.6f} bit-identical across 6 thresholds: {ok}")


def test_criterion_8_aggregation_and_rank_invariance():
    rng = np.random.Generator(np.random.Philox(999))
    slack = 1e-12  # float dust from averaging subsets
    ordered = True
    for _ in range(10_000):
        n = int(rng.integers(1, 13))
        values = rng.uniform(0.0, 2.0, n).tolist()
        m = int(rng.integers(1, 6))
        v_min = aggregate(values, "min").value
        v_top = aggregate(values, f"top_{m}").value
        v_mean = aggregate(values, "mean").value
        v_sum = aggregate(values, "sum").value
        if not (v_min <= v_top + slack and v_top <= v_mean + slack and v_mean <= v_sum + slack):
            ordered = False
            break

    invariant = True
    for _ in range(1_000):
        n_id = int(rng.integers(3, 21))
        n_ood = int(rng.integers(3, 21))
        # coarse grid values so the transforms cannot collapse distinct inputs
        id_u = (rng.integers(0, 129, n_id) / 64.0).tolist()
        ood_u = (rng.integers(0, 129, n_ood) / 64.0).tolist()
        base = auroc(id_u, ood_u)
        affine = auroc([2 * v + 3 for v in id_u], [2 * v + 3 for v in ood_u])
        cubic = auroc([v ** 3 for v in id_u], [v ** 3 for v in ood_u])
        if not (base == affine == cubic):
            invariant = False
            break
    ok = ordered and invariant
    _verdict(8, ok, f"ordering on 10,000 vectors: {ordered}; transform invariance: {invariant}")


def test_criterion_9_end_to_end_determinism(tmp_path):
    data = tmp_path / "data"
    assert cli_main(["synth", "--seed", "11", "--out", str(data)]) == 0
    sa = tmp_path / "sa"
    assert cli_main([
        "make-self-aware", "--gt", str(data / "gt.json"),
        "--dets", str(data / "dets_val.json"),
        "--dets-ood", str(data / "dets_pseudo_ood.json"), "--out", str(sa),
    ]) == 0
    outs = []
    for name in ("run1", "run2"):
        out = tmp_path / name
        assert cli_main([
            "saod-eval", "--gt", str(data / "gt.json"),
            "--dets", str(data / "dets_id.json"),
            "--dets-corrupt", str(data / "dets_corrupt.json"),
            "--dets-ood", str(data / "dets_ood.json"),
            "--sa", str(sa / "selfaware.json"), "--out", str(out),
        ]) == 0
        outs.append(out)
    identical = all(
        (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
        for n in ("report.json", "report.txt")
    )

    bundle = oracle_bundle(3)
    gts = bundle["gt"]
    config = make_self_aware(
        bundle["val"], gts.subset(gts.image_ids("VAL")), bundle["pseudo_ood"]
    )
    perfect = evaluate_saod(config, gts, bundle["id"], bundle["corrupt"], bundle["ood"])

    # a threshold above the empty-image sentinel accepts everything
    accept_all = replace(config, image_threshold=4.0e12)
    flooded = evaluate_saod(accept_all, gts, bundle["id"], bundle["corrupt"], bundle["ood"])

    ok = identical and perfect.daq == 1.0 and flooded.daq == 0.0
    _verdict(
        9,
        ok,
        f"reruns byte-identical: {identical}; oracle daq {perfect.daq}; "
        f"accept-all daq {flooded.daq}",
    )
