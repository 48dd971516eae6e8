"""Command-line surface: subcommands, config files, exit codes."""
import json
import subprocess
import sys

import pytest

from detaware import inject_dummies, load_detections, load_ground_truth, save_detections
from detaware.cli import main


@pytest.fixture(scope="module")
def bundle_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    assert main(["synth", "--seed", "11", "--out", str(out)]) == 0
    return out


def test_synth_writes_expected_files(bundle_dir):
    names = ["gt.json", "dets_id.json", "dets_val.json", "dets_corrupt.json",
             "dets_ood.json", "dets_pseudo_ood.json"]
    for name in names:
        assert (bundle_dir / name).exists()


def test_synth_is_byte_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["synth", "--seed", "3", "--out", str(a)]) == 0
    assert main(["synth", "--seed", "3", "--out", str(b)]) == 0
    for name in ("gt.json", "dets_id.json", "dets_ood.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_evaluate_outputs(bundle_dir, tmp_path, capsys):
    out = tmp_path / "eval"
    code = main([
        "evaluate", "--gt", str(bundle_dir / "gt.json"),
        "--dets", str(bundle_dir / "dets_id.json"),
        "--split", "ID", "--out", str(out),
    ])
    assert code == 0
    for name in ("metrics.json", "per_class.csv", "reliability.csv",
                 "reliability.png", "pr_curves.png"):
        assert (out / name).exists()
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics) >= {"ap", "coco_ap", "lrp", "laece", "per_class"}
    assert 0.0 <= metrics["ap"] <= 1.0
    header = (out / "per_class.csv").read_text().splitlines()[0]
    assert header == "class,ap,lrp,lrp_loc,lrp_fp,lrp_fn,laece"
    assert "AP" in capsys.readouterr().out


def test_evaluate_dummy_padding_same_ap_lower_laece(bundle_dir, tmp_path):
    gts = load_ground_truth(bundle_dir / "gt.json")
    dets = load_detections(bundle_dir / "dets_id.json", gts.universe)
    padded_path = tmp_path / "dets_padded.json"
    save_detections(inject_dummies(dets, 120, seed=1), padded_path)

    out_a = tmp_path / "plain"
    out_b = tmp_path / "padded"
    args = ["evaluate", "--gt", str(bundle_dir / "gt.json"), "--split", "ID"]
    assert main(args + ["--dets", str(bundle_dir / "dets_id.json"), "--out", str(out_a)]) == 0
    assert main(args + ["--dets", str(padded_path), "--out", str(out_b)]) == 0
    plain = json.loads((out_a / "metrics.json").read_text())
    padded = json.loads((out_b / "metrics.json").read_text())
    assert padded["ap"] == pytest.approx(plain["ap"], abs=1e-12)
    assert padded["laece"] < plain["laece"]


def test_full_chain_and_rerun_identity(bundle_dir, tmp_path):
    sa_dir = tmp_path / "sa"
    code = main([
        "make-self-aware", "--gt", str(bundle_dir / "gt.json"),
        "--dets", str(bundle_dir / "dets_val.json"),
        "--dets-ood", str(bundle_dir / "dets_pseudo_ood.json"),
        "--out", str(sa_dir),
    ])
    assert code == 0
    assert (sa_dir / "selfaware.json").exists()

    runs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        code = main([
            "saod-eval", "--gt", str(bundle_dir / "gt.json"),
            "--dets", str(bundle_dir / "dets_id.json"),
            "--dets-corrupt", str(bundle_dir / "dets_corrupt.json"),
            "--dets-ood", str(bundle_dir / "dets_ood.json"),
            "--sa", str(sa_dir / "selfaware.json"),
            "--out", str(out),
        ])
        assert code == 0
        runs.append(out)
    for name in ("report.json", "report.txt"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
    report = json.loads((runs[0] / "report.json").read_text())
    assert {"daq", "ba", "idq", "idq_t"} <= set(report)
    table = (runs[0] / "report.txt").read_text()
    assert table.splitlines()[0].split()[0] == "DAQ"


def test_calibrate_and_threshold_and_uncertainty(bundle_dir, tmp_path, capsys):
    out = tmp_path / "aux"
    gt = str(bundle_dir / "gt.json")
    assert main(["calibrate", "--gt", gt, "--dets", str(bundle_dir / "dets_val.json"),
                 "--split", "VAL", "--calibrator", "IR", "--out", str(out)]) == 0
    assert (out / "calibrator.json").exists()
    assert (out / "dets_calibrated.json").exists()

    assert main(["threshold", "--gt", gt, "--dets", str(bundle_dir / "dets_val.json"),
                 "--split", "VAL", "--out", str(out)]) == 0
    thresholds = json.loads((out / "thresholds.json").read_text())
    assert set(thresholds) == {"1", "2", "3"}

    assert main(["uncertainty", "--gt", gt, "--dets", str(bundle_dir / "dets_id.json"),
                 "--agg", "top_3", "--out", str(out)]) == 0
    dump = json.loads((out / "uncertainties.json").read_text())
    assert {e["split"] for e in dump} == {"ID", "VAL", "CORRUPT", "OOD"}
    capsys.readouterr()


def test_config_file_with_flag_override(bundle_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# run settings\n"
        f"gt = {bundle_dir / 'gt.json'}\n"
        f"dets = {bundle_dir / 'dets_id.json'}\n"
        "split = ID\n"
        "tau = 0.25\n"
        f"out = {tmp_path / 'from_cfg'}\n"
    )
    assert main(["evaluate", "--config", str(cfg)]) == 0
    metrics = json.loads((tmp_path / "from_cfg" / "metrics.json").read_text())
    assert metrics["tau"] == 0.25
    # the flag wins over the file
    assert main(["evaluate", "--config", str(cfg), "--tau", "0.4",
                 "--out", str(tmp_path / "flag_wins")]) == 0
    metrics = json.loads((tmp_path / "flag_wins" / "metrics.json").read_text())
    assert metrics["tau"] == 0.4


def test_config_file_errors(bundle_dir, tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_key = 5\n")
    assert main(["evaluate", "--config", str(bad)]) == 3
    assert "error: ConfigurationError:" in capsys.readouterr().err

    bad.write_text("tau = not-a-number\n")
    assert main(["evaluate", "--config", str(bad)]) == 3

    bad.write_text("just some words\n")
    assert main(["evaluate", "--config", str(bad)]) == 3


def test_exit_codes(bundle_dir, tmp_path, capsys):
    # missing required input: configuration problem
    assert main(["evaluate", "--dets", str(bundle_dir / "dets_id.json")]) == 3
    # unreadable data file: input problem
    assert main(["evaluate", "--gt", str(tmp_path / "absent.json"),
                 "--dets", str(bundle_dir / "dets_id.json")]) == 2
    err = capsys.readouterr().err
    assert "error: ConfigurationError:" in err
    assert "error: MalformedFile:" in err
    # invalid tau straight from the flag
    assert main(["evaluate", "--gt", str(bundle_dir / "gt.json"),
                 "--dets", str(bundle_dir / "dets_id.json"), "--tau", "1.5"]) == 3
    # unknown flag routes through the same config-error path
    assert main(["evaluate", "--frobnicate"]) == 3
    # no command at all
    assert main([]) == 3
    capsys.readouterr()


def test_module_entry_point(tmp_path):
    out = tmp_path / "m"
    proc = subprocess.run(
        [sys.executable, "-m", "detaware.cli", "synth", "--seed", "2", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert (out / "gt.json").exists()
