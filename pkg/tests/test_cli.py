import csv
import json
import os

from spikelab.cli import main


def _write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


EVENT_DATASET = {"kind": "synthetic-events", "classes": 3, "samples": 60,
                 "width": 12, "height": 12, "duration_us": 15_000}


def test_gen_data_events(tmp_path):
    cfg = _write_cfg(tmp_path, "gen.json",
                     {"dataset": EVENT_DATASET, "frames_t": 4, "seed": 1})
    out = tmp_path / "data"
    assert main(["gen-data", "--config", cfg, "--out-dir", str(out)]) == 0
    files = sorted(os.listdir(out))
    assert "meta.json" in files and "frames.ft32" in files
    assert sum(f.endswith(".evt1") for f in files) == 60


def test_gen_data_static(tmp_path):
    cfg = _write_cfg(tmp_path, "gen.json",
                     {"dataset": {"kind": "synthetic-static", "classes": 3,
                                  "samples": 20, "width": 8, "height": 8}})
    out = tmp_path / "static"
    assert main(["gen-data", "--config", cfg, "--out-dir", str(out)]) == 0
    assert (out / "images.ft32").exists() and (out / "images.ft32.lbl").exists()


def test_train_and_convert_round_trip(tmp_path, capsys):
    train_cfg = _write_cfg(tmp_path, "train.json", {
        "dataset": {"kind": "synthetic-static", "classes": 3, "samples": 60,
                    "width": 10, "height": 10},
        "family": "ann", "preset": "mlp-tiny", "epochs": 6, "seed": 2})
    run_dir = tmp_path / "run"
    assert main(["train", "--config", train_cfg, "--out-dir", str(run_dir)]) == 0
    assert (run_dir / "model.mdl1").exists()
    with open(run_dir / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_loss", "test_loss", "train_acc", "test_acc"]
    assert len(rows) == 7

    conv_cfg = _write_cfg(tmp_path, "conv.json", {
        "model": str(run_dir / "model.mdl1"),
        "dataset": {"kind": "synthetic-static", "classes": 3, "samples": 30,
                    "width": 10, "height": 10},
        "conversion": {"t_inference": 16}, "seed": 2})
    conv_dir = tmp_path / "conv"
    assert main(["convert", "--config", conv_cfg, "--out-dir", str(conv_dir)]) == 0
    assert (conv_dir / "converted.mdl1").exists()


def test_attack_subcommand_and_exit_codes(tmp_path):
    cfg = _write_cfg(tmp_path, "exp.json", {
        "dataset": EVENT_DATASET, "family": "snn", "epochs": 2,
        "time_steps": 4, "preset": "cnn-tiny", "seed": 3,
        "attacks": ["loss", "prediction_correctness"], "classifier_epochs": 10})
    out = tmp_path / "attack"
    assert main(["attack", "--config", cfg, "--out-dir", str(out)]) == 0
    with open(out / "report.json") as fh:
        report = json.load(fh)
    assert "attack_accuracies" in report
    with open(out / "report.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 3     # header + 2 attacks
    with open(out / "records.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header[:4] == ["membership", "label", "correct", "loss"]
    assert "signal_0" in header and "amp_0" in header

    # report re-emission from the stored JSON
    rep_cfg = str(out / "report.json")
    out2 = tmp_path / "re"
    assert main(["report", "--config", rep_cfg, "--out-dir", str(out2)]) == 0
    assert (out2 / "report.csv").exists()


def test_validation_error_exit_code(tmp_path):
    bad = _write_cfg(tmp_path, "bad.json", {"family": "martian"})
    assert main(["attack", "--config", bad, "--out-dir", str(tmp_path)]) == 2
    missing = str(tmp_path / "absent.json")
    assert main(["attack", "--config", missing]) == 2
    notjson = tmp_path / "nj.json"
    notjson.write_text("{oops")
    assert main(["attack", "--config", str(notjson)]) == 2


def test_divergence_exit_code(tmp_path):
    cfg = _write_cfg(tmp_path, "div.json", {
        "dataset": {"kind": "synthetic-static", "classes": 3, "samples": 40,
                    "width": 8, "height": 8},
        "family": "ann", "preset": "mlp-tiny", "epochs": 3,
        "optimizer": "sgd", "lr": 1e18, "seed": 4, "attacks": ["loss"]})
    assert main(["attack", "--config", cfg, "--out-dir", str(tmp_path)]) == 3


def test_grid_subcommand(tmp_path):
    cfg = _write_cfg(tmp_path, "grid.json", {
        "base": {"dataset": EVENT_DATASET, "family": "snn", "epochs": 2,
                 "time_steps": 4, "preset": "cnn-tiny", "seed": 5,
                 "attacks": ["loss", "prediction_correctness"],
                 "classifier_epochs": 10},
        "axes": {"dataset.samples": [40, 60], "lr": [0.001]}})
    out = tmp_path / "grid"
    assert main(["grid", "--config", cfg, "--out-dir", str(out)]) == 0
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert {r["dataset.samples"] for r in rows} == {"40", "60"}
    assert (out / "run000.json").exists() and (out / "run001.json").exists()


def test_verify_subcommand():
    assert main(["verify"]) == 0
