"""Command line interface.

Subcommands: gen-data, train, convert, attack, report, grid, verify.
Global flags: --config <json>, --seed, --out-dir. Exit codes: 0 success,
2 validation error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys

import numpy as np

from . import verify as verify_mod
from .conversion import convert_ann_to_snn
from .errors import DivergenceError, ValidationError
from .events import write_events, write_labeled_images
from .harness import (ExperimentConfig, ExperimentReport, build_dataset,
                      emit_report, gap_trend, run_experiment)
from .network import load_model, save_model
from .rng import Rng
from .training import evaluate, prepare_part, train_model


def _load_config(path):
    if path is None:
        raise ValidationError("this subcommand needs --config <json file>")
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc


def _apply_seed(cfg, args):
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def cmd_gen_data(args):
    cfg = _apply_seed(_load_config(args.config), args)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg.pop("seed", 0)
    frames_t = cfg.pop("frames_t", None)
    dataset_cfg = cfg.get("dataset", cfg)
    dataset = build_dataset(dataset_cfg, Rng(seed))
    meta = {"kind": dataset_cfg.get("kind", "synthetic-events"), "seed": seed,
            "samples": len(dataset), "n_classes": dataset.n_classes}
    if hasattr(dataset, "streams"):
        for i, stream in enumerate(dataset.streams):
            write_events(os.path.join(out_dir, f"{i:05d}.evt1"), stream)
        if frames_t:
            write_labeled_images(os.path.join(out_dir, "frames.ft32"),
                                 dataset.frames(frames_t), dataset.labels)
            meta["frames_t"] = frames_t
    else:
        write_labeled_images(os.path.join(out_dir, "images.ft32"),
                             dataset.images, dataset.labels)
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
    print(f"wrote {len(dataset)} samples to {out_dir}")
    return 0


def cmd_train(args):
    cfg = _apply_seed(_load_config(args.config), args)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg.get("seed", 0)
    rng = Rng(seed)
    dataset = build_dataset(cfg["dataset"], rng.split(0))
    exp = ExperimentConfig.from_dict({k: v for k, v in cfg.items()
                                      if k not in ("dataset", "train_fraction")})
    exp.dataset = cfg["dataset"]
    tc = exp.train_config()
    family = exp.family
    n = len(dataset)
    order = rng.split(1).permutation(n)
    cut = int(cfg.get("train_fraction", 0.9) * n)
    train_part = prepare_part(dataset, order[:cut], family, tc.time_steps)
    test_part = prepare_part(dataset, order[cut:], family, tc.time_steps)
    model, history = train_model(train_part, tc, rng.split(2), family=family,
                                 test_part=test_part)
    model_path = os.path.join(out_dir, "model.mdl1")
    save_model(model_path, model)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "test_loss", "train_acc", "test_acc"])
        for h in history:
            writer.writerow([h.epoch, repr(h.train_loss), repr(h.test_loss),
                             repr(h.train_acc), repr(h.test_acc)])
    final = history[-1]
    print(f"trained {family} ({exp.preset}) for {tc.epochs} epochs: "
          f"train_acc={final.train_acc:.3f} test_acc={final.test_acc:.3f}")
    print(f"saved {model_path}")
    return 0


def cmd_convert(args):
    cfg = _apply_seed(_load_config(args.config), args)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    rng = Rng(cfg.get("seed", 0))
    ann = load_model(cfg["model"])
    dataset = build_dataset(cfg["dataset"], rng.split(0))
    exp = ExperimentConfig.from_dict({"dataset": cfg["dataset"], "family": "snn",
                                      "strategy": "conversion",
                                      "conversion": cfg.get("conversion", {}),
                                      "seed": cfg.get("seed", 0)})
    conv_cfg = exp.conversion_config()
    calib_part = prepare_part(dataset, np.arange(len(dataset)), "ann", 1)
    snn = convert_ann_to_snn(ann, calib_part.x, conv_cfg)
    out_path = os.path.join(out_dir, "converted.mdl1")
    save_model(out_path, snn)
    part = prepare_part(dataset, np.arange(len(dataset)), "snn", conv_cfg.t_inference)
    acc, _ = evaluate(snn, part)
    print(f"converted model accuracy on provided data: {acc:.3f}")
    print(f"saved {out_path}")
    return 0


def cmd_attack(args):
    cfg = _apply_seed(_load_config(args.config), args)
    out_dir = args.out_dir or "."
    config = ExperimentConfig.from_dict(cfg)
    report, artifacts = run_experiment(config, with_artifacts=True)
    paths = emit_report(report, out_dir)
    from .attacks import dump_records_csv
    dump_records_csv(os.path.join(out_dir, "records.csv"), artifacts["target_eval"])
    print(f"target train/test acc: {report.target_train_acc:.3f}/"
          f"{report.target_test_acc:.3f} (gap {report.generalization_gap:.3f})")
    for method, acc in report.attack_accuracies.items():
        print(f"  {method}: {acc:.3f}")
    print(f"highest attack: {report.highest_attack} "
          f"({report.highest_attack_accuracy:.3f})")
    print(f"wrote {paths['json']}")
    return 0


def cmd_report(args):
    cfg = _load_config(args.config)
    report = ExperimentReport.from_dict(cfg)
    paths = emit_report(report, args.out_dir or ".")
    print(f"wrote {paths['csv']}")
    return 0


def _set_dotted(d, key, value):
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def cmd_grid(args):
    cfg = _apply_seed(_load_config(args.config), args)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    base = cfg.get("base", {})
    axes = cfg.get("axes", {})
    keys = sorted(axes)
    combos = list(itertools.product(*(axes[k] for k in keys)))
    reports = []
    rows = []
    for i, combo in enumerate(combos):
        run_cfg = json.loads(json.dumps(base))
        for k, v in zip(keys, combo):
            _set_dotted(run_cfg, k, v)
        config = ExperimentConfig.from_dict(run_cfg)
        report = run_experiment(config)
        emit_report(report, out_dir, stem=f"run{i:03d}")
        reports.append(report)
        row = {k: v for k, v in zip(keys, combo)}
        row.update(gap=report.generalization_gap,
                   test_acc=report.target_test_acc,
                   highest_attack=report.highest_attack,
                   highest_attack_accuracy=report.highest_attack_accuracy)
        rows.append(row)
        print(f"run {i}: " + ", ".join(f"{k}={v}" for k, v in zip(keys, combo))
              + f" -> gap={report.generalization_gap:.3f} "
                f"best={report.highest_attack} ({report.highest_attack_accuracy:.3f})")
    summary = os.path.join(out_dir, "summary.csv")
    with open(summary, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    if len(reports) >= 3:
        rho = gap_trend(reports)
        print(f"spearman(gap, best attack) = {rho:.3f}")
    print(f"wrote {summary}")
    return 0


def cmd_verify(args):
    ok = verify_mod.run_all(print)
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="spikelab",
                                     description="Spiking-network membership "
                                                 "privacy lab")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {"gen-data": cmd_gen_data, "train": cmd_train, "convert": cmd_convert,
                "attack": cmd_attack, "report": cmd_report, "grid": cmd_grid,
                "verify": cmd_verify}
    for name in commands:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=None)
    args = parser.parse_args(argv)
    try:
        return commands[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
