"""Experiment orchestration: train target and shadow models, calibrate
attacks on the shadow, evaluate them on balanced target records, and emit
reports.

The pipeline is a pure function of (config, seed): dataset synthesis or
loading, the 50/50 target/shadow split with 90/10 train/test inside each
half, training (or ANN training + conversion), feature extraction, shadow
calibration, and balanced evaluation with equal member and non-member
counts. Member evaluation records are a seeded sample of the training
part matched to the test part's size.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import attacks as atk
from .augment import AugmentPolicy, policy_from_config
from .conversion import ConversionConfig, convert_ann_to_snn
from .errors import ValidationError
from .events import (EventDataset, FrameDataset, StaticImageDataset,
                     SyntheticEventConfig, SyntheticStaticConfig, read_events,
                     read_labeled_images, load_idx_dataset, split_dataset,
                     synth_event_dataset, synth_static_dataset, train_test_cut)
from .metrics import balanced_accuracy, spearman_rank
from .rng import Rng
from .training import (TrainConfig, build_model_for, evaluate, prepare_part,
                       train_model)

__all__ = ["ExperimentConfig", "ExperimentReport", "run_experiment", "gap_trend",
           "emit_report", "build_dataset", "balanced_accuracy", "spearman_rank"]


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic-events"})
    family: str = "snn"
    strategy: str = "backprop"          # backprop | conversion
    attacks: object = "all"             # "all" or explicit method list
    epochs: int = 20                    # 0 = evaluation-only (untrained model)
    batch_size: int = 8
    optimizer: str = "adam"
    lr: float = 1e-3
    loss: str = "auto"
    time_steps: int = 8
    preset: str = "cnn-tiny"
    neuron: str = "lif"
    surrogate: str = "atan"
    reset_mode: str | None = None
    neuron_kwargs: dict = field(default_factory=dict)
    surrogate_kwargs: dict = field(default_factory=dict)
    grad_clip: float | None = None
    batch_norm: bool = False
    augment: object = None
    conversion: dict = field(default_factory=dict)
    seed: int = 0
    track_epochs: bool = False
    epoch_attack_methods: tuple = ("loss", "prediction_correctness")
    eval_cap: int | None = None         # per-side cap on evaluation records
    classifier_epochs: int = 300
    shadow_models: int = 1              # extra shadows pool their records

    def __post_init__(self):
        if self.family not in ("snn", "ann"):
            raise ValidationError("family must be 'snn' or 'ann'")
        if self.strategy not in ("backprop", "conversion"):
            raise ValidationError("strategy must be 'backprop' or 'conversion'")
        if self.strategy == "conversion" and self.family != "snn":
            raise ValidationError("conversion produces an SNN; set family='snn'")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.attacks != "all":
            self.attack_methods(self.family)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "epoch_attack_methods" in d:
            d["epoch_attack_methods"] = tuple(d["epoch_attack_methods"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["epoch_attack_methods"] = list(self.epoch_attack_methods)
        if isinstance(d["augment"], AugmentPolicy):
            d["augment"] = dict(d["augment"].__dict__)
            d["augment"]["cutmix_beta"] = list(d["augment"]["cutmix_beta"])
        return d

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=max(self.epochs, 1), batch_size=self.batch_size,
                           optimizer=self.optimizer, lr=self.lr, loss=self.loss,
                           time_steps=self.time_steps, preset=self.preset,
                           neuron=self.neuron, surrogate=self.surrogate,
                           reset_mode=self.reset_mode,
                           neuron_kwargs=dict(self.neuron_kwargs),
                           surrogate_kwargs=dict(self.surrogate_kwargs),
                           augment=policy_from_config(self.augment),
                           grad_clip=self.grad_clip, batch_norm=self.batch_norm)

    def conversion_config(self) -> ConversionConfig:
        return ConversionConfig(**self.conversion)

    def attack_methods(self, family: str) -> list:
        if self.attacks == "all":
            return list(atk.methods_for(family))
        methods = list(self.attacks)
        for m in methods:
            if m not in atk.methods_for(family):
                raise ValidationError(f"attack {m!r} does not apply to family {family!r}")
        return methods


@dataclass
class ExperimentReport:
    target_train_acc: float
    target_test_acc: float
    shadow_train_acc: float
    shadow_test_acc: float
    generalization_gap: float
    attack_accuracies: dict
    highest_attack: str
    highest_attack_accuracy: float
    member_eval_acc: float
    nonmember_eval_acc: float
    family: str
    strategy: str
    seed: int
    extras: dict = field(default_factory=dict)
    target_history: list = field(default_factory=list)
    shadow_history: list = field(default_factory=list)
    epoch_attack_curves: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

def build_dataset(dcfg: dict, rng: Rng):
    dcfg = dict(dcfg)
    kind = dcfg.pop("kind", "synthetic-events")
    if kind == "synthetic-events":
        return synth_event_dataset(SyntheticEventConfig(**dcfg), rng)
    if kind == "synthetic-static":
        return synth_static_dataset(SyntheticStaticConfig(**dcfg), rng)
    if kind == "evt-dir":
        path = dcfg["path"]
        files = sorted(f for f in os.listdir(path) if f.endswith(".evt1"))
        if not files:
            raise ValidationError(f"no .evt1 files under {path}")
        streams = [read_events(os.path.join(path, f)) for f in files]
        labels = [s.label for s in streams]
        return EventDataset(streams, labels, streams[0].width, streams[0].height,
                            int(max(labels)) + 1)
    if kind == "ft32-frames":
        arr, labels = read_labeled_images(dcfg["path"])
        return FrameDataset(arr, labels, int(labels.max()) + 1)
    if kind == "ft32-images":
        arr, labels = read_labeled_images(dcfg["path"])
        return StaticImageDataset(arr, labels, int(labels.max()) + 1)
    if kind == "idx":
        return load_idx_dataset(dcfg["images"], dcfg["labels"])
    raise ValidationError(f"unknown dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# balanced record selection
# ---------------------------------------------------------------------------

def _balanced_records(train_records, train_part, test_records, test_part,
                      rng: Rng, cap: int | None):
    """Equal member/non-member sets, sampled at the data-point level so
    frame-expanded parts stay balanced."""
    train_parents = np.unique(train_part.parent)
    test_parents = np.unique(test_part.parent)
    k = min(len(train_parents), len(test_parents))
    if cap is not None:
        k = min(k, cap)
    if k < 1:
        raise ValidationError("not enough samples for a balanced evaluation set")
    mem_parents = set(train_parents[rng.choice(len(train_parents), size=k)].tolist())
    non_parents = set(test_parents[rng.choice(len(test_parents), size=k)].tolist())
    members = [r for r, p in zip(train_records, train_part.parent) if int(p) in mem_parents]
    nonmembers = [r for r, p in zip(test_records, test_part.parent) if int(p) in non_parents]
    if len(members) != len(nonmembers):
        raise ValidationError("balanced selection failed; uneven unit counts")
    return members + nonmembers


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------

def run_experiment(config: ExperimentConfig, with_artifacts: bool = False):
    rng = Rng(config.seed)
    dataset = build_dataset(config.dataset, rng.split(0))
    predefined = config.dataset.get("predefined_train")
    split = split_dataset(len(dataset), rng.split(1), predefined_train=predefined,
                          labels=dataset.labels)

    tc = config.train_config()
    if config.strategy == "conversion" and not isinstance(dataset, StaticImageDataset):
        raise ValidationError("conversion experiments need a static dataset")

    target_model, t_parts, target_hist, extras = _model_stage(
        dataset, split.target_train, split.target_test, config, tc, rng.split(2))

    shadow_splits = [(split.shadow_train, split.shadow_test)]
    shadow_pool = np.concatenate([split.shadow_train, split.shadow_test])
    for i in range(1, config.shadow_models):
        shadow_splits.append(train_test_cut(shadow_pool, rng.split(30, i),
                                            labels=dataset.labels))
    shadows = [_model_stage(dataset, st, se, config, tc, rng.split(3, i))
               for i, (st, se) in enumerate(shadow_splits)]
    shadow_model, s_parts, shadow_hist, _ = shadows[0]

    record_family = target_model.family
    parts = {"target_train": t_parts["train"], "target_test": t_parts["test"],
             "shadow_train": s_parts["train"], "shadow_test": s_parts["test"]}
    accs = {name: evaluate(target_model if name.startswith("target") else shadow_model,
                           part)[0]
            for name, part in parts.items()}

    records = {
        "target_train": atk.extract_features(target_model, parts["target_train"], True),
        "target_test": atk.extract_features(target_model, parts["target_test"], False),
        "shadow_train": atk.extract_features(shadow_model, parts["shadow_train"], True),
        "shadow_test": atk.extract_features(shadow_model, parts["shadow_test"], False),
    }
    target_eval = _balanced_records(records["target_train"], parts["target_train"],
                                    records["target_test"], parts["target_test"],
                                    rng.split(4), config.eval_cap)
    shadow_fit = _balanced_records(records["shadow_train"], parts["shadow_train"],
                                   records["shadow_test"], parts["shadow_test"],
                                   rng.split(5), config.eval_cap)
    for i, (model_i, parts_i, _, _) in enumerate(shadows[1:], start=1):
        tr = atk.extract_features(model_i, parts_i["train"], True)
        te = atk.extract_features(model_i, parts_i["test"], False)
        shadow_fit += _balanced_records(tr, parts_i["train"], te, parts_i["test"],
                                        rng.split(5, i), config.eval_cap)

    methods = config.attack_methods(record_family)
    attack_accs = {}
    fitted = {}
    for i, method in enumerate(methods):
        fitted[method] = atk.fit_attack(method, shadow_fit, rng.split(6, i),
                                        classifier_epochs=config.classifier_epochs)
        _, attack_accs[method] = atk.run_attack(method, fitted[method], target_eval)

    highest = max(attack_accs, key=lambda m: attack_accs[m])
    member_mask = np.array([r.membership for r in target_eval], dtype=bool)
    eval_correct = np.array([r.correct for r in target_eval], dtype=bool)
    member_eval_acc = float(eval_correct[member_mask].mean())
    nonmember_eval_acc = float(eval_correct[~member_mask].mean())

    curves = []
    if config.track_epochs and config.epochs > 0 and config.strategy == "backprop":
        curves = _epoch_attack_curves(config, parts, target_hist, shadow_hist,
                                      target_model, shadow_model, rng)
    target_model.meta.pop("snapshots", None)
    shadow_model.meta.pop("snapshots", None)

    report = ExperimentReport(
        target_train_acc=accs["target_train"], target_test_acc=accs["target_test"],
        shadow_train_acc=accs["shadow_train"], shadow_test_acc=accs["shadow_test"],
        generalization_gap=accs["target_train"] - accs["target_test"],
        attack_accuracies=attack_accs, highest_attack=highest,
        highest_attack_accuracy=attack_accs[highest],
        member_eval_acc=member_eval_acc, nonmember_eval_acc=nonmember_eval_acc,
        family=record_family, strategy=config.strategy, seed=config.seed,
        extras=extras,
        target_history=[h.__dict__ for h in target_hist],
        shadow_history=[h.__dict__ for h in shadow_hist],
        epoch_attack_curves=curves)
    if with_artifacts:
        artifacts = {"dataset": dataset, "split": split, "parts": parts,
                     "target_model": target_model, "shadow_model": shadow_model,
                     "records": records, "target_eval": target_eval,
                     "shadow_fit": shadow_fit, "fitted": fitted}
        return report, artifacts
    return report


def _model_stage(dataset, train_idx, test_idx, config, tc, rng):
    """Train one model (ANN first for conversion) and return it with the
    parts the attack records are read from."""
    train_family = "ann" if config.strategy == "conversion" else config.family
    train_part = prepare_part(dataset, train_idx, train_family, tc.time_steps)
    test_part = prepare_part(dataset, test_idx, train_family, tc.time_steps)
    model, hist = _train_stage(train_part, test_part, tc, rng, train_family, config)
    extras = {}
    if config.strategy == "conversion":
        conv_cfg = config.conversion_config()
        extras["ann_train_acc"] = evaluate(model, train_part)[0]
        extras["ann_test_acc"] = evaluate(model, test_part)[0]
        model = convert_ann_to_snn(model, train_part.x, conv_cfg)
        train_part = prepare_part(dataset, train_idx, "snn", conv_cfg.t_inference)
        test_part = prepare_part(dataset, test_idx, "snn", conv_cfg.t_inference)
    return model, {"train": train_part, "test": test_part}, hist, extras


def _train_stage(train_part, test_part, tc, rng, family, config):
    if config.epochs == 0:
        model = build_model_for(train_part, family, tc, rng)
        return model, []
    snapshots = [] if config.track_epochs else None
    hook = None
    if snapshots is not None:
        def hook(epoch, model, metrics):
            snapshots.append([p.copy() for p in model.parameters()])
    model, hist = train_model(train_part, tc, rng, family=family,
                              test_part=test_part, epoch_hook=hook)
    if snapshots is not None:
        model.meta["snapshots"] = snapshots
    return model, hist


def _epoch_attack_curves(config, parts, target_hist, shadow_hist, target_model,
                         shadow_model, rng):
    """Re-run the chosen (cheap) attacks against each epoch's checkpoint,
    calibrating on the shadow model at the same epoch."""
    t_snaps = target_model.meta.pop("snapshots", None)
    s_snaps = shadow_model.meta.pop("snapshots", None)
    if not t_snaps or not s_snaps:
        return []
    curves = []
    final_t = [p.copy() for p in target_model.parameters()]
    final_s = [p.copy() for p in shadow_model.parameters()]
    for epoch in range(min(len(t_snaps), len(s_snaps))):
        _load_params(target_model, t_snaps[epoch])
        _load_params(shadow_model, s_snaps[epoch])
        t_tr = atk.extract_features(target_model, parts["target_train"], True)
        t_te = atk.extract_features(target_model, parts["target_test"], False)
        s_tr = atk.extract_features(shadow_model, parts["shadow_train"], True)
        s_te = atk.extract_features(shadow_model, parts["shadow_test"], False)
        t_eval = _balanced_records(t_tr, parts["target_train"], t_te,
                                   parts["target_test"], rng.split(7, epoch),
                                   config.eval_cap)
        s_fit = _balanced_records(s_tr, parts["shadow_train"], s_te,
                                  parts["shadow_test"], rng.split(8, epoch),
                                  config.eval_cap)
        row = {"epoch": epoch}
        for i, method in enumerate(config.epoch_attack_methods):
            fitted = atk.fit_attack(method, s_fit, rng.split(9, epoch, i),
                                    classifier_epochs=config.classifier_epochs)
            _, row[method] = atk.run_attack(method, fitted, t_eval)
        curves.append(row)
    _load_params(target_model, final_t)
    _load_params(shadow_model, final_s)
    return curves


def _load_params(model, arrays):
    for p, a in zip(model.parameters(), arrays):
        p[...] = a


# ---------------------------------------------------------------------------
# analysis and emission
# ---------------------------------------------------------------------------

def gap_trend(reports) -> float:
    """Spearman rank correlation between the generalization gap and the
    best-of-attacks accuracy across experiments."""
    if len(reports) < 3:
        raise ValidationError("gap_trend needs at least 3 reports")
    gaps = [r.generalization_gap for r in reports]
    best = [r.highest_attack_accuracy for r in reports]
    return spearman_rank(gaps, best)


def emit_report(report: ExperimentReport, out_dir, stem: str = "report") -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {"json": os.path.join(out_dir, f"{stem}.json"),
             "csv": os.path.join(out_dir, f"{stem}.csv")}
    with open(paths["json"], "w") as fh:
        fh.write(report.to_json())
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attack", "balanced_accuracy"])
        for method, acc in report.attack_accuracies.items():
            writer.writerow([method, repr(float(acc))])
    if report.target_history:
        paths["epochs"] = os.path.join(out_dir, f"{stem}_epochs.csv")
        with open(paths["epochs"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "test_loss", "train_acc", "test_acc"])
            for h in report.target_history:
                writer.writerow([h["epoch"], repr(h["train_loss"]), repr(h["test_loss"]),
                                 repr(h["train_acc"]), repr(h["test_acc"])])
    if report.epoch_attack_curves:
        paths["epoch_attacks"] = os.path.join(out_dir, f"{stem}_epoch_attacks.csv")
        keys = list(report.epoch_attack_curves[0].keys())
        with open(paths["epoch_attacks"], "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(keys)
            for row in report.epoch_attack_curves:
                writer.writerow([row[k] for k in keys])
    return paths
