"""Membership inference attacks and the shadow calibration pipeline.

Eight methods per model family. For SNNs the signal vector is the fire
rates Fr(x) (plus the average membrane potential as a separate feature);
for ANNs it is the softmax confidences (plus raw logits for the hinge
metric). Threshold attacks compare a per-record scalar against a cutoff
selected to maximize balanced accuracy on the shadow model's records;
classifier attacks train a small MLP (two hidden layers of 64) on shadow
features with BCE, Adam lr 0.001, 300 epochs, batch 32.

Score transforms follow the fire-rate adaptations of the confidence-score
attacks: the logit-scaled score is log(s_y) - log(sum_{y'!=y} s_{y'}) and
the modified entropy is -(1-s_y)*log(s_y) - sum_{y'!=y} s_{y'}*log(1-s_{y'}),
with every log argument clamped to [1e-7, 1] so one-hot rate vectors stay
finite.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .metrics import balanced_accuracy
from .network import ForwardRecord, avg_membrane_potential, cross_entropy, fire_rate, mse_one_hot
from .numerics import DTYPE, as_f32, fc_backward, fc_with_cache
from .rng import Rng

CLAMP_EPS = 1e-7

SNN_METHODS = ("fire_rates", "loss", "prediction_correctness", "top3_fire_rates",
               "max_fire_rate", "logit_scaled_fire_rate", "mentr_fire_rates",
               "avg_membrane_potential")
ANN_METHODS = ("confidence_scores", "loss", "prediction_correctness",
               "top3_confidences", "max_confidence", "logit_scaled_confidence",
               "mentr_confidences", "hinge_loss")

# classifier-based methods and the feature each one consumes
CLASSIFIER_FEATURES = {
    "fire_rates": "full", "confidence_scores": "full",
    "top3_fire_rates": "top3", "top3_confidences": "top3",
    "avg_membrane_potential": "amp",
}

# fixed comparison direction per metric: which side of the threshold is
# "member"
THRESHOLD_DIRECTIONS = {
    "loss": "less",
    "max_fire_rate": "greater", "max_confidence": "greater",
    "logit_scaled_fire_rate": "greater", "logit_scaled_confidence": "greater",
    "mentr_fire_rates": "less", "mentr_confidences": "less",
    "hinge_loss": "greater",
}


def methods_for(family: str):
    return SNN_METHODS if family == "snn" else ANN_METHODS


@dataclass
class AttackFeatureRecord:
    """Per-sample attack signals plus the membership ground truth."""

    signal: np.ndarray          # fire rates (snn) or confidences (ann)
    loss: float
    correct: bool
    label: int
    membership: bool
    family: str
    amp: np.ndarray | None = None      # snn only
    logits: np.ndarray | None = None   # ann only


def extract_features(model, part, membership: bool,
                     record: ForwardRecord | None = None) -> list[AttackFeatureRecord]:
    """One record per unit of the part; the loss is the family's training
    loss on that single sample."""
    if record is None:
        from .training import forward_all
        record = forward_all(model, part)
    out = []
    labels = part.labels
    if model.family == "snn":
        rates = fire_rate(record)
        amps = avg_membrane_potential(record)
        preds = rates.argmax(axis=1)
        for i in range(len(labels)):
            y = int(labels[i])
            target = np.zeros(rates.shape[1], dtype=DTYPE)
            target[y] = 1.0
            loss = mse_one_hot(record.out_spikes[i], target)
            out.append(AttackFeatureRecord(rates[i], loss, bool(preds[i] == y), y,
                                           membership, "snn", amp=amps[i]))
    else:
        conf = record.confidences
        preds = conf.argmax(axis=1)
        for i in range(len(labels)):
            y = int(labels[i])
            loss = cross_entropy(conf[i], y)
            out.append(AttackFeatureRecord(conf[i], loss, bool(preds[i] == y), y,
                                           membership, "ann", logits=record.logits[i]))
    return out


# ---------------------------------------------------------------------------
# threshold metrics
# ---------------------------------------------------------------------------

def _clamped(values):
    return np.clip(np.asarray(values, dtype=np.float64), CLAMP_EPS, 1.0)


def logit_scaled_score(signal, label: int) -> float:
    s = _clamped(signal)
    others = np.delete(s, label)
    return float(np.log(s[label]) - np.log(others.sum()))


def mentr_score(signal, label: int) -> float:
    s = _clamped(signal)
    others = np.delete(s, label)
    return float(-(1.0 - s[label]) * np.log(s[label])
                 - (others * np.log(np.clip(1.0 - others, CLAMP_EPS, 1.0))).sum())


def hinge_score(logits, label: int) -> float:
    z = np.asarray(logits, dtype=np.float64)
    others = np.delete(z, label)
    return float(z[label] - others.max())


def metric_value(method: str, rec: AttackFeatureRecord) -> float:
    if method not in THRESHOLD_DIRECTIONS:
        raise ValidationError(f"{method!r} is not a threshold-based method")
    if method not in methods_for(rec.family):
        raise ValidationError(f"method {method!r} does not apply to {rec.family} records")
    if method == "loss":
        return float(rec.loss)
    if method in ("max_fire_rate", "max_confidence"):
        return float(np.max(rec.signal))
    if method in ("logit_scaled_fire_rate", "logit_scaled_confidence"):
        return logit_scaled_score(rec.signal, rec.label)
    if method in ("mentr_fire_rates", "mentr_confidences"):
        return mentr_score(rec.signal, rec.label)
    if rec.logits is None:
        raise ValidationError("hinge_loss needs logits")
    return hinge_score(rec.logits, rec.label)


# ---------------------------------------------------------------------------
# threshold selection on shadow records
# ---------------------------------------------------------------------------

@dataclass
class ThresholdRule:
    method: str
    direction: str      # member if value < t ("less") or value > t ("greater")
    threshold: float
    shadow_accuracy: float = float("nan")

    def predict(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.direction == "less":
            return values < self.threshold
        return values > self.threshold


def select_threshold(shadow_records, method: str) -> ThresholdRule:
    """Candidates are +-inf and the midpoints of adjacent sorted unique
    shadow metric values; pick the one maximizing shadow balanced accuracy,
    ties toward the smallest threshold."""
    values = np.array([metric_value(method, r) for r in shadow_records])
    member = np.array([r.membership for r in shadow_records], dtype=bool)
    if member.all() or not member.any():
        raise ValidationError("shadow records must contain members and non-members")
    direction = THRESHOLD_DIRECTIONS[method]
    uniq = np.unique(values)
    candidates = np.concatenate([[-np.inf], (uniq[:-1] + uniq[1:]) / 2.0, [np.inf]])

    mem_sorted = np.sort(values[member])
    non_sorted = np.sort(values[~member])
    if direction == "less":     # member iff value < t
        tpr = np.searchsorted(mem_sorted, candidates, side="left") / len(mem_sorted)
        tnr = 1.0 - np.searchsorted(non_sorted, candidates, side="left") / len(non_sorted)
    else:                       # member iff value > t
        tpr = 1.0 - np.searchsorted(mem_sorted, candidates, side="right") / len(mem_sorted)
        tnr = np.searchsorted(non_sorted, candidates, side="right") / len(non_sorted)
    bal = (tpr + tnr) / 2.0
    best = int(np.argmax(bal))          # argmax takes the first (smallest t) on ties
    return ThresholdRule(method, direction, float(candidates[best]), float(bal[best]))


# ---------------------------------------------------------------------------
# the attack classifier (MLP with 2 hidden layers of 64)
# ---------------------------------------------------------------------------

class AttackMlp:
    """Binary membership classifier over attack features."""

    def __init__(self, n_features: int, rng: Rng, hidden: int = 64):
        self.n_features = n_features
        shapes = [(hidden, n_features), (hidden, hidden), (1, hidden)]
        self.weights, self.biases = [], []
        for i, (m, n) in enumerate(shapes):
            bound = 1.0 / np.sqrt(n)
            r = rng.split(i)
            self.weights.append(r.uniform(-bound, bound, (m, n)).astype(DTYPE))
            self.biases.append(r.uniform(-bound, bound, m).astype(DTYPE))

    def _forward(self, x, caches=None):
        h = x
        for i in range(3):
            h, cache = fc_with_cache(h, self.weights[i], self.biases[i])
            if caches is not None:
                caches.append(cache)
            if i < 2:
                mask = h > 0
                h = h * mask
                if caches is not None:
                    caches.append(mask)
        return h[:, 0]

    def predict_proba(self, x) -> np.ndarray:
        z = self._forward(as_f32(x)).astype(np.float64)
        return 1.0 / (1.0 + np.exp(-z))

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x) >= 0.5

    def fit(self, x, y, rng: Rng, epochs: int = 300, batch_size: int = 32,
            lr: float = 1e-3):
        from .training import Adam
        x = as_f32(x)
        y = np.asarray(y, dtype=np.float64)
        opt = Adam(lr=lr)
        n = len(x)
        for epoch in range(epochs):
            order = rng.split(epoch).permutation(n)
            for b in range(0, n, batch_size):
                idx = order[b:b + batch_size]
                caches = []
                z = self._forward(x[idx], caches)
                p = 1.0 / (1.0 + np.exp(-z.astype(np.float64)))
                dz = as_f32((p - y[idx]) / len(idx))[:, None]   # BCE through sigmoid
                grads_w, grads_b = [None] * 3, [None] * 3
                g = dz
                for i in range(2, -1, -1):
                    if i < 2:
                        mask = caches[2 * i + 1]
                        g = g * mask
                    lg = fc_backward(caches[2 * i], g)
                    grads_w[i], grads_b[i] = lg.grad_weights, lg.grad_bias
                    g = lg.grad_input
                opt.step(self.weights + self.biases, grads_w + grads_b)
        return self


def features_for(records, kind: str) -> np.ndarray:
    """full = the signal vector; top3 = descending top-3 signal values;
    amp = the average-membrane-potential vector."""
    if kind == "full":
        return as_f32(np.stack([r.signal for r in records]))
    if kind == "top3":
        n = len(records[0].signal)
        if n < 3:
            raise ValidationError("top3 features need at least 3 classes")
        return as_f32(np.stack([np.sort(r.signal)[::-1][:3] for r in records]))
    if kind == "amp":
        if records[0].amp is None:
            raise ValidationError("amp features need SNN records")
        return as_f32(np.stack([r.amp for r in records]))
    raise ValidationError(f"unknown feature kind {kind!r}")


def train_attack_classifier(shadow_records, feature_kind: str, rng: Rng,
                            epochs: int = 300, batch_size: int = 32,
                            lr: float = 1e-3) -> AttackMlp:
    member = np.array([r.membership for r in shadow_records], dtype=bool)
    if member.all() or not member.any():
        raise ValidationError("shadow records must contain members and non-members")
    feats = features_for(shadow_records, feature_kind)
    mlp = AttackMlp(feats.shape[1], rng.split(0))
    mlp.fit(feats, member, rng.split(1), epochs=epochs, batch_size=batch_size, lr=lr)
    return mlp


# ---------------------------------------------------------------------------
# running an attack against target records
# ---------------------------------------------------------------------------

def run_attack(method: str, rule_or_model, target_records):
    """Predict membership for balanced target records; returns
    (predictions, balanced accuracy)."""
    member = np.array([r.membership for r in target_records], dtype=bool)
    if member.sum() != (~member).sum():
        raise ValidationError("target evaluation records must be balanced")
    if method == "prediction_correctness":
        preds = np.array([r.correct for r in target_records], dtype=bool)
    elif method in THRESHOLD_DIRECTIONS:
        if not isinstance(rule_or_model, ThresholdRule):
            raise ValidationError(f"{method} needs a ThresholdRule")
        values = [metric_value(method, r) for r in target_records]
        preds = rule_or_model.predict(values)
    elif method in CLASSIFIER_FEATURES:
        if not isinstance(rule_or_model, AttackMlp):
            raise ValidationError(f"{method} needs a trained AttackMlp")
        feats = features_for(target_records, CLASSIFIER_FEATURES[method])
        preds = rule_or_model.predict(feats)
    else:
        raise ValidationError(f"unknown attack method {method!r}")
    return preds, balanced_accuracy(preds, member)


def fit_attack(method: str, shadow_records, rng: Rng, classifier_epochs: int = 300):
    """Calibrate whatever the method needs on shadow records (None for
    prediction correctness)."""
    if method == "prediction_correctness":
        return None
    if method in THRESHOLD_DIRECTIONS:
        return select_threshold(shadow_records, method)
    if method in CLASSIFIER_FEATURES:
        return train_attack_classifier(shadow_records, CLASSIFIER_FEATURES[method],
                                       rng, epochs=classifier_epochs)
    raise ValidationError(f"unknown attack method {method!r}")


def dump_records_csv(path, records) -> None:
    """membership,label,correct,loss,signal_0..signal_{n-1}[,amp_0..]"""
    if not records:
        raise ValidationError("no records to dump")
    n_sig = len(records[0].signal)
    n_amp = len(records[0].amp) if records[0].amp is not None else 0
    header = (["membership", "label", "correct", "loss"]
              + [f"signal_{i}" for i in range(n_sig)]
              + [f"amp_{i}" for i in range(n_amp)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            row = [int(r.membership), r.label, int(r.correct), repr(float(r.loss))]
            row += [repr(float(v)) for v in r.signal]
            if n_amp:
                row += [repr(float(v)) for v in r.amp]
            writer.writerow(row)
