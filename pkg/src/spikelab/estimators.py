"""Scikit-learn style estimators wrapping the two model families and the
threshold attack, so they compose with the wider ecosystem (clone,
get_params/set_params, pipelines, cross_val_score on small problems).

SpikingClassifier consumes neuromorphic stacks [N, T, 2, H, W] or static
images [N, C, H, W] (replicated over time internally); AnnClassifier
consumes [N, C, H, W]. Fitted state lives in trailing-underscore
attributes per sklearn convention.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .augment import policy_from_config
from .errors import ValidationError
from .numerics import as_f32
from .rng import Rng
from .training import ModelPart, TrainConfig, forward_all, train_model
from .network import fire_rate


def _validate_inputs(x, ndim_ok, what):
    x = as_f32(x)
    if x.ndim not in ndim_ok:
        raise ValidationError(f"{what}: expected array with ndim in {ndim_ok}, "
                              f"got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{what}: non-finite values in input")
    return x


def _validate_labels(y, n):
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValidationError(f"labels must be a length-{n} vector, got shape {y.shape}")
    return y


class _NetClassifier(BaseEstimator, ClassifierMixin):
    family = None

    def _train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           optimizer=self.optimizer, lr=self.learning_rate,
                           loss=self.loss, time_steps=self.time_steps,
                           preset=self.preset, neuron=self.neuron,
                           surrogate=self.surrogate, reset_mode=self.reset_mode,
                           augment=policy_from_config(self.augment),
                           grad_clip=self.grad_clip)

    def _encode(self, y):
        return np.searchsorted(self.classes_, y)

    def _part(self, x, labels):
        raise NotImplementedError

    def fit(self, X, y):
        y = _validate_labels(y, len(X))
        self.classes_ = np.unique(y)
        part = self._part(X, self._encode(y))
        rng = Rng(self.seed)
        self.model_, self.history_ = train_model(part, self._train_config(), rng,
                                                 family=self.family)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValidationError("estimator is not fitted; call fit first")

    def predict(self, X):
        self._check_fitted()
        part = self._part(X, np.zeros(len(X), dtype=np.int64))
        record = forward_all(self.model_, part)
        if self.family == "snn":
            idx = fire_rate(record).argmax(axis=1)
        else:
            idx = record.confidences.argmax(axis=1)
        return self.classes_[idx]

    def score(self, X, y):
        return float((self.predict(X) == np.asarray(y)).mean())


class SpikingClassifier(_NetClassifier):
    """Backprop-trained spiking network classifier."""

    family = "snn"

    def __init__(self, preset="cnn-tiny", time_steps=8, neuron="lif",
                 surrogate="atan", reset_mode=None, optimizer="adam",
                 learning_rate=1e-3, epochs=20, batch_size=8, loss="auto",
                 augment=None, grad_clip=None, seed=0):
        self.preset = preset
        self.time_steps = time_steps
        self.neuron = neuron
        self.surrogate = surrogate
        self.reset_mode = reset_mode
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.loss = loss
        self.augment = augment
        self.grad_clip = grad_clip
        self.seed = seed

    def _part(self, x, labels):
        x = _validate_inputs(x, (4, 5), "SpikingClassifier")
        n_classes = len(getattr(self, "classes_", [])) or int(labels.max()) + 1
        if x.ndim == 5:
            if x.shape[1] != self.time_steps:
                raise ValidationError(f"input has {x.shape[1]} time steps, "
                                      f"estimator expects {self.time_steps}")
            return ModelPart("snn-frames", x, labels, np.arange(len(x)),
                             n_classes, self.time_steps)
        return ModelPart("snn-static", x, labels, np.arange(len(x)),
                         n_classes, self.time_steps)

    def predict_fire_rates(self, X):
        self._check_fitted()
        part = self._part(X, np.zeros(len(X), dtype=np.int64))
        return fire_rate(forward_all(self.model_, part))


class AnnClassifier(_NetClassifier):
    """Conventional network trained with softmax cross-entropy."""

    family = "ann"

    def __init__(self, preset="cnn-tiny", optimizer="adam", learning_rate=1e-3,
                 epochs=20, batch_size=8, loss="auto", augment=None,
                 grad_clip=None, batch_norm=False, seed=0):
        self.preset = preset
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.loss = loss
        self.augment = augment
        self.grad_clip = grad_clip
        self.batch_norm = batch_norm
        self.seed = seed

    time_steps = 1
    neuron = "lif"
    surrogate = "atan"
    reset_mode = None

    def _train_config(self):
        tc = super()._train_config()
        tc.batch_norm = self.batch_norm
        return tc

    def _part(self, x, labels):
        x = _validate_inputs(x, (4,), "AnnClassifier")
        n_classes = len(getattr(self, "classes_", [])) or int(labels.max()) + 1
        return ModelPart("ann-images", x, labels, np.arange(len(x)), n_classes, 1)

    def predict_proba(self, X):
        self._check_fitted()
        part = self._part(X, np.zeros(len(X), dtype=np.int64))
        return forward_all(self.model_, part).confidences

    def predict_logits(self, X):
        self._check_fitted()
        part = self._part(X, np.zeros(len(X), dtype=np.int64))
        return forward_all(self.model_, part).logits


class ThresholdMembershipAttack(BaseEstimator, ClassifierMixin):
    """Fit a membership threshold on shadow metric values (1-D scores);
    predict member when the score falls on the configured side."""

    def __init__(self, direction="less"):
        self.direction = direction

    def fit(self, X, y):
        if self.direction not in ("less", "greater"):
            raise ValidationError("direction must be 'less' or 'greater'")
        values = np.asarray(X, dtype=np.float64).ravel()
        member = np.asarray(y, dtype=bool)
        if member.all() or not member.any():
            raise ValidationError("need both members and non-members to fit")
        uniq = np.unique(values)
        cands = np.concatenate([[-np.inf], (uniq[:-1] + uniq[1:]) / 2.0, [np.inf]])
        best_t, best_acc = cands[0], -1.0
        for t in cands:
            preds = values < t if self.direction == "less" else values > t
            tpr = (preds & member).sum() / member.sum()
            tnr = (~preds & ~member).sum() / (~member).sum()
            acc = (tpr + tnr) / 2.0
            if acc > best_acc:
                best_t, best_acc = t, acc
        self.threshold_ = float(best_t)
        self.shadow_accuracy_ = float(best_acc)
        return self

    def predict(self, X):
        if not hasattr(self, "threshold_"):
            raise ValidationError("attack is not fitted; call fit first")
        values = np.asarray(X, dtype=np.float64).ravel()
        if self.direction == "less":
            return values < self.threshold_
        return values > self.threshold_
