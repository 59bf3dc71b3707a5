"""Optimizers and the training loop for both model families.

SNNs train with backpropagation through time: the forward pass is
unrolled over T steps with per-step caches, the per-step MSE against the
(possibly soft) one-hot target supplies dLoss/dS_t, and snn_backward
pushes it through the surrogate gradients. ANNs train with softmax
cross-entropy. One run is strictly sequential and fully determined by
(config, rng seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import network
from .augment import AugmentPolicy, event_drop, nda_augment, static_augment
from .errors import DivergenceError, ValidationError
from .events import (EventDataset, FrameDataset, FrameTensor, StaticImageDataset,
                     accumulate_frames, replicate_static_for_snn)
from .numerics import DTYPE, as_f32
from .rng import Rng


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction; defaults beta1=0.9, beta2=0.999, eps=1e-8."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValidationError("learning rate must be > 0")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        _check_aligned(params, grads, self.m)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            p -= as_f32(self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps))


class Sgd:
    def __init__(self, lr=0.1, momentum=0.0):
        if lr <= 0:
            raise ValidationError("learning rate must be > 0")
        self.lr, self.momentum = lr, momentum
        self.vel = None

    def step(self, params, grads):
        if self.momentum == 0.0:
            _check_aligned(params, grads, grads)
            for p, g in zip(params, grads):
                p -= as_f32(self.lr * g)
            return
        if self.vel is None:
            self.vel = [np.zeros_like(p) for p in params]
        _check_aligned(params, grads, self.vel)
        for p, g, v in zip(params, grads, self.vel):
            v[...] = self.momentum * v + g
            p -= as_f32(self.lr * v)


def _check_aligned(params, grads, state):
    if not (len(params) == len(grads) == len(state)):
        raise ValidationError("optimizer: params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValidationError(
                f"optimizer: gradient shape {g.shape} does not match parameter {p.shape}")


def make_optimizer(kind: str, lr: float):
    if kind == "adam":
        return Adam(lr=lr)
    if kind == "sgd":
        return Sgd(lr=lr)
    raise ValidationError(f"unknown optimizer {kind!r}")


# ---------------------------------------------------------------------------
# config and metrics
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 8
    optimizer: str = "adam"
    lr: float = 1e-3
    loss: str = "auto"              # snn: mse-step | mse-rate; ann: cross-entropy
    time_steps: int = 8
    preset: str = "cnn-tiny"
    neuron: str = "lif"
    surrogate: str = "atan"
    reset_mode: str | None = None
    neuron_kwargs: dict = field(default_factory=dict)
    surrogate_kwargs: dict = field(default_factory=dict)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    grad_clip: float | None = None
    batch_norm: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if self.time_steps < 1:
            raise ValidationError("time steps must be >= 1")

    def loss_kind(self, family):
        if self.loss != "auto":
            return self.loss
        return "mse-step" if family == "snn" else "cross-entropy"


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float


# ---------------------------------------------------------------------------
# model-ready views of a dataset part
# ---------------------------------------------------------------------------

class ModelPart:
    """One split part, materialized for a model family.

    For SNNs a unit is a whole sample; for ANNs on neuromorphic data each
    of a sample's T frames is its own unit (normalized to [0,1] with
    part-level per-location divisors), so `parent` maps units back to
    dataset indices for membership bookkeeping.
    """

    def __init__(self, kind, x, labels, parent, n_classes, t_steps,
                 streams=None, divisor=None):
        self.kind = kind            # snn-frames | snn-static | ann-images
        self.x = x
        self.labels = np.asarray(labels, dtype=np.int64)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.n_classes = n_classes
        self.t_steps = t_steps
        self.streams = streams      # eventdrop needs the raw events
        self.divisor = divisor      # ann-on-frames normalization map

    def __len__(self):
        return len(self.labels)

    def input_shape(self):
        if self.kind == "snn-frames":
            return tuple(self.x.shape[2:])
        return tuple(self.x.shape[1:])

    def model_input(self, idx):
        """Unaugmented model input for the given unit indices."""
        if self.kind == "snn-static":
            reps = [replicate_static_for_snn(self.x[i], self.t_steps) for i in idx]
            return as_f32(np.stack(reps))
        return self.x[idx]


def prepare_part(dataset, indices, family, t_steps) -> ModelPart:
    indices = np.asarray(indices, dtype=np.int64)
    if isinstance(dataset, StaticImageDataset):
        x = dataset.images[indices]
        if family == "snn":
            return ModelPart("snn-static", x, dataset.labels[indices], indices,
                             dataset.n_classes, t_steps)
        return ModelPart("ann-images", x, dataset.labels[indices], indices,
                         dataset.n_classes, t_steps)

    if isinstance(dataset, (EventDataset, FrameDataset)):
        frames = dataset.frames(t_steps)[indices]
        streams = ([dataset.streams[i] for i in indices]
                   if isinstance(dataset, EventDataset) else None)
        labels = dataset.labels[indices]
        if family == "snn":
            return ModelPart("snn-frames", frames, labels, indices,
                             dataset.n_classes, t_steps, streams=streams)
        # per-frame images for the ANN, normalized over this whole part
        divisor = frames.max(axis=(0, 1))
        safe = np.where(divisor > 0, divisor, 1.0)
        scaled = np.where(divisor > 0, frames / safe, 0.0)
        m, t = scaled.shape[:2]
        x = as_f32(scaled.reshape(m * t, *scaled.shape[2:]))
        return ModelPart("ann-images", x, np.repeat(labels, t),
                         np.repeat(indices, t), dataset.n_classes, t_steps,
                         streams=streams, divisor=divisor)
    raise ValidationError(f"unsupported dataset type {type(dataset).__name__}")


def _augmented_batch(part: ModelPart, idx, policy: AugmentPolicy, family,
                     rng_epoch: Rng):
    """Assemble one training batch with the policy applied per unit; the
    returned targets are class distributions (soft under CutMix)."""
    y = network.one_hot(part.labels[idx], part.n_classes)
    if policy.kind == "none":
        return part.model_input(idx), y

    if policy.kind == "eventdrop":
        if part.streams is None:
            raise ValidationError("EventDrop needs raw event streams")
        dropped = []
        for i in idx:
            # ann-images parts hold M*T frame units over M streams
            s_ix = int(i) if part.kind == "snn-frames" else int(i) // part.t_steps
            r = rng_epoch.split(int(part.parent[i]), 7)
            dropped.append(event_drop(part.streams[s_ix], r, policy.max_drop_ratio))
        return _eventdrop_tensors(part, idx, dropped), y

    if policy.kind == "nda":
        if part.kind == "snn-static":
            raise ValidationError("NDA augmentation targets neuromorphic inputs")
        if part.kind == "ann-images":
            base = part.x[idx][:, None]        # treat each image as a 1-frame stack
        else:
            base = part.x[idx]
        out = np.empty_like(base)
        soft = np.empty((len(idx), part.n_classes), dtype=DTYPE)
        for j, i in enumerate(idx):
            partner = int(rng_epoch.split(int(i), 11).integers(0, len(part)))
            pa = base[j]
            pb = part.x[partner][None] if part.kind == "ann-images" else part.x[partner]
            ya = network.one_hot(part.labels[i], part.n_classes)
            yb = network.one_hot(part.labels[partner], part.n_classes)
            ft, sl = nda_augment((FrameTensor(pa, int(part.labels[i])),
                                  FrameTensor(pb, int(part.labels[partner]))),
                                 (ya, yb), rng_epoch.split(int(i), 13), policy)
            out[j] = ft.data
            soft[j] = sl
        x = out[:, 0] if part.kind == "ann-images" else out
        if part.kind == "ann-images":
            x = np.clip(x, 0.0, 1.0)           # pasted regions can exceed local max
        return as_f32(x), soft

    if policy.kind == "static":
        if part.kind == "ann-images":
            imgs = [static_augment(part.x[i], rng_epoch.split(int(i), 17), policy)
                    for i in idx]
            return as_f32(np.stack(imgs)), y
        if part.kind == "snn-static":
            reps = []
            for i in idx:
                img = static_augment(part.x[i], rng_epoch.split(int(i), 17), policy)
                reps.append(replicate_static_for_snn(img, part.t_steps))
            return as_f32(np.stack(reps)), y
        raise ValidationError("static augmentation needs static-image inputs")

    raise ValidationError(f"unknown augmentation kind {policy.kind!r}")


def _eventdrop_tensors(part: ModelPart, idx, dropped_streams):
    xs = []
    for i, stream in zip(idx, dropped_streams):
        ft = accumulate_frames(stream, part.t_steps if len(stream) >= part.t_steps
                               else len(stream))
        data = ft.data
        if data.shape[0] < part.t_steps:       # degenerate tiny stream: pad
            pad = np.zeros((part.t_steps - data.shape[0], *data.shape[1:]), dtype=DTYPE)
            data = np.concatenate([data, pad])
        if part.kind == "ann-images":
            safe = np.where(part.divisor > 0, part.divisor, 1.0)
            data = np.where(part.divisor > 0, data / safe, 0.0)
            data = np.clip(data, 0.0, 1.0)
            frame_ix = int(i % part.t_steps)
            xs.append(data[frame_ix])
        else:
            xs.append(data)
    return as_f32(np.stack(xs))


# ---------------------------------------------------------------------------
# loss plumbing
# ---------------------------------------------------------------------------

def _loss_and_grad(record, target_dist, loss_kind):
    if loss_kind == "mse-step":
        loss = network.mse_one_hot(record.out_spikes, target_dist)
        grad = network.mse_one_hot_grad(record.out_spikes, target_dist)
    elif loss_kind == "mse-rate":
        loss = network.rate_mse(record.out_spikes, target_dist)
        grad = network.rate_mse_grad(record.out_spikes, target_dist)
    elif loss_kind == "cross-entropy":
        loss = network.cross_entropy(record.confidences, target_dist)
        grad = network.cross_entropy_logits_grad(record.confidences, target_dist)
    else:
        raise ValidationError(f"unknown loss {loss_kind!r}")
    return loss, grad


def _clip_grads(grads, max_norm):
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
    if total > max_norm and total > 0:
        scale = DTYPE(max_norm / total)
        for g in grads:
            g *= scale


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def build_model_for(part: ModelPart, family, config: TrainConfig, rng: Rng):
    specs = network.make_preset(config.preset, part.input_shape(), part.n_classes,
                                family, neuron=config.neuron,
                                surrogate=config.surrogate,
                                reset_mode=config.reset_mode,
                                neuron_kwargs=config.neuron_kwargs,
                                surrogate_kwargs=config.surrogate_kwargs,
                                batch_norm=config.batch_norm)
    t_steps = config.time_steps if family == "snn" else None
    meta = {"preset": config.preset, "origin": "backprop", "seed": rng.seed}
    return network.build_model(specs, family, t_steps, rng=rng.split(0xC0DE), meta=meta)


def train_model(train_part: ModelPart, config: TrainConfig, rng: Rng,
                family: str | None = None, test_part: ModelPart | None = None,
                model: network.NetworkModel | None = None, epoch_hook=None):
    """Train a model on one split part; returns (model, per-epoch metrics).

    Mini-batches are reshuffled per epoch from a seeded stream, augmentation
    streams are split per sample, and a non-finite loss aborts with the
    offending epoch/batch named.
    """
    if len(train_part) == 0:
        raise ValidationError("training part is empty")
    if family is None:
        family = "snn" if train_part.kind.startswith("snn") else "ann"
    if model is None:
        model = build_model_for(train_part, family, config, rng)
    loss_kind = config.loss_kind(family)
    opt = make_optimizer(config.optimizer, config.lr)
    history = []
    n = len(train_part)
    for epoch in range(config.epochs):
        r_epoch = rng.split(1, epoch)
        order = r_epoch.permutation(n)
        for b_start in range(0, n, config.batch_size):
            idx = order[b_start:b_start + config.batch_size]
            x, y_dist = _augmented_batch(train_part, idx, config.augment, family,
                                         r_epoch)
            model.zero_grads()
            if family == "snn":
                record, tape = network.snn_forward(model, x, train=True)
                loss, d_spikes = _loss_and_grad(record, y_dist, loss_kind)
                network.snn_backward(model, tape, d_spikes)
            else:
                record, tape = network.ann_forward(model, x, train=True)
                loss, d_logits = _loss_and_grad(record, y_dist, loss_kind)
                network.ann_backward(model, tape, d_logits)
            grads = model.grad_arrays()
            if not np.isfinite(loss) or any(not np.all(np.isfinite(g)) for g in grads):
                raise DivergenceError(
                    f"non-finite loss/gradients at epoch {epoch}, batch "
                    f"{b_start // config.batch_size}")
            if config.grad_clip is not None:
                _clip_grads(grads, config.grad_clip)
            opt.step(model.parameters(), grads)
        train_acc, train_loss = evaluate(model, train_part, loss_kind=loss_kind)
        if test_part is not None and len(test_part):
            test_acc, test_loss = evaluate(model, test_part, loss_kind=loss_kind)
        else:
            test_acc, test_loss = float("nan"), float("nan")
        metrics = EpochMetrics(epoch, train_loss, test_loss, train_acc, test_acc)
        history.append(metrics)
        if epoch_hook is not None:
            epoch_hook(epoch, model, metrics)
    return model, history


def forward_all(model, part: ModelPart, batch_size=256, spike_mode="hard"):
    """Inference forward over a whole part; returns one batched record."""
    spikes, pots, logits = [], [], []
    for b in range(0, len(part), batch_size):
        idx = np.arange(b, min(b + batch_size, len(part)))
        x = part.model_input(idx)
        if model.family == "snn":
            rec, _ = network.snn_forward(model, x, train=False, spike_mode=spike_mode)
            spikes.append(rec.out_spikes)
            pots.append(rec.out_potentials)
        else:
            rec, _ = network.ann_forward(model, x, train=False)
            logits.append(rec.logits)
    if model.family == "snn":
        record = network.ForwardRecord(out_spikes=np.concatenate(spikes),
                                       out_potentials=np.concatenate(pots))
        rates = network.fire_rate(record)
        record.confidences = network.softmax(rates)   # converted nets report this
        return record
    lg = np.concatenate(logits)
    return network.ForwardRecord(logits=lg, confidences=network.softmax(lg))


def predictions(model, record) -> np.ndarray:
    """Argmax class per sample; ties break toward the lowest class index."""
    if model.family == "snn":
        return network.fire_rate(record).argmax(axis=1)
    return record.confidences.argmax(axis=1)


def evaluate(model, part: ModelPart, batch_size=256, loss_kind=None):
    """(accuracy, mean loss) over a part with the family's training loss."""
    if len(part) == 0:
        raise ValidationError("cannot evaluate an empty part")
    if loss_kind is None:
        loss_kind = "mse-step" if model.family == "snn" else "cross-entropy"
    record = forward_all(model, part, batch_size)
    preds = predictions(model, record)
    acc = float((preds == part.labels).mean())
    y_dist = network.one_hot(part.labels, part.n_classes)
    if model.family == "snn":
        if loss_kind == "mse-rate":
            loss = network.rate_mse(record.out_spikes, y_dist)
        else:
            loss = network.mse_one_hot(record.out_spikes, y_dist)
    else:
        loss = network.cross_entropy(record.confidences, part.labels)
    return acc, loss
