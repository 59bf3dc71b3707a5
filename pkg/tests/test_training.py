import numpy as np
import pytest

from conftest import fd_check_coords
from spikelab import network
from spikelab.augment import AugmentPolicy
from spikelab.errors import DivergenceError, ValidationError
from spikelab.rng import Rng
from spikelab.training import (Adam, ModelPart, Sgd, TrainConfig, evaluate,
                               prepare_part, train_model)


def test_adam_first_step_is_signed_lr():
    p = np.array([1.0, -2.0, 3.0], dtype=np.float32)
    g = np.array([0.5, -0.8, 0.01], dtype=np.float32)
    opt = Adam(lr=1e-3)
    before = p.copy()
    opt.step([p], [g])
    update = p - before
    # bias-corrected first step: update ~ -lr*sign(g)
    assert np.all(np.abs(update * np.sign(g) + 1e-3) <= 1e-6)


def test_sgd_step():
    p = np.array([1.0], dtype=np.float32)
    Sgd(lr=0.1).step([p], [np.array([2.0], dtype=np.float32)])
    assert p[0] == pytest.approx(0.8)


def test_zero_gradient_leaves_params():
    for opt in (Adam(lr=0.01), Sgd(lr=0.5)):
        p = np.array([1.5, -0.5], dtype=np.float32)
        before = p.copy()
        opt.step([p], [np.zeros(2, dtype=np.float32)])
        assert np.array_equal(p, before)


def test_optimizer_shape_mismatch():
    with pytest.raises(ValidationError):
        Adam().step([np.zeros(3)], [np.zeros(2)])
    with pytest.raises(ValidationError):
        Adam(lr=0.0)


def _toy_part(n=40, d=6, n_classes=2, seed=0):
    # separable with a margin: keep only samples where the halves differ
    rng = Rng(seed)
    x = rng.uniform(0, 1, (4 * n, 1, d, 1)).astype(np.float32)
    diff = x[:, 0, :3, 0].sum(axis=1) - x[:, 0, 3:, 0].sum(axis=1)
    keep = np.abs(diff) > 0.4
    x, diff = x[keep][:n], diff[keep][:n]
    y = (diff > 0).astype(np.int64)
    return ModelPart("ann-images", x, y, np.arange(len(x)), n_classes, 1)


def test_train_determinism_bit_identical():
    part = _toy_part()
    test = _toy_part(n=12, seed=8)
    tc = TrainConfig(epochs=4, batch_size=8, preset="mlp-tiny", time_steps=1)
    m1, h1 = train_model(part, tc, Rng(5), family="ann", test_part=test)
    m2, h2 = train_model(part, tc, Rng(5), family="ann", test_part=test)
    for a, b in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(a, b)
    assert h1 == h2


def test_loss_decreases_on_separable_toy():
    part = _toy_part(n=60, seed=1)
    tc1 = TrainConfig(epochs=1, batch_size=8, preset="mlp-tiny", time_steps=1)
    tc50 = TrainConfig(epochs=50, batch_size=8, preset="mlp-tiny", time_steps=1)
    _, h1 = train_model(part, tc1, Rng(6), family="ann")
    _, h50 = train_model(part, tc50, Rng(6), family="ann")
    assert h50[-1].train_loss < h1[-1].train_loss


def test_runs_do_not_share_optimizer_state():
    part_a = _toy_part(seed=2)
    part_b = _toy_part(seed=3)
    tc = TrainConfig(epochs=3, batch_size=8, preset="mlp-tiny", time_steps=1)
    ma1, _ = train_model(part_a, tc, Rng(7), family="ann")
    _, _ = train_model(part_b, tc, Rng(8), family="ann")
    ma2, _ = train_model(part_a, tc, Rng(7), family="ann")
    for a, b in zip(ma1.parameters(), ma2.parameters()):
        assert np.array_equal(a, b)


def test_bptt_gradients_match_finite_differences():
    # soft-mode full-network gradient check in float64, T in {1, 4}
    rng = Rng(9)
    specs = network.make_preset("mlp-tiny", (1, 3, 3), 2, "snn", input_gain=1.0)
    for t_steps in (1, 4):
        model = network.build_model(specs, "snn", t_steps, rng=rng.split(t_steps))
        network.model_astype(model, np.float64)
        x = rng.split(50 + t_steps).uniform(0, 1, (2, t_steps, 1, 3, 3))
        y = network.one_hot(np.array([0, 1]), 2)

        def loss_fn():
            rec, _ = network.snn_forward(model, x, spike_mode="soft")
            return network.mse_one_hot(rec.out_spikes, y)

        model.zero_grads()
        rec, tape = network.snn_forward(model, x, train=True, spike_mode="soft")
        network.snn_backward(model, tape,
                             network.mse_one_hot_grad(rec.out_spikes, y),
                             spike_mode="soft")
        worst = fd_check_coords(loss_fn, model.parameters(), model.grad_arrays(),
                                rng.split(90 + t_steps))
        assert worst < 1e-3


def test_eif_soft_gradients_match_finite_differences():
    # the exponential drive enters the state jacobian; check it end to end
    rng = Rng(22)
    specs = network.make_preset("mlp-tiny", (1, 2, 2), 2, "snn", neuron="eif",
                                input_gain=1.0)
    model = network.build_model(specs, "snn", 3, rng=rng.split(0))
    network.model_astype(model, np.float64)
    x = rng.split(1).uniform(0, 1, (2, 3, 1, 2, 2))
    y = network.one_hot(np.array([0, 1]), 2)

    def loss_fn():
        rec, _ = network.snn_forward(model, x, spike_mode="soft")
        return network.mse_one_hot(rec.out_spikes, y)

    model.zero_grads()
    rec, tape = network.snn_forward(model, x, train=True, spike_mode="soft")
    network.snn_backward(model, tape, network.mse_one_hot_grad(rec.out_spikes, y),
                         spike_mode="soft")
    worst = fd_check_coords(loss_fn, model.parameters(), model.grad_arrays(),
                            rng.split(2), per_param=4)
    assert worst < 1e-3


def test_izhikevich_soft_gradients_match_finite_differences():
    # two-state recurrence; gradients are tiny through the mV-scale
    # surrogate, so coordinates below the f64 finite-difference noise
    # floor are skipped
    rng = Rng(77)
    specs = network.make_preset("mlp-tiny", (1, 2, 2), 2, "snn",
                                neuron="izhikevich", input_gain=20.0)
    model = network.build_model(specs, "snn", 3, rng=rng.split(0))
    network.model_astype(model, np.float64)
    x = rng.split(1).uniform(0, 1, (2, 3, 1, 2, 2))
    y = network.one_hot(np.array([0, 1]), 2)

    def loss_fn():
        rec, _ = network.snn_forward(model, x, spike_mode="soft")
        return network.mse_one_hot(rec.out_spikes, y)

    model.zero_grads()
    rec, tape = network.snn_forward(model, x, train=True, spike_mode="soft")
    network.snn_backward(model, tape, network.mse_one_hot_grad(rec.out_spikes, y),
                         spike_mode="soft")
    r = rng.split(2)
    worst = 0.0
    for p, g in zip(model.parameters(), model.grad_arrays()):
        fp, fg = p.reshape(-1), g.reshape(-1)
        for _ in range(6):
            ci = int(r.integers(0, fp.size))
            orig = float(fp[ci])
            eps = 1e-3
            fp[ci] = orig + eps
            hi = loss_fn()
            fp[ci] = orig - eps
            lo = loss_fn()
            fp[ci] = orig
            fd = (hi - lo) / (2 * eps)
            an = float(fg[ci])
            if max(abs(fd), abs(an)) < 1e-9:
                continue
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    assert worst < 1e-3


def test_evaluate_perfect_and_chance():
    part = _toy_part(n=80, seed=4)
    tc = TrainConfig(epochs=60, batch_size=8, preset="mlp-tiny", time_steps=1)
    model, _ = train_model(part, tc, Rng(10), family="ann")
    acc, _ = evaluate(model, part)
    assert acc == 1.0

    # untrained 10-class model over >= 500 samples sits near chance
    rng = Rng(11)
    x = rng.uniform(0, 1, (600, 1, 6, 1)).astype(np.float32)
    y = rng.integers(0, 10, 600)
    chance_part = ModelPart("ann-images", x, y, np.arange(600), 10, 1)
    from spikelab.training import build_model_for
    untrained = build_model_for(chance_part, "ann",
                                TrainConfig(preset="mlp-tiny", time_steps=1),
                                Rng(12))
    acc, _ = evaluate(untrained, chance_part)
    assert abs(acc - 0.1) <= 0.05


def test_evaluate_invariant_under_permutation():
    part = _toy_part(n=50, seed=5)
    tc = TrainConfig(epochs=3, batch_size=8, preset="mlp-tiny", time_steps=1)
    model, _ = train_model(part, tc, Rng(13), family="ann")
    acc1, loss1 = evaluate(model, part)
    perm = Rng(14).permutation(50)
    part2 = ModelPart("ann-images", part.x[perm], part.labels[perm],
                      part.parent[perm], part.n_classes, 1)
    acc2, loss2 = evaluate(model, part2)
    assert acc1 == acc2
    assert loss1 == pytest.approx(loss2, rel=1e-5)


def test_zero_epochs_rejected():
    with pytest.raises(ValidationError):
        TrainConfig(epochs=0)


def test_divergence_aborts_with_location():
    part = _toy_part(n=24, seed=6)
    tc = TrainConfig(epochs=3, batch_size=8, preset="mlp-tiny", time_steps=1,
                     optimizer="sgd", lr=1e18)
    with pytest.raises(DivergenceError, match="epoch"):
        train_model(part, tc, Rng(15), family="ann")


def test_snn_training_memorizes_small_set(tiny_event_dataset):
    idx = np.arange(32)
    part = prepare_part(tiny_event_dataset, idx, "snn", 4)
    tc = TrainConfig(epochs=12, batch_size=8, time_steps=4, preset="cnn-tiny")
    model, hist = train_model(part, tc, Rng(16))
    assert hist[-1].train_acc >= 0.9


def test_training_with_each_augmentation_runs(tiny_event_dataset,
                                              tiny_static_dataset):
    idx = np.arange(24)
    tc_kwargs = dict(epochs=2, batch_size=8, time_steps=4, preset="cnn-tiny")
    part = prepare_part(tiny_event_dataset, idx, "snn", 4)
    for kind in ("eventdrop", "nda"):
        tc = TrainConfig(augment=AugmentPolicy(kind=kind), **tc_kwargs)
        model, hist = train_model(part, tc, Rng(17))
        assert np.isfinite(hist[-1].train_loss)
    spart = prepare_part(tiny_static_dataset, idx, "snn", 4)
    tc = TrainConfig(augment=AugmentPolicy(kind="static"), **tc_kwargs)
    model, hist = train_model(spart, tc, Rng(18))
    assert np.isfinite(hist[-1].train_loss)


def test_augmented_training_deterministic(tiny_event_dataset):
    idx = np.arange(24)
    part = prepare_part(tiny_event_dataset, idx, "snn", 4)
    tc = TrainConfig(epochs=2, batch_size=8, time_steps=4, preset="cnn-tiny",
                     augment=AugmentPolicy(kind="eventdrop"))
    m1, _ = train_model(part, tc, Rng(19))
    m2, _ = train_model(part, tc, Rng(19))
    for a, b in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(a, b)


def test_ann_on_frames_expands_units(tiny_event_dataset):
    idx = np.arange(10)
    part = prepare_part(tiny_event_dataset, idx, "ann", 4)
    assert len(part) == 10 * 4
    assert part.x.shape[1:] == (2, 20, 20)
    assert part.x.min() >= 0.0 and part.x.max() <= 1.0
    assert np.array_equal(np.unique(part.parent), idx)
    tc = TrainConfig(epochs=2, batch_size=16, preset="cnn-tiny", time_steps=4)
    model, hist = train_model(part, tc, Rng(20), family="ann")
    assert np.isfinite(hist[-1].train_loss)


def test_grad_clip_caps_norm():
    part = _toy_part(n=24, seed=7)
    tc = TrainConfig(epochs=2, batch_size=8, preset="mlp-tiny", time_steps=1,
                     grad_clip=1e-6)
    model, hist = train_model(part, tc, Rng(21), family="ann")
    # with a vanishing clip the model barely moves; loss stays near init
    assert hist[-1].train_loss == pytest.approx(hist[0].train_loss, rel=0.05)
