import numpy as np
import pytest

from spikelab.augment import (AugmentPolicy, crop_resize, cutmix_frames,
                              cutout_frames, drop_by_area, drop_by_time,
                              drop_random, event_drop, flip_frames, nda_augment,
                              policy_from_config, resize_bilinear, roll_frames,
                              rotate_frames, shear_frames, static_augment)
from spikelab.errors import ValidationError
from spikelab.events import EventStream, FrameTensor, StaticImage
from spikelab.rng import Rng


def _stream(ts, xs, ys, ps, w=8, h=8):
    return EventStream(w, h, ts, xs, ys, ps, 0)


def _as_tuples(s):
    return list(zip(s.t.tolist(), s.x.tolist(), s.y.tolist(), s.p.tolist()))


def test_drop_by_time_window_example():
    # window [0, 0.25*30) = [0, 7.5) removes only the t=0 event
    s = _stream([0, 10, 20, 30], [0, 1, 2, 3], [0, 0, 0, 0], [1, 1, 1, 1])
    out = drop_by_time(s, start=0.0, ratio=0.25)
    assert list(out.t) == [10, 20, 30]


def test_drop_random_count():
    s = _stream([0, 1, 2, 3], [0, 1, 2, 3], [0, 0, 0, 0], [0, 1, 0, 1])
    out = drop_random(s, Rng(1), ratio=0.5)
    assert len(out) == 2
    assert set(_as_tuples(out)) <= set(_as_tuples(s))


def test_drop_by_area_removes_inside_box():
    s = _stream([0, 1, 2], [0, 4, 7], [0, 4, 7], [1, 1, 1])
    out = drop_by_area(s, x0=3, y0=3, ratio=0.25)   # 4x4 box at (3,3)
    assert (4 not in out.x) and (0 in out.x) and (7 in out.x)


def test_event_drop_never_increases_and_subsets():
    rng = Rng(2)
    s = _stream(np.arange(40), np.arange(40) % 8, (np.arange(40) // 8) % 8,
                np.arange(40) % 2)
    branches_seen = set()
    for k in range(40):
        r = rng.split(k)
        out = event_drop(s, r)
        assert len(out) <= len(s) and len(out) > 0
        assert set(_as_tuples(out)) <= set(_as_tuples(s))
        assert np.all(np.diff(out.t) >= 0)
        branches_seen.add(len(out))
    assert len(s) in branches_seen          # identity branch occurred


def test_event_drop_deterministic():
    s = _stream(np.arange(20), np.arange(20) % 8, np.zeros(20, int),
                np.ones(20, int))
    a = event_drop(s, Rng(3))
    b = event_drop(s, Rng(3))
    assert a == b


def test_event_drop_empty_stream_rejected():
    with pytest.raises(ValidationError):
        event_drop(_stream([], [], [], []), Rng(4))


def test_flip_moves_border_pixel():
    data = np.zeros((1, 2, 2, 4), dtype=np.float32)
    data[0, 0, 0, 0] = 1.0
    flipped = flip_frames(data)
    assert flipped[0, 0, 0, 3] == 1.0 and flipped[0, 0, 0, 0] == 0.0


def test_double_flip_is_identity():
    rng = Rng(5)
    data = rng.uniform(0, 3, (2, 2, 4, 4)).astype(np.float32)
    assert np.array_equal(flip_frames(flip_frames(data)), data)


def test_neutral_geometric_ops_are_identity():
    rng = Rng(6)
    data = rng.uniform(0, 2, (3, 2, 8, 8)).astype(np.float32)
    assert np.array_equal(roll_frames(data, 0, 0), data)
    assert np.array_equal(rotate_frames(data, 0.0), data)
    assert np.array_equal(shear_frames(data, 0.0), data)
    mixed, lam = cutmix_frames(data, np.zeros_like(data), 1.0, Rng(7))
    assert np.array_equal(mixed, data) and lam == 1.0


def test_cutmix_exact_lambda_soft_label():
    a = np.ones((1, 2, 8, 8), dtype=np.float32)
    b = np.zeros((1, 2, 8, 8), dtype=np.float32)
    mixed, lam = cutmix_frames(a, b, 0.75, Rng(8))
    assert lam == pytest.approx(0.75)        # 4x4 box over 8x8 = quarter area
    y1 = np.array([1.0, 0, 0])
    y2 = np.array([0, 1.0, 0])
    soft = lam * y1 + (1 - lam) * y2
    assert np.allclose(soft, [0.75, 0.25, 0.0])
    assert mixed.sum() == a.sum() - 16 * 2   # pasted zeros over 16 px, 2 ch


def test_nda_preserves_shape_and_soft_label_sums_to_one():
    rng = Rng(9)
    a = FrameTensor(rng.uniform(0, 3, (4, 2, 8, 8)).astype(np.float32), 1)
    b = FrameTensor(rng.uniform(0, 3, (4, 2, 8, 8)).astype(np.float32), 2)
    y = np.zeros((2, 3), dtype=np.float32)
    y[0, 1] = 1.0
    y[1, 2] = 1.0
    for k in range(12):
        out, soft = nda_augment((a, b), y, rng.split(k))
        assert out.data.shape == a.data.shape
        assert out.data.min() >= 0.0
        assert soft.sum() == pytest.approx(1.0)


def test_nda_applies_same_transform_across_frames():
    # a frame-invariant input stays frame-invariant under any draw
    rng = Rng(10)
    plane = rng.uniform(0, 2, (2, 8, 8)).astype(np.float32)
    stack = np.stack([plane] * 5)
    a = FrameTensor(stack, 0)
    b = FrameTensor(np.stack([plane] * 5), 1)
    y = np.eye(2, dtype=np.float32)
    for k in range(8):
        out, _ = nda_augment((a, b), y, rng.split(k))
        for t in range(1, 5):
            assert np.array_equal(out.data[t], out.data[0])


def test_nda_deterministic():
    rng_data = Rng(11)
    a = FrameTensor(rng_data.uniform(0, 2, (3, 2, 6, 6)).astype(np.float32), 0)
    b = FrameTensor(rng_data.uniform(0, 2, (3, 2, 6, 6)).astype(np.float32), 1)
    y = np.eye(2, dtype=np.float32)
    o1, s1 = nda_augment((a, b), y, Rng(12))
    o2, s2 = nda_augment((a, b), y, Rng(12))
    assert np.array_equal(o1.data, o2.data) and np.array_equal(s1, s2)


def test_nda_shape_mismatch():
    a = FrameTensor(np.zeros((2, 2, 4, 4), dtype=np.float32), 0)
    b = FrameTensor(np.zeros((2, 2, 6, 6), dtype=np.float32), 1)
    with pytest.raises(ValidationError, match="mismatch"):
        nda_augment((a, b), np.eye(2), Rng(13))


def test_cutout_zeroes_box():
    data = np.ones((1, 2, 6, 6), dtype=np.float32)
    out = cutout_frames(data, 1, 2, 3, 2)
    assert out[0, :, 2:4, 1:4].sum() == 0.0
    assert out.sum() == data.sum() - 2 * 3 * 2


def test_crop_scale_one_is_identity():
    rng = Rng(14)
    img = rng.uniform(0, 1, (1, 8, 8)).astype(np.float32)
    out = crop_resize(img, 0, 0, 8, 8)
    assert np.abs(out - img).max() < 1e-6


def test_resize_of_constant_is_constant():
    img = np.full((2, 5, 5), 0.37, dtype=np.float32)
    out = resize_bilinear(img, 9, 9)
    assert np.allclose(out, 0.37, atol=1e-6)


def test_static_augment_stays_in_range_and_deterministic():
    rng = Rng(15)
    img = StaticImage(rng.uniform(0, 1, (1, 12, 12)).astype(np.float32), 3)
    outs = [static_augment(img, Rng(16)) for _ in range(2)]
    assert np.array_equal(outs[0].data, outs[1].data)
    for k in range(10):
        out = static_augment(img, rng.split(k))
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0
        assert out.label == 3


def test_policy_validation_and_config():
    with pytest.raises(ValidationError):
        AugmentPolicy(kind="nope")
    with pytest.raises(ValidationError):
        AugmentPolicy(max_drop_ratio=1.5)
    p = policy_from_config({"kind": "nda", "max_roll": 3, "cutmix_beta": [1.0, 1.0]})
    assert p.kind == "nda" and p.max_roll == 3
    assert policy_from_config(None).kind == "none"
    assert policy_from_config("eventdrop").kind == "eventdrop"
