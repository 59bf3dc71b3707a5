import struct

import numpy as np
import pytest

from spikelab.errors import FormatError, ValidationError
from spikelab.events import (Event, EventStream, FrameTensor, accumulate_frames,
                             normalize_frames_for_ann, read_events, read_idx,
                             read_labeled_images, replicate_static_for_snn,
                             split_dataset, synth_moving_shape, write_events,
                             write_labeled_images, StaticImage, load_idx_dataset)
from spikelab.rng import Rng


def _stream(ts, xs, ys, ps, w=8, h=8, label=0):
    return EventStream(w, h, ts, xs, ys, ps, label)


def test_accumulate_equal_bins_and_conservation():
    s = _stream(range(8), [0] * 8, [0] * 8, [1, 0] * 4)
    ft = accumulate_frames(s, 4)
    assert ft.data.shape == (4, 2, 8, 8)
    assert ft.data.sum() == 8.0
    assert np.all(ft.data.sum(axis=(1, 2, 3)) == 2.0)


def test_accumulate_single_event_placement():
    s = _stream([5], [1], [0], [1])
    ft = accumulate_frames(s, 1)
    expected = np.zeros((1, 2, 8, 8), dtype=np.float32)
    expected[0, 1, 0, 1] = 1.0
    assert np.array_equal(ft.data, expected)


def test_accumulate_remainder_spreads_to_leading_bins():
    # hand rule: 10 events over 4 bins -> sizes (3,3,2,2)
    s = _stream(range(10), [0] * 10, [0] * 10, [0] * 10)
    ft = accumulate_frames(s, 4)
    assert list(ft.data.sum(axis=(1, 2, 3))) == [3.0, 3.0, 2.0, 2.0]


def test_accumulate_per_polarity_conservation():
    rng = Rng(3)
    n = 57
    s = _stream(np.sort(rng.integers(0, 1000, n)), rng.integers(0, 8, n),
                rng.integers(0, 8, n), rng.integers(0, 2, n))
    ft = accumulate_frames(s, 5)
    assert ft.data[:, 1].sum() == float((s.p == 1).sum())
    assert ft.data[:, 0].sum() == float((s.p == 0).sum())


def test_accumulate_errors():
    empty = _stream([], [], [], [])
    with pytest.raises(ValidationError, match="empty"):
        accumulate_frames(empty, 2)
    s = _stream([1, 2], [0, 0], [0, 0], [0, 1])
    with pytest.raises(ValidationError, match="exceed"):
        accumulate_frames(s, 3)


def test_normalize_divides_by_location_max():
    data = np.zeros((1, 2, 4, 4), dtype=np.float32)
    data[0, 0, 1, 1] = 2.0
    other = np.zeros((1, 2, 4, 4), dtype=np.float32)
    other[0, 0, 1, 1] = 4.0
    out = normalize_frames_for_ann([FrameTensor(data, 0), FrameTensor(other, 1)])
    assert out[0].data[0, 1, 1] == pytest.approx(0.5)
    assert out[1].data[0, 1, 1] == pytest.approx(1.0)


def test_normalize_all_zero_batch():
    z = FrameTensor(np.zeros((2, 2, 3, 3), dtype=np.float32), 0)
    out = normalize_frames_for_ann([z])
    assert all(np.all(img.data == 0.0) for img in out)


def test_normalize_emits_t_images_per_point_with_parent_label():
    rng = Rng(4)
    fts = [FrameTensor(rng.integers(0, 5, (2, 2, 3, 3)).astype(np.float32), lbl)
           for lbl in (3, 7)]
    out = normalize_frames_for_ann(fts)
    assert len(out) == 4
    assert sorted(img.label for img in out) == [3, 3, 7, 7]
    stacked = np.stack([img.data for img in out])
    assert stacked.min() >= 0.0 and stacked.max() <= 1.0
    assert stacked.max() == pytest.approx(1.0)   # some location hits its max


def test_normalize_rejects_mixed_shapes():
    a = FrameTensor(np.zeros((1, 2, 3, 3), dtype=np.float32), 0)
    b = FrameTensor(np.zeros((1, 2, 4, 4), dtype=np.float32), 0)
    with pytest.raises(ValidationError, match="mismatch"):
        normalize_frames_for_ann([a, b])


def test_replicate_static():
    img = StaticImage(np.full((1, 2, 2), 0.5, dtype=np.float32), 0)
    rep = replicate_static_for_snn(img, 3)
    assert rep.shape == (3, 1, 2, 2)
    for t in range(3):
        assert np.array_equal(rep[t], img.data)
    assert rep.sum() == pytest.approx(3 * img.data.sum())
    assert replicate_static_for_snn(img, 1).shape == (1, 1, 2, 2)


def test_split_90_10_inside_halves():
    split = split_dataset(100, Rng(5))
    assert len(split.target_train) == 45 and len(split.target_test) == 5
    assert len(split.shadow_train) == 45 and len(split.shadow_test) == 5


def test_split_is_partition():
    split = split_dataset(101, Rng(6))
    allidx = np.concatenate([split.target_train, split.target_test,
                             split.shadow_train, split.shadow_test])
    assert len(allidx) == 101
    assert len(np.unique(allidx)) == 101


def test_split_deterministic():
    a = split_dataset(64, Rng(7))
    b = split_dataset(64, Rng(7))
    for pa, pb in zip(a.parts().values(), b.parts().values()):
        assert np.array_equal(pa, pb)


def test_split_respects_predefined_boundary():
    split = split_dataset(100, Rng(8), predefined_train=80)
    train_pool = set(range(80))
    assert set(split.target_train.tolist()) <= train_pool
    assert set(split.shadow_train.tolist()) <= train_pool
    assert set(split.target_test.tolist()).isdisjoint(train_pool)
    assert len(split.target_train) + len(split.shadow_train) == 80


def test_split_stratified_halves():
    labels = np.array([0, 1] * 50)
    split = split_dataset(100, Rng(9), labels=labels)
    for part in (split.target_train, split.shadow_train):
        counts = np.bincount(labels[part], minlength=2)
        assert abs(int(counts[0]) - int(counts[1])) <= 1


def test_split_too_small():
    with pytest.raises(ValidationError):
        split_dataset(3, Rng(10))


def test_synth_static_shape_emits_only_transient():
    rng = Rng(11)
    s = synth_moving_shape(0, 16, 16, 10_000, rng, velocity=(0.0, 0.0),
                           start=(8.0, 8.0))
    assert len(s) > 0
    assert s.t.max() == s.t.min()    # everything at the first frame


def test_synth_rightward_bar_polarity_geometry():
    rng = Rng(12)
    s = synth_moving_shape(0, 32, 32, 10_000, rng, shape="bar",
                           velocity=(0.8, 0.0), start=(8.0, 16.0))
    moving = s.subset(s.t > s.t.min())   # skip the initial transient
    pos_x = moving.x[moving.p == 1].mean()
    neg_x = moving.x[moving.p == 0].mean()
    assert pos_x > neg_x


def test_synth_deterministic():
    a = synth_moving_shape(2, 24, 24, 20_000, Rng(13))
    b = synth_moving_shape(2, 24, 24, 20_000, Rng(13))
    assert a == b


def test_synth_time_reversal_swaps_polarities():
    # run the trajectory backwards (start at the right-mover's end, negate
    # velocity): away from the initial transient the polarity sets swap
    frames, v = 16, 0.7
    right = synth_moving_shape(0, 33, 33, 10_000, Rng(14), shape="bar",
                               velocity=(v, 0.0), start=(10.0, 16.0), frames=frames)
    left = synth_moving_shape(0, 33, 33, 10_000, Rng(14), shape="bar",
                              velocity=(-v, 0.0),
                              start=(10.0 + v * (frames - 1), 16.0), frames=frames)
    r_pos = right.x[(right.p == 1) & (right.t > right.t.min())]
    r_neg = right.x[(right.p == 0) & (right.t > right.t.min())]
    l_pos = left.x[(left.p == 1) & (left.t > left.t.min())]
    l_neg = left.x[(left.p == 0) & (left.t > left.t.min())]
    assert len(r_pos) == len(l_neg) and len(r_neg) == len(l_pos)
    assert abs(r_pos.mean() - l_neg.mean()) <= 1.0
    assert abs(r_neg.mean() - l_pos.mean()) <= 1.0


def test_evt1_round_trip(tmp_path):
    rng = Rng(15)
    s = synth_moving_shape(1, 16, 16, 5_000, rng, noise_events=10)
    path = tmp_path / "s.evt1"
    write_events(path, s)
    assert read_events(path) == s


def test_evt1_bad_magic(tmp_path):
    path = tmp_path / "bad.evt1"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(FormatError, match="EVT1"):
        read_events(path)


def test_evt1_rejects_out_of_bounds_coordinate(tmp_path):
    path = tmp_path / "oob.evt1"
    rec = struct.pack("<IHHBB", 0, 8, 0, 1, 0)   # x == width
    path.write_bytes(b"EVT1" + struct.pack("<HHIQ", 8, 8, 0, 1) + rec)
    with pytest.raises(FormatError, match="bounds"):
        read_events(path)


def test_evt1_truncated(tmp_path):
    path = tmp_path / "t.evt1"
    s = _stream([1, 2], [0, 1], [0, 1], [0, 1])
    write_events(path, s)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FormatError, match="length"):
        read_events(path)


def test_event_stream_validation():
    with pytest.raises(ValidationError):
        _stream([0], [8], [0], [0])          # x == width
    with pytest.raises(ValidationError):
        _stream([0], [0], [0], [2])          # bad polarity
    s = _stream([5, 1], [0, 1], [0, 1], [0, 1])
    assert list(s.t) == [1, 5]               # sorted on construction
    assert isinstance(s.events()[0], Event)


def test_labeled_images_round_trip(tmp_path):
    rng = Rng(16)
    arr = rng.uniform(0, 1, (5, 2, 4, 4)).astype(np.float32)
    labels = np.array([0, 1, 2, 1, 0])
    path = tmp_path / "imgs.ft32"
    write_labeled_images(path, arr, labels)
    arr2, labels2 = read_labeled_images(path)
    assert np.array_equal(arr, arr2)
    assert np.array_equal(labels, labels2)


def test_labeled_images_label_count_mismatch(tmp_path):
    with pytest.raises(ValidationError):
        write_labeled_images(tmp_path / "x.ft32", np.zeros((3, 1, 2, 2)), [0, 1])


def test_idx_round_trip(tmp_path):
    images = (np.arange(2 * 4 * 4) % 256).astype(np.uint8).reshape(2, 4, 4)
    labels = np.array([3, 1], dtype=np.uint8)
    ip = tmp_path / "imgs.idx"
    lp = tmp_path / "lbls.idx"
    ip.write_bytes(b"\x00\x00\x08\x03" + struct.pack(">3I", 2, 4, 4) + images.tobytes())
    lp.write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", 2) + labels.tobytes())
    assert np.array_equal(read_idx(ip), images)
    ds = load_idx_dataset(ip, lp)
    assert len(ds) == 2 and ds.images.shape == (2, 1, 4, 4)
    assert ds.images.max() <= 1.0
    assert list(ds.labels) == [3, 1]


def test_idx_bad_magic(tmp_path):
    p = tmp_path / "bad.idx"
    p.write_bytes(b"\x01\x00\x08\x01\x00\x00\x00\x01\x05")
    with pytest.raises(FormatError):
        read_idx(p)
