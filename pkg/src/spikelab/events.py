"""Event streams, frame tensors, dataset synthesis, splits, and file I/O.

A neuromorphic data point is a time-sorted list of (t, x, y, polarity)
events; for the networks it is accumulated into T frames of per-polarity
event counts, shape [T, 2, H, W]. Binning is by equal event count (the
remainder spread over the leading bins), not by equal time.

The synthetic generator emulates a DVS camera watching a moving shape:
a pixel whose luminance rises more than theta_on emits a positive event,
one that falls more than theta_off emits a negative event.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .numerics import DTYPE, as_f32, read_ft32, write_ft32
from .rng import Rng

EVT1_MAGIC = b"EVT1"
_EVENT_DT = np.dtype([("t", "<u4"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "u1")])


@dataclass
class Event:
    t_us: int
    x: int
    y: int
    polarity: int


class EventStream:
    """Time-sorted events from one sample, stored as parallel arrays."""

    def __init__(self, width, height, t, x, y, p, label):
        self.width = int(width)
        self.height = int(height)
        self.label = int(label)
        t = np.asarray(t, dtype=np.int64)
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        p = np.asarray(p, dtype=np.int64)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise ValidationError("event field arrays must have equal length")
        if len(x) and (x.min() < 0 or x.max() >= self.width):
            raise ValidationError(f"event x out of bounds for width {self.width}")
        if len(y) and (y.min() < 0 or y.max() >= self.height):
            raise ValidationError(f"event y out of bounds for height {self.height}")
        if len(p) and not np.isin(p, (0, 1)).all():
            raise ValidationError("event polarity must be 0 or 1")
        if len(t) and t.min() < 0:
            raise ValidationError("event timestamps must be non-negative")
        order = np.argsort(t, kind="stable")
        self.t, self.x, self.y, self.p = t[order], x[order], y[order], p[order]

    def __len__(self):
        return len(self.t)

    def __eq__(self, other):
        return (isinstance(other, EventStream)
                and (self.width, self.height, self.label) == (other.width, other.height, other.label)
                and np.array_equal(self.t, other.t) and np.array_equal(self.x, other.x)
                and np.array_equal(self.y, other.y) and np.array_equal(self.p, other.p))

    def events(self):
        return [Event(int(t), int(x), int(y), int(p))
                for t, x, y, p in zip(self.t, self.x, self.y, self.p)]

    def subset(self, mask_or_index) -> "EventStream":
        return EventStream(self.width, self.height, self.t[mask_or_index],
                           self.x[mask_or_index], self.y[mask_or_index],
                           self.p[mask_or_index], self.label)


@dataclass
class FrameTensor:
    """[T, 2, H, W] per-polarity event counts plus the class label."""

    data: np.ndarray
    label: int

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=DTYPE)
        if self.data.ndim != 4 or self.data.shape[1] != 2:
            raise ValidationError(f"frame tensor must be [T,2,H,W], got {self.data.shape}")
        if self.data.min() < 0:
            raise ValidationError("frame tensor entries must be non-negative")


@dataclass
class StaticImage:
    """[C, H, W] image with values in [0, 1] plus the class label."""

    data: np.ndarray
    label: int

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=DTYPE)
        if self.data.ndim != 3:
            raise ValidationError(f"static image must be [C,H,W], got {self.data.shape}")
        if self.data.min() < -1e-6 or self.data.max() > 1 + 1e-6:
            raise ValidationError("static image values must lie in [0, 1]")
        self.data = np.clip(self.data, 0.0, 1.0)


@dataclass
class DatasetSplit:
    """Disjoint index lists: who trains/tests the target vs the shadow."""

    target_train: np.ndarray
    target_test: np.ndarray
    shadow_train: np.ndarray
    shadow_test: np.ndarray

    def parts(self):
        return {"target_train": self.target_train, "target_test": self.target_test,
                "shadow_train": self.shadow_train, "shadow_test": self.shadow_test}


# ---------------------------------------------------------------------------
# accumulation and ANN/SNN input adaptation
# ---------------------------------------------------------------------------

def accumulate_frames(stream: EventStream, t_steps: int) -> FrameTensor:
    n = len(stream)
    if n == 0:
        raise ValidationError("cannot accumulate an empty event stream")
    if t_steps < 1:
        raise ValidationError("time steps must be >= 1")
    if t_steps > n:
        raise ValidationError(f"time steps {t_steps} exceed event count {n}")
    base, rem = divmod(n, t_steps)
    sizes = np.full(t_steps, base, dtype=np.int64)
    sizes[:rem] += 1
    bins = np.repeat(np.arange(t_steps), sizes)
    data = np.zeros((t_steps, 2, stream.height, stream.width), dtype=DTYPE)
    np.add.at(data, (bins, stream.p, stream.y, stream.x), 1.0)
    return FrameTensor(data, stream.label)


def normalize_frames_for_ann(batch: list[FrameTensor]) -> list[StaticImage]:
    """Turn frame stacks into per-frame two-channel images in [0, 1].

    The divisor at each (channel, y, x) location is the maximum count over
    every frame of every batch member at that location; silent locations
    divide to 0. Each of the T frames becomes its own image carrying the
    parent label.
    """
    if not batch:
        raise ValidationError("normalize_frames_for_ann: empty batch")
    shape = batch[0].data.shape
    for ft in batch:
        if ft.data.shape != shape:
            raise ValidationError(
                f"frame shape mismatch in batch: {ft.data.shape} vs {shape}")
    stack = np.stack([ft.data for ft in batch])            # [N, T, 2, H, W]
    divisor = stack.max(axis=(0, 1))                       # [2, H, W]
    safe = np.where(divisor > 0, divisor, 1.0)
    out = []
    for ft in batch:
        scaled = np.where(divisor > 0, ft.data / safe, 0.0)
        for t in range(shape[0]):
            out.append(StaticImage(scaled[t], ft.label))
    return out


def replicate_static_for_snn(img, t_steps: int) -> np.ndarray:
    """Repeat a [C,H,W] image T times; the first spiking layer does the
    analog-to-spike encoding downstream."""
    if t_steps < 1:
        raise ValidationError("time steps must be >= 1")
    data = img.data if isinstance(img, StaticImage) else as_f32(img)
    return np.repeat(data[None], t_steps, axis=0)


# ---------------------------------------------------------------------------
# target/shadow splitting
# ---------------------------------------------------------------------------

def split_dataset(n_samples: int, rng: Rng, predefined_train: int | None = None,
                  labels=None, train_fraction: float = 0.9) -> DatasetSplit:
    """50/50 target/shadow partition; 90/10 train/test inside each half
    unless the dataset ships a predefined train/test boundary (the first
    `predefined_train` indices), which is then respected inside each half.
    When labels are given both cuts are stratified per class."""
    if n_samples < 4:
        raise ValidationError("need at least 4 samples to build a 4-way split")
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != n_samples:
            raise ValidationError("labels length must match n_samples")

    if predefined_train is None:
        target, shadow = _halve(np.arange(n_samples), rng, labels)
        tt, te = _train_test_cut(target, rng, labels, train_fraction)
        st, se = _train_test_cut(shadow, rng, labels, train_fraction)
    else:
        if not 0 < predefined_train < n_samples:
            raise ValidationError("predefined train boundary must split the dataset")
        train_pool = np.arange(predefined_train)
        test_pool = np.arange(predefined_train, n_samples)
        tt, st = _halve(train_pool, rng, labels)
        te, se = _halve(test_pool, rng, labels)

    split = DatasetSplit(np.sort(tt), np.sort(te), np.sort(st), np.sort(se))
    for name, part in split.parts().items():
        if len(part) == 0:
            raise ValidationError(f"dataset too small: {name} is empty")
    return split


def train_test_cut(indices, rng: Rng, labels=None, train_fraction: float = 0.9):
    """Standalone 90/10-style cut of an index pool (stratified when labels
    are given); extra shadow models re-split their half with this."""
    return _train_test_cut(np.asarray(indices, dtype=np.int64), rng, labels,
                           train_fraction)


def _halve(indices, rng, labels):
    """Random equal halves (+-1 overall), stratified per class if labels."""
    first, second = [], []
    lean_first = True
    for group in _class_groups(indices, labels):
        group = group[rng.permutation(len(group))]
        k = len(group) // 2
        if len(group) % 2:
            k += 1 if lean_first else 0
            lean_first = not lean_first
        first.append(group[:k])
        second.append(group[k:])
    return np.concatenate(first), np.concatenate(second)


def _train_test_cut(indices, rng, labels, fraction):
    train, test = [], []
    for group in _class_groups(indices, labels):
        group = group[rng.permutation(len(group))]
        k = int(np.floor(fraction * len(group) + 0.5))
        if len(group) >= 2:
            k = min(max(k, 1), len(group) - 1)
        train.append(group[:k])
        test.append(group[k:])
    train, test = np.concatenate(train), np.concatenate(test)
    if len(test) == 0 and len(train) >= 2:    # tiny unlabeled halves
        train, test = train[:-1], train[-1:]
    return train, test


def _class_groups(indices, labels):
    if labels is None:
        return [np.asarray(indices)]
    idx = np.asarray(indices)
    return [idx[labels[idx] == c] for c in np.unique(labels[idx])]


# ---------------------------------------------------------------------------
# synthetic DVS generator
# ---------------------------------------------------------------------------

_SHAPES = ("bar", "box", "disc")


def synth_moving_shape(class_id: int, width: int, height: int, duration_us: int,
                       rng: Rng, shape: str | None = None, velocity=None, start=None,
                       frames: int = 24, theta_on: float = 0.3, theta_off: float = 0.3,
                       noise_events: int = 0, speed_scale: float = 1.0,
                       class_mode: str = "shape-angle",
                       size_jitter: float = 0.0) -> EventStream:
    """Render a class-dependent shape moving over a virtual luminance grid
    and emit DVS-style events on thresholded brightness changes.

    Class semantics: in "shape-angle" mode the class picks shape kind and
    motion direction; in "shape-speed" mode it picks shape kind and speed
    tier while the direction is random per sample, which keeps labels
    invariant under flips and rotations (geometric augmentation stays
    label-preserving). Per-sample start position and speed wiggle come
    from the rng; explicit shape / velocity / start override everything.
    """
    if width < 4 or height < 4:
        raise ValidationError("sensor dims must be at least 4x4")
    if duration_us <= 0:
        raise ValidationError("duration must be positive")
    if class_mode not in ("shape-angle", "shape-speed"):
        raise ValidationError(f"unknown class_mode {class_mode!r}")
    if shape is None:
        shape = _SHAPES[class_id % 3]
    if shape not in _SHAPES:
        raise ValidationError(f"unknown shape {shape!r}")
    if velocity is None:
        base = 0.55 * speed_scale * min(width, height) / frames
        if class_mode == "shape-speed":
            angle = rng.uniform(0.0, 2.0 * np.pi)
            speed = base * (1.0 + 2.0 * (class_id // 3)) * rng.uniform(0.9, 1.1)
        else:
            angle = (class_id // 3) * (np.pi / 2.0) + rng.uniform(-0.12, 0.12)
            speed = base * rng.uniform(0.9, 1.1)
        velocity = (speed * np.cos(angle), speed * np.sin(angle))
    if start is None:
        start = (width / 2.0 + rng.uniform(-width / 8.0, width / 8.0),
                 height / 2.0 + rng.uniform(-height / 8.0, height / 8.0))
    size = 1.0
    if size_jitter > 0:
        size = float(rng.uniform(1.0 - size_jitter, 1.0 + size_jitter))

    yy, xx = np.mgrid[0:height, 0:width]
    ts, xs, ys, ps = [], [], [], []
    prev = np.zeros((height, width), dtype=np.float64)
    for k in range(frames):
        cx = (start[0] + velocity[0] * k) % width
        cy = (start[1] + velocity[1] * k) % height
        lum = _render(shape, xx, yy, cx, cy, width, height, size)
        diff = lum - prev
        t_k = int(round(k * duration_us / frames))
        for pol, mask in ((1, diff > theta_on), (0, -diff > theta_off)):
            my, mx = np.nonzero(mask)
            ts.append(np.full(len(mx), t_k, dtype=np.int64))
            xs.append(mx)
            ys.append(my)
            ps.append(np.full(len(mx), pol, dtype=np.int64))
        prev = lum
    t = np.concatenate(ts) if ts else np.zeros(0, dtype=np.int64)
    x = np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=np.int64)
    p = np.concatenate(ps) if ps else np.zeros(0, dtype=np.int64)

    if noise_events:
        t = np.concatenate([t, rng.integers(0, duration_us, noise_events)])
        x = np.concatenate([x, rng.integers(0, width, noise_events)])
        y = np.concatenate([y, rng.integers(0, height, noise_events)])
        p = np.concatenate([p, rng.integers(0, 2, noise_events)])

    return EventStream(width, height, t, x, y, p, class_id)


def _render(shape, xx, yy, cx, cy, width, height, size=1.0):
    # toroidal distance so wrapped shapes stay contiguous
    dx = np.minimum(np.abs(xx - cx), width - np.abs(xx - cx))
    dy = np.minimum(np.abs(yy - cy), height - np.abs(yy - cy))
    if shape == "bar":
        return (dx <= size * max(1.0, width / 12.0)).astype(np.float64)
    if shape == "box":
        half = size * max(1.5, min(width, height) / 7.0)
        return ((dx <= half) & (dy <= half)).astype(np.float64)
    r = size * max(1.5, min(width, height) / 6.0)
    return (dx * dx + dy * dy <= r * r).astype(np.float64)


# ---------------------------------------------------------------------------
# dataset containers and synthesis configs
# ---------------------------------------------------------------------------

class EventDataset:
    def __init__(self, streams, labels, width, height, n_classes):
        self.streams = list(streams)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.width = width
        self.height = height
        self.n_classes = n_classes
        self._frame_cache = {}

    def __len__(self):
        return len(self.streams)

    def frames(self, t_steps: int) -> np.ndarray:
        """[N, T, 2, H, W] accumulation of every stream, cached per T."""
        if t_steps not in self._frame_cache:
            self._frame_cache[t_steps] = np.stack(
                [accumulate_frames(s, t_steps).data for s in self.streams])
        return self._frame_cache[t_steps]


class StaticImageDataset:
    def __init__(self, images, labels, n_classes):
        self.images = np.ascontiguousarray(images, dtype=DTYPE)
        if self.images.ndim != 4:
            raise ValidationError("static dataset images must be [N,C,H,W]")
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n_classes = n_classes

    def __len__(self):
        return len(self.images)


class FrameDataset:
    """Pre-accumulated neuromorphic tensors ([N,T,2,H,W]) from FT32 files."""

    def __init__(self, frames, labels, n_classes):
        self.frames_arr = np.ascontiguousarray(frames, dtype=DTYPE)
        if self.frames_arr.ndim != 5 or self.frames_arr.shape[2] != 2:
            raise ValidationError("frame dataset must be [N,T,2,H,W]")
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n_classes = n_classes

    def __len__(self):
        return len(self.frames_arr)

    def frames(self, t_steps: int) -> np.ndarray:
        if t_steps != self.frames_arr.shape[1]:
            raise ValidationError(
                f"dataset was accumulated with T={self.frames_arr.shape[1]}, "
                f"requested T={t_steps}")
        return self.frames_arr


@dataclass
class SyntheticEventConfig:
    classes: int = 4
    samples: int = 256
    width: int = 32
    height: int = 32
    duration_us: int = 50_000
    frames: int = 24
    noise_events: int = 0
    label_noise: float = 0.0
    theta_on: float = 0.3
    theta_off: float = 0.3
    # >1 sends the shape across the sensor repeatedly, giving streams the
    # temporal redundancy event dropping relies on
    speed_scale: float = 1.0
    class_mode: str = "shape-angle"
    size_jitter: float = 0.0


def synth_event_dataset(cfg: SyntheticEventConfig, rng: Rng) -> EventDataset:
    streams, labels = [], []
    for i in range(cfg.samples):
        cls = i % cfg.classes
        s = synth_moving_shape(cls, cfg.width, cfg.height, cfg.duration_us,
                               rng.split(i), frames=cfg.frames,
                               theta_on=cfg.theta_on, theta_off=cfg.theta_off,
                               noise_events=cfg.noise_events,
                               speed_scale=cfg.speed_scale,
                               class_mode=cfg.class_mode,
                               size_jitter=cfg.size_jitter)
        label = cls
        if cfg.label_noise > 0:
            r = rng.split(i, 1)
            if r.uniform() < cfg.label_noise:
                label = int(r.integers(0, cfg.classes))
        s.label = label
        streams.append(s)
        labels.append(label)
    return EventDataset(streams, labels, cfg.width, cfg.height, cfg.classes)


@dataclass
class SyntheticStaticConfig:
    classes: int = 4
    samples: int = 256
    width: int = 24
    height: int = 24
    channels: int = 1
    pixel_noise: float = 0.05
    label_noise: float = 0.0


def synth_static_dataset(cfg: SyntheticStaticConfig, rng: Rng) -> StaticImageDataset:
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width]
    images, labels = [], []
    for i in range(cfg.samples):
        cls = i % cfg.classes
        r = rng.split(i)
        quad = cls // 3
        cx = cfg.width * (0.35 + 0.3 * (quad % 2)) + r.uniform(-2, 2)
        cy = cfg.height * (0.35 + 0.3 * (quad // 2)) + r.uniform(-2, 2)
        img = _render(_SHAPES[cls % 3], xx, yy, cx, cy, cfg.width, cfg.height)
        img = img[None].repeat(cfg.channels, axis=0)
        if cfg.pixel_noise > 0:
            img = img + r.uniform(0, cfg.pixel_noise, img.shape)
        label = cls
        if cfg.label_noise > 0:
            rl = rng.split(i, 1)
            if rl.uniform() < cfg.label_noise:
                label = int(rl.integers(0, cfg.classes))
        images.append(np.clip(img, 0.0, 1.0))
        labels.append(label)
    return StaticImageDataset(np.stack(images), labels, cfg.classes)


# ---------------------------------------------------------------------------
# file formats: EVT1, labeled FT32, read-only IDX
# ---------------------------------------------------------------------------

def write_events(path, stream: EventStream) -> None:
    if stream.t.size and stream.t.max() >= 2 ** 32:
        raise ValidationError("timestamps exceed the u32 range of EVT1")
    rec = np.zeros(len(stream), dtype=_EVENT_DT)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    with open(path, "wb") as fh:
        fh.write(EVT1_MAGIC)
        fh.write(struct.pack("<HHIQ", stream.width, stream.height,
                             stream.label, len(stream)))
        fh.write(rec.tobytes())


def read_events(path) -> EventStream:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != EVT1_MAGIC:
        raise FormatError(f"{path}: expected magic {EVT1_MAGIC!r}")
    if len(data) < 4 + 16:
        raise FormatError(f"{path}: truncated EVT1 header")
    width, height, label, count = struct.unpack_from("<HHIQ", data, 4)
    payload = data[20:]
    if len(payload) != count * _EVENT_DT.itemsize:
        raise FormatError(f"{path}: EVT1 payload length does not match event count")
    rec = np.frombuffer(payload, dtype=_EVENT_DT)
    try:
        return EventStream(width, height, rec["t"].astype(np.int64), rec["x"],
                           rec["y"], rec["p"], label)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_labeled_images(path, array, labels) -> None:
    """FT32 tensor (first axis = samples) plus a raw little-endian u32
    label sidecar at <path>.lbl."""
    array = as_f32(array)
    labels = np.asarray(labels, dtype="<u4")
    if len(labels) != array.shape[0]:
        raise ValidationError("label count must match the leading tensor axis")
    write_ft32(path, array)
    with open(str(path) + ".lbl", "wb") as fh:
        fh.write(labels.tobytes())


def read_labeled_images(path):
    array = read_ft32(path)
    with open(str(path) + ".lbl", "rb") as fh:
        raw = fh.read()
    if len(raw) != 4 * array.shape[0]:
        raise FormatError(f"{path}.lbl: expected {array.shape[0]} u32 labels")
    labels = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    return array, labels


def read_idx(path) -> np.ndarray:
    """Read-only ingestion of the classic IDX format (grayscale digit
    corpora): big-endian magic 0x0000<dtype><ndim>, then u32 dims."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0:
        raise FormatError(f"{path}: not an IDX file")
    type_code, ndim = data[2], data[3]
    dtypes = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4",
              0x0D: ">f4", 0x0E: ">f8"}
    if type_code not in dtypes:
        raise FormatError(f"{path}: unsupported IDX type code {type_code:#x}")
    if len(data) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX dims")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    arr = np.frombuffer(data, dtype=dtypes[type_code], offset=4 + 4 * ndim)
    expected = int(np.prod(dims)) if ndim else 0
    if arr.size != expected:
        raise FormatError(f"{path}: IDX payload does not match dims {dims}")
    return arr.reshape(dims)


def load_idx_dataset(images_path, labels_path) -> StaticImageDataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise FormatError("IDX image/label pair has inconsistent shapes")
    data = images.astype(DTYPE)[:, None] / 255.0
    return StaticImageDataset(data, labels.astype(np.int64), int(labels.max()) + 1)
