"""Defense-side data augmentation.

Three families: EventDrop (delete events by time window, spatial box, or
uniformly at random), NDA-style geometric augmentation on frame stacks
(flip + CutMix always, plus one of roll/rotate/cutout/shear), and the
basic static-image recipe (flip, random crop, resize back).

Geometric transforms are applied identically to all T frames of a sample,
so motion structure survives. Everything is deterministic under a fixed
rng stream; the trainer splits one stream per sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .events import EventStream, FrameTensor, StaticImage
from .numerics import as_f32
from .rng import Rng


@dataclass
class AugmentPolicy:
    kind: str = "none"              # none | eventdrop | nda | static
    max_drop_ratio: float = 0.5
    max_roll: int = 5
    max_rotation_deg: float = 15.0
    max_cutout_frac: float = 0.25
    max_shear: float = 0.2
    cutmix_beta: tuple = (1.0, 1.0)
    flip_prob: float = 0.5
    crop_scale_min: float = 0.7

    def __post_init__(self):
        if self.kind not in ("none", "eventdrop", "nda", "static"):
            raise ValidationError(f"unknown augmentation kind {self.kind!r}")
        if not 0 < self.max_drop_ratio < 1:
            raise ValidationError("max_drop_ratio must be in (0, 1)")
        if not 0 < self.crop_scale_min <= 1:
            raise ValidationError("crop_scale_min must be in (0, 1]")
        for name in ("max_roll", "max_rotation_deg", "max_cutout_frac", "max_shear"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")


def policy_from_config(cfg) -> AugmentPolicy:
    if cfg is None:
        return AugmentPolicy()
    if isinstance(cfg, AugmentPolicy):
        return cfg
    if isinstance(cfg, str):
        return AugmentPolicy(kind=cfg)
    cfg = dict(cfg)
    if "cutmix_beta" in cfg:
        cfg["cutmix_beta"] = tuple(cfg["cutmix_beta"])
    return AugmentPolicy(**cfg)


# ---------------------------------------------------------------------------
# EventDrop
# ---------------------------------------------------------------------------

def drop_by_time(stream: EventStream, start: float, ratio: float) -> EventStream:
    """Remove events inside the half-open window [start, start + ratio*span)."""
    if len(stream) == 0:
        return stream
    span = float(stream.t.max() - stream.t.min())
    keep = ~((stream.t >= start) & (stream.t < start + ratio * span))
    return stream.subset(keep)


def drop_by_area(stream: EventStream, x0: int, y0: int, ratio: float) -> EventStream:
    """Remove events inside a box of area ratio*W*H anchored at (x0, y0)."""
    bw = max(1, int(round(stream.width * np.sqrt(ratio))))
    bh = max(1, int(round(stream.height * np.sqrt(ratio))))
    inside = ((stream.x >= x0) & (stream.x < x0 + bw)
              & (stream.y >= y0) & (stream.y < y0 + bh))
    return stream.subset(~inside)


def drop_random(stream: EventStream, rng: Rng, ratio: float) -> EventStream:
    n = len(stream)
    k = int(ratio * n)
    if k == 0:
        return stream
    dropped = rng.choice(n, size=k, replace=False)
    keep = np.ones(n, dtype=bool)
    keep[dropped] = False
    return stream.subset(keep)


def event_drop(stream: EventStream, rng: Rng, max_ratio: float = 0.5) -> EventStream:
    """Pick one of {drop-by-time, drop-by-area, drop-random, identity}
    uniformly; the drop ratio is a uniform draw from {0.1,...,0.9} scaled
    by max_ratio. Never returns an empty stream."""
    if len(stream) == 0:
        raise ValidationError("event_drop: empty input stream")
    branch = int(rng.integers(0, 4))
    if branch == 0:
        return stream
    ratio = float(rng.integers(1, 10)) / 10.0 * max_ratio
    if branch == 1:
        span = float(stream.t.max() - stream.t.min())
        start = stream.t.min() + rng.uniform() * span * (1.0 - ratio)
        out = drop_by_time(stream, start, ratio)
    elif branch == 2:
        bw = max(1, int(round(stream.width * np.sqrt(ratio))))
        bh = max(1, int(round(stream.height * np.sqrt(ratio))))
        x0 = int(rng.integers(0, stream.width - bw + 1))
        y0 = int(rng.integers(0, stream.height - bh + 1))
        out = drop_by_area(stream, x0, y0, ratio)
    else:
        out = drop_random(stream, rng, ratio)
    return out if len(out) else stream


# ---------------------------------------------------------------------------
# geometric transforms on [T, 2, H, W] frame stacks
# ---------------------------------------------------------------------------

def flip_frames(data: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(data[..., ::-1])


def roll_frames(data: np.ndarray, dx: int, dy: int) -> np.ndarray:
    return np.roll(data, shift=(dy, dx), axis=(-2, -1))


def _inverse_map(data, xs, ys):
    """Nearest-neighbour gather at source coordinates; out of range -> 0."""
    h, w = data.shape[-2:]
    xi = np.round(xs).astype(np.int64)
    yi = np.round(ys).astype(np.int64)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    xi, yi = np.clip(xi, 0, w - 1), np.clip(yi, 0, h - 1)
    out = data[..., yi, xi]
    out[..., ~valid] = 0.0
    return as_f32(out)


def rotate_frames(data: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0:
        return as_f32(data.copy())
    h, w = data.shape[-2:]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    th = np.deg2rad(degrees)
    xs = np.cos(th) * (xx - cx) + np.sin(th) * (yy - cy) + cx
    ys = -np.sin(th) * (xx - cx) + np.cos(th) * (yy - cy) + cy
    return _inverse_map(data, xs, ys)


def shear_frames(data: np.ndarray, factor: float) -> np.ndarray:
    if factor == 0:
        return as_f32(data.copy())
    h, w = data.shape[-2:]
    cy = (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    xs = xx - factor * (yy - cy)
    return _inverse_map(data, xs, yy.astype(np.float64))


def cutout_frames(data: np.ndarray, x0: int, y0: int, bw: int, bh: int) -> np.ndarray:
    out = data.copy()
    out[..., y0:y0 + bh, x0:x0 + bw] = 0.0
    return as_f32(out)


def cutmix_frames(a: np.ndarray, b: np.ndarray, lam: float, rng: Rng):
    """Paste a box of relative area (1 - lam) from b into a; returns the
    mixed stack and the effective first-sample weight recomputed from the
    realized box."""
    if a.shape != b.shape:
        raise ValidationError(f"cutmix shape mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape[-2:]
    cut = np.sqrt(max(0.0, 1.0 - lam))
    bw, bh = int(round(w * cut)), int(round(h * cut))
    out = a.copy()
    if bw == 0 or bh == 0:
        return as_f32(out), 1.0
    x0 = int(rng.integers(0, w - bw + 1))
    y0 = int(rng.integers(0, h - bh + 1))
    out[..., y0:y0 + bh, x0:x0 + bw] = b[..., y0:y0 + bh, x0:x0 + bw]
    lam_eff = 1.0 - (bw * bh) / float(h * w)
    return as_f32(out), lam_eff


def nda_augment(pair, labels_one_hot, rng: Rng, policy: AugmentPolicy | None = None):
    """Flip (p=0.5) + one random geometric op + CutMix against the partner
    sample. Returns the augmented first sample and the soft label
    lam*y1 + (1-lam)*y2."""
    policy = policy or AugmentPolicy(kind="nda")
    a, b = pair
    a_data = a.data if isinstance(a, FrameTensor) else as_f32(a)
    b_data = b.data if isinstance(b, FrameTensor) else as_f32(b)
    if a_data.shape != b_data.shape:
        raise ValidationError(f"nda pair shape mismatch: {a_data.shape} vs {b_data.shape}")
    y1, y2 = np.asarray(labels_one_hot, dtype=np.float64)

    out = a_data
    if rng.uniform() < policy.flip_prob:
        out = flip_frames(out)
    op = int(rng.integers(0, 4))
    if op == 0:
        dx = int(rng.integers(-policy.max_roll, policy.max_roll + 1))
        dy = int(rng.integers(-policy.max_roll, policy.max_roll + 1))
        out = roll_frames(out, dx, dy)
    elif op == 1:
        out = rotate_frames(out, float(rng.uniform(-policy.max_rotation_deg,
                                                   policy.max_rotation_deg)))
    elif op == 2:
        h, w = out.shape[-2:]
        frac = float(rng.uniform(0, policy.max_cutout_frac))
        bw = max(1, int(round(w * np.sqrt(frac))))
        bh = max(1, int(round(h * np.sqrt(frac))))
        x0 = int(rng.integers(0, w - bw + 1))
        y0 = int(rng.integers(0, h - bh + 1))
        out = cutout_frames(out, x0, y0, bw, bh)
    else:
        out = shear_frames(out, float(rng.uniform(-policy.max_shear, policy.max_shear)))

    lam = rng.beta(*policy.cutmix_beta)
    out, lam_eff = cutmix_frames(out, b_data, lam, rng)
    soft = lam_eff * y1 + (1.0 - lam_eff) * y2
    label = a.label if isinstance(a, FrameTensor) else int(np.argmax(y1))
    return FrameTensor(out, label), soft


# ---------------------------------------------------------------------------
# static images
# ---------------------------------------------------------------------------

def resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of [..., h, w] with half-pixel centers."""
    h, w = data.shape[-2:]
    if (h, w) == (out_h, out_w):
        return as_f32(data.copy())
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    tl = data[..., y0[:, None], x0[None, :]]
    tr = data[..., y0[:, None], x1[None, :]]
    bl = data[..., y1[:, None], x0[None, :]]
    br = data[..., y1[:, None], x1[None, :]]
    top = tl * (1 - wx) + tr * wx
    bot = bl * (1 - wx) + br * wx
    return (top * (1 - wy) + bot * wy).astype(data.dtype)


def crop_resize(data: np.ndarray, x0: int, y0: int, cw: int, ch: int) -> np.ndarray:
    crop = data[..., y0:y0 + ch, x0:x0 + cw]
    return resize_bilinear(crop, data.shape[-2], data.shape[-1])


def static_augment(img, rng: Rng, policy: AugmentPolicy | None = None):
    """Horizontal flip + random crop + bilinear resize back; values stay
    in [0, 1]."""
    policy = policy or AugmentPolicy(kind="static")
    data = img.data if isinstance(img, StaticImage) else as_f32(img)
    out = data
    if rng.uniform() < policy.flip_prob:
        out = flip_frames(out)
    h, w = out.shape[-2:]
    scale = float(rng.uniform(policy.crop_scale_min, 1.0))
    ch = max(1, int(round(h * scale)))
    cw = max(1, int(round(w * scale)))
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    out = np.clip(crop_resize(out, x0, y0, cw, ch), 0.0, 1.0)
    if isinstance(img, StaticImage):
        return StaticImage(out, img.label)
    return out
