"""Dense float32 numerics: the fixed layer set and its exact gradients.

Everything downstream (networks, training, conversion, attacks) is built
from three forward primitives — conv2d, pool2d, fully_connected — plus
their analytic backwards and a central-difference oracle used to test
them. Arrays are row-major float32 throughout; convolution is
cross-correlation (no kernel flip). Single samples ([C,H,W] / [n]) and
batches ([B,C,H,W] / [B,n]) are both accepted; output rank mirrors input
rank.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

DTYPE = np.float32

FT32_MAGIC = b"FT32"


def as_f32(x) -> np.ndarray:
    """Canonical float array: float32 row-major. float64 passes through so
    the gradient checks can run the whole stack in double precision."""
    arr = np.asarray(x)
    if arr.dtype == np.float64:
        return np.ascontiguousarray(arr)
    return np.ascontiguousarray(arr, dtype=DTYPE)


def check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite values in {what}")


@dataclass
class LayerGrad:
    """Gradients mirroring a layer's forward inputs and parameters."""

    grad_input: np.ndarray
    grad_weights: np.ndarray | None = None
    grad_bias: np.ndarray | None = None


# ---------------------------------------------------------------------------
# FT32 tensor files: magic, u8 ndim, ndim x u32 dims, f32 payload (all LE)
# ---------------------------------------------------------------------------

def write_ft32(path, arr) -> None:
    arr = as_f32(arr)
    check_finite(arr, f"tensor written to {path}")
    with open(path, "wb") as fh:
        fh.write(FT32_MAGIC)
        fh.write(struct.pack("<B", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4").tobytes())


def read_ft32(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    arr, offset = _parse_ft32(data, 0, str(path))
    if offset != len(data):
        raise FormatError(f"{path}: trailing bytes after FT32 payload")
    return arr


def _parse_ft32(data: bytes, offset: int, origin: str):
    """Parse one FT32 blob starting at offset; returns (array, next offset)."""
    if data[offset:offset + 4] != FT32_MAGIC:
        raise FormatError(f"{origin}: expected magic {FT32_MAGIC!r}")
    offset += 4
    if offset + 1 > len(data):
        raise FormatError(f"{origin}: truncated FT32 header")
    ndim = data[offset]
    offset += 1
    if not 1 <= ndim <= 8:
        raise FormatError(f"{origin}: implausible ndim {ndim}")
    if offset + 4 * ndim > len(data):
        raise FormatError(f"{origin}: truncated FT32 dims")
    shape = struct.unpack_from(f"<{ndim}I", data, offset)
    offset += 4 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if offset + 4 * count > len(data):
        raise FormatError(f"{origin}: truncated FT32 payload")
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
    offset += 4 * count
    arr = np.ascontiguousarray(arr, dtype=DTYPE)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{origin}: non-finite values in FT32 payload")
    return arr, offset


# ---------------------------------------------------------------------------
# conv2d (cross-correlation)
# ---------------------------------------------------------------------------

def _batched(x, rank3):
    x = as_f32(x)
    if x.ndim == rank3:
        return x[None], True
    if x.ndim == rank3 + 1:
        return x, False
    raise ValidationError(f"expected {rank3}D or {rank3 + 1}D input, got {x.ndim}D")


def _conv_out_dim(size, k, stride, padding):
    out = (size + 2 * padding - k) // stride + 1
    if out < 1 or size + 2 * padding < k:
        raise ValidationError(
            f"kernel {k} does not fit input of size {size} with padding {padding}")
    return out


def _im2col(xp, kh, kw, stride, ho, wo):
    b, c, _, _ = xp.shape
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im(dcols, padded_shape, kh, kw, stride, ho, wo):
    b, c, _, _ = padded_shape
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    dc = dcols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dc[:, :, i, j]
    return dxp


@dataclass
class ConvCache:
    cols: np.ndarray
    weights: np.ndarray
    padded_shape: tuple
    in_shape: tuple
    out_shape: tuple
    stride: int
    padding: int
    squeezed: bool


def conv2d_with_cache(x, weights, bias, stride: int = 1, padding: int = 0):
    x4, squeezed = _batched(x, 3)
    w = as_f32(weights)
    bias = as_f32(bias)
    if w.ndim != 4:
        raise ValidationError(f"conv2d weights must be [out,in,kh,kw], got {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if stride < 1:
        raise ValidationError("conv2d stride must be >= 1")
    if x4.shape[1] != c_in:
        raise ValidationError(
            f"conv2d input has {x4.shape[1]} channels but weights expect {c_in}")
    if bias.shape != (c_out,):
        raise ValidationError(f"conv2d bias must be [{c_out}], got {bias.shape}")
    ho = _conv_out_dim(x4.shape[2], kh, stride, padding)
    wo = _conv_out_dim(x4.shape[3], kw, stride, padding)
    xp = np.pad(x4, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x4
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = np.einsum("ok,bkp->bop", w.reshape(c_out, -1), cols, optimize=True)
    out = out.reshape(x4.shape[0], c_out, ho, wo) + bias[None, :, None, None]
    out = as_f32(out)
    cache = ConvCache(cols, w, xp.shape, x4.shape, out.shape, stride, padding, squeezed)
    return (out[0] if squeezed else out), cache


def conv2d(x, weights, bias, stride: int = 1, padding: int = 0):
    out, _ = conv2d_with_cache(x, weights, bias, stride, padding)
    return out


def conv2d_backward(cache: ConvCache, grad_output) -> LayerGrad:
    g, _ = _batched(grad_output, 3)
    if g.shape != cache.out_shape:
        raise ValidationError(
            f"conv2d_backward: grad shape {g.shape} does not match cached output "
            f"{cache.out_shape}")
    c_out, c_in, kh, kw = cache.weights.shape
    b, _, ho, wo = g.shape
    gflat = g.reshape(b, c_out, ho * wo)
    dw = np.einsum("bop,bkp->ok", gflat, cache.cols, optimize=True).reshape(cache.weights.shape)
    db = gflat.sum(axis=(0, 2))
    dcols = np.einsum("ok,bop->bkp", cache.weights.reshape(c_out, -1), gflat, optimize=True)
    dxp = _col2im(dcols, cache.padded_shape, kh, kw, cache.stride, ho, wo)
    p = cache.padding
    dx = dxp[:, :, p:dxp.shape[2] - p, p:dxp.shape[3] - p] if p else dxp
    if cache.squeezed:
        dx = dx[0]
    return LayerGrad(as_f32(dx), as_f32(dw), as_f32(db))


# ---------------------------------------------------------------------------
# pool2d: non-divisible windows are rejected, not truncated
# ---------------------------------------------------------------------------

@dataclass
class PoolCache:
    in_shape: tuple
    out_shape: tuple
    window: int
    mode: str
    argmax: np.ndarray | None
    squeezed: bool


def pool2d_with_cache(x, window: int, mode: str = "avg"):
    x4, squeezed = _batched(x, 3)
    if mode not in ("avg", "max"):
        raise ValidationError(f"pool2d mode must be 'avg' or 'max', got {mode!r}")
    if window < 1:
        raise ValidationError("pool window must be >= 1")
    b, c, h, w = x4.shape
    if h % window or w % window:
        raise ValidationError(
            f"pool window {window} does not divide spatial dims ({h}x{w})")
    ho, wo = h // window, w // window
    tiles = x4.reshape(b, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
    tiles = tiles.reshape(b, c, ho, wo, window * window)
    argmax = None
    if mode == "avg":
        out = tiles.mean(axis=-1)
    else:
        argmax = tiles.argmax(axis=-1)
        out = np.take_along_axis(tiles, argmax[..., None], axis=-1)[..., 0]
    out = as_f32(out)
    cache = PoolCache(x4.shape, out.shape, window, mode, argmax, squeezed)
    return (out[0] if squeezed else out), cache


def pool2d(x, window: int, mode: str = "avg"):
    out, _ = pool2d_with_cache(x, window, mode)
    return out


def pool2d_backward(cache: PoolCache, grad_output) -> LayerGrad:
    g, _ = _batched(grad_output, 3)
    if g.shape != cache.out_shape:
        raise ValidationError(
            f"pool2d_backward: grad shape {g.shape} does not match cached output "
            f"{cache.out_shape}")
    b, c, ho, wo = g.shape
    win = cache.window
    if cache.mode == "avg":
        dx = np.repeat(np.repeat(g, win, axis=2), win, axis=3) / (win * win)
    else:
        tiles = np.zeros((b, c, ho, wo, win * win), dtype=g.dtype)
        np.put_along_axis(tiles, cache.argmax[..., None], g[..., None], axis=-1)
        dx = tiles.reshape(b, c, ho, wo, win, win).transpose(0, 1, 2, 4, 3, 5)
        dx = dx.reshape(cache.in_shape)
    dx = as_f32(dx)
    if cache.squeezed:
        dx = dx[0]
    return LayerGrad(dx)


# ---------------------------------------------------------------------------
# fully connected: W.x + b
# ---------------------------------------------------------------------------

@dataclass
class FcCache:
    x: np.ndarray
    weights: np.ndarray
    out_shape: tuple
    squeezed: bool


def fc_with_cache(x, weights, bias):
    x2, squeezed = _batched(x, 1)
    w = as_f32(weights)
    bias = as_f32(bias)
    if w.ndim != 2:
        raise ValidationError(f"fc weights must be [m,n], got {w.shape}")
    m, n = w.shape
    if x2.shape[1] != n:
        raise ValidationError(f"fc input has {x2.shape[1]} features but weights expect {n}")
    if bias.shape != (m,):
        raise ValidationError(f"fc bias must be [{m}], got {bias.shape}")
    out = as_f32(x2 @ w.T + bias)
    cache = FcCache(x2, w, out.shape, squeezed)
    return (out[0] if squeezed else out), cache


def fully_connected(x, weights, bias):
    out, _ = fc_with_cache(x, weights, bias)
    return out


def fc_backward(cache: FcCache, grad_output) -> LayerGrad:
    g, _ = _batched(grad_output, 1)
    if g.shape != cache.out_shape:
        raise ValidationError(
            f"fc_backward: grad shape {g.shape} does not match cached output "
            f"{cache.out_shape}")
    dw = g.T @ cache.x
    db = g.sum(axis=0)
    dx = g @ cache.weights
    if cache.squeezed:
        dx = dx[0]
    return LayerGrad(as_f32(dx), as_f32(dw), as_f32(db))


# ---------------------------------------------------------------------------
# test oracle
# ---------------------------------------------------------------------------

def finite_difference_grad(f, x, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at
    a time. Evaluations are done in float64 so the oracle itself does not
    drown in float32 rounding."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x.copy()))
        flat[i] = orig - eps
        lo = float(f(x.copy()))
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValidationError("finite_difference_grad: non-finite function value")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
