"""Dense float32 tensor primitives.

Tensors are plain ``numpy.ndarray`` objects of dtype float32 in row-major
order. Images are laid out height x width x channels; batched variants put the
sample axis first (N, H, W, C).
"""
from __future__ import annotations

import io
import math
import struct
from typing import BinaryIO, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ArgumentError, BadMagicError, FormatError, ShapeError, TruncatedError

DTYPE = np.float32
TENSOR_MAGIC = b"TNSR"

__all__ = [
    "DTYPE",
    "as_tensor",
    "matmul",
    "conv2d",
    "conv2d_backward",
    "maxpool2d",
    "maxpool2d_backward",
    "conv_output_dim",
    "same_padding",
    "sign",
    "clip",
    "write_tensor",
    "read_tensor",
    "tensor_to_bytes",
    "tensor_from_bytes",
]


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return a @ b


# --------------------------------------------------------------------------
# convolution


def conv_output_dim(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    if padding == "valid":
        return (size - k) // stride + 1
    raise ArgumentError(f"unknown padding {padding!r}")


def same_padding(size: int, k: int, stride: int) -> tuple[int, int]:
    """Zero padding (before, after) for 'same' mode; the odd pixel goes after."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of shape (N, oh, ow, kh, kw, C) over a padded (N, H, W, C) batch."""
    n, h, w, c = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sh, sw, sc = x.strides
    return as_strided(
        x,
        shape=(n, oh, ow, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )


def _pad_for(x: np.ndarray, kh: int, kw: int, stride: int, padding: str):
    if padding == "valid":
        return x, (0, 0), (0, 0)
    if padding != "same":
        raise ArgumentError(f"unknown padding {padding!r}")
    ph = same_padding(x.shape[1], kh, stride)
    pw = same_padding(x.shape[2], kw, stride)
    if ph == (0, 0) and pw == (0, 0):
        return x, ph, pw
    return np.pad(x, ((0, 0), ph, pw, (0, 0))), ph, pw


def conv2d(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: str = "valid",
) -> np.ndarray:
    """2-D cross-correlation (no kernel flip) plus per-output-channel bias.

    ``x`` is (H, W, Cin) or a batch (N, H, W, Cin); ``kernels`` is
    (kh, kw, Cin, Cout).
    """
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d: bad ranks {x.shape} / {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    if xb.shape[3] != cin:
        raise ShapeError(
            f"conv2d: input has {xb.shape[3]} channels but kernels {tuple(kernels.shape)} expect {cin}"
        )
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")
    if stride < 1:
        raise ArgumentError(f"conv2d: stride must be >= 1, got {stride}")
    xp, _, _ = _pad_for(xb, kh, kw, stride, padding)
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {xb.shape[1:3]}")
    win = _windows(xp, kh, kw, stride)
    n, oh, ow = win.shape[:3]
    cols = win.reshape(n * oh * ow, kh * kw * cin)
    out = cols @ kernels.reshape(kh * kw * cin, cout) + bias
    out = out.reshape(n, oh, ow, cout)
    return out[0] if single else out


def conv2d_backward(
    x: np.ndarray,
    kernels: np.ndarray,
    dout: np.ndarray,
    stride: int,
    padding: str,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dx, dkernels, dbias) of a batched conv2d given upstream ``dout``."""
    kh, kw, cin, cout = kernels.shape
    xp, ph, pw = _pad_for(x, kh, kw, stride, padding)
    win = _windows(xp, kh, kw, stride)
    n, oh, ow = win.shape[:3]
    cols = win.reshape(n * oh * ow, kh * kw * cin)
    d2 = dout.reshape(n * oh * ow, cout)
    dk = (cols.T @ d2).reshape(kernels.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ kernels.reshape(kh * kw * cin, cout).T).reshape(n, oh, ow, kh, kw, cin)
    dxp = np.zeros(xp.shape, dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += dcols[:, :, :, i, j, :]
    h, w = x.shape[1], x.shape[2]
    dx = dxp[:, ph[0] : ph[0] + h, pw[0] : pw[0] + w, :]
    return dx, dk, db


# --------------------------------------------------------------------------
# pooling


def maxpool2d(x: np.ndarray, size: int, stride: int) -> np.ndarray:
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4:
        raise ShapeError(f"maxpool2d: expected (H, W, C) input, got {x.shape}")
    if size < 1 or stride < 1:
        raise ArgumentError("maxpool2d: size and stride must be >= 1")
    if xb.shape[1] < size or xb.shape[2] < size:
        raise ShapeError(f"maxpool2d: window {size} larger than input {tuple(xb.shape[1:3])}")
    out = _windows(xb, size, size, stride).max(axis=(3, 4))
    return out[0] if single else out


def maxpool2d_backward(x: np.ndarray, dout: np.ndarray, size: int, stride: int) -> np.ndarray:
    """Route each upstream gradient to the first maximal element of its window."""
    win = _windows(x, size, size, stride)
    n, oh, ow, _, _, c = win.shape
    flat = win.transpose(0, 1, 2, 5, 3, 4).reshape(n, oh, ow, c, size * size)
    arg = flat.argmax(axis=-1)
    di, dj = np.divmod(arg, size)
    dx = np.zeros(x.shape, dtype=dout.dtype)
    nn_, yy, xx, cc = np.indices((n, oh, ow, c), sparse=False)
    rows = yy * stride + di
    cols = xx * stride + dj
    np.add.at(dx, (nn_, rows, cols, cc), dout)
    return dx


# --------------------------------------------------------------------------
# elementwise


def sign(t: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) == 0."""
    t = np.asarray(t)
    return np.sign(t).astype(t.dtype if t.dtype.kind == "f" else DTYPE, copy=False)


def clip(t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise ArgumentError(f"clip: lo ({lo}) > hi ({hi})")
    t = np.asarray(t)
    return np.clip(t, np.asarray(lo, dtype=t.dtype), np.asarray(hi, dtype=t.dtype))


# --------------------------------------------------------------------------
# TNSR binary format: b"TNSR", u8 rank, rank x u32 dims, f32 data, all little-endian


def write_tensor(fh: BinaryIO, t: np.ndarray) -> None:
    t = np.asarray(t)
    if t.ndim < 1 or t.ndim > 255:
        raise ShapeError(f"TNSR supports rank 1..255, got {t.ndim}")
    if any(d < 1 for d in t.shape):
        raise ShapeError(f"TNSR dims must be positive, got {t.shape}")
    fh.write(TENSOR_MAGIC)
    fh.write(struct.pack("<B", t.ndim))
    fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
    fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    magic = _read_exact(fh, 4, "tensor magic")
    if magic != TENSOR_MAGIC:
        raise BadMagicError(f"bad tensor magic {magic!r}")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1, "tensor rank"))
    if rank == 0:
        raise FormatError("tensor rank 0 is not allowed")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "tensor dims"))
    if any(d == 0 for d in dims):
        raise FormatError(f"tensor has a zero dimension: {dims}")
    count = math.prod(dims)
    data = _read_exact(fh, 4 * count, "tensor data")
    return np.frombuffer(data, dtype="<f4").astype(DTYPE).reshape(dims)


def tensor_to_bytes(t: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, t)
    return buf.getvalue()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(data))


def shape_str(shape: Sequence[int]) -> str:
    if len(shape) == 1:
        return f"({shape[0]})"
    return "(" + ", ".join(str(d) for d in shape) + ")"
