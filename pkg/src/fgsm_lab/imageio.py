"""Minimal binary PPM (P6) / PGM (P5) codec.

Images come back as float32 (H, W, C) arrays scaled to [0, 1].
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError

_WHITESPACE = b" \t\r\n\v\f"


def _header_tokens(data: bytes, count: int, name) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset just past the single whitespace byte
    that terminates the last one.
    """
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i] in _WHITESPACE:
            i += 1
        if i < n and data[i] == ord("#"):
            while i < n and data[i] not in b"\r\n":
                i += 1
            continue
        if i >= n:
            raise FormatError(f"{name}: truncated header")
        start = i
        while i < n and data[i] not in _WHITESPACE and data[i] != ord("#"):
            i += 1
        tokens.append(data[start:i])
    if i >= n:
        raise FormatError(f"{name}: missing pixel data")
    return tokens, i + 1


def decode_pnm(data: bytes, name="<bytes>") -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{name}: not a binary PGM/PPM file (magic {magic!r})")
    channels = 3 if magic == b"P6" else 1
    tokens, offset = _header_tokens(data, 4, name)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{name}: non-numeric header field") from None
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise FormatError(f"{name}: bad header {width}x{height} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    raw = data[offset : offset + count * dtype.itemsize]
    if len(raw) != count * dtype.itemsize:
        raise FormatError(f"{name}: truncated pixel data")
    pix = np.frombuffer(raw, dtype=dtype).reshape(height, width, channels)
    return (pix.astype(np.float32) / np.float32(maxval)).clip(0, 1)


def read_pnm(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return decode_pnm(data, path)


def encode_pnm(image: np.ndarray) -> bytes:
    """8-bit P6 for 3-channel images, P5 for 1-channel or 2-D images."""
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise FormatError(f"cannot write image of shape {image.shape} as PPM/PGM")
    h, w, c = img.shape
    pix = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P6" if c == 3 else b"P5"
    return magic + f"\n{w} {h}\n255\n".encode() + pix.tobytes()


def write_pnm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_pnm(image))
