"""Datasets: folder loading, augmentation, the synthetic benchmark and splits."""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ArgumentError, BadMagicError, EmptyDatasetError, FormatError, TruncatedError
from .imageio import read_pnm
from .rng import Rng, derive_seed

__all__ = [
    "Dataset",
    "AugmentConfig",
    "Rng",
    "augment",
    "affine_transform",
    "resize_bilinear",
    "synth_dataset",
    "split",
    "load_image",
    "load_image_dir",
    "save_dataset",
    "load_dataset",
]

IMAGE_SUFFIXES = {".ppm", ".pgm", ".pnm", ".tnsr"}


@dataclass
class Dataset:
    """Stacked images (N, H, W, C) in [0, 1] with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = T.as_tensor(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(self.images) != len(self.labels):
            raise ArgumentError(f"{len(self.images)} images but {len(self.labels)} labels")
        if not self.class_names:
            k = int(self.labels.max()) + 1 if len(self.labels) else 0
            self.class_names = [f"class_{i}" for i in range(k)]
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ArgumentError("label outside the class-name range")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ArgumentError("pixels must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], list(self.class_names))


# --------------------------------------------------------------------------
# geometry


def _bilinear(image: np.ndarray, ys: np.ndarray, xs: np.ndarray, fill_zero: bool) -> np.ndarray:
    """Sample ``image`` (H, W, C) at float source coordinates (ys, xs)."""
    h, w, _ = image.shape
    if not fill_zero:
        ys = np.clip(ys, 0, h - 1)
        xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]

    def at(yy, xx):
        inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = image[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside[..., None], vals, 0)

    top = at(y0, x0) * (1 - wx) + at(y0, x0 + 1) * wx
    bot = at(y0 + 1, x0) * (1 - wx) + at(y0 + 1, x0 + 1) * wx
    return (top * (1 - wy) + bot * wy).astype(image.dtype)


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Half-pixel-centred bilinear resize with edge clamping."""
    h, w, _ = image.shape
    if (h, w) == (height, width):
        return image.copy()
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear(image, yy, xx, fill_zero=False)


def affine_transform(
    image: np.ndarray,
    angle_deg: float = 0.0,
    zoom: float = 1.0,
    shift: tuple[float, float] = (0.0, 0.0),
    flip: bool = False,
) -> np.ndarray:
    """Flip, then rotate counter-clockwise about the centre, zoom, and shift (pixels, (dy, dx)).

    Single inverse-mapped bilinear resampling; pixels mapped from outside the
    source are 0.
    """
    img = image[:, ::-1] if flip else image
    if angle_deg == 0.0 and zoom == 1.0 and shift == (0.0, 0.0):
        return np.ascontiguousarray(img)
    h, w, _ = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy = (yy - cy - shift[0]) / zoom
    dx = (xx - cx - shift[1]) / zoom
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    src_y = c * dy + s * dx + cy
    src_x = c * dx - s * dy + cx
    return _bilinear(np.ascontiguousarray(img), src_y, src_x, fill_zero=True)


@dataclass(frozen=True)
class AugmentConfig:
    rotation_max_deg: float = 15.0
    zoom_range: tuple[float, float] = (0.9, 1.1)
    shift_max_frac: float = 0.1
    horizontal_flip: bool = True

    def __post_init__(self):
        lo, hi = self.zoom_range
        if self.rotation_max_deg < 0:
            raise ArgumentError("rotation_max_deg must be >= 0")
        if not 0 < lo <= hi:
            raise ArgumentError(f"zoom_range must satisfy 0 < lo <= hi, got {self.zoom_range}")
        if not 0 <= self.shift_max_frac < 1:
            raise ArgumentError("shift_max_frac must be in [0, 1)")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, (1.0, 1.0), 0.0, False)


def augment(image: np.ndarray, cfg: AugmentConfig, rng: Rng) -> np.ndarray:
    """Random flip, rotation, zoom and shift drawn from ``cfg``; result clipped to [0, 1]."""
    h, w, _ = image.shape
    flip = cfg.horizontal_flip and rng.random() < 0.5
    angle = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg) if cfg.rotation_max_deg > 0 else 0.0
    lo, hi = cfg.zoom_range
    zoom = rng.uniform(lo, hi) if hi > lo else lo
    if cfg.shift_max_frac > 0:
        shift = (
            rng.uniform(-cfg.shift_max_frac, cfg.shift_max_frac) * h,
            rng.uniform(-cfg.shift_max_frac, cfg.shift_max_frac) * w,
        )
    else:
        shift = (0.0, 0.0)
    out = affine_transform(image, angle, zoom, shift, flip)
    return T.clip(out, 0.0, 1.0)


# --------------------------------------------------------------------------
# synthetic benchmark


def _template(rng: Rng, dim: int, channels: int, contrast: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")
    out = np.empty((dim, dim, channels))
    for c in range(channels):
        acc = np.zeros((dim, dim))
        for _ in range(3):
            fy, fx = 0, 0
            while fy == 0 and fx == 0:
                fy, fx = rng.below(3), rng.below(3)
            phase = rng.uniform(0.0, 2 * math.pi)
            amp = rng.uniform(0.5, 1.0)
            acc += amp * np.cos(2 * math.pi * (fy * yy + fx * xx) / dim + phase)
        acc /= np.abs(acc).max()
        out[..., c] = 0.5 + contrast * acc
    return out


def synth_dataset(
    classes: int = 5,
    per_class: int = 40,
    dim: int = 32,
    seed: int = 0,
    channels: int = 3,
    noise: float = 0.1,
    contrast: float = 0.1,
) -> Dataset:
    """Seeded class-conditional images: a low-frequency template per class plus uniform noise.

    Samples are ordered class by class.
    """
    if classes < 2 or per_class < 1 or dim < 8:
        raise ArgumentError("need classes >= 2, per_class >= 1, dim >= 8")
    images = np.empty((classes * per_class, dim, dim, channels), dtype=T.DTYPE)
    labels = np.repeat(np.arange(classes), per_class)
    for k in range(classes):
        trng = Rng(derive_seed(seed, 0, k))
        base = _template(trng, dim, channels, contrast)
        for i in range(per_class):
            nrng = Rng(derive_seed(seed, 1, k, i))
            eps = nrng.uniform(-noise, noise, base.size).reshape(base.shape)
            images[k * per_class + i] = np.clip(base + eps, 0.0, 1.0)
    names = [f"class_{k}" for k in range(classes)]
    return Dataset(images, labels, names)


def split(ds: Dataset, train_frac: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified, seeded train/validation partition."""
    if not 0 < train_frac < 1:
        raise ArgumentError(f"train_frac must be in (0, 1), got {train_frac}")
    rng = Rng(derive_seed(seed, 0x73706C6974))
    train_idx, val_idx = [], []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == k)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise ArgumentError(f"class {ds.class_names[k]!r} has fewer than 2 samples; cannot split")
        idx = idx[rng.permutation(len(idx))]
        n_train = min(max(int(round(train_frac * len(idx))), 1), len(idx) - 1)
        train_idx.extend(idx[:n_train])
        val_idx.extend(idx[n_train:])
    return ds.subset(train_idx), ds.subset(val_idx)


# --------------------------------------------------------------------------
# loading


def _fit_channels(img: np.ndarray, channels: int, name) -> np.ndarray:
    c = img.shape[2]
    if c == channels:
        return img
    if c == 1 and channels == 3:
        return np.repeat(img, 3, axis=2)
    if c == 3 and channels == 1:
        lum = img @ np.array([0.299, 0.587, 0.114], dtype=img.dtype)
        return lum[..., None]
    raise FormatError(f"{name}: cannot convert {c} channels to {channels}")


def load_image(path, shape: Sequence[int] | None = None) -> np.ndarray:
    """Read a PPM/PGM/TNSR image as (H, W, C) in [0, 1], optionally resized to ``shape``."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".tnsr":
        try:
            with open(path, "rb") as fh:
                img = T.read_tensor(fh)
        except OSError as exc:
            raise FormatError(f"{path}: {exc}") from None
        except FormatError as exc:
            raise FormatError(f"{path}: {exc}") from None
        if img.ndim == 2:
            img = img[..., None]
        if img.ndim != 3:
            raise FormatError(f"{path}: tensor of shape {img.shape} is not an image")
        if img.size and (img.min() < 0 or img.max() > 1):
            raise FormatError(f"{path}: pixel values outside [0, 1]")
    elif suffix in IMAGE_SUFFIXES:
        img = read_pnm(path)
    else:
        raise FormatError(f"{path}: unsupported image format {suffix or '(none)'}; use PPM, PGM or TNSR")
    if shape is not None:
        h, w, c = shape
        img = _fit_channels(img, c, path)
        img = resize_bilinear(img, h, w)
    return T.as_tensor(img)


def load_image_dir(path, shape: Sequence[int] = (32, 32, 3)) -> Dataset:
    """Load ``root/<class_name>/<image files>``; classes sorted by name."""
    root = Path(path)
    if not root.is_dir():
        raise EmptyDatasetError(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_dirs:
        raise EmptyDatasetError(f"{root}: no class subdirectories")
    images, labels = [], []
    for k, d in enumerate(class_dirs):
        files = sorted(f for f in d.iterdir() if f.is_file() and not f.name.startswith("."))
        if not files:
            raise EmptyDatasetError(f"{d}: class directory has no images")
        for f in files:
            images.append(load_image(f, shape))
            labels.append(k)
    return Dataset(np.stack(images), np.asarray(labels), [d.name for d in class_dirs])


# --------------------------------------------------------------------------
# dataset cache: b"DSET", u32 count, per sample (u32 label, TNSR image)

DATASET_MAGIC = b"DSET"


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path, class_names: Sequence[str] | None = None) -> Dataset:
    """Read a DSET cache. The format carries no names; they default to class_<k>."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise BadMagicError(f"{path}: not a dataset file (magic {magic!r})")
        head = fh.read(4)
        if len(head) != 4:
            raise TruncatedError(f"{path}: truncated header")
        (count,) = struct.unpack("<I", head)
        images, labels = [], []
        for i in range(count):
            raw = fh.read(4)
            if len(raw) != 4:
                raise TruncatedError(f"{path}: truncated at sample {i}")
            labels.append(struct.unpack("<I", raw)[0])
            images.append(T.read_tensor(fh))
    if not images:
        raise EmptyDatasetError(f"{path}: dataset is empty")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise FormatError(f"{path}: mixed image shapes {sorted(shapes)}")
    return Dataset(np.stack(images), np.asarray(labels), list(class_names or []))


def dataset_to_bytes(ds: Dataset) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", len(ds)))
    for img, label in zip(ds.images, ds.labels):
        buf.write(struct.pack("<I", int(label)))
        T.write_tensor(buf, img)
    return buf.getvalue()
