"""RMSprop, the epoch training loop and clean-model evaluation."""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import AugmentConfig, Dataset, augment
from .errors import ArgumentError, EmptyDatasetError, ShapeError
from .rng import Rng, derive_seed

_TRAIN_STREAM = 0x7472_6169_6E  # "train"


@dataclass
class RmsPropState:
    v: list[np.ndarray]
    learning_rate: float = 0.001
    rho: float = 0.9
    stabilizer: float = 1e-7

    @classmethod
    def like(cls, params: list[np.ndarray], **kw) -> "RmsPropState":
        return cls([np.zeros_like(p) for p in params], **kw)


def rmsprop_step(params: list[np.ndarray], grads: list[np.ndarray], state: RmsPropState):
    """One in-place RMSprop update.

    v <- rho * v + (1 - rho) * g**2
    theta <- theta - lr * g / (sqrt(v) + stabilizer)
    """
    if len(params) != len(grads) or len(params) != len(state.v):
        raise ShapeError(f"{len(params)} params, {len(grads)} grads, {len(state.v)} accumulators")
    if state.stabilizer <= 0:
        raise ArgumentError("stabilizer must be positive")
    for theta, g, v in zip(params, grads, state.v):
        if theta.shape != g.shape or theta.shape != v.shape:
            raise ShapeError(f"rmsprop: shapes {theta.shape}, {g.shape}, {v.shape} differ")
        g = g.astype(theta.dtype, copy=False)
        v *= v.dtype.type(state.rho)
        v += v.dtype.type(1.0 - state.rho) * g * g
        theta -= theta.dtype.type(state.learning_rate) * g / (np.sqrt(v) + theta.dtype.type(state.stabilizer))
    return params, state


# --------------------------------------------------------------------------
# history


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    HEADER = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_accuracy), repr(r.val_loss), repr(r.val_accuracy)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != cls.HEADER:
            raise ValueError("not a training history CSV")
        return cls([EpochRecord(int(r[0]), *map(float, r[1:])) for r in rows[1:]])


@dataclass
class EvalMetrics:
    accuracy: float
    mean_confidence: float
    mean_loss: float


# --------------------------------------------------------------------------
# training


def _canonical_order(ds: Dataset) -> np.ndarray:
    """Order samples by content so training ignores presentation order."""
    keys = []
    for i, (img, label) in enumerate(zip(ds.images, ds.labels)):
        h = hashlib.sha256(np.ascontiguousarray(img, dtype="<f4").tobytes())
        h.update(int(label).to_bytes(4, "little"))
        keys.append(h.digest())
    return np.asarray(sorted(range(len(keys)), key=keys.__getitem__), dtype=np.int64)


def _check_compatible(net: nn.Network, ds: Dataset, what: str) -> None:
    if len(ds) == 0:
        raise EmptyDatasetError(f"{what} dataset is empty")
    if tuple(ds.images.shape[1:]) != net.input_shape:
        raise ShapeError(f"{what} images {ds.images.shape[1:]} do not match network input {net.input_shape}")
    if ds.num_classes != net.num_classes:
        raise ArgumentError(f"{what} dataset has {ds.num_classes} classes, network outputs {net.num_classes}")


def train(
    net: nn.Network,
    train_set: Dataset,
    val_set: Dataset,
    epochs: int,
    batch_size: int = 8,
    seed: int = 0,
    augment_cfg: AugmentConfig | None = None,
    learning_rate: float = 0.001,
    rho: float = 0.9,
    stabilizer: float = 1e-7,
    on_epoch=None,
) -> tuple[nn.Network, TrainHistory]:
    """Mini-batch RMSprop on mean categorical cross-entropy. Mutates ``net``.

    Shuffling, dropout masks and augmentation all derive from ``seed``; the
    same seed and inputs give bit-identical parameters and history.
    """
    if epochs < 1:
        raise ArgumentError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    _check_compatible(net, train_set, "training")
    _check_compatible(net, val_set, "validation")

    order = _canonical_order(train_set)
    images = train_set.images[order]
    labels = train_set.labels[order]
    n = len(labels)

    rng = Rng(derive_seed(seed, _TRAIN_STREAM))
    aug_root = rng.child(1)
    state = RmsPropState.like(net.param_arrays(), learning_rate=learning_rate, rho=rho, stabilizer=stabilizer)
    history = TrainHistory()

    for epoch in range(1, epochs + 1):
        perm = rng.permutation(n)
        batch_losses = []
        correct = 0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            xb = images[idx]
            if augment_cfg is not None:
                xb = np.stack([
                    augment(img, augment_cfg, Rng(derive_seed(aug_root.state, epoch, int(k))))
                    for img, k in zip(xb, idx)
                ])
            yb = labels[idx]
            probs, trace = nn.forward_batch(net, xb, "train", rng)
            batch_losses.append(float(nn.cross_entropy_batch(probs, yb).mean()))
            correct += int((nn.argmax(probs) == yb).sum())
            grads = nn.backward_batch(net, trace, yb, reduction="mean")
            flat_grads = [g[k] for g in grads.param_grads for k in ("kernel", "bias") if k in g]
            rmsprop_step(net.param_arrays(), flat_grads, state)
            net.touch()
        val = evaluate(net, val_set)
        rec = EpochRecord(epoch, float(np.mean(batch_losses)), correct / n, val.mean_loss, val.accuracy)
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return net, history


def evaluate(net: nn.Network, dataset: Dataset) -> EvalMetrics:
    _check_compatible(net, dataset, "evaluation")
    probs = nn.predict_batch(net, dataset.images)
    pred = nn.argmax(probs)
    return EvalMetrics(
        accuracy=float(np.mean(pred == dataset.labels)),
        mean_confidence=float(np.mean(probs.max(axis=-1).astype(np.float64))),
        mean_loss=float(np.mean(nn.cross_entropy_batch(probs, dataset.labels))),
    )
