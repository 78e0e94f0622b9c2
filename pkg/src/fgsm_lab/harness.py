"""Epochs x epsilon x mode x seed sweeps and their CSV and table reports."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import attack as A
from . import data, nn, optim
from .errors import ArgumentError, EmptyDatasetError, LabError
from .rng import Rng, derive_seed

log = logging.getLogger(__name__)

_INIT_STREAM = 0x696E6974  # "init"
_SELECT_STREAM = 0x73656C  # "sel"


@dataclass
class SweepConfig:
    epochs_list: list[int] = field(default_factory=lambda: [10, 20, 30, 40, 50])
    epsilon_list: list[float] = field(default_factory=lambda: [0.01, 0.02, 0.03, 0.04, 0.05])
    modes: list[str] = field(default_factory=lambda: ["targeted", "untargeted"])
    seeds: list[int] = field(default_factory=lambda: [1])
    data: str = "synth"
    network: str = "small"
    samples_per_cell: int = 25
    batch_size: int = 8
    train_frac: float = 0.8
    data_seed: int = 0
    synth_classes: int = 5
    synth_per_class: int = 40
    synth_dim: int = 32
    augment: data.AugmentConfig | None = None

    def validate(self) -> None:
        if not (self.epochs_list and self.epsilon_list and self.modes and self.seeds):
            raise ArgumentError("epochs, epsilons, modes and seeds must all be non-empty")
        if any(e < 1 for e in self.epochs_list):
            raise ArgumentError("every epoch count must be >= 1")
        if any(not e >= 0 for e in self.epsilon_list):
            raise ArgumentError("every epsilon must be >= 0")
        bad = set(self.modes) - set(A.MODES)
        if bad:
            raise ArgumentError(f"unknown attack modes {sorted(bad)}")
        if self.samples_per_cell < 1:
            raise ArgumentError("samples_per_cell must be >= 1")


@dataclass
class SweepRow:
    epochs: int
    mode: str
    epsilon: float
    seed: int
    n_samples: int
    clean_accuracy: float
    success_rate: float
    failure_count: int
    mean_adv_confidence: float
    max_adv_confidence: float

    @property
    def key(self):
        return (self.epochs, self.mode, self.epsilon, self.seed)


@dataclass
class SweepReport:
    rows: list[SweepRow]
    config: SweepConfig | None = None
    histories: dict[tuple[int, int], optim.TrainHistory] = field(default_factory=dict)
    results: dict[tuple, list[A.AttackResult]] = field(default_factory=dict)


# --------------------------------------------------------------------------
# cells


def aggregate_cell(results: Sequence[A.AttackResult]) -> dict:
    """Summary metrics for one (epochs, mode, epsilon, seed) cell.

    A failure is an unsuccessful attack on a sample that did not already meet
    the success predicate before the attack.
    """
    if not results:
        raise ArgumentError("cannot aggregate an empty cell")
    n = len(results)
    conf = np.array([r.adv_confidence for r in results], dtype=np.float64)
    return {
        "n_samples": n,
        "clean_accuracy": sum(r.clean_label == r.true_label for r in results) / n,
        "success_rate": sum(r.success for r in results) / n,
        "failure_count": sum(r.failed for r in results),
        "mean_adv_confidence": float(conf.mean()),
        "max_adv_confidence": float(conf.max()),
    }


def select_samples(ds: data.Dataset, n: int, seed: int) -> np.ndarray:
    """Seeded, class-balanced choice of up to ``n`` sample indices (round-robin over classes)."""
    rng = Rng(derive_seed(seed, _SELECT_STREAM))
    pools = []
    for k in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == k)
        pools.append(list(idx[rng.permutation(len(idx))]))
    chosen = []
    depth = 0
    while len(chosen) < n and any(depth < len(p) for p in pools):
        for p in pools:
            if depth < len(p) and len(chosen) < n:
                chosen.append(int(p[depth]))
        depth += 1
    return np.asarray(chosen, dtype=np.int64)


def attack_cell(net: nn.Network, ds: data.Dataset, idx: np.ndarray, mode: str, epsilon: float) -> list[A.AttackResult]:
    results = []
    for i in idx:
        img, label = ds.images[i], int(ds.labels[i])
        if mode == "targeted":
            r = A.fgsm_targeted(net, img, A.default_target(label, net.num_classes), epsilon, label)
        else:
            r = A.fgsm_untargeted(net, img, label, epsilon)
        results.append(r)
    return results


# --------------------------------------------------------------------------
# sweep


def load_sweep_data(cfg: SweepConfig, input_shape) -> data.Dataset:
    if cfg.data == "synth":
        h, w, c = input_shape
        if h != w:
            raise ArgumentError(f"synthetic data is square; network input is {input_shape}")
        if cfg.synth_dim != h:
            raise ArgumentError(f"--synth-dim {cfg.synth_dim} does not match network input {input_shape}")
        return data.synth_dataset(cfg.synth_classes, cfg.synth_per_class, cfg.synth_dim, cfg.data_seed, channels=c)
    path = Path(cfg.data)
    if path.is_file():
        return data.load_dataset(path)
    return data.load_image_dir(path, input_shape)


def network_input_shape(cfg: SweepConfig) -> tuple[int, ...]:
    """Input shape the data must be delivered in. The built-in small config adapts to the synthetic size."""
    _, shape = nn.load_config(cfg.network, 2)
    if cfg.network == "small" and cfg.data == "synth":
        shape = (cfg.synth_dim, cfg.synth_dim, 3)
    return tuple(shape)


def init_network(layers, shape, seed: int) -> nn.Network:
    """Fresh parameters for training seed ``seed``."""
    return nn.Network.build(layers, shape, Rng(derive_seed(seed, _INIT_STREAM)))


def run_sweep(cfg: SweepConfig, keep_results: bool = False, progress=None) -> SweepReport:
    """Train one model per (epochs, seed) and attack it for every (mode, epsilon).

    Training for E epochs is the first E epochs of a longer run with the same
    seed, so each seed trains once up to max(epochs_list) and snapshots the
    requested epoch counts; the snapshots are bit-identical to separate runs.
    """
    cfg.validate()
    shape = network_input_shape(cfg)
    ds = load_sweep_data(cfg, shape)
    if len(ds) == 0:
        raise EmptyDatasetError("sweep dataset is empty")
    layers, _ = nn.load_config(cfg.network, ds.num_classes)
    train_set, val_set = data.split(ds, cfg.train_frac, cfg.data_seed)

    epochs_sorted = sorted(set(cfg.epochs_list))
    eps_sorted = sorted(set(cfg.epsilon_list))
    modes_sorted = sorted(set(cfg.modes))
    rows: list[SweepRow] = []
    report = SweepReport(rows, cfg)

    for seed in sorted(set(cfg.seeds)):
        net = init_network(layers, shape, seed)
        snapshots: dict[int, nn.Network] = {}
        wanted = set(epochs_sorted)

        def snap(rec, net=net, snapshots=snapshots):
            if rec.epoch in wanted:
                snapshots[rec.epoch] = net.copy()
            if progress:
                progress(f"seed {seed} epoch {rec.epoch}: train_acc={rec.train_accuracy:.3f} val_acc={rec.val_accuracy:.3f}")

        try:
            _, history = optim.train(net, train_set, val_set, epochs_sorted[-1], cfg.batch_size, seed,
                                     augment_cfg=cfg.augment, on_epoch=snap)
        except LabError as exc:
            raise type(exc)(f"training seed={seed}: {exc}") from exc
        idx = select_samples(val_set, cfg.samples_per_cell, seed)
        for epochs in epochs_sorted:
            report.histories[(epochs, seed)] = optim.TrainHistory(history.records[:epochs])
            model = snapshots[epochs]
            for mode in modes_sorted:
                for eps in eps_sorted:
                    results = attack_cell(model, val_set, idx, mode, eps)
                    rows.append(SweepRow(epochs, mode, float(eps), seed, **aggregate_cell(results)))
                    if keep_results:
                        report.results[(epochs, mode, float(eps), seed)] = results
    rows.sort(key=lambda r: r.key)
    return report


# --------------------------------------------------------------------------
# rendering

CSV_HEADER = [
    "epochs", "mode", "epsilon", "seed", "n_samples", "clean_acc",
    "success_rate", "failures", "mean_adv_conf", "max_adv_conf",
]
_ROW_FIELDS = [f.name for f in fields(SweepRow)]


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}%"


def _eps(x: float) -> str:
    return format(x, "g")


def table3_line(row: SweepRow, metric: str = "mean_adv_confidence") -> str:
    """One compact results line, e.g. ``10, Targeted, 0.05, 58.90%``."""
    return f"{row.epochs}, {row.mode.capitalize()}, {_eps(row.epsilon)}, {_pct(getattr(row, metric))}"


def render_report(report: SweepReport | Sequence[SweepRow], format: str = "csv",
                  metric: str = "mean_adv_confidence") -> str:
    rows = report.rows if isinstance(report, SweepReport) else list(report)
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([
                r.epochs, r.mode, repr(float(r.epsilon)), r.seed, r.n_samples, repr(float(r.clean_accuracy)),
                repr(float(r.success_rate)), r.failure_count, repr(float(r.mean_adv_confidence)),
                repr(float(r.max_adv_confidence)),
            ])
        return buf.getvalue()
    if format == "table":
        head = ["Epochs", "Type", "Epsilon", "Seed", "N", "Clean acc", "Success", "Failures", "Mean conf", "Max conf"]
        body = [
            [str(r.epochs), r.mode.capitalize(), _eps(r.epsilon), str(r.seed), str(r.n_samples),
             _pct(r.clean_accuracy), _pct(r.success_rate), str(r.failure_count),
             _pct(r.mean_adv_confidence), _pct(r.max_adv_confidence)]
            for r in rows
        ]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        lines = ["  ".join(c.rjust(w) for c, w in zip(line, widths)) for line in [head] + body]
        return "\n".join(lines) + "\n"
    if format == "table3":
        return "".join(table3_line(r, metric) + "\n" for r in rows)
    raise ArgumentError(f"unknown report format {format!r}")


def parse_report_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ArgumentError("empty report") from None
    if header != CSV_HEADER:
        raise ArgumentError(f"unexpected report header {header}")
    rows = []
    for line in reader:
        if not line:
            continue
        if len(line) != len(CSV_HEADER):
            raise ArgumentError(f"malformed report line {line}")
        e, mode, eps, seed, n, clean, succ, fails, mean_c, max_c = line
        rows.append(SweepRow(int(e), mode, float(eps), int(seed), int(n), float(clean), float(succ),
                             int(fails), float(mean_c), float(max_c)))
    return rows


def parse_filter(spec: str | None) -> dict[str, str]:
    """``"epochs=10,mode=targeted"`` -> {"epochs": "10", "mode": "targeted"}."""
    out: dict[str, str] = {}
    if not spec:
        return out
    for part in spec.split(","):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in ("epochs", "mode", "epsilon", "seed"):
            raise ArgumentError(f"bad filter term {part!r}; use epochs=,mode=,epsilon=,seed=")
        out[key] = value.strip()
    return out


def filter_rows(rows: Iterable[SweepRow], flt: dict[str, str]) -> list[SweepRow]:
    def keep(r: SweepRow) -> bool:
        for k, v in flt.items():
            if k == "mode" and r.mode != v.lower():
                return False
            if k in ("epochs", "seed") and r.__dict__[k] != int(v):
                return False
            if k == "epsilon" and r.epsilon != float(v):
                return False
        return True

    try:
        return [r for r in rows if keep(r)]
    except ValueError as exc:
        raise ArgumentError(f"bad filter value: {exc}") from None
