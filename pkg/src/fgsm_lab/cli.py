"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 internal
invariant violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import attack as A
from . import data, harness, nn, optim
from .errors import (
    ArgumentError,
    EmptyDatasetError,
    FormatError,
    InvariantError,
    LabError,
    ShapeError,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("fgsm_lab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected H,W,C, got {text!r}") from None
    if not dims or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"dimensions must be positive, got {text!r}")
    return dims


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="image directory, DSET file, or 'synth'")
    p.add_argument("--config", default="small", help="network config JSON or built-in name (default: small)")
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--data-seed", type=int, default=0, help="seed for the synthetic set and the train/val split")
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--synth-classes", type=int, default=5)
    p.add_argument("--synth-per-class", type=int, default=40)
    p.add_argument("--synth-dim", type=int, default=32)
    p.add_argument("--augment", action="store_true", help="random flip/rotation/zoom/shift during training")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgsm-lab", description="Train a small CNN and attack it with FGSM.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write it with its history")
    _add_data_args(p)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--history", help="per-epoch CSV to write")

    p = sub.add_parser("attack", help="attack one image with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="PPM, PGM or TNSR image")
    p.add_argument("--mode", required=True, choices=A.MODES)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--target", type=int, help="targeted mode only; default (label + 1) mod K")
    p.add_argument("--label", type=int, required=True, help="true class of the image")
    p.add_argument("--out", required=True, help="adversarial image (.ppm/.pgm, or .tnsr for exact values)")
    p.add_argument("--eta", help="perturbation image (.ppm scaled to [0,1], or .tnsr)")

    p = sub.add_parser("sweep", help="epochs x epsilon x mode x seed experiment grid")
    _add_data_args(p)
    p.add_argument("--epochs", type=_int_list, default=[10, 20, 30, 40, 50])
    p.add_argument("--epsilons", type=_float_list, default=[0.01, 0.02, 0.03, 0.04, 0.05])
    p.add_argument("--modes", default="targeted,untargeted")
    p.add_argument("--seeds", type=_int_list, default=[1])
    p.add_argument("--samples", type=int, default=25, help="attacked samples per cell")
    p.add_argument("--out", required=True, help="report CSV to write")
    p.add_argument("--history-dir", help="write hist_e<epochs>_s<seed>.csv files here")

    p = sub.add_parser("shapes", help="print the per-layer output shapes of a config")
    p.add_argument("--config", required=True, help="config JSON or built-in name (small, vgg16, vgg16_head, vgg16_full)")
    p.add_argument("--input", type=_shape, help="input shape H,W,C (default: the config's own)")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--compact", action="store_true", help="group repeated shapes as 'N x (shape)'")

    p = sub.add_parser("report", help="render a sweep CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=["table", "csv", "table3"], default="table")
    p.add_argument("--filter", help="e.g. epochs=10,mode=targeted")
    p.add_argument("--metric", default="mean_adv_confidence",
                   choices=["success_rate", "mean_adv_confidence", "max_adv_confidence", "clean_accuracy"],
                   help="value column for --format table3")
    return parser


# --------------------------------------------------------------------------


def _sweep_config(args, **extra) -> harness.SweepConfig:
    return harness.SweepConfig(
        data=args.data,
        network=args.config,
        batch_size=args.batch,
        data_seed=args.data_seed,
        train_frac=args.train_frac,
        synth_classes=args.synth_classes,
        synth_per_class=args.synth_per_class,
        synth_dim=args.synth_dim,
        augment=data.AugmentConfig() if args.augment else None,
        **extra,
    )


def cmd_train(args) -> int:
    cfg = _sweep_config(args, epochs_list=[args.epochs], seeds=[args.seed])
    cfg.validate()
    shape = harness.network_input_shape(cfg)
    ds = harness.load_sweep_data(cfg, shape)
    layers, _ = nn.load_config(args.config, ds.num_classes)
    train_set, val_set = data.split(ds, cfg.train_frac, cfg.data_seed)
    net = harness.init_network(layers, shape, args.seed)

    def show(rec):
        log.info("epoch %d loss=%.4f acc=%.3f val_loss=%.4f val_acc=%.3f",
                 rec.epoch, rec.train_loss, rec.train_accuracy, rec.val_loss, rec.val_accuracy)

    net, history = optim.train(net, train_set, val_set, args.epochs, args.batch, args.seed,
                               augment_cfg=cfg.augment, on_epoch=show)
    nn.save_model(net, args.out)
    if args.history:
        Path(args.history).write_text(history.to_csv())
    final = history.records[-1]
    print(json.dumps({
        "model": str(args.out),
        "classes": ds.class_names,
        "epochs": args.epochs,
        "train_accuracy": final.train_accuracy,
        "val_accuracy": final.val_accuracy,
    }))
    return EXIT_OK


def cmd_attack(args) -> int:
    net = nn.load_model(args.model)
    image = data.load_image(args.image, net.input_shape)
    if args.mode == "targeted":
        target = args.target if args.target is not None else A.default_target(args.label, net.num_classes)
        result = A.fgsm_targeted(net, image, target, args.epsilon, args.label)
    else:
        if args.target is not None:
            raise UsageError("--target only applies to --mode targeted")
        result = A.fgsm_untargeted(net, image, args.label, args.epsilon)
    A.write_image(args.out, result.adversarial_image)
    if args.eta:
        if Path(args.eta).suffix.lower() == ".tnsr":
            A.write_image(args.eta, result.perturbation)
        else:
            A.write_image(args.eta, A.eta_visual(result.perturbation, args.epsilon))
    print(json.dumps(result.summary()))
    return EXIT_OK


def cmd_sweep(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    cfg = _sweep_config(
        args,
        epochs_list=args.epochs,
        epsilon_list=args.epsilons,
        modes=modes,
        seeds=args.seeds,
        samples_per_cell=args.samples,
    )
    report = harness.run_sweep(cfg, progress=log.info)
    Path(args.out).write_text(harness.render_report(report, "csv"))
    if args.history_dir:
        out = Path(args.history_dir)
        out.mkdir(parents=True, exist_ok=True)
        for (epochs, seed), hist in sorted(report.histories.items()):
            (out / f"hist_e{epochs}_s{seed}.csv").write_text(hist.to_csv())
    sys.stdout.write(harness.render_report(report, "table"))
    return EXIT_OK


def shapes_table(layers, shapes, compact: bool = False) -> str:
    from .tensor import shape_str

    names = ["input"] + [_layer_label(s) for s in layers]
    if compact:
        lines = []
        i = 0
        while i < len(shapes):
            j = i
            while j + 1 < len(shapes) and shapes[j + 1] == shapes[i]:
                j += 1
            count = j - i + 1
            lines.append(f"{(str(count) + ' x') if count > 1 else '':>5}  {shape_str(shapes[i])}")
            i = j + 1
        return "\n".join(lines) + "\n"
    width = max(len(n) for n in names)
    rows = [f"{i:>3}  {n:<{width}}  {shape_str(s)}" for i, (n, s) in enumerate(zip(names, shapes))]
    return "\n".join(rows) + "\n"


def _layer_label(spec) -> str:
    if isinstance(spec, nn.Conv2D):
        act = "" if spec.activation == "linear" else f" {spec.activation}"
        return f"conv2d {spec.filters}@{spec.size}x{spec.size}/{spec.stride} {spec.padding}{act}"
    if isinstance(spec, nn.MaxPool):
        return f"maxpool {spec.size}/{spec.stride}"
    if isinstance(spec, nn.Dense):
        act = "" if spec.activation == "linear" else f" {spec.activation}"
        return f"dense {spec.units}{act}"
    if isinstance(spec, nn.Dropout):
        return f"dropout {spec.rate:g}"
    return spec.kind


def cmd_shapes(args) -> int:
    layers, default_shape = nn.load_config(args.config, args.classes)
    shape = args.input or default_shape
    shapes = nn.infer_shapes(layers, shape)
    sys.stdout.write(shapes_table(layers, shapes, args.compact))
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        text = Path(args.input).read_text()
    except OSError as exc:
        raise FormatError(f"{args.input}: {exc}") from None
    try:
        rows = harness.parse_report_csv(text)
    except ArgumentError as exc:
        raise FormatError(f"{args.input}: {exc}") from None
    rows = harness.filter_rows(rows, harness.parse_filter(args.filter))
    sys.stdout.write(harness.render_report(rows, args.format, args.metric))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "shapes": cmd_shapes,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ArgumentError) as exc:
        print(f"fgsm-lab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ShapeError, EmptyDatasetError, OSError) as exc:
        print(f"fgsm-lab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvariantError, LabError) as exc:
        print(f"fgsm-lab: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
