"""Command-line entry point.

Subcommands: ``analyze`` prints per-layer cost tables, ``split`` writes
subset index files, ``train`` runs training, ``eval`` scores a
checkpoint on a fold, ``report`` merges run directories into a summary
CSV. Every flag can also come from ``--config FILE`` holding one
``key=value`` per line (keys are the flag names); a flag given on the
command line wins over the file, which wins over the built-in default.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = ["main"]


def _res(text):
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected HEIGHTxWIDTH, got {text!r}") from None


def _sizes(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}") from None


@dataclass(frozen=True)
class Flag:
    name: str
    type: object
    default: object = None
    help: str = ""
    required: bool = False
    choices: tuple = None
    multiple: bool = False


_COMMON_DATA = [
    Flag("dataset", str, "cityscapes", "dataset layout and label map",
         choices=("cityscapes", "camvid")),
    Flag("root", str, help="dataset root directory", required=True),
]

FLAGS = {
    "analyze": [
        Flag("arch", str, "main", "architecture preset"),
        Flag("res", _res, (512, 1024), "input resolution as HxW"),
        Flag("classes", int, 20, "output classes"),
        Flag("batch", int, 1, "batch size for the MAC column"),
        Flag("format", str, "table", "output format",
             choices=("table", "csv")),
    ],
    "split": _COMMON_DATA + [
        Flag("fold", str, "train", "fold to subsample"),
        Flag("sizes", _sizes, None, "subset sizes, e.g. 1487,743,371",
             required=True),
        Flag("seed", int, 42, "shuffle seed"),
        Flag("mode", str, "nested", "nested prefixes or disjoint partition",
             choices=("nested", "partition")),
        Flag("out-dir", str, ".", "where to write T<size>.txt files"),
    ],
    "train": _COMMON_DATA + [
        Flag("arch", str, "main", "architecture preset"),
        Flag("res", _res, (512, 1024), "training resolution as HxW"),
        Flag("epochs", int, 180, "training epochs"),
        Flag("batch-size", int, 2, "images per step"),
        Flag("lr", float, 1e-6, "initial learning rate"),
        Flag("momentum", float, 0.7, "Nesterov momentum"),
        Flag("factor", float, 0.5, "plateau lr multiplier"),
        Flag("patience", int, 20, "plateau patience in epochs"),
        Flag("threshold", float, 1e-4, "plateau improvement threshold"),
        Flag("seed", int, 42, "init and shuffle seed"),
        Flag("out-dir", str, "runs/default", "run directory"),
        Flag("index", str, help="train subset index file"),
        Flag("val-index", str, help="validation subset index file"),
        Flag("resume", str, help="checkpoint to continue from"),
    ],
    "eval": _COMMON_DATA + [
        Flag("checkpoint", str, help="checkpoint file", required=True),
        Flag("fold", str, "val", "fold to score", choices=("val", "test")),
        Flag("res", _res, (512, 1024), "evaluation resolution as HxW"),
        Flag("index", str, help="subset index file"),
        Flag("out", str, help="report CSV path (default: next to checkpoint)"),
    ],
    "report": [
        Flag("runs", str, None, "run directories to summarize",
             required=True, multiple=True),
        Flag("res", _res, (512, 1024), "resolution for the GFLOPs column"),
        Flag("out", str, "summary.csv", "summary CSV path"),
    ],
}

_HELP = {
    "analyze": "per-layer parameter and MAC breakdown for a preset",
    "split": "write seeded subset index files for a dataset fold",
    "train": "train a preset and record metrics plus checkpoints",
    "eval": "score a checkpoint on a fold and write a class-IoU report",
    "report": "merge run directories into one summary CSV",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ikshana",
        description="multi-scale glance network toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command, flags in FLAGS.items():
        p = sub.add_parser(command, help=_HELP[command])
        p.add_argument("--config", type=str, default=None,
                       help="key=value file supplying defaults for any flag")
        for flag in flags:
            kwargs = dict(type=flag.type, default=None, help=flag.help)
            if flag.choices:
                kwargs["choices"] = flag.choices
            if flag.multiple:
                kwargs["nargs"] = "+"
            p.add_argument(f"--{flag.name}", **kwargs)
    return parser


def _read_config(path):
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip().replace("_", "-")] = value.strip()
    return entries


def _merge_options(command, args):
    """Layer CLI flags over config-file entries over defaults."""
    config = _read_config(args.config) if args.config else {}
    known = {f.name for f in FLAGS[command]}
    unknown = set(config) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    opts = {}
    for flag in FLAGS[command]:
        dest = flag.name.replace("-", "_")
        value = getattr(args, dest)
        if value is None and flag.name in config:
            raw = config[flag.name]
            if flag.multiple:
                value = [flag.type(v) for v in raw.split()]
            else:
                value = flag.type(raw)
                if flag.choices and value not in flag.choices:
                    raise ValueError(
                        f"config key {flag.name}: {value!r} not one of "
                        f"{flag.choices}")
        if value is None:
            value = flag.default
        if value is None and flag.required:
            raise ValueError(f"--{flag.name} is required")
        opts[dest] = value
    return argparse.Namespace(**opts)


def cmd_analyze(opts) -> int:
    from .analyzer import build_report, emit_report
    from .arch import build_network

    net = build_network(opts.arch, num_classes=opts.classes)
    report = build_report(net, opts.batch, *opts.res)
    print(emit_report(report, opts.format))
    return 0


def cmd_split(opts) -> int:
    from .data import scan_dataset, seeded_split, write_index

    pairs = scan_dataset(opts.root, opts.dataset, opts.fold)
    images = [img for img, _ in pairs]
    out_dir = Path(opts.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for subset in seeded_split(images, opts.sizes, seed=opts.seed,
                               mode=opts.mode):
        path = out_dir / f"T{len(subset)}.txt"
        write_index(path, subset)
        print(f"wrote {path} ({len(subset)} images)")
    return 0


def cmd_train(opts) -> int:
    from .train import TrainConfig, train

    config = TrainConfig(
        arch=opts.arch, dataset=opts.dataset, root=opts.root,
        resolution=opts.res, epochs=opts.epochs, batch_size=opts.batch_size,
        lr=opts.lr, momentum=opts.momentum, factor=opts.factor,
        patience=opts.patience, threshold=opts.threshold, seed=opts.seed,
        out_dir=opts.out_dir, train_index=opts.index,
        val_index=opts.val_index, resume=opts.resume)

    def progress(epoch, train_loss, val_loss, val_miou, lr):
        print(f"epoch {epoch:4d}  train {train_loss:.4f}  "
              f"val {val_loss:.4f}  miou {val_miou:.4f}  lr {lr:g}")

    state = train(config, progress=progress)
    print(f"finished at epoch {state.epoch}; best val mIoU "
          f"{state.best_metric:.4f}; artifacts in {config.out_dir}")
    return 0


def cmd_eval(opts) -> int:
    from .checkpoint import load_checkpoint
    from .data import load_label_map
    from .train import build_dataset, evaluate

    state = load_checkpoint(opts.checkpoint)
    label_map = load_label_map(opts.dataset)
    dataset = build_dataset(opts.root, opts.dataset, opts.fold, opts.res,
                            label_map, opts.index)
    out = Path(opts.out) if opts.out else \
        Path(opts.checkpoint).parent / f"report_{opts.fold}.csv"
    iou, miou = evaluate(state, dataset, label_map, report_path=out)
    for name, value in zip(label_map.class_names[1:], iou[1:]):
        shown = "undefined" if np.isnan(value) else f"{value:.4f}"
        print(f"{name:>16}  {shown}")
    print(f"{'mean IoU':>16}  {miou:.4f}")
    print(f"report written to {out}")
    return 0


def cmd_report(opts) -> int:
    from .analyzer import build_report
    from .arch import build_network
    from .checkpoint import load_checkpoint

    rows = []
    for run in opts.runs:
        run = Path(run)
        state = load_checkpoint(run / "last.ckpt")
        net = build_network(state.arch, num_classes=state.num_classes)
        cost = build_report(net, 1, *opts.res)
        best_miou = ""
        metrics = run / "metrics.csv"
        if metrics.exists():
            mious = [float(line.split(",")[3])
                     for line in metrics.read_text().splitlines()[1:] if line]
            finite = [m for m in mious if not np.isnan(m)]
            if finite:
                best_miou = repr(max(finite))
        rows.append({
            "run": run.name, "arch": state.arch, "epochs": state.epoch,
            "params": cost.total_params,
            "gflops": f"{cost.total_macs / 1e9:.1f}",
            "best_val_miou": best_miou,
        })
    with open(opts.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print("  ".join(str(v) for v in row.values()))
    print(f"summary written to {opts.out}")
    return 0


_DISPATCH = {"analyze": cmd_analyze, "split": cmd_split, "train": cmd_train,
             "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        opts = _merge_options(args.command, args)
        return _DISPATCH[args.command](opts)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
