"""Training loop, evaluation, and the CSV artifacts they emit.

A run directory holds ``metrics.csv`` (one row per epoch), ``last.ckpt``
(end of the most recent epoch) and ``best.ckpt`` (highest validation
mean IoU so far). Everything that advances between epochs lives in the
checkpoint, so resuming from ``last.ckpt`` replays the remaining epochs
bitwise identically to a run that never stopped.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ops
from .arch import build_network, resolve_preset
from .autograd import GradTape, Tensor
from .checkpoint import (TrainState, capture, load_checkpoint, restore,
                         save_checkpoint)
from .data import (CLASS_NAMES, LabelMap, LazyDataset, SplitMix64,
                   load_label_map, read_index, scan_dataset)
from .metrics import ConfusionMatrix
from .optim import ReduceLROnPlateau, SGDNesterov

__all__ = ["TrainConfig", "train", "evaluate", "write_iou_report",
           "build_dataset", "METRIC_COLUMNS"]

METRIC_COLUMNS = ("epoch", "train_loss", "val_loss", "val_miou", "lr")


@dataclass
class TrainConfig:
    arch: str = "main"
    dataset: str = "cityscapes"
    root: str | None = None
    resolution: tuple = (512, 1024)
    epochs: int = 180
    batch_size: int = 2
    lr: float = 1e-6
    momentum: float = 0.7
    factor: float = 0.5
    patience: int = 20
    threshold: float = 1e-4
    seed: int = 42
    out_dir: str = "runs/default"
    train_index: str | None = None
    val_index: str | None = None
    resume: str | None = None

    def validate(self) -> None:
        spec = resolve_preset(self.arch)
        if self.dataset not in CLASS_NAMES:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        h, w = self.resolution
        step = 2 ** (spec.scales - 1)
        if h % step or w % step:
            raise ValueError(
                f"resolution {h}x{w} not divisible by {step} "
                f"({spec.scales} scales)")


def build_dataset(root, dataset: str, fold: str, resolution,
                  label_map: LabelMap, index=None) -> LazyDataset:
    """Fold contents, or the subset named by an index file."""
    if index is not None:
        paths = read_index(index)
    else:
        paths = [img for img, _ in scan_dataset(root, dataset, fold)]
    return LazyDataset(root, paths, dataset, resolution, label_map)


def _collate(samples):
    images = np.concatenate([s.image.data for s in samples], axis=0)
    targets = np.concatenate([s.target for s in samples], axis=0)
    return Tensor(images), targets


def _append_metrics_row(path: Path, epoch, train_loss, val_loss, val_miou,
                        lr) -> None:
    # repr keeps every float bit, so reruns compare byte-for-byte
    row = [str(epoch)] + [repr(float(v))
                          for v in (train_loss, val_loss, val_miou, lr)]
    with open(path, "a", newline="") as f:
        f.write(",".join(row) + "\n")


def _reset_metrics_file(path: Path, keep_through_epoch: int) -> None:
    """Start the CSV fresh, or truncate rows past a resume point."""
    header = ",".join(METRIC_COLUMNS) + "\n"
    kept = []
    if keep_through_epoch > 0 and path.exists():
        for line in path.read_text().splitlines()[1:]:
            if line and int(line.split(",", 1)[0]) <= keep_through_epoch:
                kept.append(line + "\n")
    with open(path, "w", newline="") as f:
        f.write(header)
        f.writelines(kept)


def _validate_pass(net, val_set, num_classes):
    """Mean validation loss and mIoU in one sweep, eval mode."""
    cm = ConfusionMatrix(num_classes, background=0)
    loss_sum = 0.0
    seen = 0
    for sample in val_set:
        y, _ = net.forward(sample.image, training=False)
        loss = ops.softmax_cross_entropy(y, sample.target)
        n = sample.target.shape[0]
        loss_sum += float(loss.data) * n
        seen += n
        cm.update(sample.target, np.argmax(y.data, axis=1))
    return loss_sum / seen, cm.mean_iou()


def train(config: TrainConfig, train_set=None, val_set=None,
          progress=None) -> TrainState:
    """Run the configured training and leave its artifacts in out_dir.

    Datasets may be passed directly (any sequence of Samples); otherwise
    they are assembled from config.root. ``progress``, if given, is
    called after every epoch with the values of the metrics row. Returns
    the final state, which is also on disk as last.ckpt.
    """
    config.validate()
    label_map = load_label_map(config.dataset)
    num_classes = label_map.num_train_classes
    if train_set is None:
        if config.root is None:
            raise ValueError("config.root is required when no dataset is given")
        train_set = build_dataset(config.root, config.dataset, "train",
                                  config.resolution, label_map,
                                  config.train_index)
        val_set = build_dataset(config.root, config.dataset, "val",
                                config.resolution, label_map,
                                config.val_index)
    if len(train_set) == 0:
        raise ValueError("training set is empty")

    net = build_network(config.arch, seed=config.seed,
                        num_classes=num_classes)
    optimizer = SGDNesterov(net.params, lr=config.lr,
                            momentum=config.momentum)
    scheduler = ReduceLROnPlateau(optimizer, factor=config.factor,
                                  patience=config.patience,
                                  threshold=config.threshold)
    shuffle = SplitMix64(config.seed)
    start_epoch = 0
    best_metric = -np.inf
    if config.resume is not None:
        state = load_checkpoint(config.resume)
        restore(state, net, optimizer, scheduler, shuffle)
        start_epoch = state.epoch
        best_metric = state.best_metric

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    _reset_metrics_file(metrics_path, keep_through_epoch=start_epoch)

    state = capture(net, optimizer, scheduler, shuffle, start_epoch,
                    best_metric)
    save_checkpoint(state, out_dir / "last.ckpt")

    n = len(train_set)
    for epoch in range(start_epoch + 1, config.epochs + 1):
        lr_used = optimizer.lr
        order = shuffle.shuffle(list(range(n)))
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[lo:lo + config.batch_size]]
            images, targets = _collate(batch)
            with GradTape() as tape:
                y, _ = net.forward(images, training=True)
                loss = ops.softmax_cross_entropy(y, targets)
            if not np.isfinite(loss.data):
                raise RuntimeError(
                    f"non-finite training loss ({float(loss.data)}) at "
                    f"epoch {epoch}, batch {lo // config.batch_size}")
            tape.backward(loss)
            optimizer.step()
            net.params.zero_grad()
            loss_sum += float(loss.data) * len(batch)
        train_loss = loss_sum / n

        val_loss, val_miou = _validate_pass(net, val_set, num_classes)
        scheduler.step(val_loss)
        _append_metrics_row(metrics_path, epoch, train_loss, val_loss,
                            val_miou, lr_used)
        if progress is not None:
            progress(epoch, train_loss, val_loss, val_miou, lr_used)

        improved = not np.isnan(val_miou) and val_miou > best_metric
        if improved:
            best_metric = val_miou
        state = capture(net, optimizer, scheduler, shuffle, epoch,
                        best_metric)
        save_checkpoint(state, out_dir / "last.ckpt")
        if improved:
            save_checkpoint(state, out_dir / "best.ckpt")
    return state


def evaluate(state: TrainState, dataset, label_map: LabelMap,
             report_path=None):
    """Class IoU vector and mean IoU of a checkpointed model on a fold."""
    if label_map.num_train_classes != state.num_classes:
        raise ValueError(
            f"checkpoint has {state.num_classes} classes, dataset "
            f"{label_map.name!r} has {label_map.num_train_classes}")
    if len(dataset) == 0:
        raise ValueError("evaluation fold is empty")
    net = build_network(state.arch, seed=0, num_classes=state.num_classes)
    restore(state, net)
    cm = ConfusionMatrix(state.num_classes, background=0)
    for sample in dataset:
        y, _ = net.forward(sample.image, training=False)
        cm.update(sample.target, np.argmax(y.data, axis=1))
    iou = cm.per_class_iou()
    miou = cm.mean_iou()
    if report_path is not None:
        write_iou_report(report_path, label_map, iou, miou)
    return iou, miou


def write_iou_report(path, label_map: LabelMap, iou, miou) -> None:
    """One-row CSV: content classes in report order, then the average.

    Classes absent from both truth and prediction have no defined IoU and
    get an empty cell.
    """
    names = list(label_map.class_names[1:]) + ["Average"]
    values = list(iou[1:]) + [miou]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(names)
        writer.writerow(["" if np.isnan(v) else repr(float(v))
                         for v in values])
