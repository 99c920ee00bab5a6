"""Binary checkpoint files for training state.

Layout: 4-byte magic ``IKSH``, little-endian u32 format version, u64
header length, UTF-8 JSON header, then the raw little-endian array blobs
in header order. The header records the architecture preset, epoch
counter, scheduler state, shuffle RNG position, and one entry per blob
(name, kind, shape, dtype), so a file is self-describing and round-trips
bitwise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["CheckpointError", "TrainState", "capture", "restore",
           "save_checkpoint", "load_checkpoint"]

MAGIC = b"IKSH"
VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for malformed files and for state/model mismatches."""


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    arch: str
    num_classes: int
    epoch: int
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)
    velocities: dict = field(default_factory=dict)
    scheduler: dict = field(default_factory=dict)
    shuffle_state: int = 0
    best_metric: float = -np.inf


def capture(net, optimizer, scheduler, shuffle, epoch: int,
            best_metric: float = -np.inf) -> TrainState:
    """Snapshot a live model/optimizer/scheduler into a frozen state.

    Arrays are copied, so the snapshot stays valid while training
    continues to mutate the originals.
    """
    return TrainState(
        arch=net.spec.name,
        num_classes=net.spec.num_classes,
        epoch=int(epoch),
        params={name: t.data.copy() for name, t in net.params.params()},
        buffers={name: a.copy() for name, a in net.params.buffers()},
        velocities={name: v.copy() for name, v in optimizer.velocities.items()},
        scheduler=scheduler.state_dict(),
        shuffle_state=int(shuffle.state),
        best_metric=float(best_metric),
    )


def restore(state: TrainState, net, optimizer=None, scheduler=None,
            shuffle=None) -> None:
    """Copy a state back into live objects, in place.

    The network must have been built from the same preset; anything else
    is a mistake worth refusing rather than silently shape-matching.
    """
    if state.arch != net.spec.name:
        raise CheckpointError(
            f"checkpoint is for arch {state.arch!r}, model is {net.spec.name!r}")
    if state.num_classes != net.spec.num_classes:
        raise CheckpointError(
            f"checkpoint has {state.num_classes} classes, "
            f"model has {net.spec.num_classes}")
    live_params = dict(net.params.params())
    if set(live_params) != set(state.params):
        raise CheckpointError("parameter names do not match the model")
    for name, arr in state.params.items():
        dst = live_params[name].data
        if dst.shape != arr.shape:
            raise CheckpointError(f"shape mismatch for {name!r}")
        dst[...] = arr
    live_buffers = dict(net.params.buffers())
    for name, arr in state.buffers.items():
        live_buffers[name][...] = arr
    if optimizer is not None:
        for name, arr in state.velocities.items():
            optimizer.velocities[name][...] = arr
    if scheduler is not None:
        scheduler.load_state_dict(state.scheduler)
    if shuffle is not None:
        shuffle.state = state.shuffle_state


def _blob_entries(state: TrainState):
    for kind in ("params", "buffers", "velocities"):
        for name, arr in getattr(state, kind).items():
            yield kind, name, arr


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    blobs = []
    payload = []
    for kind, name, arr in _blob_entries(state):
        arr = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        blobs.append({"kind": kind, "name": name,
                      "shape": list(arr.shape), "dtype": arr.dtype.str})
        payload.append(arr.tobytes())
    header = {
        "arch": state.arch,
        "num_classes": state.num_classes,
        "epoch": state.epoch,
        "scheduler": state.scheduler,
        "shuffle_state": state.shuffle_state,
        "best_metric": state.best_metric,
        "blobs": blobs,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for chunk in payload:
            f.write(chunk)
    return path


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint: {what}")
    return buf


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path.name}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(
                f"{path.name}: format version {version}, expected {VERSION}")
        (hlen,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        try:
            header = json.loads(_read_exact(f, hlen, "header"))
        except ValueError as e:
            raise CheckpointError(f"{path.name}: bad header: {e}") from None
        state = TrainState(
            arch=header["arch"],
            num_classes=int(header["num_classes"]),
            epoch=int(header["epoch"]),
            scheduler=header["scheduler"],
            shuffle_state=int(header["shuffle_state"]),
            best_metric=float(header["best_metric"]),
        )
        for entry in header["blobs"]:
            dt = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
            raw = _read_exact(f, nbytes, f"blob {entry['name']!r}")
            arr = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
            getattr(state, entry["kind"])[entry["name"]] = arr
        if f.read(1):
            raise CheckpointError(f"{path.name}: trailing data after blobs")
    return state
