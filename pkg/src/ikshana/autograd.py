"""Dense tensors with tape-based reverse-mode differentiation.

A ``Tensor`` wraps a numpy array (float32 by default, float64 supported for
gradient checking). Differentiable operations record themselves on the
innermost active ``GradTape``; ``GradTape.backward`` replays the recording in
reverse and accumulates gradients into every leaf that requires them.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "GradTape"]

_TAPE_STACK: list["GradTape"] = []


class Tensor:
    """A numpy array plus gradient bookkeeping.

    The network dataflow uses 4-D ``(batch, channels, height, width)``
    tensors; scalar losses are 0-d. ``grad`` is populated by
    ``GradTape.backward`` and has the same shape and dtype as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def is_finite(self) -> bool:
        """True when every element is neither NaN nor infinite."""
        return bool(np.isfinite(self.data).all())

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, "
                f"requires_grad={self.requires_grad})")


class _TapeEntry:
    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output, inputs, backward_fn):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


class GradTape:
    """Ordered recording of differentiable operations.

    Entries are appended in execution order, so inputs of any entry were
    produced by an earlier entry or are leaves. One tape supports exactly one
    ``backward`` call.
    """

    def __init__(self):
        self._entries: list[_TapeEntry] = []
        self._consumed = False

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, output: Tensor, inputs, backward_fn) -> None:
        """Register an op. ``backward_fn(grad_out)`` must return one gradient
        array (or None) per entry of ``inputs``, in order."""
        self._entries.append(_TapeEntry(output, tuple(inputs), backward_fn))

    def __len__(self):
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` on every requires_grad leaf reachable from
        ``loss``. Raises on a non-scalar loss, on a loss that was not recorded
        on this tape, and on a second call."""
        if self._consumed:
            raise RuntimeError("backward() already called on this tape")
        if loss.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        produced = {id(e.output) for e in self._entries}
        if id(loss) not in produced:
            raise ValueError("loss tensor was not produced by an op recorded on this tape")
        self._consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self._entries):
            g_out = grads.pop(id(entry.output), None)
            if g_out is None:
                continue
            g_inputs = entry.backward_fn(g_out)
            for t, g in zip(entry.inputs, g_inputs):
                if g is None:
                    continue
                key = id(t)
                if key in produced:
                    prev = grads.get(key)
                    grads[key] = g if prev is None else prev + g
                elif t.requires_grad:
                    t.accumulate_grad(g)


def active_tape():
    """The innermost open tape, or None outside any recording context."""
    return _TAPE_STACK[-1] if _TAPE_STACK else None
