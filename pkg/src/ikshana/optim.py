"""Parameter containers, initialization, SGD with Nesterov momentum, and
the reduce-on-plateau learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor

__all__ = ["ParamSet", "he_normal", "SGDNesterov", "ReduceLROnPlateau"]


class ParamSet:
    """Named trainable parameters plus non-trainable buffers.

    Parameters are Tensors with requires_grad set (conv weights/biases,
    batchnorm gamma/beta); buffers are plain arrays carried alongside
    (batchnorm running statistics). Names are unique and insertion-ordered,
    which fixes the serialization order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}

    def add_param(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params or name in self._buffers:
            raise ValueError(f"duplicate name {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self._params or name in self._buffers:
            raise ValueError(f"duplicate name {name!r}")
        self._buffers[name] = array
        return array

    def params(self):
        return self._params.items()

    def buffers(self):
        return self._buffers.items()

    def __len__(self):
        return len(self._params)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None


def he_normal(rng: np.random.Generator, shape, fan_out: int,
              dtype=np.float32) -> np.ndarray:
    """Zero-mean normal draw with std sqrt(2/fan_out)."""
    std = np.sqrt(2.0 / fan_out)
    return (rng.standard_normal(shape) * std).astype(dtype)


class SGDNesterov:
    """v <- mu*v + g; p <- p - lr*(g + mu*v), per parameter.

    Velocities are allocated at construction in parameter order and zeroed,
    so a fresh optimizer is bitwise reproducible.
    """

    def __init__(self, params: ParamSet, lr: float, momentum: float = 0.7):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocities: dict[str, np.ndarray] = {
            name: np.zeros_like(t.data) for name, t in params.params()}

    def step(self) -> None:
        mu = self.momentum
        for name, p in self.params.params():
            g = p.grad
            if g is None:
                raise RuntimeError(f"parameter {name!r} has no gradient")
            g = g.astype(p.data.dtype, copy=False)
            v = self.velocities[name]
            v *= mu
            v += g
            p.data -= self.lr * (g + mu * v)


class ReduceLROnPlateau:
    """Halve the learning rate when a min-mode metric stops improving.

    Improvement means observed < best*(1 - threshold). The counter of bad
    epochs resets on improvement and on every cut; a cut fires when the
    counter exceeds the patience.
    """

    def __init__(self, optimizer: SGDNesterov, factor: float = 0.5,
                 patience: int = 20, threshold: float = 1e-4):
        if not (0.0 < factor < 1.0):
            raise ValueError("factor must be in (0, 1)")
        if patience < 0:
            raise ValueError("patience must be non-negative")
        self.optimizer = optimizer
        self.factor = float(factor)
        self.patience = int(patience)
        self.threshold = float(threshold)
        self.best = np.inf
        self.bad_epochs = 0

    @property
    def lr(self) -> float:
        return self.optimizer.lr

    def step(self, observed: float) -> None:
        if observed < self.best * (1.0 - self.threshold):
            self.best = float(observed)
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.optimizer.lr *= self.factor
            self.bad_epochs = 0

    def state_dict(self) -> dict:
        return {"lr": self.optimizer.lr, "factor": self.factor,
                "patience": self.patience, "threshold": self.threshold,
                "best": float(self.best), "bad_epochs": self.bad_epochs}

    def load_state_dict(self, state: dict) -> None:
        self.optimizer.lr = float(state["lr"])
        self.factor = float(state["factor"])
        self.patience = int(state["patience"])
        self.threshold = float(state["threshold"])
        self.best = float(state["best"])
        self.bad_epochs = int(state["bad_epochs"])
