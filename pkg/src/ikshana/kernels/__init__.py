"""Convolution kernel backends.

The dilated 3x3 convolutions dominate runtime, so their forward pass and both
backward passes exist twice: a compiled Cython/OpenMP extension and a pure
numpy implementation built on stride tricks and BLAS. The compiled backend is
picked at import time when the extension was built; set
``IKSHANA_KERNELS=python`` or ``IKSHANA_KERNELS=cython`` to force one side.
``benchmarks/bench_kernels.py`` times them head to head.

Every backend exposes the same three functions, all deterministic for a fixed
thread count:

    conv2d_forward(x, w, dilation, padding)          -> y
    conv2d_backward_input(dy, w, h, w, dilation, padding) -> dx
    conv2d_backward_weight(dy, x, k, dilation, padding)   -> dw
"""

import os

from . import conv_numpy

_BACKENDS = {"python": conv_numpy}

try:
    from . import conv_cython
    _BACKENDS["cython"] = conv_cython
except ImportError:
    conv_cython = None


def _pick_default() -> str:
    forced = os.environ.get("IKSHANA_KERNELS", "auto").lower()
    if forced in _BACKENDS:
        return forced
    if forced not in ("auto", ""):
        raise ValueError(
            f"IKSHANA_KERNELS={forced!r}: expected one of "
            f"{sorted(_BACKENDS)} or 'auto'")
    return "cython" if "cython" in _BACKENDS else "python"


_active_name = _pick_default()


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend_name() -> str:
    return _active_name


def get_backend(name: str):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown kernel backend {name!r}; "
                         f"available: {sorted(_BACKENDS)}") from None


def active_backend():
    return _BACKENDS[_active_name]


def set_backend(name: str) -> str:
    """Switch the process-wide backend; returns the previous name."""
    global _active_name
    get_backend(name)
    previous = _active_name
    _active_name = name
    return previous
