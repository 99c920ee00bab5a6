"""Glance-based multi-scale segmentation networks built from scratch.

The package stacks a small tape-based autodiff core, dilated-convolution
kernels with interchangeable numpy and compiled backends, the network
family itself, a cost analyzer, dataset plumbing, metrics and a training
harness behind one CLI.
"""

from .autograd import GradTape, Tensor, active_tape

__version__ = "0.1.0"

__all__ = ["Tensor", "GradTape", "active_tape", "__version__"]
