"""Kernel enumeration."""

from enum import Enum


class KernelKind(str, Enum):
    """Reproducing kernels available to the RKHS fitter and the GP simulator."""

    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    POLYNOMIAL = "polynomial"
    LINEAR = "linear"
