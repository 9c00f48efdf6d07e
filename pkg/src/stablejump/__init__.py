"""Simulation and statistical verification toolkit for stable-like jump processes.

Processes jump from x to x + h with intensity A(x, h)/|h|^(d+alpha); the
toolkit builds the measure-matching transport driving them from a single
reference Poisson point process, simulates delayed-Euler approximations,
computes frozen-kernel Fourier tables, and statistically verifies the
structural properties the construction guarantees.
"""

__version__ = "0.1.0"

from .kernel import (  # noqa: F401
    KernelSpec,
    constant_kernel,
    eval_A,
    eval_Abar,
    kernel_from_config,
    modulus_estimate,
    psi,
    separable_kernel,
    user_kernel,
)
from .transport import Rectangle, TransportMap1D, TransportMap2D, build as build_transport  # noqa: F401
