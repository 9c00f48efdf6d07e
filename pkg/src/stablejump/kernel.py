"""Jump kernels A(x, h), the log-modulus weight, and standing-assumption checks.

A kernel spec packages the dimension d, the stability index alpha, uniform
bounds c_lower <= A(x, h) <= c_upper, a modulus exponent eta, and a
vectorized evaluator.  Jump intensity from state x is A(x, h) / |h|^(d+alpha).
Evaluators are pure; bounds are enforced at evaluation time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._quad import interval_quad
from .errors import DomainError, KernelContractError

_BOUND_SLACK = 1e-12

SPHERE_SURFACE = {1: 2.0, 2: 2.0 * np.pi}


def psi(r, eta: float):
    """Log-modulus weight (1 + log+(1/r))**(1+eta).

    Nonincreasing in r, equal to 1 for r >= 1.  Accepts scalars or arrays.
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise DomainError("psi requires r > 0")
    out = (1.0 + np.maximum(0.0, -np.log(r_arr))) ** (1.0 + eta)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class KernelSpec:
    """A stable-like jump kernel with its uniform bounds.

    A maps (x, h) with trailing dimension d to positive values, broadcasting
    over leading axes.  symmetric declares A(x, h) == A(x, -h) for all x, h;
    radial_profile, when set, gives A(x, h) = radial_profile(x, |h|) and
    unlocks the polar fast path in the transport construction.
    """

    d: int
    alpha: float
    c_lower: float
    c_upper: float
    eta: float
    A: Callable[[np.ndarray, np.ndarray], np.ndarray]
    family: str = "user"
    params: dict = field(default_factory=dict)
    symmetric: bool = False
    radial_profile: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    profile_kinks: tuple = ()

    def __post_init__(self):
        if self.d not in (1, 2):
            raise DomainError("d must be 1 or 2")
        if not 0.0 < self.alpha < 2.0:
            raise DomainError("alpha must lie in the open interval (0, 2)")
        if not (0.0 < self.c_lower <= self.c_upper):
            raise DomainError("need 0 < c_lower <= c_upper")
        if self.eta <= 0:
            raise DomainError("eta must be positive")

    @property
    def sphere_surface(self) -> float:
        return SPHERE_SURFACE[self.d]


def _as_points(x, d: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if d != 1:
            raise DomainError("scalar point given for d=%d kernel" % d)
        arr = arr.reshape(1)
    if arr.shape[-1] != d:
        raise DomainError("point has trailing dimension %d, expected %d" % (arr.shape[-1], d))
    return arr


def eval_A(spec: KernelSpec, x, h):
    """Evaluate A(x, h), enforcing h != 0 and the kernel bounds.

    Returns a float for single points, an array for batches.
    """
    x_arr = _as_points(x, spec.d)
    h_arr = _as_points(h, spec.d)
    norms = np.linalg.norm(h_arr, axis=-1)
    if np.any(norms == 0.0):
        raise DomainError("kernel evaluated at h = 0")
    vals = np.asarray(spec.A(x_arr, h_arr), dtype=float)
    lo = spec.c_lower * (1.0 - _BOUND_SLACK) - _BOUND_SLACK
    hi = spec.c_upper * (1.0 + _BOUND_SLACK) + _BOUND_SLACK
    if np.any(vals < lo) or np.any(vals > hi):
        bad = vals[(vals < lo) | (vals > hi)]
        raise KernelContractError(
            "kernel value %r outside [%g, %g]" % (bad.flat[0], spec.c_lower, spec.c_upper)
        )
    return vals if vals.ndim else float(vals)

def eval_Abar(spec: KernelSpec, x, h):
    """Evaluate the modulus-weighted kernel A(x, h) * psi_eta(|h|)."""
    h_arr = _as_points(h, spec.d)
    vals = eval_A(spec, x, h)
    return vals * psi(np.linalg.norm(h_arr, axis=-1), spec.eta)


def constant_kernel(a: float, d: int = 1, alpha: float = 1.0, eta: float = 1.0) -> KernelSpec:
    """Kernel family constant(a): A(x, h) = a."""
    if a <= 0:
        raise DomainError("constant kernel level must be positive")

    def evaluator(x, h):
        return np.broadcast_to(
            np.asarray(a, dtype=float), np.broadcast_shapes(x.shape[:-1], h.shape[:-1])
        ).copy()

    return KernelSpec(
        d=d, alpha=alpha, c_lower=a, c_upper=a, eta=eta, A=evaluator,
        family="constant", params={"a": a}, symmetric=True,
        radial_profile=lambda x, r: np.broadcast_to(
            np.asarray(a, dtype=float), np.broadcast_shapes(x.shape[:-1], np.shape(r))
        ).copy(),
    )


def separable_kernel(d: int = 1, alpha: float = 1.0, eta: float = 1.0,
                     amplitude: float = 0.5) -> KernelSpec:
    """Test fixture A(x, h) = 1 + amplitude * sin(x_1) / psi_eta(|h|).

    The modulus-weighted kernel satisfies |Abar(x, h) - Abar(x0, h)| =
    amplitude * |sin(x_1) - sin(x0_1)|, so the continuity modulus is explicit.
    """
    if not 0.0 < amplitude < 1.0:
        raise DomainError("amplitude must lie in (0, 1)")

    def evaluator(x, h):
        r = np.linalg.norm(h, axis=-1)
        return 1.0 + amplitude * np.sin(x[..., 0]) / psi(r, eta)

    def profile(x, r):
        return 1.0 + amplitude * np.sin(x[..., 0]) / psi(r, eta)

    return KernelSpec(
        d=d, alpha=alpha, c_lower=1.0 - amplitude, c_upper=1.0 + amplitude,
        eta=eta, A=evaluator, family="separable",
        params={"amplitude": amplitude}, symmetric=True, radial_profile=profile,
        profile_kinks=(1.0,),  # psi weight is flat beyond radius 1
    )


def user_kernel(fn, d: int, alpha: float, c_lower: float, c_upper: float,
                eta: float = 1.0, symmetric: bool = False,
                radial_profile=None, profile_kinks=(), params=None) -> KernelSpec:
    """Wrap a user-supplied vectorized evaluator with declared bounds."""
    return KernelSpec(
        d=d, alpha=alpha, c_lower=c_lower, c_upper=c_upper, eta=eta, A=fn,
        family="user", params=dict(params or {}), symmetric=symmetric,
        radial_profile=radial_profile, profile_kinks=tuple(profile_kinks),
    )


def kernel_from_config(block: dict) -> KernelSpec:
    """Build a kernel from the JSON run-config block."""
    family = block["family"]
    d = int(block.get("d", 1))
    alpha = float(block["alpha"])
    eta = float(block.get("eta", 1.0))
    params = block.get("params", {})
    if family == "constant":
        return constant_kernel(float(params.get("a", 1.0)), d=d, alpha=alpha, eta=eta)
    if family == "separable":
        return separable_kernel(d=d, alpha=alpha, eta=eta,
                                amplitude=float(params.get("amplitude", 0.5)))
    raise DomainError("unknown kernel family %r in config" % family)


def modulus_estimate(spec: KernelSpec, x0, x, b: float, n_samples: int, seed) -> float:
    """Monte-Carlo estimate of sup_{|h| <= b} |Abar(x, h) - Abar(x0, h)|.

    Radii are sampled log-uniformly on [1e-6 * b, b] (the modulus weight
    varies on log scale near 0), directions uniformly on the sphere.
    Serves as an empirical continuity modulus for the frozen-kernel
    perturbation bound.
    """
    if b <= 0:
        raise DomainError("b must be positive")
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    x0_arr = _as_points(x0, spec.d)
    x_arr = _as_points(x, spec.d)
    if np.array_equal(x0_arr, x_arr):
        return 0.0
    rng = np.random.default_rng(seed)
    radii = np.exp(rng.uniform(np.log(1e-6 * b), np.log(b), size=n_samples))
    if spec.d == 1:
        dirs = rng.choice([-1.0, 1.0], size=(n_samples, 1))
    else:
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n_samples)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    h = radii[:, None] * dirs
    gap = np.abs(eval_Abar(spec, x_arr, h) - eval_Abar(spec, x0_arr, h))
    return float(np.max(gap))


def modulus_weight_mass(d: int, eta: float, rel_tol: float = 1e-9) -> float:
    """Adaptive quadrature of the compensated small-jump weight integral.

    Computes integral over |h| <= 1 of |h|^alpha / (psi_eta(|h|) |h|^(d+alpha)),
    which reduces to s_d * int_0^1 dr / (r * psi_eta(r)) and is finite for
    every eta > 0 with closed form s_d / eta.  (The uncompensated version,
    without the |h|^alpha factor, diverges for every alpha > 0.)
    """
    if d not in SPHERE_SURFACE:
        raise DomainError("d must be 1 or 2")

    # log-radial substitution t = log(1/r) turns the radial integral into
    # int_0^inf (1 + t)^-(1+eta) dt; quadrature to a finite horizon plus the
    # exact tail remainder (1 + tau)^-eta / eta
    def integrand(t):
        return (1.0 + t) ** (-1.0 - eta)

    tau_max = min(max(10.0, rel_tol ** (-1.0 / eta) - 1.0), 1e30)
    val, _ = interval_quad(integrand, 0.0, tau_max, rel_tol=rel_tol, scale_hint=1.0)
    tail = (1.0 + tau_max) ** (-eta) / eta
    return SPHERE_SURFACE[d] * (val + tail)
