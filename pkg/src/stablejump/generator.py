"""Pointwise evaluation of jump generators with certified remainders.

apply_L evaluates the full operator at a point by splitting the integral
into four regions: an inner ball handled by an analytic Taylor remainder
bound, a compensated shell up to radius 1, an outer shell up to R_out, and
a far tail handled by a sup-norm remainder bound.  apply_M freezes the
kernel's state argument; apply_H is the absolute-value majorant with the
log-modulus weight inside the unit ball.

Floating point limits the compensated integrand: f(x+h) - f(x) - grad.h
drowns in rounding noise below |h| ~ 1e-6, so the inner radius never drops
below that scale and the Taylor remainder is reported rather than chased.
Vectorized profile evaluators batch many (state, frozen-point) pairs for the
statistical harness, including the scheme generator with per-row inner
cutoff edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ._quad import gauss_legendre_01, shell_quad, sphere_angles
from .errors import AccuracyError, DomainError
from .kernel import SPHERE_SURFACE, KernelSpec

_NOISE_EPS = 5e-16      # absolute noise of a compensated f-difference
_INNER_FLOOR = 1e-7     # never integrate the compensated term below this


@dataclass(frozen=True)
class TestFunction:
    """A C^2-bounded test function with certified derivative bounds.

    f and grad are vectorized over (..., d) points; grad may be None, in
    which case central differences with step ~ cbrt(eps) are used.
    hess_bound bounds the Hessian spectral norm, grad_bound the gradient
    norm, sup_bound the function itself.
    """

    f: Callable[[np.ndarray], np.ndarray]
    grad: Optional[Callable[[np.ndarray], np.ndarray]]
    hess_bound: float
    sup_bound: float
    grad_bound: float
    name: str = ""

    __test__ = False  # keep pytest from collecting this as a test class

    def __call__(self, y):
        return self.f(y)

    def gradient(self, y):
        y = np.asarray(y, dtype=float)
        if self.grad is not None:
            return self.grad(y)
        step = np.finfo(float).eps ** (1.0 / 3.0) * max(1.0, float(np.max(np.abs(y))))
        out = np.empty_like(y)
        for k in range(y.shape[-1]):
            e = np.zeros_like(y)
            e[..., k] = step
            out[..., k] = (self.f(y + e) - self.f(y - e)) / (2.0 * step)
        return out


def cosine(u) -> TestFunction:
    """f(y) = cos(u . y)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    norm = float(np.linalg.norm(u))

    def f(y):
        return np.cos(np.tensordot(np.asarray(y, dtype=float), u, axes=([-1], [0])))

    def grad(y):
        s = np.sin(np.tensordot(np.asarray(y, dtype=float), u, axes=([-1], [0])))
        return -s[..., None] * u

    return TestFunction(f=f, grad=grad, hess_bound=norm ** 2, sup_bound=1.0,
                        grad_bound=norm, name="cos(u.y), |u|=%.3g" % norm)


def gaussian(center=0.0) -> TestFunction:
    """f(y) = exp(-|y - c|^2)."""

    def f(y):
        dy = np.asarray(y, dtype=float) - center
        return np.exp(-np.sum(dy * dy, axis=-1))

    def grad(y):
        dy = np.asarray(y, dtype=float) - center
        return -2.0 * dy * np.exp(-np.sum(dy * dy, axis=-1))[..., None]

    # |f'| peaks at sqrt(2/e); Hessian eigenvalues (4r^2-2)e^{-r^2} and
    # -2e^{-r^2} are bounded by 2 in absolute value
    return TestFunction(f=f, grad=grad, hess_bound=2.0, sup_bound=1.0,
                        grad_bound=math.sqrt(2.0 / math.e), name="gaussian")


def _bump_profile_bounds():
    t = np.linspace(1e-6, 1.0 - 1e-6, 200_001)
    w = np.exp(1.0 - 1.0 / (1.0 - t * t))
    dw = np.gradient(w, t)
    d2w = np.gradient(dw, t)
    # radial Hessian eigenvalues are w''(t) and w'(t)/t (in units of 1/r^2)
    g1 = float(np.max(np.abs(dw)))
    g2 = float(np.max(np.maximum(np.abs(d2w), np.abs(dw / t))))
    return 1.02 * g1, 1.05 * g2


_BUMP_GRAD, _BUMP_HESS = _bump_profile_bounds()


def bump(center=0.0, radius: float = 1.0) -> TestFunction:
    """Smooth compactly supported bump of the given radius around center."""

    def f(y):
        dy = np.asarray(y, dtype=float) - center
        t2 = np.sum(dy * dy, axis=-1) / radius ** 2
        out = np.zeros(t2.shape)
        inside = t2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - t2[inside]))
        return out

    def grad(y):
        dy = np.asarray(y, dtype=float) - center
        t2 = np.sum(dy * dy, axis=-1) / radius ** 2
        out = np.zeros(dy.shape)
        inside = t2 < 1.0
        val = np.exp(1.0 - 1.0 / (1.0 - t2[inside]))
        dval = -2.0 * val / (1.0 - t2[inside]) ** 2 / radius ** 2
        out[inside] = dval[..., None] * dy[inside]
        return out

    return TestFunction(f=f, grad=grad, hess_bound=_BUMP_HESS / radius ** 2,
                        sup_bound=1.0, grad_bound=_BUMP_GRAD / radius,
                        name="bump(r=%.3g)" % radius)


def validate_test_function(tf: TestFunction, d: int, n_points: int = 32, seed=0,
                           tol: float = 1e-5) -> bool:
    """Check that grad matches central differences of f to O(step^2)."""
    rng = np.random.default_rng(seed)
    y = rng.normal(scale=1.5, size=(n_points, d))
    g = tf.gradient(y)
    step = 1e-5
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        fd = (tf.f(y + e) - tf.f(y - e)) / (2.0 * step)
        if not np.allclose(fd, g[:, k], atol=tol, rtol=1e-4):
            return False
    return True


@dataclass(frozen=True)
class GeneratorValue:
    """A generator evaluation with its certified error bound."""

    value: float
    remainder: float

    def __float__(self):
        return self.value


def choose_shells(spec: KernelSpec, tf: TestFunction, tol: float):
    """Pick (delta_in, R_out) so analytic remainders fit the tolerance budget.

    Half the budget goes to the inner Taylor remainder, half to the outer
    tail, both clipped against the floating-point noise floor of the
    compensated difference.
    """
    alpha, c, s_d = spec.alpha, spec.c_upper, spec.sphere_surface
    hess = max(tf.hess_bound, 1e-12)
    delta_target = (0.45 * tol * (2.0 - alpha) / (0.5 * hess * c * s_d)) ** (1.0 / (2.0 - alpha))
    noise_floor = (_NOISE_EPS * c * s_d / (alpha * max(tol, 1e-12) * 0.05)) ** (1.0 / alpha)
    delta_in = min(max(delta_target, noise_floor, _INNER_FLOOR), 0.5)
    sup = max(tf.sup_bound, 1e-12)
    R_out = (2.0 * sup * c * s_d / (alpha * 0.45 * tol)) ** (1.0 / alpha)
    return delta_in, min(max(R_out, 2.0), 1e12)


def _inner_remainder(spec: KernelSpec, tf: TestFunction, delta_in: float) -> float:
    alpha, c, s_d = spec.alpha, spec.c_upper, spec.sphere_surface
    return 0.5 * tf.hess_bound * c * s_d * delta_in ** (2.0 - alpha) / (2.0 - alpha)


def _outer_remainder(spec: KernelSpec, tf: TestFunction, R_out: float) -> float:
    alpha, c, s_d = spec.alpha, spec.c_upper, spec.sphere_surface
    return 2.0 * tf.sup_bound * c * s_d * R_out ** (-alpha) / alpha


def _apply_frozen(spec: KernelSpec, kernel_at, tf: TestFunction, x,
                  delta_in, R_out, tol) -> GeneratorValue:
    """Shared body of apply_L / apply_M; kernel_at(h) evaluates the weight."""
    x = np.asarray(x, dtype=float).reshape(spec.d)
    if delta_in is None or R_out is None:
        auto_d, auto_r = choose_shells(spec, tf, tol)
        delta_in = auto_d if delta_in is None else delta_in
        R_out = auto_r if R_out is None else R_out
    if not 0.0 < delta_in < 1.0:
        raise DomainError("delta_in must lie in (0, 1)")
    if R_out <= 1.0:
        raise DomainError("R_out must exceed 1")
    alpha = spec.alpha
    fx = float(tf.f(x))
    gx = tf.gradient(x)
    quad_tol = max(0.02 * tol, 1e-12)

    def compensated(h):
        dot = np.tensordot(h, gx, axes=([-1], [0]))
        return (tf.f(x + h) - fx - dot) * kernel_at(h)

    def plain(h):
        return (tf.f(x + h) - fx) * kernel_at(h)

    inner, err_i = shell_quad(compensated, spec.d, alpha, delta_in, 1.0,
                              rel_tol=quad_tol, abs_floor=0.25 * quad_tol)
    outer, err_o = shell_quad(plain, spec.d, alpha, 1.0, R_out,
                              rel_tol=quad_tol, abs_floor=0.25 * quad_tol)
    value = inner + outer
    if alpha < 1.0:
        # the operator is uncompensated, but the compensated integrand is the
        # numerically stable one: add the drift term over (0, 1] back in (its
        # integrand has no rounding cancellation, so the radius can be tiny)
        def drift_part(h):
            dot = np.tensordot(h, gx, axes=([-1], [0]))
            return dot * kernel_at(h)

        tiny = 1e-30
        drift, err_d = shell_quad(drift_part, spec.d, alpha, tiny, 1.0,
                                  rel_tol=quad_tol, abs_floor=0.25 * quad_tol)
        value += drift
        err_i += err_d + (tf.grad_bound * spec.c_upper * spec.sphere_surface
                          * tiny ** (1.0 - alpha) / (1.0 - alpha))
    remainder = (_inner_remainder(spec, tf, delta_in)
                 + _outer_remainder(spec, tf, R_out)
                 + err_i + err_o
                 + _NOISE_EPS * spec.c_upper * spec.sphere_surface
                 * delta_in ** -alpha / alpha)
    if remainder > tol:
        raise AccuracyError(
            "certified remainder %.3e exceeds requested tolerance %.3e"
            % (remainder, tol),
            achieved=remainder,
        )
    return GeneratorValue(value=value, remainder=remainder)


def apply_L(spec: KernelSpec, tf: TestFunction, x, delta_in=None, R_out=None,
            tol: float = 1e-4) -> GeneratorValue:
    """Full generator at x: jump average of f against A(x, .)."""
    x_arr = np.asarray(x, dtype=float).reshape(spec.d)

    def kernel_at(h):
        return spec.A(x_arr, h)

    return _apply_frozen(spec, kernel_at, tf, x_arr, delta_in, R_out, tol)


def apply_M(spec: KernelSpec, z, tf: TestFunction, x, delta_in=None, R_out=None,
            tol: float = 1e-4) -> GeneratorValue:
    """Frozen-kernel generator: the state argument of A is pinned at z."""
    z_arr = np.asarray(z, dtype=float).reshape(spec.d)

    def kernel_at(h):
        return spec.A(z_arr, h)

    return _apply_frozen(spec, kernel_at, tf, x, delta_in, R_out, tol)


def _shell_soft(g, d, alpha, r_lo, r_hi, rel_tol):
    """shell_quad that degrades to its last estimate when refinement stalls."""
    from .errors import QuadratureError

    try:
        return shell_quad(g, d, alpha, r_lo, r_hi, rel_tol=rel_tol,
                          abs_floor=0.25 * rel_tol, max_doublings=7)
    except QuadratureError as exc:
        prev, cur = exc.estimates
        return cur, 2.0 * abs(cur - prev)


@dataclass(frozen=True)
class MajorantValue:
    """Majorant evaluation split into its weighted-inner and outer parts."""

    value: float
    inner: float
    outer: float
    remainder: float


def apply_H(spec: KernelSpec, tf: TestFunction, x, zeta: float,
            tol: float = 1e-4) -> MajorantValue:
    """Absolute-difference majorant with weight zeta/psi_eta inside the unit ball.

    The outer part carries the bare reference weight (no kernel, no zeta);
    the inner part is linear in zeta.
    """
    if zeta <= 0:
        raise DomainError("zeta must be positive")
    from .kernel import psi

    x = np.asarray(x, dtype=float).reshape(spec.d)
    fx = float(tf.f(x))
    gx = tf.gradient(x)
    alpha, s_d = spec.alpha, spec.sphere_surface
    quad_tol = max(0.1 * tol, 1e-10)
    delta0 = max((_NOISE_EPS * s_d / (alpha * max(tol, 1e-10) * 0.25)) ** (1.0 / alpha),
                 _INNER_FLOOR)

    def inner_fn(h):
        r = np.linalg.norm(h, axis=-1)
        dot = np.tensordot(h, gx, axes=([-1], [0]))
        return np.abs(tf.f(x + h) - fx - dot) * zeta / psi(r, spec.eta)

    def outer_fn(h):
        return np.abs(tf.f(x + h) - fx)

    R_out = (2.0 * max(tf.sup_bound, 1e-12) * s_d / (alpha * 0.5 * tol)) ** (1.0 / alpha)
    R_out = min(max(R_out, 2.0), 1e12)
    # the absolute value kinks the integrand; refinement may stall near the
    # target, in which case the last gap is folded into the remainder
    inner, err_i = _shell_soft(inner_fn, spec.d, alpha, delta0, 1.0, quad_tol)
    outer, err_o = _shell_soft(outer_fn, spec.d, alpha, 1.0, R_out, quad_tol)
    remainder = (0.5 * tf.hess_bound * zeta * s_d * delta0 ** (2.0 - alpha) / (2.0 - alpha)
                 + 2.0 * tf.sup_bound * s_d * R_out ** -alpha / alpha
                 + err_i + err_o)
    return MajorantValue(value=inner + outer, inner=inner, outer=outer,
                         remainder=remainder)


# ---------------------------------------------------------------------------
# vectorized profiles for the statistical harness


def _log_nodes(lo, hi, n):
    s, w = gauss_legendre_01(n)
    span = np.log(hi / lo)
    r = lo * np.exp(span * s)
    return r, r * w * span


def frozen_profile_1d(spec: KernelSpec, tf: TestFunction, x_pts, z_pts,
                      edge_neg=None, edge_pos=None, R_out: float = 1e8,
                      n_inner: int = 64, n_outer: int = 96):
    """Frozen-kernel generator values for rows of (state x_i, frozen point z_i).

    d=1 only.  With edge arrays, evaluates the scheme generator: the h
    integral excludes the per-row interval (edge_neg_i, edge_pos_i), which is
    the image of the sub-cutoff marks, making the result the exact generator
    of the simulated jump scheme (up to quadrature).  Without edges, the
    integral runs to the rounding floor with the Taylor remainder of apply_L.

    Returns (values, remainder_bound).
    """
    if spec.d != 1:
        raise DomainError("frozen_profile_1d is d=1 only")
    x = np.asarray(x_pts, dtype=float).reshape(-1)
    z = np.asarray(z_pts, dtype=float).reshape(-1)
    if x.shape != z.shape:
        raise DomainError("state and frozen-point arrays disagree")
    alpha = spec.alpha
    if edge_pos is None:
        floor = max(_INNER_FLOOR, 1e-7)
        lo_pos = np.full(len(x), floor)
        lo_neg = -lo_pos
        truncation = _inner_remainder(spec, tf, floor)
        if alpha < 1.0:
            # drift term omitted below the floor (plain difference integrated)
            truncation += (tf.grad_bound * spec.c_upper * 2.0
                           * floor ** (1.0 - alpha) / (1.0 - alpha))
    else:
        lo_pos = np.asarray(edge_pos, dtype=float).reshape(-1)
        lo_neg = np.asarray(edge_neg, dtype=float).reshape(-1)
        if np.any(lo_pos <= 0) or np.any(lo_neg >= 0):
            raise DomainError("edges must satisfy edge_neg < 0 < edge_pos")
        if np.any(lo_pos >= 1.0) or np.any(lo_neg <= -1.0):
            raise DomainError("scheme edges must lie inside the unit ball")
        truncation = 0.0

    values = _profile_eval(spec, tf, x, z, lo_neg, lo_pos, R_out,
                           n_inner, n_outer, edge_pos is None)
    tail_remainder = _outer_remainder(spec, tf, R_out)
    # quadrature error estimated by node doubling on a row subsample
    probe = np.linspace(0, len(x) - 1, min(8, len(x))).astype(int)
    fine = _profile_eval(spec, tf, x[probe], z[probe], lo_neg[probe],
                         lo_pos[probe], R_out, 2 * n_inner, 2 * n_outer,
                         edge_pos is None)
    quad_err = float(np.max(np.abs(fine - values[probe]))) if len(probe) else 0.0
    return values, truncation + tail_remainder + 2.0 * quad_err


def _profile_eval(spec, tf, x, z, lo_neg, lo_pos, R_out, n_inner, n_outer,
                  full_operator):
    """Row batch of frozen generator values (d=1).

    Inner shells [row edge, 1] use the compensated difference when alpha >= 1
    (matching the operator) and also when evaluating the full alpha < 1
    operator (for stability, with the drift added back over (0, 1]); scheme
    evaluations at alpha < 1 use the plain difference from the edges, which
    is exact there.
    """
    alpha = spec.alpha
    compensate = alpha >= 1.0 or full_operator
    fx = tf.f(x[:, None])
    gx = tf.gradient(x[:, None])[..., 0]
    s, w01 = gauss_legendre_01(n_inner)
    values = np.zeros(len(x))
    for lo_abs, side in ((lo_pos, 1.0), (-lo_neg, -1.0)):
        span = np.log(1.0 / lo_abs)
        r = lo_abs[:, None] * np.exp(span[:, None] * s[None, :])
        h = side * r
        kern = spec.A(z[:, None, None], h[..., None])
        diff = tf.f((x[:, None] + h)[..., None]) - fx[:, None]
        if compensate:
            diff = diff - gx[:, None] * h
        values += ((diff * kern * r ** (-1.0 - alpha))
                   * (w01[None, :] * span[:, None]) * r).sum(axis=1)
    if alpha < 1.0 and full_operator:
        # add the drift over (0, 1] back; integrable and rounding-safe
        r_d, w_d = _log_nodes(1e-30, 1.0, max(n_inner, 96))
        for side in (1.0, -1.0):
            h = side * r_d
            kern = spec.A(z[:, None, None], h[None, :, None])
            values += (gx[:, None] * h[None, :] * kern
                       * r_d ** (-1.0 - alpha) * w_d).sum(axis=1)
    r_out, w_out = _log_nodes(1.0, R_out, n_outer)
    for side in (1.0, -1.0):
        h = side * r_out
        kern = spec.A(z[:, None, None], h[None, :, None])
        diff = tf.f((x[:, None] + h[None, :])[..., None]) - fx[:, None]
        values += (diff * kern * r_out ** (-1.0 - alpha) * w_out).sum(axis=1)
    return values
