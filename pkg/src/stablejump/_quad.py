"""Vectorized adaptive quadrature used throughout the package.

Two families of routines:

* rectangle quadrature on (possibly unbounded) axis-aligned boxes in the
  open quadrant, used by the transport construction;
* log-radial shell quadrature for integrals of g(h) against |h|^-(d+alpha),
  used by the generator and spectral modules.

Unbounded sides are mapped to [0, 1) by the substitution coordinate =
lo/(1-s) (or L*s/(1-s) when lo = 0); wide finite sides use a log
substitution.  Integrands must accept numpy arrays and broadcast.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import QuadratureError

_MAX_PANELS = 4096


@lru_cache(maxsize=64)
def gauss_legendre_01(n: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


class _Axis:
    """Monotone map s in [0,1] -> coordinate in [lo, hi) with its Jacobian."""

    __slots__ = ("lo", "hi", "kind", "scale")

    def __init__(self, lo, hi, scale=1.0):
        self.lo = float(lo)
        self.hi = float(hi)
        if not np.isfinite(hi):
            self.kind = "inv" if lo > 0 else "inv0"
            self.scale = max(self.lo, scale)
        elif lo > 0 and hi / lo > 8.0:
            self.kind = "log"
            self.scale = 1.0
        else:
            self.kind = "affine"
            self.scale = 1.0

    def map(self, s):
        if self.kind == "affine":
            return self.lo + (self.hi - self.lo) * s, np.full_like(s, self.hi - self.lo)
        if self.kind == "log":
            ratio = np.log(self.hi / self.lo)
            x = self.lo * np.exp(ratio * s)
            return x, x * ratio
        if self.kind == "inv":
            x = self.lo / (1.0 - s)
            return x, self.lo / (1.0 - s) ** 2
        # inv0: lo == 0, hi == inf
        x = self.scale * s / (1.0 - s)
        return x, self.scale / (1.0 - s) ** 2


def _panel_values(f, ax: _Axis, ay: _Axis, panels, order):
    """Tensor Gauss-Legendre estimates of f over transformed panels.

    panels: (P, 4) array of (sx0, sx1, sy0, sy1); returns (P,) estimates.
    """
    nodes, weights = gauss_legendre_01(order)
    sx = panels[:, 0:1] + (panels[:, 1:2] - panels[:, 0:1]) * nodes  # (P, n)
    sy = panels[:, 2:3] + (panels[:, 3:4] - panels[:, 2:3]) * nodes
    x, jx = ax.map(sx)
    y, jy = ay.map(sy)
    vals = f(x[:, :, None], y[:, None, :])  # (P, n, n)
    wx = weights * (panels[:, 1:2] - panels[:, 0:1])
    wy = weights * (panels[:, 3:4] - panels[:, 2:3])
    integrand = vals * (jx * wx)[:, :, None] * (jy * wy)[:, None, :]
    return integrand.sum(axis=(1, 2))


def rect_quad(f, xlo, xhi, ylo, yhi, rel_tol=1e-6, abs_floor=1e-300, scale_hint=1.0):
    """Adaptive integral of f(x, y) over [xlo, xhi) x [ylo, yhi).

    f must broadcast over numpy arrays.  Sides may be unbounded above.
    Returns (value, error_estimate); raises QuadratureError when panel
    refinement stalls.
    """
    ax = _Axis(xlo, xhi, scale=scale_hint)
    ay = _Axis(ylo, yhi, scale=scale_hint if np.isfinite(xhi) else max(xlo, scale_hint))
    panels = np.array([[0.0, 1.0, 0.0, 1.0]])
    lo_est = _panel_values(f, ax, ay, panels, 8)
    hi_est = _panel_values(f, ax, ay, panels, 16)
    errs = np.abs(hi_est - lo_est)
    vals = hi_est
    prev_total = np.inf
    while True:
        total = float(vals.sum())
        err_total = float(errs.sum())
        target = max(rel_tol * abs(total), abs_floor)
        if err_total <= target:
            return total, err_total
        if len(panels) >= _MAX_PANELS:
            raise QuadratureError(
                "rectangle quadrature did not converge after %d panels" % len(panels),
                estimates=(prev_total, total),
            )
        prev_total = total
        # split the offending panels along their longer transformed side
        order = np.argsort(errs)[::-1]
        n_split = max(1, int(np.sum(errs[order] > 0.25 * target / max(len(panels), 1))))
        n_split = min(n_split, 64, len(panels))
        split_idx = order[:n_split]
        keep = np.ones(len(panels), dtype=bool)
        keep[split_idx] = False
        new_panels = []
        for i in split_idx:
            sx0, sx1, sy0, sy1 = panels[i]
            if sx1 - sx0 >= sy1 - sy0:
                mid = 0.5 * (sx0 + sx1)
                new_panels.append([sx0, mid, sy0, sy1])
                new_panels.append([mid, sx1, sy0, sy1])
            else:
                mid = 0.5 * (sy0 + sy1)
                new_panels.append([sx0, sx1, sy0, mid])
                new_panels.append([sx0, sx1, mid, sy1])
        new_panels = np.asarray(new_panels)
        lo_new = _panel_values(f, ax, ay, new_panels, 8)
        hi_new = _panel_values(f, ax, ay, new_panels, 16)
        panels = np.vstack([panels[keep], new_panels])
        vals = np.concatenate([vals[keep], hi_new])
        errs = np.concatenate([errs[keep], np.abs(hi_new - lo_new)])


def _interval_values(f, ax: _Axis, panels, order):
    nodes, weights = gauss_legendre_01(order)
    s = panels[:, 0:1] + (panels[:, 1:2] - panels[:, 0:1]) * nodes
    x, jx = ax.map(s)
    vals = f(x)
    w = weights * (panels[:, 1:2] - panels[:, 0:1])
    return (vals * jx * w).sum(axis=1)


def interval_quad(f, lo, hi, rel_tol=1e-9, abs_floor=1e-300, scale_hint=1.0):
    """Adaptive integral of f over [lo, hi), hi possibly infinite."""
    ax = _Axis(lo, hi, scale=scale_hint)
    panels = np.array([[0.0, 1.0]])
    lo_est = _interval_values(f, ax, panels, 8)
    hi_est = _interval_values(f, ax, panels, 16)
    errs = np.abs(hi_est - lo_est)
    vals = hi_est
    prev_total = np.inf
    while True:
        total = float(vals.sum())
        err_total = float(errs.sum())
        if err_total <= max(rel_tol * abs(total), abs_floor):
            return total, err_total
        if len(panels) >= _MAX_PANELS:
            raise QuadratureError(
                "interval quadrature did not converge after %d panels" % len(panels),
                estimates=(prev_total, total),
            )
        prev_total = total
        i = int(np.argmax(errs))
        s0, s1 = panels[i]
        mid = 0.5 * (s0 + s1)
        new_panels = np.array([[s0, mid], [mid, s1]])
        lo_new = _interval_values(f, ax, new_panels, 8)
        hi_new = _interval_values(f, ax, new_panels, 16)
        keep = np.ones(len(panels), dtype=bool)
        keep[i] = False
        panels = np.vstack([panels[keep], new_panels])
        vals = np.concatenate([vals[keep], hi_new])
        errs = np.concatenate([errs[keep], np.abs(hi_new - lo_new)])


def log_radial_nodes(r_lo, r_hi, n):
    """Gauss-Legendre nodes/weights for integrals dr over [r_lo, r_hi] in log scale.

    Returns (r, w) with sum(g(r) * w) ~= integral of g(r) dr.
    """
    s, ws = gauss_legendre_01(n)
    span = np.log(r_hi / r_lo)
    r = r_lo * np.exp(span * s)
    return r, r * span * ws


def sphere_angles(d: int, n: int):
    """Direction vectors and angular weights for the unit sphere in d=1, 2.

    d=1 returns the two signs with weight 1 each; d=2 returns n equispaced
    angles with the periodic trapezoid weight 2*pi/n.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    theta = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return dirs, np.full(n, 2.0 * np.pi / n)


def shell_quad(g, d, alpha, r_lo, r_hi, rel_tol=1e-8, abs_floor=1e-14,
               n_radial=64, n_angular=64, max_doublings=6):
    """Integral of g(h) / |h|^(d+alpha) over the shell r_lo < |h| <= r_hi.

    g maps (..., d) arrays to (...); r_hi may be inf (handled by an inverse
    transform on the radius).  Node counts double until the estimate is
    stable to rel_tol.  Returns (value, error_estimate).
    """
    if not r_lo > 0:
        raise ValueError("shell_quad needs r_lo > 0")

    def estimate(n_r, n_a):
        dirs, w_ang = sphere_angles(d, n_a)
        if np.isfinite(r_hi):
            r, w_r = log_radial_nodes(r_lo, r_hi, n_r)
        else:
            # split at a finite pivot, inverse transform beyond it
            pivot = max(2.0 * r_lo, 1.0)
            r1, w1 = log_radial_nodes(r_lo, pivot, n_r)
            s, ws = gauss_legendre_01(n_r)
            r2 = pivot / (1.0 - s)
            w2 = ws * pivot / (1.0 - s) ** 2
            r = np.concatenate([r1, r2])
            w_r = np.concatenate([w1, w2])
        h = r[:, None, None] * dirs[None, :, :]  # (nr, na, d)
        vals = g(h)
        radial_weight = w_r * r ** (d - 1 - d - alpha)
        return float(np.einsum("ra,r,a->", vals, radial_weight, w_ang))

    n_r, n_a = n_radial, (n_angular if d == 2 else 2)
    prev = estimate(n_r, n_a)
    for _ in range(max_doublings):
        n_r *= 2
        if d == 2:
            n_a *= 2
        cur = estimate(n_r, n_a)
        err = abs(cur - prev)
        if err <= max(rel_tol * abs(cur), abs_floor):
            return cur, err
        prev = cur
    raise QuadratureError(
        "shell quadrature did not converge (last two estimates kept)",
        estimates=(prev, cur),
    )
