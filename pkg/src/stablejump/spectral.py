"""Fourier-side tables for frozen kernels: symbols, densities, resolvents.

The frozen-kernel generator is a Fourier multiplier; its symbol is computed
by log-radial quadrature of [e^(iu.h) - 1 - iu.h 1_{|h|<=1}] against
A(z, h)/|h|^(d+alpha) (gradient term dropped for alpha < 1).  The real part
uses the cancellation-free form -2 sin^2(u.h/2).  An optional inner cutoff
evaluates the symbol of the jump-truncated scheme instead, which is the
exact law of simulated paths for state-independent kernels.

Transition densities come from discrete Fourier inversion of e^(t symbol),
resolvent transforms from 1/(lambda - symbol); both live on uniform grids
with the dual spatial grid spacing 2 pi / (N du).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._quad import gauss_legendre_01
from .errors import DomainError, GridTooSmallError
from .kernel import KernelSpec

_SYMBOL_TOL = 1e-9


def _log_nodes(lo, hi, n):
    s, w = gauss_legendre_01(n)
    span = np.log(hi / lo)
    r = lo * np.exp(span * s)
    return r, r * w * span


def _sin_minus_x(x):
    """sin(x) - x without cancellation for small arguments."""
    small = np.abs(x) < 1e-4
    series = -(x ** 3) / 6.0 * (1.0 - x * x / 20.0)
    return np.where(small, series, np.sin(x) - x)


def _const_tail_value(spec, z, side, radius):
    """Kernel value beyond `radius` when constant there, else None."""
    z_arr = np.asarray(z, dtype=float).reshape(spec.d)
    r_probe = radius * np.array([1.0, 2.5, 7.0, 20.0])
    if spec.d == 1:
        h = (side * r_probe)[:, None]
    else:
        h = np.stack([side * r_probe, 0.3 * r_probe], axis=1)
    vals = np.asarray(spec.A(z_arr, h))
    if np.max(np.abs(vals - vals[0])) < 1e-12 * max(1.0, abs(vals[0])):
        return float(vals[0])
    return None


_TAIL_TERMS = 6


def _tail_factorials(alpha, k_max=_TAIL_TERMS):
    # P_k = (1+alpha)(2+alpha)...(k+alpha), P_0 = 1
    out = [1.0]
    for k in range(1, k_max + 1):
        out.append(out[-1] * (k + alpha))
    return out


def _oscillatory_tail_1d(gamma, R, alpha, a_const):
    """int_R^inf e^(i gamma r) a r^-(1+alpha) dr by repeated parts.

    K-term asymptotic series with certified remainder a P_(K-1) R^-(alpha+K)
    / |gamma|^K; derivatives of r^-(1+alpha) alternate in sign.
    """
    P = _tail_factorials(alpha)
    ig = 1j * gamma
    val = np.zeros(np.shape(gamma), dtype=complex)
    for k in range(_TAIL_TERMS):
        g_k = a_const * (-1.0) ** k * P[k] * R ** (-1.0 - alpha - k)
        val += (-1.0) ** (k + 1) * g_k / ig ** (k + 1)
    val = np.exp(ig * R) * val
    rem = (abs(a_const) * P[_TAIL_TERMS - 1] * R ** (-alpha - _TAIL_TERMS)
           / np.abs(gamma) ** _TAIL_TERMS)
    return val, rem


def _symbol_estimate_1d(spec, z, u, r_lo, n_inner, n_mid, compensate, tol):
    """One estimate of the symbol at positive frequencies u (shape (m,)).

    Inner (r_lo, 1]: log panels, compensated when alpha >= 1.  Mid (1, R]:
    log panels with R set so the tail is certified below tol.  Tail: 3-term
    integration by parts when the kernel is constant out there (exact tails
    for the shipped families), otherwise a widened R with a sup bound.
    Entries of u must be positive and within a factor ~4 of each other so a
    shared R resolves every row.
    """
    alpha = spec.alpha
    z_arr = np.asarray(z, dtype=float).reshape(1)
    u = np.asarray(u, dtype=float)
    u_min = float(np.min(u))
    val = np.zeros(len(u), dtype=complex)
    rem = 0.0
    for side in (1.0, -1.0):
        a_tail = _const_tail_value(spec, z, side, 1.0)
        if a_tail is not None:
            P_last = _tail_factorials(alpha)[_TAIL_TERMS - 1]
            R = (8.0 * abs(a_tail) * P_last
                 / (tol * u_min ** _TAIL_TERMS)) ** (1.0 / (_TAIL_TERMS + alpha))
            R = max(2.0, R, 8.0 / u_min)
        else:
            R = min(max(2.0, (8.0 * spec.c_upper / (alpha * tol)) ** (1.0 / alpha)), 1e10)

        if r_lo < 1.0:
            r, w = _log_nodes(r_lo, 1.0, n_inner)
            kern = np.asarray(spec.A(z_arr, (side * r)[:, None]))
            weight = kern * r ** (-1.0 - alpha) * w
            phase = np.outer(u, side * r)
            re = -2.0 * (np.sin(0.5 * phase) ** 2 * weight).sum(axis=1)
            if compensate:
                im = (_sin_minus_x(phase) * weight).sum(axis=1)
            else:
                im = (np.sin(phase) * weight).sum(axis=1)
            val += re + 1j * im
        mid_lo = max(1.0, r_lo)
        if R > mid_lo:
            r, w = _log_nodes(mid_lo, R, n_mid)
            kern = np.asarray(spec.A(z_arr, (side * r)[:, None]))
            weight = kern * r ** (-1.0 - alpha) * w
            phase = np.outer(u, side * r)
            val += ((np.exp(1j * phase) - 1.0) * weight).sum(axis=1)
        if a_tail is not None:
            tail_val, tail_rem = _oscillatory_tail_1d(u * side, R, alpha, a_tail)
            val += tail_val - a_tail * R ** (-alpha) / alpha
            rem += float(np.max(tail_rem))
        else:
            rem += 2.0 * spec.c_upper * R ** (-alpha) / alpha
    return val, rem


def _symbol_estimate_2d(spec, z, u, r_lo, r_split, r_hi, n_r, n_a, compensate):
    alpha = spec.alpha
    z_arr = np.asarray(z, dtype=float).reshape(2)
    theta = 2.0 * np.pi * (np.arange(n_a) + 0.5) / n_a
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    w_ang = 2.0 * np.pi / n_a
    re = np.zeros(len(u))
    im = np.zeros(len(u))
    for lo, hi in ((r_lo, r_split), (r_split, r_hi)):
        if hi <= lo:
            continue
        r, w = _log_nodes(lo, hi, n_r)
        h = r[:, None, None] * dirs[None, :, :]          # (nr, na, 2)
        kern = np.asarray(spec.A(z_arr, h))              # (nr, na)
        weight = (r ** (-1.0 - alpha) * w)[:, None] * w_ang * kern
        phase = np.tensordot(u, h, axes=([-1], [2]))     # (m, nr, na)
        re += -2.0 * np.einsum("mra,ra->m", np.sin(0.5 * phase) ** 2, weight)
        sin_part = np.sin(phase)
        if compensate:
            sin_part = sin_part - np.where(r[None, :, None] <= 1.0, phase, 0.0)
        im += np.einsum("mra,ra->m", sin_part, weight)
    return re, im


def _symbol_1d(spec, z, pts, tol, inner_cutoff):
    """Symbol on a flat array of d=1 frequencies, via magnitude bands.

    Negative frequencies come from Hermitian symmetry; positive ones are
    grouped into bands within a factor of 4 so each band shares an outer
    radius and node budget.
    """
    alpha, c, s_d = spec.alpha, spec.c_upper, spec.sphere_surface
    compensate = alpha >= 1.0
    mags = np.abs(pts)
    out = np.zeros(len(pts), dtype=complex)
    nonzero = mags > 0.0
    if not np.any(nonzero):
        return out
    log_band = np.floor(np.log2(np.maximum(mags, 1e-12))).astype(int) // 2
    for band in np.unique(log_band[nonzero]):
        sel = nonzero & (log_band == band)
        u_band = mags[sel]
        u_top = float(np.max(u_band))
        if inner_cutoff > 0.0:
            r_lo = inner_cutoff
        else:
            r_lo = (tol * (2.0 - alpha)
                    / (2.0 * c * s_d * u_top ** 2)) ** (1.0 / (2.0 - alpha))
            r_lo = min(r_lo, 0.5)
        u_min_band = float(np.min(u_band))
        P_last = _tail_factorials(alpha)[_TAIL_TERMS - 1]
        R_est = max(2.0, 8.0 / u_min_band,
                    (8.0 * c * P_last
                     / (tol * u_min_band ** _TAIL_TERMS)) ** (1.0 / (_TAIL_TERMS + alpha)))
        cycles = u_top * R_est / (2.0 * np.pi)
        n_inner = max(128, min(int(4.0 * u_top), 2048))
        n_mid = int(np.clip(4.0 * cycles + 64, 96, 32768))
        prev = None
        for _ in range(5):
            cur, rem = _symbol_estimate_1d(spec, z, u_band, r_lo, n_inner,
                                           n_mid, compensate, tol)
            if prev is not None and np.max(np.abs(cur - prev)) <= max(tol, _SYMBOL_TOL):
                break
            prev = cur
            n_inner *= 2
            n_mid *= 2
        # inner truncation remainder (uncut symbols only)
        if inner_cutoff == 0.0:
            rem += c * s_d * u_top ** 2 * r_lo ** (2.0 - alpha) / (2.0 * (2.0 - alpha))
        out[sel] = cur
    out[~nonzero] = 0.0
    # evaluated at |u|; mirror to negative frequencies
    neg = pts < 0.0
    out[neg] = np.conj(out[neg])
    return out


def symbol(spec: KernelSpec, z, u, tol: float = 1e-8, inner_cutoff: float = 0.0):
    """Frozen-kernel symbol at frequencies u; complex scalar or array.

    With inner_cutoff > 0 the jump integral starts there (the truncated
    scheme's symbol); the compensation indicator is unchanged.  Truncation
    remainders at the inner radius and far tail are held below tol.
    """
    u_arr = np.asarray(u, dtype=float)
    if spec.d == 1:
        scalar = u_arr.ndim == 0
        pts = np.atleast_1d(u_arr).reshape(-1)
        out = _symbol_1d(spec, z, pts, tol, inner_cutoff)
        return complex(out[0]) if scalar else out

    scalar = u_arr.ndim == 1
    pts = u_arr.reshape(-1, 2)
    u_norm = np.linalg.norm(pts, axis=1)
    u_max = max(float(np.max(u_norm)), 1e-6)
    alpha, c, s_d = spec.alpha, spec.c_upper, spec.sphere_surface
    if inner_cutoff > 0.0:
        r_lo = inner_cutoff
    else:
        r_lo = (tol * (2.0 - alpha) / (2.0 * c * s_d * u_max ** 2)) ** (1.0 / (2.0 - alpha))
        r_lo = min(r_lo, 0.5)
    r_hi = min(max(2.0, (8.0 * c * s_d / (alpha * tol)) ** (1.0 / alpha)), 1e10)
    r_split = min(max(1.0, 2.0 * r_lo), r_hi)
    compensate = alpha >= 1.0
    n = max(96, min(int(16.0 * u_max), 4096))
    out = np.empty(len(pts), dtype=complex)
    chunk = max(1, 3_000_000 // max(n * 64, 1))
    for k0 in range(0, len(pts), chunk):
        sel = slice(k0, min(k0 + chunk, len(pts)))
        block = np.atleast_2d(pts[sel])
        prev = None
        n_r, n_a = n, 64
        for _ in range(4):
            re, im = _symbol_estimate_2d(spec, z, block, r_lo, r_split, r_hi,
                                         n_r, n_a, compensate)
            cur = re + 1j * im
            if prev is not None and np.max(np.abs(cur - prev)) <= max(tol, _SYMBOL_TOL):
                break
            prev = cur
            n_r *= 2
            n_a *= 2
        out[sel] = cur
    out[u_norm == 0.0] = 0.0
    return out[0] if scalar and len(pts) == 1 else out


@dataclass
class SpectralGrid:
    """Uniform frequency grid carrying symbol values for one frozen point.

    d=1: u_axis has N nodes (k - N/2) du; values has shape (N,).
    d=2: tensor grid of the same axis per dimension; values (N, N) with
    values[j, k] at (u_axis[j], u_axis[k]).
    """

    d: int
    alpha: float
    z: np.ndarray
    u_axis: np.ndarray
    values: np.ndarray
    kernel_family: str
    inner_cutoff: float = 0.0
    symbol_tol: float = 1e-8
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.u_axis)

    @property
    def du(self) -> float:
        return float(self.u_axis[1] - self.u_axis[0])

    @property
    def U_max(self) -> float:
        return float(-self.u_axis[0])

    @property
    def x_axis(self) -> np.ndarray:
        dx = 2.0 * np.pi / (self.N * self.du)
        return (np.arange(self.N) - self.N // 2) * dx

    def nodes(self) -> np.ndarray:
        if self.d == 1:
            return self.u_axis
        g1, g2 = np.meshgrid(self.u_axis, self.u_axis, indexing="ij")
        return np.stack([g1.ravel(), g2.ravel()], axis=1)


def build_grid(spec: KernelSpec, z, N: Optional[int] = None, U_max: Optional[float] = None,
               t_decay: float = 1.0, tol: float = 1e-8,
               inner_cutoff: float = 0.0) -> SpectralGrid:
    """Populate a symbol grid; U_max, when absent, is grown until
    |e^(t_decay * symbol)| < 1e-12 at the boundary."""
    if N is None:
        N = 1024 if spec.d == 1 else 256
    if U_max is None:
        U_max = 32.0
        for _ in range(12):
            edge = symbol(spec, z, np.array([U_max]) if spec.d == 1
                          else np.array([[U_max, 0.0]]), tol=tol,
                          inner_cutoff=inner_cutoff)
            if math.exp(t_decay * float(np.real(edge[0]))) < 1e-12:
                break
            U_max *= 2.0
    u_axis = (np.arange(N) - N // 2) * (2.0 * U_max / N)
    if spec.d == 1:
        values = symbol(spec, z, u_axis, tol=tol, inner_cutoff=inner_cutoff)
    else:
        g1, g2 = np.meshgrid(u_axis, u_axis, indexing="ij")
        pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
        # Hermitian symmetry: compute the half grid, mirror the rest
        values = symbol(spec, z, pts, tol=tol, inner_cutoff=inner_cutoff).reshape(N, N)
    return SpectralGrid(d=spec.d, alpha=spec.alpha, z=np.atleast_1d(np.asarray(z, float)),
                        u_axis=u_axis, values=values, kernel_family=spec.family,
                        inner_cutoff=inner_cutoff, symbol_tol=tol)


@dataclass
class SymbolBoundReport:
    c_fit: float
    max_re: float
    re_nonpositive: bool
    hermitian_gap: float

    @property
    def ok(self) -> bool:
        return self.re_nonpositive and self.c_fit > 0.0

    def to_dict(self):
        return {"c_fit": self.c_fit, "max_re": self.max_re,
                "re_nonpositive": self.re_nonpositive,
                "hermitian_gap": self.hermitian_gap, "ok": self.ok}


def check_symbol_bounds(grid: SpectralGrid, slack: float = 1e-9) -> SymbolBoundReport:
    """Nonpositivity of the real part and the power-law envelope beyond |u|=1.

    Fits the largest c with Re symbol(u) <= -c |u|^alpha over nodes |u| > 1.
    """
    vals = grid.values.ravel()
    nodes = grid.nodes()
    u_norm = np.abs(nodes) if grid.d == 1 else np.linalg.norm(nodes, axis=1)
    re = np.real(vals)
    max_re = float(np.max(re))
    outside = u_norm > 1.0
    c_fit = float(np.min(-re[outside] / u_norm[outside] ** grid.alpha)) if np.any(outside) else np.nan
    # Hermitian symmetry: symbol(-u) = conj(symbol(u)); the axis is symmetric
    # except the most-negative frequency, which has no mirror node
    if grid.d == 1:
        gap = float(np.max(np.abs(vals[1:] - np.conj(vals[1:][::-1]))))
    else:
        v = grid.values
        gap = float(np.max(np.abs(v[1:, 1:] - np.conj(v[1:, 1:][::-1, ::-1]))))
    return SymbolBoundReport(c_fit=c_fit, max_re=max_re,
                             re_nonpositive=max_re <= slack,
                             hermitian_gap=gap)


@dataclass
class DensityTable:
    """Transition density on the dual spatial grid."""

    t: float
    x_axis: np.ndarray
    values: np.ndarray
    dx: float

    def mass(self) -> float:
        return float(self.values.sum() * self.dx ** (1 if self.values.ndim == 1 else 2))

    def cdf(self) -> np.ndarray:
        """d=1 cumulative distribution at the grid nodes (right edges)."""
        if self.values.ndim != 1:
            raise DomainError("cdf is d=1 only")
        return np.cumsum(self.values) * self.dx


def density(grid: SpectralGrid, t: float) -> DensityTable:
    """Invert e^(t symbol) on the dual spatial grid.

    Requires enough decay at the grid boundary; otherwise raises with a
    suggested half-width.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    phat = np.exp(t * grid.values)
    if grid.d == 1:
        edge = max(abs(phat[0]), abs(phat[-1]))
    else:
        edge = max(np.max(np.abs(phat[0, :])), np.max(np.abs(phat[:, 0])),
                   np.max(np.abs(phat[-1, :])), np.max(np.abs(phat[:, -1])))
    if edge >= 1e-12:
        c_fit = check_symbol_bounds(grid).c_fit
        needed = (math.log(1e12) / (t * max(c_fit, 1e-12))) ** (1.0 / grid.alpha)
        raise GridTooSmallError(
            "symbol grid too narrow for t=%.3g (boundary mass %.2e)" % (t, edge),
            suggested_u_max=1.25 * needed,
        )
    x = grid.x_axis
    du = grid.du
    if grid.d == 1:
        phase = np.exp(-1j * np.outer(x, grid.u_axis))
        vals = np.real(phase @ phat) * du / (2.0 * np.pi)
        return DensityTable(t=t, x_axis=x, values=vals, dx=float(x[1] - x[0]))
    # d=2: separable phase factors via FFT with explicit shift bookkeeping
    N = grid.N
    k = np.arange(N)
    # p(x_j) = (du/2pi)^2 sum_k e^{-i u_k . x_j} phat_k with u and x both
    # centered; conjugate-shift so the sum becomes a plain DFT
    shift = np.exp(1j * np.pi * (k - N // 2))
    inner = np.fft.fft2(phat * np.outer(shift, shift))
    vals = np.real(np.outer(shift, shift) * inner) * (du / (2.0 * np.pi)) ** 2
    return DensityTable(t=t, x_axis=x, values=vals, dx=float(x[1] - x[0]))


def density_l2_matches_plancherel(grid: SpectralGrid, t: float, rel_tol: float = 1e-6):
    """L2 norm of the density against the Plancherel value of e^(t symbol)."""
    table = density(grid, t)
    dxd = table.dx ** grid.d
    dud = grid.du ** grid.d
    spatial = float(np.sum(table.values ** 2) * dxd)
    fourier = float(np.sum(np.abs(np.exp(t * grid.values)) ** 2) * dud
                    / (2.0 * np.pi) ** grid.d)
    return spatial, fourier, abs(spatial - fourier) <= rel_tol * fourier + 1e-12


def resolvent_hat(grid: SpectralGrid, lam: float) -> np.ndarray:
    """Fourier transform of the resolvent kernel: 1/(lam - symbol)."""
    if lam <= 0:
        raise DomainError("lambda must be positive")
    return 1.0 / (lam - grid.values)


@dataclass
class ResolventBoundReport:
    lam: float
    max_global: float
    max_enveloped: float
    ok: bool

    def to_dict(self):
        return {"lambda": self.lam, "max_global": self.max_global,
                "max_enveloped": self.max_enveloped, "ok": self.ok}


def check_resolvent_bound(grid: SpectralGrid, lam: float,
                          c_fit: Optional[float] = None,
                          slack: float = 1e-6) -> ResolventBoundReport:
    """|r_hat| <= 1/lam everywhere and <= (1+slack)/(lam + c |u|^alpha) outside
    the unit ball, with c the fitted envelope constant."""
    if c_fit is None:
        c_fit = check_symbol_bounds(grid).c_fit
    r_hat = resolvent_hat(grid, lam).ravel()
    nodes = grid.nodes()
    u_norm = np.abs(nodes) if grid.d == 1 else np.linalg.norm(nodes, axis=1)
    max_global = float(np.max(np.abs(r_hat) * lam))
    outside = u_norm > 1.0
    env = (lam + c_fit * u_norm[outside] ** grid.alpha)
    max_env = float(np.max(np.abs(r_hat[outside]) * env))
    ok = max_global <= 1.0 + slack and max_env <= 1.0 + slack
    return ResolventBoundReport(lam=lam, max_global=max_global,
                                max_enveloped=max_env, ok=ok)


@dataclass
class DifferenceBoundReport:
    h: float
    lam: float
    ratio_shift: float          # ||g||_2 / ||f||_2
    ratio_compensated: float    # ||G||_2 / (|h|^alpha ||f||_2)
    ratio_resolvent: float      # lam ||R f||_2 / ||f||_2

    def to_dict(self):
        return {"h": self.h, "lambda": self.lam, "ratio_shift": self.ratio_shift,
                "ratio_compensated": self.ratio_compensated,
                "ratio_resolvent": self.ratio_resolvent}


def difference_bounds(grid: SpectralGrid, f_hat: np.ndarray, lam: float,
                      h) -> DifferenceBoundReport:
    """On-grid L2 ratios of resolvent shift differences via multipliers.

    g_hat = f_hat r_hat (e^(iu.h) - 1); G_hat subtracts the gradient term.
    """
    h_vec = np.atleast_1d(np.asarray(h, dtype=float))
    nodes = grid.nodes()
    if grid.d == 1:
        dot = nodes * h_vec[0]
        h_norm = abs(float(h_vec[0]))
    else:
        dot = nodes @ h_vec
        h_norm = float(np.linalg.norm(h_vec))
    f_flat = np.asarray(f_hat).ravel()
    r_hat = resolvent_hat(grid, lam).ravel()
    shift = np.exp(1j * dot) - 1.0
    g_hat = f_flat * r_hat * shift
    G_hat = f_flat * r_hat * (shift - 1j * dot)
    norm = lambda v: math.sqrt(float(np.sum(np.abs(v) ** 2)))
    nf = max(norm(f_flat), 1e-300)
    ratio_shift = norm(g_hat) / nf
    ratio_comp = (norm(G_hat) / (h_norm ** grid.alpha * nf)) if h_norm > 0 else 0.0
    ratio_res = lam * norm(f_flat * r_hat) / nf
    return DifferenceBoundReport(h=h_norm, lam=lam, ratio_shift=ratio_shift,
                                 ratio_compensated=ratio_comp,
                                 ratio_resolvent=ratio_res)


def fourier_point_value(grid: SpectralGrid, f_hat: np.ndarray, x0) -> float:
    """Inverse transform of on-grid values at one spatial point.

    Pass resolvent_hat(grid, lam) * g_hat to evaluate (R_lam g)(x0).
    """
    nodes = grid.nodes()
    x0_vec = np.atleast_1d(np.asarray(x0, dtype=float))
    dot = nodes * x0_vec[0] if grid.d == 1 else nodes @ x0_vec
    integrand = np.asarray(f_hat).ravel() * np.exp(-1j * dot)
    return float(np.real(integrand.sum()) * grid.du ** grid.d / (2.0 * np.pi) ** grid.d)


def gaussian_fourier(center: float, width: float, u_axis: np.ndarray) -> np.ndarray:
    """Transform of exp(-(y-c)^2 / (2 w^2)) under the e^{+iux} convention."""
    return (math.sqrt(2.0 * np.pi) * width
            * np.exp(1j * u_axis * center - 0.5 * (width * u_axis) ** 2))
