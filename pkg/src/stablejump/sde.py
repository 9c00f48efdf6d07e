"""Delayed-Euler simulation of the jump process driven by one event stream.

The scheme freezes the transport base point one grid step back: on
[k/n, (k+1)/n) jumps apply F(Y, z) with Y the state at (k-1)/n, plus the
compensating drift for image jumps of size <= 1 when alpha >= 1.  Marks
below the cutoff delta are never simulated; their contribution is budgeted
by small_jump_budget.

Two equivalent engines exist: a scalar per-path reference (any dimension
and kernel) and a vectorized lockstep batch (d=1, drift-free kernels) used
for large ensembles; a test pins them to each other on shared streams.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._quad import gauss_legendre_01
from .errors import DomainError, MarkRangeError
from .kernel import KernelSpec
from .pointprocess import EventStream, sample_stream
from .transport import TransportMap1D, build as build_transport

GRID_KEY_DECIMALS = 12


@dataclass(frozen=True)
class SimConfig:
    """Parameters of one delayed-Euler run."""

    x0: tuple
    T: float
    n: int
    delta: float
    drift_substep: Optional[float] = None
    scheme: str = "delayed_euler"

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be >= 1")
        if self.T <= 0:
            raise DomainError("T must be positive")
        if self.delta <= 0:
            raise DomainError("delta must be positive")
        if self.scheme not in ("delayed_euler", "adaptive"):
            raise DomainError("unknown scheme %r" % self.scheme)
        if self.drift_substep is not None and self.drift_substep > 1.0 / self.n:
            raise DomainError("drift_substep must not exceed the grid step")

    @property
    def x0_arr(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.x0, dtype=float))


@dataclass
class PathSkeleton:
    """Piecewise representation of one simulated path.

    states[i] is the right-continuous state at times[i]; between breakpoints
    the state moves by the segment drift only (constant when the drift is
    zero).  bases[i] is the frozen transport base point on
    [times[i], times[i+1]).  Jump rows carry the driving mark and the
    applied displacement.
    """

    times: np.ndarray
    states: np.ndarray
    bases: np.ndarray
    is_jump: np.ndarray
    jump_marks: np.ndarray
    jump_displacements: np.ndarray
    drift: np.ndarray
    ambiguous_jumps: int = 0

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def state_at(self, t: float) -> np.ndarray:
        """Right-continuous state at time t (drift interpolated in-segment)."""
        idx = int(np.searchsorted(self.times, t, side="right") - 1)
        idx = max(idx, 0)
        dt = t - self.times[idx]
        return self.states[idx] + self.drift[idx] * dt


class MapProvider:
    """Per-base-point transport maps with an LRU budget.

    Constant kernels collapse to a single shared map (state-independent).
    Simulation maps are built lazily (cells materialize on demand), so prefer
    one provider per worker.
    """

    def __init__(self, spec: KernelSpec, u_min: float, u_max: float = 64.0,
                 m_max: int = 4, tol: float = 1e-6, cache_size: int = 4096):
        self.spec = spec
        self.u_min = u_min
        self.u_max = u_max
        self.m_max = m_max
        self.tol = tol
        self.cache_size = cache_size
        self._cache = OrderedDict()
        self.builds = 0

    def get(self, y):
        y_arr = np.atleast_1d(np.asarray(y, dtype=float))
        if self.spec.family == "constant":
            key = "constant"
        else:
            key = tuple(np.round(y_arr, GRID_KEY_DECIMALS))
        tmap = self._cache.get(key)
        if tmap is None:
            if self.spec.d == 1:
                tmap = TransportMap1D(self.spec, y_arr, u_min=self.u_min,
                                      u_max=self.u_max, quad_tol=self.tol)
            else:
                from .transport import TransportMap2D

                tmap = TransportMap2D(self.spec, y_arr, m_max=self.m_max,
                                      u_min=self.u_min, u_max=self.u_max,
                                      quad_tol=self.tol, beta_sample=64,
                                      eager=False)
            self.builds += 1
            self._cache[key] = tmap
            if len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return tmap


def compensator_drift(tmap, delta: float) -> np.ndarray:
    """Drift compensating simulated image jumps of size <= 1 (alpha >= 1).

    Returns -integral of F(y, z) over {|z| > delta, |F(y, z)| <= 1} against
    the reference measure.  Identically zero for alpha < 1 (uncompensated
    operator) and for kernels declaring h <-> -h symmetry (odd integrand).
    """
    spec = tmap.spec
    d = spec.d
    if spec.alpha < 1.0 or spec.symmetric:
        return np.zeros(d)
    if d == 1:
        total = 0.0
        s, w01 = gauss_legendre_01(128)
        for side in (1.0, -1.0):
            # image magnitude grows with |z|; the compensated mark range is
            # (delta, |G(side)|] when F(side * delta) stays below 1
            if abs(tmap.F_eval(side * delta)) >= 1.0:
                continue
            z_top = abs(tmap.G_eval(side * 1.0))
            if z_top <= delta:
                continue
            span = math.log(z_top / delta)
            z = delta * np.exp(span * s)
            f_vals = tmap.F_eval(side * z)
            total += float(np.sum(f_vals * z ** (-1.0 - spec.alpha) * z * w01) * span)
        return np.array([-total])
    # d=2: polar quadrature over the mark annulus with the image-size gate
    n_r, n_a = 96, 64
    s, w01 = gauss_legendre_01(n_r)
    z_top = 1.0 / tmap.beta if tmap.beta and tmap.beta > 0 else 1.0 / max(tmap.u_min, 1e-6)
    span = math.log(max(z_top / delta, 1.001))
    radii = delta * np.exp(span * s)
    theta = 2.0 * np.pi * (np.arange(n_a) + 0.5) / n_a
    total = np.zeros(2)
    for k, r in enumerate(radii):
        for t in theta:
            z = r * np.array([math.cos(t), math.sin(t)])
            if abs(z[0]) < 1e-12 or abs(z[1]) < 1e-12:
                continue
            w = tmap.F_eval(z)
            if np.linalg.norm(w) <= 1.0:
                total += w * r ** (-1.0 - spec.alpha) * r * w01[k] * span * (2 * np.pi / n_a)
    return -total


def small_jump_budget(spec: KernelSpec, tmap, delta: float) -> float:
    """Truncation-error budget of the omitted sub-cutoff marks.

    alpha >= 1: bound on the second moment of omitted compensated image
    jumps per unit time, beta^-2 s_d delta^(2-alpha)/(2-alpha); alpha < 1:
    the first-moment bound beta^-1 s_d delta^(1-alpha)/(1-alpha).
    """
    beta = tmap.beta if tmap is not None else min(
        spec.c_lower ** (1.0 / spec.alpha), spec.c_upper ** (-1.0 / spec.alpha))
    s_d = spec.sphere_surface
    if spec.alpha >= 1.0:
        return beta ** -2 * s_d * delta ** (2.0 - spec.alpha) / (2.0 - spec.alpha)
    return beta ** -1 * s_d * delta ** (1.0 - spec.alpha) / (1.0 - spec.alpha)


def simulate_Xn(provider: MapProvider, spec: KernelSpec, cfg: SimConfig,
                stream: EventStream) -> PathSkeleton:
    """Scalar delayed-Euler reference engine (any d, any kernel)."""
    if stream.T < cfg.T:
        raise DomainError("stream horizon shorter than simulation horizon")
    d = spec.d
    x0 = cfg.x0_arr
    if len(x0) != d:
        raise DomainError("x0 dimension mismatch")
    n = cfg.n
    n_grid = int(math.ceil(cfg.T * n))
    grid_times = np.arange(1, n_grid + 1) / n
    grid_times = grid_times[grid_times <= cfg.T + 1e-15]
    ev_sel = stream.times <= cfg.T
    ev_times = stream.times[ev_sel]
    ev_marks = stream.marks[ev_sel]

    compensated = spec.alpha >= 1.0
    drift_cache = {}

    def drift_at(y):
        if not compensated:
            return np.zeros(d)
        key = tuple(np.round(np.atleast_1d(y), GRID_KEY_DECIMALS))
        if key not in drift_cache:
            drift_cache[key] = compensator_drift(provider.get(y), cfg.delta)
        return drift_cache[key]

    times = [0.0]
    states = [x0.copy()]
    bases = [x0.copy()]
    is_jump = [False]
    drifts = []
    jump_marks, jump_disp = [], []
    ambiguous = 0

    grid_states = {0: x0.copy()}   # state at k/n for the delay lookup
    x = x0.copy()
    y = x0.copy()                   # frozen base on the current interval
    cur_drift = drift_at(y)
    drifts.append(cur_drift.copy())

    merged = sorted(
        [(t, "grid", k + 1) for k, t in enumerate(grid_times)]
        + [(t, "event", j) for j, t in enumerate(ev_times)]
    )
    last_t = 0.0
    for t, kind, idx in merged:
        x = x + cur_drift * (t - last_t)
        last_t = t
        if kind == "grid":
            grid_states[idx] = x.copy()
            # on [k/n, (k+1)/n) the base is the state at (k-1)/n
            y = grid_states.get(idx - 1, x0).copy()
            cur_drift = drift_at(y)
            times.append(t)
            states.append(x.copy())
            bases.append(y.copy())
            is_jump.append(False)
            drifts.append(cur_drift.copy())
        else:
            z = ev_marks[idx]
            tmap = provider.get(y)
            w = tmap.F_eval(z if d > 1 else float(z[0]))
            w_arr = np.atleast_1d(np.asarray(w, dtype=float))
            diam = tmap.resolution.get("max_cell_diameter", 0.0) if tmap.resolution else 0.0
            if diam and abs(np.linalg.norm(w_arr) - 1.0) <= diam:
                ambiguous += 1
            x = x + w_arr
            times.append(t)
            states.append(x.copy())
            bases.append(y.copy())
            is_jump.append(True)
            drifts.append(cur_drift.copy())
            jump_marks.append(np.atleast_1d(z).copy())
            jump_disp.append(w_arr.copy())

    return PathSkeleton(
        times=np.asarray(times),
        states=np.asarray(states),
        bases=np.asarray(bases),
        is_jump=np.asarray(is_jump, dtype=bool),
        jump_marks=(np.asarray(jump_marks).reshape(-1, d)),
        jump_displacements=(np.asarray(jump_disp).reshape(-1, d)),
        drift=np.asarray(drifts),
        ambiguous_jumps=ambiguous,
    )


def couple(provider: MapProvider, spec: KernelSpec, cfg: SimConfig,
           stream: EventStream, n_list) -> list:
    """Run the scheme at several delay resolutions on the same stream."""
    if list(n_list) != sorted(n_list):
        raise DomainError("n_list must be increasing")
    out = []
    for n in n_list:
        cfg_n = SimConfig(x0=cfg.x0, T=cfg.T, n=int(n), delta=cfg.delta,
                          drift_substep=cfg.drift_substep, scheme=cfg.scheme)
        out.append(simulate_Xn(provider, spec, cfg_n, stream))
    return out


def sup_distance(a: PathSkeleton, b: PathSkeleton) -> float:
    """Pathwise sup distance over the union of breakpoints."""
    grid = np.union1d(a.times, b.times)
    gap = 0.0
    for t in grid:
        gap = max(gap, float(np.linalg.norm(a.state_at(t) - b.state_at(t))))
    return gap


# ---------------------------------------------------------------------------
# vectorized lockstep batch (d=1, drift-free kernels)


@dataclass
class BatchPaths:
    """Flat ensemble of skeletons: rows sorted by (path, time).

    path_ptr[p]:path_ptr[p+1] slices path p's breakpoint rows.  Segment i
    spans [times[i], times[i+1]) with frozen base bases[i]; states are
    right-continuous.  Jump rows carry the driving mark in marks.
    """

    n_paths: int
    d: int
    path_ptr: np.ndarray
    times: np.ndarray
    states: np.ndarray
    bases: np.ndarray
    is_jump: np.ndarray
    marks: np.ndarray
    displacements: np.ndarray
    config: SimConfig = None
    master_seed: int = 0
    stream_offset: int = 0

    def path(self, p: int) -> PathSkeleton:
        sl = slice(self.path_ptr[p], self.path_ptr[p + 1])
        jm = self.marks[sl][self.is_jump[sl]]
        jd = self.displacements[sl][self.is_jump[sl]]
        return PathSkeleton(
            times=self.times[sl], states=self.states[sl][:, None],
            bases=self.bases[sl][:, None],
            is_jump=self.is_jump[sl],
            jump_marks=jm.reshape(-1, 1), jump_displacements=jd.reshape(-1, 1),
            drift=np.zeros((sl.stop - sl.start, 1)),
        )


def _vector_F(spec: KernelSpec, y: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorized d=1 transport image for rows of (base, mark)."""
    alpha = spec.alpha
    if spec.family == "constant":
        return spec.params["a"] ** (1.0 / alpha) * z
    if spec.family == "separable":
        out = np.empty_like(z)
        # group rows by base value bucketing is unnecessary: the tail tables
        # are global, so a row-wise Newton runs fully vectorized
        from .transport import _log_weight_tail

        table = _log_weight_tail(alpha, spec.eta)
        amp_sin = spec.params["amplitude"] * np.sin(y)
        mag = np.abs(z)
        w_target = mag ** -alpha / alpha

        def tail(habs):
            base = habs ** -alpha / alpha
            small = habs < 1.0
            q = np.where(small, 0.0, base)
            if np.any(small):
                hs = np.where(small, habs, 1.0)
                q = np.where(small, 1.0 / alpha + table(np.log(1.0 / hs)), q)
            return base + amp_sin * q

        h = (spec.c_upper / (alpha * w_target)) ** (1.0 / alpha)
        for _ in range(100):
            ratio = tail(h) / w_target
            if np.all(np.abs(ratio - 1.0) < 1e-13):
                break
            h = h * np.clip(ratio, 0.25, 4.0) ** (1.0 / alpha)
        else:
            raise DomainError("vectorized tail inversion stalled")
        out = np.sign(z) * h
        return out
    raise DomainError("no vectorized transport for family %r" % spec.family)


def _segmented_cumsum(vals, seg_ids):
    """Cumulative sums restarting whenever seg_ids changes (rows presorted)."""
    if len(vals) == 0:
        return vals
    cum = np.cumsum(vals)
    first = np.concatenate([[True], seg_ids[1:] != seg_ids[:-1]])
    starts = np.where(first)[0]
    seg_offset = np.repeat(np.concatenate([[0.0], cum[starts[1:] - 1]]),
                           np.diff(np.concatenate([starts, [len(vals)]])))
    return cum - seg_offset


def simulate_batch(spec: KernelSpec, cfg: SimConfig, n_paths: int, master_seed,
                   stream_offset: int = 0) -> BatchPaths:
    """Vectorized delayed-Euler ensemble (d=1, drift-free kernels).

    Streams are the same per-index streams the scalar engine consumes, so
    path p here matches simulate_Xn on sample_stream(..., stream_index=
    stream_offset + p) to rounding.
    """
    if spec.d != 1:
        raise DomainError("vectorized batch is d=1 only")
    if not (spec.symmetric or spec.alpha < 1.0):
        raise DomainError("vectorized batch needs a drift-free scheme")
    n = cfg.n
    x0 = float(cfg.x0_arr[0])
    n_grid = int(math.ceil(cfg.T * n))
    grid_times = np.arange(1, n_grid + 1) / n
    grid_times = grid_times[grid_times <= cfg.T + 1e-15]
    K = len(grid_times)

    ev_path, ev_time, ev_mark = [], [], []
    for p in range(n_paths):
        s = sample_stream(1, spec.alpha, cfg.delta, cfg.T, master_seed,
                          stream_index=stream_offset + p)
        sel = s.times <= cfg.T
        ev_path.append(np.full(int(sel.sum()), p))
        ev_time.append(s.times[sel])
        ev_mark.append(s.marks[sel, 0])
    ev_path = np.concatenate(ev_path) if ev_path else np.empty(0, dtype=int)
    ev_time = np.concatenate(ev_time) if ev_time else np.empty(0)
    ev_mark = np.concatenate(ev_mark) if ev_mark else np.empty(0)

    # bucket events by delay interval (bucket K catches a trailing partial
    # interval when T*n is not an integer); within a bucket rows are
    # path-major time-minor so segmented cumsums give intermediate states
    ev_interval = np.minimum((ev_time * n).astype(int), K)
    order = np.lexsort((ev_time, ev_path, ev_interval))
    ev_path, ev_time = ev_path[order], ev_time[order]
    ev_mark, ev_interval = ev_mark[order], ev_interval[order]
    bucket_ptr = np.searchsorted(ev_interval, np.arange(K + 2))

    ev_state = np.empty(len(ev_time))
    ev_base = np.empty(len(ev_time))
    ev_disp = np.empty(len(ev_time))
    grid_state_rows = np.empty((K, n_paths))
    grid_base_rows = np.empty((K, n_paths))

    cur = np.full(n_paths, x0)        # state at the processing front
    prev_grid = np.full(n_paths, x0)  # state at (k-1)/n while in interval k
    for k in range(K + 1):
        if k >= 1 and k <= K:
            # entering interval k at time k/n: emit the grid row; the new
            # interval's base is the state one grid step back
            grid_state_rows[k - 1] = cur
            grid_base_rows[k - 1] = prev_grid
        base_now = np.full(n_paths, x0) if k == 0 else prev_grid
        next_prev = cur.copy()        # state at k/n, the base of interval k+1
        rows = slice(bucket_ptr[k], bucket_ptr[k + 1])
        if rows.stop > rows.start:
            p_rows = ev_path[rows]
            w = _vector_F(spec, base_now[p_rows], ev_mark[rows])
            ev_disp[rows] = w
            inc = _segmented_cumsum(w, p_rows)
            ev_state[rows] = cur[p_rows] + inc
            ev_base[rows] = base_now[p_rows]
            last = np.concatenate([p_rows[1:] != p_rows[:-1], [True]])
            cur = cur.copy()
            cur[p_rows[last]] += inc[last]
        prev_grid = next_prev

    # merge grid and event rows, path-major time-minor (events first on the
    # measure-zero exact ties, matching the scalar engine's sort)
    zeros_rows = n_paths
    g_path = np.repeat(np.arange(n_paths), K)
    g_time = np.tile(grid_times, n_paths)
    g_state = grid_state_rows.T.ravel()
    g_base = grid_base_rows.T.ravel()
    row_path = np.concatenate([np.arange(n_paths), g_path, ev_path])
    row_time = np.concatenate([np.zeros(zeros_rows), g_time, ev_time])
    row_state = np.concatenate([np.full(zeros_rows, x0), g_state, ev_state])
    row_base = np.concatenate([np.full(zeros_rows, x0), g_base, ev_base])
    row_kind = np.concatenate([np.ones(zeros_rows + n_paths * K, dtype=int),
                               np.zeros(len(ev_time), dtype=int)])
    row_mark = np.concatenate([np.zeros(zeros_rows + n_paths * K), ev_mark])
    row_disp = np.concatenate([np.zeros(zeros_rows + n_paths * K), ev_disp])
    final = np.lexsort((row_kind, row_time, row_path))
    row_path, row_time = row_path[final], row_time[final]
    row_state, row_base = row_state[final], row_base[final]
    row_kind, row_mark, row_disp = row_kind[final], row_mark[final], row_disp[final]
    path_ptr = np.searchsorted(row_path, np.arange(n_paths + 1))
    return BatchPaths(n_paths=n_paths, d=1, path_ptr=path_ptr, times=row_time,
                      states=row_state, bases=row_base,
                      is_jump=row_kind == 0, marks=row_mark,
                      displacements=row_disp, config=cfg,
                      master_seed=master_seed, stream_offset=stream_offset)
