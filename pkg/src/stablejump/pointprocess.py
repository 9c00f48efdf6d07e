"""Exact sampling of the driving Poisson point process above a mark cutoff.

The process on [0, T] x {|z| > delta} has intensity dz/|z|^(d+alpha) dt:
state-independent by construction, since all state dependence of the jump
dynamics lives in the transport map.  Sampling uses the order-statistics
representation (total count, then i.i.d. uniform times) and the Pareto
inverse transform for radii; seeds are derived per stream index so parallel
generation is reproducible regardless of worker scheduling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError
from .kernel import SPHERE_SURFACE


def tail_mass(d: int, alpha: float, delta: float) -> float:
    """Reference-measure mass of {|z| > delta}: s_d * delta^-alpha / alpha."""
    if d not in SPHERE_SURFACE:
        raise DomainError("d must be 1 or 2")
    if not 0.0 < alpha < 2.0:
        raise DomainError("alpha must lie in (0, 2)")
    if delta <= 0:
        raise DomainError("delta must be positive")
    return SPHERE_SURFACE[d] * delta ** (-alpha) / alpha


@dataclass(frozen=True)
class AnnulusSector:
    """Marks with r_lo < |z| <= r_hi, optionally restricted in direction.

    d=1: side in {+1, -1} keeps one half-line, None keeps both.
    d=2: [theta_lo, theta_hi) restricts the angle; None keeps the circle.
    """

    r_lo: float
    r_hi: float = np.inf
    side: Optional[int] = None
    theta_lo: Optional[float] = None
    theta_hi: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.r_lo < self.r_hi:
            raise DomainError("need 0 < r_lo < r_hi")

    def measure(self, d: int, alpha: float) -> float:
        """Reference-measure mass of the set."""
        hi = 0.0 if np.isinf(self.r_hi) else self.r_hi ** -alpha
        mass = SPHERE_SURFACE[d] * (self.r_lo ** -alpha - hi) / alpha
        return mass * self._direction_fraction(d)

    def _direction_fraction(self, d: int) -> float:
        if d == 1:
            return 0.5 if self.side is not None else 1.0
        if self.theta_lo is not None and self.theta_hi is not None:
            return (self.theta_hi - self.theta_lo) / (2.0 * np.pi)
        return 1.0

    def contains(self, marks: np.ndarray) -> np.ndarray:
        """Boolean membership for marks of shape (n, d)."""
        r = np.linalg.norm(marks, axis=-1)
        inside = (r > self.r_lo) & (r <= self.r_hi)
        if marks.shape[-1] == 1 and self.side is not None:
            inside &= np.sign(marks[..., 0]) == self.side
        if marks.shape[-1] == 2 and self.theta_lo is not None:
            theta = np.mod(np.arctan2(marks[..., 1], marks[..., 0]), 2.0 * np.pi)
            inside &= (theta >= self.theta_lo) & (theta < self.theta_hi)
        return inside


@dataclass(frozen=True)
class PointEvent:
    t: float
    z: np.ndarray


@dataclass(frozen=True)
class EventStream:
    """Time-sorted marked events on [0, T] with |z| > delta.

    times has shape (n,), strictly increasing; marks has shape (n, d).
    Immutable after creation; safe to share across workers.
    """

    T: float
    delta: float
    alpha: float
    times: np.ndarray
    marks: np.ndarray
    seed: Optional[int] = None
    stream_index: int = 0

    def __post_init__(self):
        if len(self.times) != len(self.marks):
            raise DomainError("times and marks disagree in length")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise DomainError("event times must be strictly increasing")
        if len(self.marks) and np.any(np.linalg.norm(self.marks, axis=1) <= self.delta):
            raise DomainError("all marks must exceed the cutoff in norm")

    def __len__(self):
        return len(self.times)

    @property
    def d(self) -> int:
        return self.marks.shape[1]

    def __iter__(self):
        for t, z in zip(self.times, self.marks):
            yield PointEvent(float(t), z)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["t"] + ["z%d" % (k + 1) for k in range(self.d)])
        for t, z in zip(self.times, self.marks):
            writer.writerow(["%.17g" % t] + ["%.17g" % v for v in z])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, T: float, delta: float, alpha: float) -> "EventStream":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        d = len(header) - 1
        times = np.array([float(r[0]) for r in body])
        marks = np.array([[float(v) for v in r[1:]] for r in body]).reshape(-1, d)
        return cls(T=T, delta=delta, alpha=alpha, times=times, marks=marks)


def stream_rng(seed, stream_index: int) -> np.random.Generator:
    """Counter-style generator for (master seed, stream index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream_index,)))


def sample_stream(d: int, alpha: float, delta: float, T: float, seed,
                  stream_index: int = 0) -> EventStream:
    """Draw one stream: Poisson count, uniform sorted times, Pareto radii.

    Radii satisfy P(R > r) = (delta/r)^alpha; directions are uniform on the
    sphere (d=1: equiprobable signs).  Deterministic given (seed, index).
    """
    if T <= 0:
        raise DomainError("T must be positive")
    rate = tail_mass(d, alpha, delta)
    rng = stream_rng(seed, stream_index)
    n = int(rng.poisson(T * rate))
    times = np.sort(rng.uniform(0.0, T, size=n))
    # float ties have probability ~0 but break downstream strict ordering
    while n > 1 and np.any(np.diff(times) == 0.0):
        dup = np.concatenate([[False], np.diff(times) == 0.0])
        times[dup] = rng.uniform(0.0, T, size=int(dup.sum()))
        times = np.sort(times)
    radii = delta * rng.uniform(0.0, 1.0, size=n) ** (-1.0 / alpha)
    if d == 1:
        dirs = rng.choice([-1.0, 1.0], size=(n, 1))
    else:
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    marks = radii[:, None] * dirs
    return EventStream(T=T, delta=delta, alpha=alpha, times=times, marks=marks,
                       seed=seed, stream_index=stream_index)


def count_in(stream: EventStream, C: AnnulusSector, t: float) -> int:
    """Number of events with time <= t and mark in C (C must sit above the cutoff)."""
    if C.r_lo < stream.delta:
        raise DomainError("query set reaches below the stream cutoff")
    if len(stream) == 0:
        return 0
    sel = stream.times <= t
    return int(np.count_nonzero(C.contains(stream.marks[sel])))
