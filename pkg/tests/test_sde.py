"""Delayed-Euler engines: closed-form paths, coupling, compensator drift,
engine equivalence, and jump-size comparability."""

import math

import numpy as np
import pytest

from stablejump.errors import DomainError, MarkRangeError
from stablejump.kernel import constant_kernel, separable_kernel, user_kernel
from stablejump.pointprocess import EventStream, sample_stream
from stablejump.sde import (
    MapProvider,
    SimConfig,
    compensator_drift,
    couple,
    simulate_batch,
    simulate_Xn,
    small_jump_budget,
    sup_distance,
)
from stablejump.transport import TransportMap1D


def one_sided_kernel(c_plus, c_minus, alpha):
    def fn(x, h):
        return np.where(h[..., 0] > 0, c_plus, c_minus)

    return user_kernel(fn, d=1, alpha=alpha, c_lower=min(c_plus, c_minus),
                       c_upper=max(c_plus, c_minus))


class TestScalarEngine:
    def test_flat_kernel_path_is_mark_sum(self):
        spec = constant_kernel(1.0, d=1, alpha=1.0)
        cfg = SimConfig(x0=(0.3,), T=1.0, n=8, delta=0.05)
        stream = sample_stream(1, 1.0, 0.05, 1.0, seed=42)
        path = simulate_Xn(MapProvider(spec, u_min=0.025), spec, cfg, stream)
        sel = stream.times <= 1.0
        assert path.states[-1, 0] == pytest.approx(
            0.3 + stream.marks[sel, 0].sum(), rel=1e-12)
        # symmetric kernel: zero drift on every segment
        assert np.all(path.drift == 0.0)

    def test_empty_stream_constant_path(self):
        spec = constant_kernel(1.0, d=1, alpha=0.7)
        cfg = SimConfig(x0=(1.5,), T=1.0, n=4, delta=0.05)
        stream = EventStream(T=1.0, delta=0.05, alpha=0.7,
                             times=np.array([]), marks=np.empty((0, 1)))
        path = simulate_Xn(MapProvider(spec, u_min=0.025), spec, cfg, stream)
        assert np.all(path.states == 1.5)

    def test_constant_two_jumps_scaled(self):
        # constant(2), alpha=0.5: each jump is 2^(1/alpha) z = 4z
        spec = constant_kernel(2.0, d=1, alpha=0.5)
        cfg = SimConfig(x0=(0.0,), T=1.0, n=4, delta=0.1)
        stream = sample_stream(1, 0.5, 0.1, 1.0, seed=3)
        path = simulate_Xn(MapProvider(spec, u_min=0.05), spec, cfg, stream)
        assert np.allclose(path.jump_displacements, 4.0 * path.jump_marks, rtol=1e-12)

    def test_jump_size_comparability(self):
        spec = separable_kernel(d=1, alpha=1.2)
        cfg = SimConfig(x0=(0.0,), T=1.0, n=8, delta=0.05)
        prov = MapProvider(spec, u_min=0.025)
        stream = sample_stream(1, 1.2, 0.05, 1.0, seed=11)
        path = simulate_Xn(prov, spec, cfg, stream)
        beta = prov.get(0.0).beta
        ratios = np.abs(path.jump_displacements) / np.abs(path.jump_marks)
        assert np.all(ratios >= beta) and np.all(ratios <= 1.0 / beta)

    def test_mark_recovery_roundtrip(self):
        # G at the segment base recovers each driving mark (exact in d=1)
        spec = separable_kernel(d=1, alpha=1.2)
        cfg = SimConfig(x0=(0.0,), T=1.0, n=8, delta=0.05)
        prov = MapProvider(spec, u_min=0.025)
        stream = sample_stream(1, 1.2, 0.05, 1.0, seed=12)
        path = simulate_Xn(prov, spec, cfg, stream)
        j = 0
        for i in range(len(path.times)):
            if path.is_jump[i]:
                tmap = prov.get(path.bases[i])
                z_rec = tmap.G_eval(float(path.jump_displacements[j, 0]))
                assert z_rec == pytest.approx(float(path.jump_marks[j, 0]), rel=1e-9)
                j += 1

    def test_stream_too_short_rejected(self):
        spec = constant_kernel(1.0, d=1, alpha=1.0)
        cfg = SimConfig(x0=(0.0,), T=2.0, n=4, delta=0.05)
        stream = sample_stream(1, 1.0, 0.05, 1.0, seed=1)
        with pytest.raises(DomainError):
            simulate_Xn(MapProvider(spec, u_min=0.025), spec, cfg, stream)

    def test_mark_below_annulus_aborts(self):
        spec = constant_kernel(1.0, d=1, alpha=1.0)
        cfg = SimConfig(x0=(0.0,), T=1.0, n=4, delta=0.05)
        stream = EventStream(T=1.0, delta=0.01, alpha=1.0,
                             times=np.array([0.5]), marks=np.array([[0.02]]))
        with pytest.raises(MarkRangeError):
            simulate_Xn(MapProvider(spec, u_min=0.04), spec, cfg, stream)


class TestCoupling:
    def test_flat_kernel_levels_identical(self):
        spec = constant_kernel(1.0, d=1, alpha=1.0)
        cfg = SimConfig(x0=(0.0,), T=1.0, n=4, delta=0.05)
        prov = MapProvider(spec, u_min=0.025)
        stream = sample_stream(1, 1.0, 0.05, 1.0, seed=5)
        paths = couple(prov, spec, cfg, stream, [4, 8, 16])
        for other in paths[1:]:
            assert sup_distance(paths[0], other) < 1e-12

    def test_separable_levels_converge_on_median(self):
        spec = separable_kernel(d=1, alpha=1.2)
        cfg = SimConfig(x0=(0.0,), T=1.0, n=4, delta=0.1)
        prov = MapProvider(spec, u_min=0.05)
        n_list = [4, 8, 16, 32]
        gaps = {n: [] for n in n_list[:-1]}
        for k in range(40):
            stream = sample_stream(1, 1.2, 0.1, 1.0, seed=100, stream_index=k)
            paths = couple(prov, spec, cfg, stream, n_list)
            for n, a, b in zip(n_list[:-1], paths[:-1], paths[1:]):
                gaps[n].append(sup_distance(a, b))
        medians = [float(np.median(gaps[n])) for n in n_list[:-1]]
        assert medians[0] >= medians[1] >= medians[2]

    def test_nonincreasing_required(self):
        spec = constant_kernel(1.0, d=1, alpha=1.0)
        cfg = SimConfig(x0=(0.0,), T=1.0, n=4, delta=0.05)
        prov = MapProvider(spec, u_min=0.025)
        stream = sample_stream(1, 1.0, 0.05, 1.0, seed=5)
        with pytest.raises(DomainError):
            couple(prov, spec, cfg, stream, [8, 4])


class TestCompensator:
    def test_symmetric_kernel_zero(self):
        spec = separable_kernel(d=1, alpha=1.3)
        tmap = TransportMap1D(spec, 0.7)
        assert np.all(compensator_drift(tmap, 0.05) == 0.0)

    def test_alpha_below_one_zero(self):
        spec = one_sided_kernel(2.0, 1.0, alpha=0.7)
        tmap = TransportMap1D(spec, 0.0)
        assert np.all(compensator_drift(tmap, 0.05) == 0.0)

    def test_one_sided_closed_form(self):
        # c2=2 for h>0, c1=1 for h<0, alpha=1, delta: the compensated set is
        # (delta, 1/c] per side and the drift integral has a log closed form
        c2, c1, delta = 2.0, 1.0, 0.01
        spec = one_sided_kernel(c2, c1, alpha=1.0)
        tmap = TransportMap1D(spec, 0.0)
        got = compensator_drift(tmap, delta)[0]
        expected = -(c2 * math.log(1.0 / (c2 * delta))
                     - c1 * math.log(1.0 / (c1 * delta)))
        assert got == pytest.approx(expected, rel=1e-6)
        # independent dense-grid quadrature oracle of the same integral
        # (the compensated mark range reaches 1/c per side)
        z = np.linspace(delta, 1.0, 4_000_001)
        w = np.gradient(z)
        pos = np.sum(np.where(c2 * z <= 1.0, c2 * z, 0.0) * z ** -2.0 * w)
        neg = np.sum(np.where(c1 * z <= 1.0, -c1 * z, 0.0) * z ** -2.0 * w)
        assert got == pytest.approx(-(pos + neg), rel=1e-4)

    def test_drift_applied_along_path(self):
        spec = one_sided_kernel(2.0, 1.0, alpha=1.0)
        cfg = SimConfig(x0=(0.0,), T=0.5, n=4, delta=0.05)
        prov = MapProvider(spec, u_min=0.025)
        stream = sample_stream(1, 1.0, 0.05, 0.5, seed=9)
        path = simulate_Xn(prov, spec, cfg, stream)
        assert np.any(path.drift != 0.0)
        # between breakpoints the state advances by drift * dt exactly
        for i in range(len(path.times) - 1):
            dt = path.times[i + 1] - path.times[i]
            moved = path.state_at(path.times[i + 1] - 1e-12) - path.states[i]
            assert moved[0] == pytest.approx(path.drift[i, 0] * dt, abs=1e-10)


class TestBudget:
    def test_plugin_values(self):
        spec1 = constant_kernel(1.0, d=1, alpha=1.0)
        assert small_jump_budget(spec1, None, 0.01) == pytest.approx(0.02)
        spec2 = constant_kernel(1.0, d=2, alpha=0.5)
        assert small_jump_budget(spec2, None, 0.04) == pytest.approx(0.8 * np.pi)

    def test_monotone_in_delta(self):
        spec = separable_kernel(d=1, alpha=1.4)
        tmap = TransportMap1D(spec, 0.0)
        vals = [small_jump_budget(spec, tmap, d) for d in (0.1, 0.05, 0.01, 0.001)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestBatchEngine:
    @pytest.mark.parametrize("family", ["constant", "separable"])
    def test_matches_scalar_engine(self, family):
        if family == "constant":
            spec = constant_kernel(1.0, d=1, alpha=1.0)
        else:
            spec = separable_kernel(d=1, alpha=1.2)
        cfg = SimConfig(x0=(0.1,), T=1.0, n=8, delta=0.05)
        prov = MapProvider(spec, u_min=0.025)
        batch = simulate_batch(spec, cfg, 5, master_seed=77)
        for p in range(5):
            stream = sample_stream(1, spec.alpha, 0.05, 1.0, 77, stream_index=p)
            ref = simulate_Xn(prov, spec, cfg, stream)
            got = batch.path(p)
            assert np.array_equal(got.times, ref.times)
            assert np.allclose(got.states, ref.states, atol=1e-12)
            assert np.allclose(got.bases, ref.bases, atol=1e-12)

    def test_batch_requires_drift_free(self):
        spec = one_sided_kernel(2.0, 1.0, alpha=1.0)
        cfg = SimConfig(x0=(0.0,), T=1.0, n=4, delta=0.05)
        with pytest.raises(DomainError):
            simulate_batch(spec, cfg, 2, master_seed=0)


class TestD2Smoke:
    def test_small_d2_path(self):
        spec = separable_kernel(d=2, alpha=1.0)
        cfg = SimConfig(x0=(0.5, 0.0), T=0.25, n=2, delta=0.4)
        prov = MapProvider(spec, u_min=0.2, u_max=8.0, m_max=2)
        stream = sample_stream(2, 1.0, 0.4, 0.25, seed=21)
        path = simulate_Xn(prov, spec, cfg, stream)
        assert path.states.shape[1] == 2
        n_jumps = int(path.is_jump.sum())
        assert n_jumps == len(path.jump_marks)
        if n_jumps:
            # image sizes within the per-map comparability band (marks are
            # sampled off-axis with probability one)
            for j in range(n_jumps):
                z = path.jump_marks[j]
                w = path.jump_displacements[j]
                tmap = prov.get(path.bases[path.is_jump.nonzero()[0][j]])
                r = np.linalg.norm(w) / np.linalg.norm(z)
                assert r >= tmap.beta * 0.5  # corner values degrade near axes
