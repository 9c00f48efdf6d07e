"""Driving point process: exact laws, independence, determinism."""

import numpy as np
import pytest

from stablejump.errors import DomainError
from stablejump.pointprocess import (
    AnnulusSector,
    EventStream,
    count_in,
    sample_stream,
    tail_mass,
)


class TestTailMass:
    def test_closed_forms(self):
        assert tail_mass(1, 0.5, 1.0) == pytest.approx(4.0)
        assert tail_mass(2, 1.0, 1.0) == pytest.approx(2.0 * np.pi)
        assert tail_mass(1, 1.0, 0.5) == pytest.approx(4.0)

    def test_domain(self):
        with pytest.raises(DomainError):
            tail_mass(1, 1.0, 0.0)
        with pytest.raises(DomainError):
            tail_mass(3, 1.0, 1.0)


class TestSampleStream:
    def test_deterministic_given_seed(self):
        a = sample_stream(1, 0.8, 0.5, 2.0, seed=123, stream_index=7)
        b = sample_stream(1, 0.8, 0.5, 2.0, seed=123, stream_index=7)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.marks, b.marks)
        c = sample_stream(1, 0.8, 0.5, 2.0, seed=123, stream_index=8)
        assert not np.array_equal(a.times, c.times)

    def test_pareto_radial_law(self):
        # P(R > r) = (delta/r)^alpha, pooled over many streams
        alpha, delta = 0.7, 1.0
        radii = np.concatenate([
            np.linalg.norm(sample_stream(1, alpha, delta, 5.0, seed=1,
                                         stream_index=k).marks, axis=1)
            for k in range(200)
        ])
        for r in (1.5, 2.0, 4.0):
            emp = np.mean(radii > r)
            exact = (delta / r) ** alpha
            se = np.sqrt(exact * (1 - exact) / len(radii))
            assert abs(emp - exact) < 4.0 * se

    def test_poisson_count_mean(self):
        # d=1, alpha=0.5, delta=1, T=1: mean count 4, sd 2/sqrt(n_streams)
        n = 10_000
        counts = np.array([len(sample_stream(1, 0.5, 1.0, 1.0, seed=5, stream_index=k))
                           for k in range(n)])
        assert abs(counts.mean() - 4.0) < 3.0 * np.sqrt(4.0 / n)
        # Poisson: variance equals the mean
        assert abs(counts.var() - 4.0) < 4.0 * np.sqrt(2.0 * 16.0 / n)

    def test_disjoint_annuli_uncorrelated(self):
        n = 10_000
        a1 = AnnulusSector(1.0, 2.0)
        a2 = AnnulusSector(2.0, np.inf)
        c1, c2 = np.empty(n), np.empty(n)
        for k in range(n):
            s = sample_stream(1, 0.5, 1.0, 1.0, seed=9, stream_index=k)
            c1[k] = count_in(s, a1, 1.0)
            c2[k] = count_in(s, a2, 1.0)
        corr = np.corrcoef(c1, c2)[0, 1]
        assert abs(corr) < 3.0 / np.sqrt(n)

    def test_strictly_increasing_times(self):
        for k in range(50):
            s = sample_stream(2, 1.2, 0.3, 1.0, seed=2, stream_index=k)
            if len(s) > 1:
                assert np.all(np.diff(s.times) > 0)

    def test_direction_law_d2(self):
        s = sample_stream(2, 1.0, 0.5, 40.0, seed=3)
        theta = np.arctan2(s.marks[:, 1], s.marks[:, 0])
        # quadrant occupancies are equal within sampling error
        frac = np.mean((theta >= 0) & (theta < np.pi / 2))
        assert abs(frac - 0.25) < 4.0 * np.sqrt(0.25 * 0.75 / len(s))


class TestCountIn:
    def test_empty_stream(self):
        s = EventStream(T=1.0, delta=1.0, alpha=1.0, times=np.array([]),
                        marks=np.empty((0, 1)))
        assert count_in(s, AnnulusSector(1.0, 2.0), 1.0) == 0

    def test_full_tail_counts_everything(self):
        s = sample_stream(1, 0.5, 1.0, 1.0, seed=11)
        assert count_in(s, AnnulusSector(1.0, np.inf), 1.0) == len(s)

    def test_mean_count_matches_measure(self):
        # C = {|z| > 2 delta}: mean count T * tail_mass(2 delta)
        n = 10_000
        C = AnnulusSector(2.0, np.inf)
        counts = [count_in(sample_stream(1, 0.5, 1.0, 1.0, seed=13, stream_index=k),
                           C, 1.0) for k in range(n)]
        mean = tail_mass(1, 0.5, 2.0)
        got = np.mean(counts)
        assert abs(got - mean) < 3.0 * np.sqrt(mean / n)

    def test_below_cutoff_rejected(self):
        s = sample_stream(1, 0.5, 1.0, 1.0, seed=17)
        with pytest.raises(DomainError):
            count_in(s, AnnulusSector(0.5, 2.0), 1.0)

    def test_sector_measure_d2(self):
        quarter = AnnulusSector(1.0, np.inf, theta_lo=0.0, theta_hi=np.pi / 2)
        assert quarter.measure(2, 1.0) == pytest.approx(np.pi / 2)


def test_csv_roundtrip():
    s = sample_stream(2, 1.1, 0.4, 1.0, seed=21)
    text = s.to_csv()
    back = EventStream.from_csv(text, T=s.T, delta=s.delta, alpha=s.alpha)
    assert np.array_equal(back.times, s.times)
    assert np.array_equal(back.marks, s.marks)
