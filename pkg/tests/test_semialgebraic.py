import math

import numpy as np
import pytest

from oracles import ball_volume
from tubelab.arrangements import quadric_distance, quadric_polynomial
from tubelab.errors import DomainError, PreconditionError
from tubelab.geometry import Tube, VoxelGrid, VoxelSet, voxelize_tube
from tubelab.semialgebraic import (
    Polynomial,
    SemiAlgebraicSet,
    audit_neighborhood,
    ball_set,
    connected_components,
    measure_estimate,
    slab_set,
    variety_neighborhood,
    voxelize_region,
)


class TestPolynomial:
    def test_degree_and_evaluation(self):
        p = Polynomial.sphere([0, 0, 0], 1.0)
        assert p.degree == 2
        assert p([[1, 0, 0], [0, 0, 0]]).tolist() == [0.0, -1.0]

    def test_zero_coefficients_dropped(self):
        p = Polynomial(2, {(2, 0): 1.0, (0, 0): 0.0}) - Polynomial(2, {(2, 0): 1.0})
        assert p.is_zero and p.degree == -1

    def test_compensated_sum(self):
        # 1e16 + 1 - 1e16 is 0 in naive float arithmetic
        p = Polynomial(1, {(0,): 1.0, (1,): 1.0, (2,): -1.0})
        assert p([[1e8]])[0] == pytest.approx(1e8 + 1 - 1e16, abs=0)

    def test_record_roundtrip(self):
        p = quadric_polynomial()
        assert Polynomial.from_record(p.to_record()) == p


class TestMeasure:
    def test_unit_ball_r4(self):
        m, se = measure_estimate(ball_set([0, 0, 0, 0], 1.0), samples=2**16, seed=0)
        assert abs(m - math.pi**2 / 2) <= 3 * se
        assert ball_volume(4, 1.0) == pytest.approx(4.9348, abs=1e-4)

    def test_empty(self):
        x = Polynomial.variable(2, 0)
        S = SemiAlgebraicSet(2, inequalities=(x, -x))
        assert measure_estimate(S, samples=4096)[0] == 0.0

    def test_slab_in_ball(self):
        d = 1 / 32
        S = slab_set([0, 0, 0, 1], 0.0, d).intersect(ball_set([0, 0, 0, 0], 1.0))
        m, se = measure_estimate(S, samples=2**17, seed=3)
        want = 2 * d * ball_volume(3, 1.0)
        assert m == pytest.approx(want, rel=0.03)

    def test_deterministic(self):
        S = ball_set([0.1, 0.2, 0.0], 0.5)
        assert measure_estimate(S, samples=4096, seed=7) == measure_estimate(S, samples=4096, seed=7)

    def test_sample_floor(self):
        with pytest.raises(PreconditionError):
            measure_estimate(ball_set([0, 0], 1.0), samples=100)

    def test_monotone_under_inclusion(self):
        inner = ball_set([0, 0, 0], 0.5)
        outer = ball_set([0, 0, 0], 0.7)
        a, sa = measure_estimate(inner, samples=2**14, seed=1)
        b, sb = measure_estimate(outer, samples=2**14, seed=1)
        assert a <= b + 3 * math.hypot(sa, sb)


class TestVarietyNeighborhood:
    def test_linear_is_exact_slab(self):
        w = 0.05
        S = variety_neighborhood(Polynomial.variable(4, 3), w)
        x = np.zeros((5, 4))
        x[:, 3] = [0.0, 0.049, -0.049, 0.051, -0.3]
        assert S.contains(x).tolist() == [True, True, True, False, False]

    def test_sphere_audit(self):
        w = 1 / 16
        P = Polynomial.sphere([0, 0, 0, 0], 1.0)
        aud = audit_neighborhood(P, w, samples=10_000, seed=0,
                                 distance=lambda x: np.abs(np.linalg.norm(x, axis=1) - 1))
        assert aud.agreement >= 0.99

    def test_quadric_audit(self):
        w = 1 / 16
        aud = audit_neighborhood(quadric_polynomial(), w, samples=10_000, seed=0,
                                 distance=quadric_distance)
        assert aud.agreement >= 0.99

    def test_scale_invariant(self):
        P = quadric_polynomial()
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, size=(4000, 4))
        a = variety_neighborhood(P, 0.1).contains(x)
        b = variety_neighborhood(P.scaled(37.5), 0.1).contains(x)
        assert np.array_equal(a, b)

    def test_complexity(self):
        assert variety_neighborhood(quadric_polynomial(), 0.1).complexity == 4

    def test_zero_polynomial(self):
        with pytest.raises(DomainError):
            variety_neighborhood(Polynomial(3), 0.1)


class TestComponents:
    def setup_method(self):
        self.g = VoxelGrid(3, 1 / 32)

    def test_disjoint(self):
        region = voxelize_region(ball_set([0.0, 1.2, 0.0], 0.2), self.g)
        assert connected_components(Tube(0, (0, 0, 0), (1, 0, 0), 1 / 16), region) == []

    def test_shell_chord_has_two_crossings(self):
        shell = variety_neighborhood(Polynomial.sphere([0, 0, 0], 0.4), 1 / 16)
        region = voxelize_region(shell, self.g)
        comps = connected_components(Tube(0, (0, 0, 0), (1, 0, 0), 1 / 16), region)
        assert len(comps) == 2

    def test_region_containing_tube(self):
        t = Tube(0, (0, 0, 0), (1, 0, 0), 1 / 16)
        region = voxelize_region(ball_set([0, 0, 0], 1.5), self.g)
        comps = connected_components(t, region)
        assert len(comps) == 1
        assert comps[0][1] == pytest.approx(1 + 2 / 16, abs=2 * self.g.h)

    def test_partition_exact(self):
        t = Tube(0, (0, 0, 0), (0.6, 0.8, 0), 1 / 16)
        region = voxelize_region(variety_neighborhood(Polynomial.sphere([0, 0, 0], 0.3), 1 / 16), self.g)
        comps = [c for c, _ in connected_components(t, region)]
        union = VoxelSet.empty(self.g)
        for i, c in enumerate(comps):
            for d in comps[i + 1:]:
                assert c.isdisjoint(d)
            union = union.union(c)
        assert union == voxelize_tube(t, self.g).intersection(region)

    def test_grid_mismatch(self):
        region = voxelize_region(ball_set([0, 0, 0], 0.5), self.g)
        with pytest.raises(DomainError):
            connected_components(Tube(0, (0, 0, 0), (1, 0, 0), 1 / 16), region, grid=VoxelGrid(3, 1 / 16))

    def test_cap_warns(self):
        # a comb of thin slabs cuts the tube into many pieces
        g = VoxelGrid(2, 1 / 32)
        X = g.centers(np.arange(g.cell_count))
        keep = (np.floor(X[:, 0] * 16) % 2 == 0)
        region = VoxelSet(g, np.arange(g.cell_count)[keep])
        with pytest.warns(RuntimeWarning):
            connected_components(Tube(0, (0, 0), (1, 0), 1 / 16), region, cap=4)
