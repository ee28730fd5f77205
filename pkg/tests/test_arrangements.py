import itertools
import math

import numpy as np
import pytest

from oracles import binomial_band, seg_dist
from tubelab.arrangements import (
    fatten_tubes,
    flat_basis,
    full_shading,
    gen_bush,
    gen_direction_separated,
    gen_empty,
    gen_flat_concentration,
    gen_quadric,
    interval_shading,
    merge,
    quadric_distance,
    random_sparsify,
)
from tubelab.errors import DomainError
from tubelab.functionals import multiplicity_field, union_volume
from tubelab.geometry import Tube, line_angle


def _pairwise_min_angle(V):
    G = np.abs(V @ V.T)
    np.fill_diagonal(G, 0)
    return math.acos(min(1.0, G.max()))


class TestSeparated:
    def test_plane_count_and_separation(self):
        arr = gen_direction_separated(2, 1 / 8, seed=0)
        assert 8 <= len(arr) <= 32
        assert _pairwise_min_angle(arr.directions()) >= 1 / 8 - 1e-12

    def test_r4_count_scales_like_delta_cubed(self):
        for d in (1 / 8, 1 / 16):
            m = len(gen_direction_separated(4, d, seed=0))
            assert 0.5 * d**-3 <= m <= 16 * d**-3

    def test_deterministic(self):
        a = gen_direction_separated(3, 1 / 8, seed=5)
        b = gen_direction_separated(3, 1 / 8, seed=5)
        assert a.tubes == b.tubes
        assert gen_direction_separated(3, 1 / 8, seed=6).tubes != a.tubes

    def test_tube_invariants(self):
        arr = gen_direction_separated(4, 1 / 8, seed=1)
        assert len(set(arr.ids.tolist())) == len(arr)
        assert all(t.radius == arr.delta for t in arr.tubes)
        assert np.all(np.linalg.norm(arr.centers(), axis=1) <= 2)

    def test_delta_range(self):
        with pytest.raises(DomainError):
            gen_direction_separated(4, 1 / 2)


class TestQuadric:
    def test_midpoints_near_quadric(self):
        arr = gen_quadric(1 / 8, seed=0)
        assert np.all(quadric_distance(arr.centers()) <= 2 * arr.delta)

    def test_count(self):
        assert len(gen_quadric(1 / 8, seed=0)) == 4 * 512


class TestFlat:
    def test_contained_in_slab_neighborhood(self):
        d = 1 / 8
        arr = gen_flat_concentration(2, d, seed=0)
        a, b = arr.endpoints()
        off = np.linalg.norm(np.vstack([a, b])[:, 2:], axis=1)
        assert np.all(off <= d / 2 + 1e-12)
        E = flat_basis(4, 2)
        V = arr.directions()
        # angle between each direction and its projection onto the flat
        cosang = np.linalg.norm(V @ E.T, axis=1)
        assert np.all(np.arccos(np.minimum(cosang, 1.0)) <= d + 1e-12)

    def test_hyperplane_union_below_slab(self):
        d = 1 / 8
        arr = gen_flat_concentration(3, d, seed=0, count=200)
        # the union sits in the (3/2) delta slab around x4 = 0, truncated to B(0, 2)
        slab = 2 * 1.5 * d * (4 / 3) * math.pi * 2**3
        assert union_volume(arr) <= slab


class TestBush:
    def test_common_point(self):
        arr = gen_bush([0, 0, 0], 3, 1 / 8, seed=0)
        for t, s in itertools.combinations(arr.tubes, 2):
            assert seg_dist(np.zeros((1, 3)), t.a, t.b)[0] < 1e-12
            assert seg_dist(np.zeros((1, 3)), s.a, s.b)[0] < 1e-12

    def test_multiplicity_at_center(self):
        arr = gen_bush([0, 0, 0, 0], 24, 1 / 8, seed=0)
        cells, mult = multiplicity_field(arr)
        at = arr.grid.cell_of(np.full((1, 4), 1e-3))[0]
        assert mult[np.searchsorted(cells, at)] == 24

    def test_too_many(self):
        with pytest.raises(DomainError):
            gen_bush([0, 0], 20, 1 / 8)


class TestSparsify:
    def test_identity(self):
        arr = gen_direction_separated(3, 1 / 8, seed=0)
        assert random_sparsify(arr, 1, 1).tubes == arr.tubes

    def test_binomial_band(self):
        tubes = [Tube(i, (0, 0, 0), (1, 0, 0), 1 / 8) for i in range(10_000)]
        from tubelab.arrangement import Arrangement

        arr = Arrangement(3, 1 / 8, tubes)
        lo, hi = binomial_band(10_000, 0.25)
        kept = random_sparsify(arr, 2, 2, seed=0)
        assert lo <= len(kept) <= hi
        assert random_sparsify(arr, 2, 2, seed=0).tubes == kept.tubes


class TestFatten:
    def test_theta_equals_delta(self):
        arr = gen_direction_separated(3, 1 / 8, seed=0)
        fd = fatten_tubes(arr, arr.delta, pigeonhole=False)
        assert len(fd.fat) == len(arr)
        assert fd.A == pytest.approx(arr.delta**3 * len(arr))

    def test_one_fat_tube(self):
        arr = gen_bush([0, 0, 0], 6, 1 / 32, seed=0, axis=[1, 0, 0], spread=0.1)
        fd = fatten_tubes(arr, 1 / 4)
        assert len(fd.fat) == 1
        assert fd.retention == 1.0

    def test_audit_on_separated(self):
        arr = gen_direction_separated(4, 1 / 16, seed=0)
        fd = fatten_tubes(arr, 1 / 4)
        aud = fd.audit()
        assert aud["non_nested"] and aud["partition"] and aud["dyadic_balanced"]
        assert aud["retention_before_pigeonhole"] == 1.0
        assert fd.A > 0
        for thin, fat in fd.assignment.items():
            t = arr.tube(thin)
            f = next(x for x in fd.fat if x.id == fat)
            assert np.all(seg_dist(np.vstack([t.a, t.b]), f.a, f.b) <= 10 * fd.theta)

    def test_theta_below_delta(self):
        with pytest.raises(DomainError):
            fatten_tubes(gen_empty(3, 1 / 8), 1 / 16)


class TestShading:
    def test_interval_shading_inside_tube(self):
        arr = interval_shading(gen_direction_separated(3, 1 / 8, seed=0), 0.5, seed=0)
        for t in arr.tubes[:10]:
            sh = arr.shading(t.id)
            X = sh.cells.centers()
            assert np.all(seg_dist(X, t.a, t.b) <= t.radius + 1e-12)
            assert 0 < sh.lam <= 1

    def test_full_shading_lambda_one(self):
        arr = full_shading(gen_bush([0, 0, 0], 4, 1 / 8))
        # lambda is voxel measure over the exact tube volume
        assert np.allclose(arr.lambdas(), 1.0, atol=0.05)

    def test_merge_renumbers(self):
        a = gen_bush([0, 0, 0], 3, 1 / 8)
        m = merge([a, a])
        assert m.ids.tolist() == list(range(6))
        assert line_angle(m.tubes[3].direction, a.tubes[0].direction) == 0
