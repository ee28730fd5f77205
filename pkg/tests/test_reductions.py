import math

import numpy as np
import pytest

from tubelab.arrangement import Arrangement, Shading
from tubelab.arrangements import axial_ball_shading, full_shading, gen_bush, interval_shading, merge
from tubelab.errors import DomainError
from tubelab.geometry import Tube, VoxelSet, voxelize_tube
from tubelab.reductions import (
    dyadic_refine,
    fat_scale_pipeline,
    find_large_hairbrush,
    hairbrush,
    planiness_split,
    planiness_theta,
    robust_transversality_split,
    two_ends_reduce,
)

D = 1 / 8
E = np.eye(4)


def _tube(i, c=(0, 0, 0, 0), v=(1, 0, 0, 0), d=D):
    return Tube(i, c, v, d)


def _subset_holds(parent, child):
    for t in child.tubes:
        a = parent.shading(t.id).cells
        b = child.shading(t.id).cells
        if not b.issubset(a):
            return False
    return True


def _direct_ratio(parent, child):
    before = sum(len(parent.shading(t.id).cells) for t in parent.tubes)
    after = sum(len(child.shading(t.id).cells) for t in child.tubes)
    return after / before


def _orthogonal_bushes(delta, count=6, seed=0):
    return merge([gen_bush([0, 0, 0, 0], count, delta, seed=seed + k, axis=E[k], spread=0.3) for k in range(3)])


class TestDyadic:
    def test_nine_to_one(self):
        t0, t1 = _tube(0), _tube(1)
        arr = Arrangement(4, D, [t0, t1])
        cells = voxelize_tube(t0, arr.grid).cells
        k = 20
        y0 = VoxelSet(arr.grid, cells[: 19 * k])
        y1 = VoxelSet(arr.grid, cells[18 * k: 19 * k])
        arr = arr.with_shadings({0: Shading(0, y0, t0.volume), 1: Shading(1, y1, t1.volume)})
        # 18k cells of multiplicity 1 against k cells of multiplicity 2
        ref = dyadic_refine(arr)
        assert ref.ratio == pytest.approx(18 * k / (20 * k))
        assert ref.meta["class"] == 0

    def test_uniform_multiplicity_is_identity(self):
        arr = full_shading(Arrangement(4, D, [_tube(0), _tube(1, (0, 0.6, 0, 0))]))
        ref = dyadic_refine(arr)
        assert ref.ratio == 1.0
        assert ref.surviving == (0, 1)

    def test_bound_subset_and_accounting(self):
        arr = interval_shading(gen_bush([0, 0, 0, 0], 16, D, seed=3, offset=0.3), 0.7, seed=1)
        ref = dyadic_refine(arr)
        assert ref.ratio >= ref.meta["bound"]
        assert _subset_holds(arr, ref.arrangement)
        assert ref.ratio == _direct_ratio(arr, ref.arrangement)

    def test_empty(self):
        arr = Arrangement(4, D, [_tube(0)]).with_shadings({0: Shading(0, VoxelSet.empty(
            Arrangement(4, D, []).grid), 1.0)})
        assert dyadic_refine(arr).empty


class TestTwoEnds:
    def test_two_far_balls(self):
        arr = axial_ball_shading(Arrangement(4, D, [_tube(0)]), [-0.5, 0.5], D)
        ref, cert = two_ends_reduce(arr, 0.1)
        assert cert.r0 >= 0.5
        assert cert.passed

    def test_single_ball(self):
        arr = axial_ball_shading(Arrangement(4, D, [_tube(0)]), [0.2], D)
        ref, cert = two_ends_reduce(arr, 0.1)
        assert cert.r0 == D
        assert cert.alpha == 0.0

    def test_full_tube(self):
        arr = full_shading(Arrangement(4, D, [_tube(0)]))
        ref, cert = two_ends_reduce(arr, 0.5)
        assert cert.r0 >= 0.5 and cert.passed

    def test_subset_and_accounting(self):
        arr = interval_shading(gen_bush([0, 0, 0, 0], 12, D, seed=2), 0.5, seed=4)
        ref, cert = two_ends_reduce(arr, 0.2)
        assert _subset_holds(arr, ref.arrangement)
        assert ref.ratio == _direct_ratio(arr, ref.arrangement)
        assert cert.passed
        assert cert.alpha_bound == pytest.approx(4 * math.log2(1 / D))

    def test_eps_range(self):
        with pytest.raises(DomainError):
            two_ends_reduce(full_shading(Arrangement(4, D, [_tube(0)])), 1.0)


class TestTransversality:
    def test_t_one_all_good(self):
        arr = full_shading(gen_bush([0, 0, 0, 0], 8, D))
        sp = robust_transversality_split(arr, 0.1, 1.0)
        assert len(sp.bad) == 0
        assert sp.good == VoxelSet(arr.grid, np.unique(arr.shading_cells()[0]))

    def test_parallel_overlap_is_bad(self):
        arr = full_shading(Arrangement(4, D, [_tube(0), _tube(1, (0, D / 2, 0, 0))]))
        sp = robust_transversality_split(arr, 0.05, 0.6)
        both = voxelize_tube(arr.tubes[0], arr.grid).intersection(voxelize_tube(arr.tubes[1], arr.grid))
        assert both.issubset(sp.bad)
        c = int(both.cells[0])
        assert abs(sp.direction_of(c) @ E[0]) == pytest.approx(1.0)

    def test_bush_core_good_for_small_s(self):
        arr = full_shading(gen_bush([0, 0, 0, 0], 24, D, seed=0))
        sp = robust_transversality_split(arr, 0.01, 0.5)
        core = arr.grid.cell_of(np.full((1, 4), 1e-3))
        assert sp.good.contains(core)[0]

    def test_exact_split(self):
        arr = full_shading(_orthogonal_bushes(D))
        sp = robust_transversality_split(arr, 0.2, 0.5)
        assert sp.good.isdisjoint(sp.bad)
        assert sp.good.union(sp.bad) == VoxelSet(arr.grid, np.unique(arr.shading_cells()[0]))


class TestPlaniness:
    def test_theta(self):
        th = planiness_theta(2.0**-10, 1.0)
        assert th == pytest.approx(2 ** (-15 / 7), rel=1e-12)
        assert th == pytest.approx(0.22627, rel=1e-3)

    def test_planar_arrangement_has_no_trilinear_cells(self):
        ang = np.linspace(0, math.pi, 12, endpoint=False)
        tubes = [_tube(i, v=(math.cos(a), math.sin(a), 0, 0)) for i, a in enumerate(ang)]
        sp = planiness_split(full_shading(Arrangement(4, D, tubes)), 1.0)
        assert len(sp.trilinear) == 0

    def test_orthogonal_bushes_core_trilinear(self):
        # theta_0 < 1/2 needs delta <= 1/32, whose grid exceeds the default cell budget
        arr = full_shading(Arrangement(4, 1 / 32, _orthogonal_bushes(1 / 32).tubes, cell_budget=2**32))
        sp = planiness_split(arr, 1.0, fraction=0.9)
        assert sp.theta0 < 0.5
        core = arr.grid.cell_of(np.full((1, 4), 1e-3))
        assert sp.trilinear.contains(core)[0]

    def test_masses_sum(self):
        arr = full_shading(_orthogonal_bushes(D))
        sp = planiness_split(arr, 1.0)
        mult_mass = sum(len(arr.shading(t.id).cells) for t in arr.tubes) * arr.grid.cell_volume
        assert sp.total == pytest.approx(mult_mass, rel=1e-12)


class TestHairbrush:
    def test_bush(self):
        arr = full_shading(gen_bush([0, 0, 0, 0], 10, D))
        assert hairbrush(arr, 3).hair == frozenset(set(range(10)) - {3})

    def test_disjoint(self):
        arr = full_shading(Arrangement(4, D, [_tube(0), _tube(1, (0, 0.6, 0, 0))]))
        assert hairbrush(arr, 0).hair == frozenset()

    def test_crossing_pair(self):
        arr = full_shading(Arrangement(4, D, [_tube(0), _tube(1, v=E[1])]))
        assert hairbrush(arr, 0).hair == {1}
        assert hairbrush(arr, 1).hair == {0}

    def test_unknown(self):
        with pytest.raises(DomainError):
            hairbrush(full_shading(Arrangement(4, D, [_tube(0)])), 99)

    def test_large_on_bush(self):
        arr = full_shading(gen_bush([0, 0, 0, 0], 12, D))
        lh = find_large_hairbrush(arr, 0.05)
        assert len(lh.hair) == 11

    def test_parallel_has_no_transversal_hair(self):
        arr = full_shading(Arrangement(4, D, [_tube(0), _tube(1, (0, D / 2, 0, 0))]))
        with pytest.raises(DomainError):
            find_large_hairbrush(arr, 0.1)


class TestFatScale:
    def test_single_fat_tube(self):
        arr = full_shading(gen_bush([0, 0, 0, 0], 4, 1 / 16, seed=0, axis=E[0], spread=0.3))
        rec = fat_scale_pipeline(arr, 0.5)
        assert rec.mu_coarse == 1
        assert rec.mu == pytest.approx(rec.mu_fine)

    def test_theta_at_delta(self):
        arr = full_shading(gen_bush([0, 0, 0, 0], 4, D))
        with pytest.raises(DomainError):
            fat_scale_pipeline(arr, D)

    def test_checks_reported_as_ratios(self):
        arr = full_shading(gen_bush([0, 0, 0, 0], 8, 1 / 16, seed=1))
        rec = fat_scale_pipeline(arr, 1 / 8)
        assert "fineCoarseMu" in rec.checks
        assert all("ratio" in v or v == "missing" for v in rec.checks.values())
