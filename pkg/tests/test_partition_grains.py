import numpy as np
import pytest

from cubesets import CUBE_SETS, DELTA, plane_slab, sphere_shell, two_slabs, uniform_ball
from tubelab.arrangement import Arrangement
from tubelab.arrangements import full_shading, gen_bush
from tubelab.errors import DomainError, PreconditionError
from tubelab.geometry import Tube
from tubelab.partition_grains import (
    CubeSet,
    active_cubes,
    cell_or_algebraic_step,
    cover_overlap,
    grains_decompose,
    pigeonhole_classes,
    polynomial_partition,
    subgrain_cover,
    trilinear_statistics,
)


class TestCubeSet:
    def test_dedup_and_centers(self):
        c = CubeSet(0.5, [[0, 0], [0, 0], [1, -1]])
        assert len(c) == 2
        assert np.allclose(c.centers(), [[0.25, 0.25], [0.75, -0.25]])


class TestPartition:
    def test_median_split(self):
        rng = np.random.default_rng(0)
        c = CubeSet.from_points(rng.uniform(-0.5, 0.5, (2000, 3)), DELTA)
        p = polynomial_partition(c, 2)
        sizes = [v.size for v in p.cells.values()]
        assert len(sizes) == 2
        assert all(len(c) / 4 <= s <= len(c) for s in sizes)

    def test_uniform_sixteen_cells(self):
        # four hyperplanes cut R^3 into at most 15 regions, so this runs in R^4
        rng = np.random.default_rng(0)
        x = rng.standard_normal((10_000, 4))
        x *= (rng.random(10_000) ** 0.25 / np.linalg.norm(x, axis=1))[:, None]
        c = CubeSet.from_points(x, DELTA)
        p = polynomial_partition(c, 16)
        assert len(p.cells) == 16
        target = len(c) / 16
        assert all(target / 2 <= n <= 2 * target for n in p.side_counts.values())
        assert p.boundary.size <= 0.3 * len(c)
        assert p.balanced

    def test_exact_set_identity(self):
        c = uniform_ball()
        p = polynomial_partition(c, 8, seed=3)
        parts = np.concatenate([*p.cells.values(), p.boundary])
        assert np.array_equal(np.sort(parts), np.arange(len(c)))

    def test_coplanar_cubes_still_balance(self):
        c = plane_slab()
        p = polynomial_partition(c, 4)
        # every cut direction is forced to have a component inside the plane
        assert np.all(np.abs(p.normals[:, :2]).sum(axis=1) > 0.1)
        assert p.balanced

    def test_preconditions(self):
        with pytest.raises(PreconditionError):
            polynomial_partition(CubeSet(DELTA, [[0, 0, 0]]), 2)
        with pytest.raises(PreconditionError):
            polynomial_partition(uniform_ball(), 6)

    def test_polynomial_vanishes_on_cuts(self):
        p = polynomial_partition(uniform_ball(), 4)
        x = p.normals[0] * p.offsets[0]
        assert abs(p.polynomial([x])[0]) < 1e-12


class TestStep:
    def test_sphere_is_algebraic(self):
        step = cell_or_algebraic_step(sphere_shell(), 4)
        assert step.algebraic and step.capture >= 0.9
        assert step.variety.degree == 2

    def test_uniform_is_cellular(self):
        assert cell_or_algebraic_step(uniform_ball(), 4).branch == "cellular"

    def test_single_cube(self):
        step = cell_or_algebraic_step(CubeSet(DELTA, [[3, 4, 5]]), 4)
        assert step.algebraic and step.capture == 1.0


class TestGrains:
    def test_hyperplane_single_grain(self):
        gd = grains_decompose(plane_slab(), 0.2)
        assert len(gd) == 1
        assert gd.captured >= 0.9 * len(gd.cubes)
        assert gd.traces == [()]

    def test_two_slabs(self):
        gd = grains_decompose(two_slabs(), 0.2)
        assert gd.passed
        assert len(gd) <= 2 * 12

    def test_uniform_audits(self):
        gd = grains_decompose(uniform_ball(), 0.2)
        assert gd.passed
        assert gd.audits["capture"]["captured"] >= DELTA**0.2 * 10_000

    def test_deterministic(self):
        a = grains_decompose(uniform_ball(), 0.2, seed=4).manifest()
        b = grains_decompose(uniform_ball(), 0.2, seed=4).manifest()
        assert a == b

    def test_members_disjoint(self):
        gd = grains_decompose(CUBE_SETS["orthogonal_planes"](), 0.2)
        allm = np.concatenate(gd.members)
        assert allm.size == np.unique(allm).size

    def test_epsilon_range(self):
        with pytest.raises(DomainError):
            grains_decompose(plane_slab(), 1.5)

    def test_pigeonhole_ties_to_smaller(self):
        assert pigeonhole_classes([2, 3, 4]) == 1
        assert pigeonhole_classes([1, 1, 2]) == 0


class TestSubgrains:
    def setup_method(self):
        self.g = grains_decompose(plane_slab(), 0.2).grains[0]

    def test_large_scale_is_identity(self):
        c = plane_slab()
        small = c.subset(np.flatnonzero(np.linalg.norm(c.centers(), axis=1) < 0.5))
        g = grains_decompose(small, 0.2).grains[0]
        assert subgrain_cover(g, g.diameter()) == [g]

    def test_cover_and_overlap(self):
        subs = subgrain_cover(self.g, 1 / 4)
        assert 1 < len(subs) <= 100
        assert cover_overlap(subs) <= 3**3
        covered = {tuple(r) for s in subs for r in np.asarray(s.cubes).tolist()}
        assert covered == {tuple(r) for r in np.asarray(self.g.cubes).tolist()}

    def test_scale_floor(self):
        with pytest.raises(PreconditionError):
            subgrain_cover(self.g, DELTA / 4)


class TestTrilinearStatistics:
    def test_requires_decomposition(self):
        arr = gen_bush([0, 0, 0], 4, 1 / 8)
        with pytest.raises(DomainError):
            trilinear_statistics(arr, None)

    def test_single_tube_empty(self):
        arr = full_shading(Arrangement(3, 1 / 8, [Tube(0, (0, 0, 0), (1, 0, 0), 1 / 8)]))
        gd = grains_decompose(active_cubes(arr), 0.2, check=False)
        assert trilinear_statistics(arr, gd).empty

    def test_bush(self):
        arr = full_shading(gen_bush([0, 0, 0], 8, 1 / 8, seed=0))
        gd = grains_decompose(active_cubes(arr), 0.2, check=False)
        st = trilinear_statistics(arr, gd)
        assert not st.empty
        assert st.per_cell_ok
        assert 0 < st.theta <= 1
        assert st.mu <= 8
