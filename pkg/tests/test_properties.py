"""Randomized invariants, one hypothesis strategy per family of objects."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tubelab.arrangement import Arrangement
from tubelab.arrangements import (
    fatten_tubes,
    gen_bush,
    gen_direction_separated,
    gen_flat_concentration,
    interval_shading,
    random_cell_shading,
)
from tubelab.axioms import hypersurface_concentration
from tubelab.functionals import lp_norm, trilinear_functional, union_volume
from tubelab.geometry import (
    CentralProjection,
    Cylinder,
    Tube,
    VoxelSet,
    cylinder_rescale,
    line_angle,
    normalize,
    voxelize_tube,
    wedge3,
)
from tubelab.partition_grains import CubeSet, polynomial_partition
from tubelab.reductions import dyadic_refine, planiness_split, robust_transversality_split, two_ends_reduce
from tubelab.semialgebraic import (
    Polynomial,
    ball_set,
    connected_components,
    measure_estimate,
    variety_neighborhood,
)

seeds = st.integers(0, 2**16)
coord = st.floats(-1.0, 1.0, allow_nan=False)


def _unit(n):
    return st.lists(coord, min_size=n, max_size=n).map(np.array).filter(lambda v: np.linalg.norm(v) > 1e-3).map(
        normalize)


def _shaded(seed, delta=1 / 8, n=4):
    rng = np.random.default_rng(seed)
    arr = gen_bush([0.0] * n, int(rng.integers(3, 10)), delta, seed=seed, spread=0.6)
    if rng.random() < 0.5:
        return interval_shading(arr, float(rng.uniform(0.3, 0.9)), seed=seed)
    return random_cell_shading(arr, float(rng.uniform(0.3, 0.9)), seed=seed)


def _cells(arr, tid):
    return arr.shading(tid).cells


# core geometry -------------------------------------------------------------

@given(_unit(4), _unit(4), _unit(4))
def test_wedge3_symmetric_and_bounded_by_pairwise_sines(a, b, c):
    w = wedge3(a, b, c)
    for p in ((b, a, c), (c, b, a), (a, c, b)):
        assert wedge3(*p) == pytest.approx(w, abs=1e-12)
    sines = [math.sin(line_angle(x, y)) for x, y in ((a, b), (a, c), (b, c))]
    assert w <= min(sines) + 1e-12


@given(st.floats(-1, 1), st.floats(-1, 1), seeds)
def test_central_projection_fixes_target_plane(s, t, seed):
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((2, 4))
    q = rng.standard_normal(4)
    u = rng.standard_normal(4)
    try:
        P = CentralProjection(np.zeros(4) + 3 * rng.standard_normal(4), u, q, basis)
    except Exception:
        assume(False)
    x = q + s * P.e + t * P.f
    w = x - P.p
    assume(np.linalg.norm(w - np.dot(w, P.u) * P.u) > 1e-3)
    try:
        y = P(x)
    except Exception:
        assume(False)
    assert np.allclose(y, x, atol=1e-9)


@given(st.lists(st.tuples(st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), _unit(3)),
                min_size=1, max_size=6))
def test_cylinder_rescale_inverts(specs):
    tubes = []
    for i, (p1, p2, p3, w) in enumerate(specs):
        v = normalize(np.concatenate([[1.0], 0.15 * w]))
        tubes.append(Tube(i, (0.0, p1, p2, p3), v, 1 / 32))
    arr = Arrangement(4, 1 / 32, tubes)
    cyl = Cylinder((0, 0, 0, 0), (1, 0, 0, 0), 0.5)
    out, fmap = cylinder_rescale(arr, cyl)
    inv = fmap.inverse()
    for t in tubes:
        img = out.tube(t.id)
        assert np.allclose(inv.apply(img.c), t.c, atol=1e-9)
        d = normalize(inv.apply_vector(img.v))
        assert min(np.linalg.norm(d - t.v), np.linalg.norm(d + t.v)) < 1e-9


# semialgebraic -------------------------------------------------------------

@given(st.floats(0.1, 0.6), st.floats(0.05, 0.4), seeds)
def test_measure_monotone_under_inclusion(r, extra, seed):
    small, se1 = measure_estimate(ball_set([0, 0, 0], r), 4000, seed)
    big, se2 = measure_estimate(ball_set([0, 0, 0], r + extra), 4000, seed + 1)
    assert small <= big + 3 * math.hypot(se1, se2)


@given(st.floats(1e-3, 1e3), _unit(3), st.floats(-0.5, 0.5), seeds)
def test_neighborhood_scale_free(c, normal, offset, seed):
    P = Polynomial.linear(normal, offset) * Polynomial.linear([1, 0, 0], 0.1)
    pts = np.random.default_rng(seed).uniform(-1, 1, (500, 3))
    a = variety_neighborhood(P, 0.05).contains(pts)
    b = variety_neighborhood(P.scaled(c), 0.05).contains(pts)
    assert np.array_equal(a, b)


@given(seeds, st.floats(0.2, 0.9))
def test_components_partition_tube_region(seed, keep):
    arr = Arrangement(3, 1 / 8, [Tube(0, (0, 0, 0), (1, 0, 0), 1 / 8)])
    g = arr.grid
    cells = voxelize_tube(arr.tubes[0], g).cells
    rng = np.random.default_rng(seed)
    region = VoxelSet(g, cells[rng.random(cells.size) < keep])
    comps = connected_components(arr.tubes[0], region)
    sets = [c for c, _ in comps]
    total = VoxelSet.union_all(g, sets)
    assert total == region
    assert sum(len(s) for s in sets) == len(region)


# arrangements --------------------------------------------------------------

@settings(max_examples=8)
@given(seeds, st.sampled_from([3, 4]))
def test_generators_deterministic(seed, n):
    for make in (lambda: gen_direction_separated(n, 1 / 8, seed=seed),
                 lambda: gen_flat_concentration(2, 1 / 8, seed=seed, n=n, count=20)):
        a, b = make(), make()
        assert [t.to_record() for t in a.tubes] == [t.to_record() for t in b.tubes]


@given(seeds)
def test_fatten_partitions_retained_tubes(seed):
    fd = fatten_tubes(gen_bush([0, 0, 0, 0], 10, 1 / 16, seed=seed, spread=0.5), 1 / 4)
    members = [i for m in fd.members.values() for i in m]
    assert sorted(members) == sorted(fd.assignment)
    assert len(members) == len(set(members))
    assert all(fd.assignment[i] == f for f, m in fd.members.items() for i in m)


# axioms --------------------------------------------------------------------

@settings(max_examples=8)
@given(_unit(4), st.floats(-0.3, 0.3), seeds)
def test_hypersurface_monotone_in_M(normal, offset, seed):
    arr = gen_direction_separated(4, 1 / 8, seed=seed % 8)
    P = Polynomial.linear(normal, offset)
    r = [hypersurface_concentration(arr, P, ([0, 0, 0, 0], 1.0), M=M).ratio for M in (1, 2, 4)]
    assert r == sorted(r)


# functionals ---------------------------------------------------------------

@given(seeds, st.integers(1, 4), st.sampled_from([1.25, 85 / 57, 2.0]))
def test_lp_duplication_factor(seed, m, p):
    arr = gen_direction_separated(3, 1 / 8, seed=seed % 16)
    dup = Arrangement(3, 1 / 8, [t.with_id(i) for i, t in enumerate(list(arr.tubes) * m)])
    assert lp_norm(dup, p) == pytest.approx(m * lp_norm(arr, p), rel=1e-12)


@given(seeds)
def test_union_below_total_with_equality_iff_disjoint(seed):
    arr = _shaded(seed)
    total = sum(len(_cells(arr, t.id)) for t in arr.tubes) * arr.grid.cell_volume
    vol = union_volume(arr)
    assert vol <= total + 1e-15
    cells = np.concatenate([_cells(arr, t.id).cells for t in arr.tubes])
    disjoint = np.unique(cells).size == cells.size
    assert (vol == pytest.approx(total, rel=1e-12)) == disjoint


@given(seeds, st.randoms(use_true_random=False))
def test_trilinear_permutation_invariant(seed, rnd):
    arr = gen_bush([0, 0, 0, 0], 7, 1 / 8, seed=seed)
    order = list(range(len(arr)))
    rnd.shuffle(order)
    perm = Arrangement(4, 1 / 8, [arr.tubes[k].with_id(i) for i, k in enumerate(order)])
    assert trilinear_functional(perm) == pytest.approx(trilinear_functional(arr), rel=1e-9)


# partition -----------------------------------------------------------------

@given(seeds, st.sampled_from([2, 4, 8]))
def test_partition_exact_identity(seed, A):
    pts = np.random.default_rng(seed).uniform(-0.5, 0.5, (400, 3))
    c = CubeSet.from_points(pts, 1 / 64)
    p = polynomial_partition(c, A, seed=seed)
    parts = np.concatenate([*p.cells.values(), p.boundary])
    assert np.array_equal(np.sort(parts), np.arange(len(c)))


# reductions ----------------------------------------------------------------

def _subset_and_accounting(parent, ref):
    for t in ref.arrangement.tubes:
        assert _cells(ref.arrangement, t.id).issubset(_cells(parent, t.id))
    before = sum(len(_cells(parent, t.id)) for t in parent.tubes)
    after = sum(len(_cells(ref.arrangement, t.id)) for t in ref.arrangement.tubes)
    assert (ref.mass_before, ref.mass_after) == (before, after)


@given(seeds)
def test_dyadic_subset_and_accounting(seed):
    arr = _shaded(seed)
    _subset_and_accounting(arr, dyadic_refine(arr))


@given(seeds, st.floats(0.05, 0.5))
def test_two_ends_certificate(seed, eps0):
    arr = _shaded(seed)
    ref, cert = two_ends_reduce(arr, eps0)
    _subset_and_accounting(arr, ref)
    assert cert.passed
    assert cert.alpha <= 4 * math.log2(1 / arr.delta)


@given(seeds, st.floats(0.01, 0.5), st.floats(0.1, 1.0))
def test_transversality_split_exact(seed, s, t):
    arr = _shaded(seed)
    sp = robust_transversality_split(arr, s, t)
    assert sp.good.isdisjoint(sp.bad)
    assert sp.good.union(sp.bad) == VoxelSet(arr.grid, np.unique(arr.shading_cells()[0]))


@given(seeds, st.floats(0.1, 1.0))
def test_planiness_masses_exhaustive(seed, lam):
    arr = _shaded(seed)
    sp = planiness_split(arr, lam)
    mass = sum(len(_cells(arr, t.id)) for t in arr.tubes) * arr.grid.cell_volume
    assert sp.mass_plainy + sp.mass_trilinear == pytest.approx(mass, rel=1e-12)
    assert sp.plainy.isdisjoint(sp.trilinear)
