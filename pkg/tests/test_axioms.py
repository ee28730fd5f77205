import numpy as np
import pytest

from tubelab.arrangement import Arrangement
from tubelab.arrangements import gen_direction_separated, gen_flat_concentration, gen_quadric, quadric_polynomial
from tubelab.axioms import (
    Probe,
    default_probe_catalog,
    essential_distinctness,
    hypersurface_concentration,
    linear_wolff_constant,
    polynomial_wolff_constant,
    prism_bound,
)
from tubelab.errors import DomainError, PreconditionError
from tubelab.geometry import Tube
from tubelab.semialgebraic import Polynomial, measure_estimate, tube_neighborhood_set

D = 1 / 16


def _axis_tube(i=0, offset=(0.0, 0.0, 0.0)):
    return Tube(i, (0.0, *offset), (1.0, 0.0, 0.0, 0.0), D)


class TestLinear:
    def test_empty(self):
        rep = linear_wolff_constant(Arrangement(4, D, []))
        assert rep.K_lower == 0 and rep.witness is None

    def test_single_tube(self):
        rep = linear_wolff_constant(Arrangement(4, D, [_axis_tube()]), probes=8)
        assert rep.K_lower == pytest.approx(1.0)
        assert prism_bound((D, D, D), D) == pytest.approx(1.0)

    def test_stacked_parallel(self):
        m = 6
        tubes = [_axis_tube(i, (i * D, 0.0, 0.0)) for i in range(m)]
        rep = linear_wolff_constant(Arrangement(4, D, tubes), probes=8)
        assert rep.K_lower == pytest.approx(1.0)

    def test_quadric_bounded(self):
        ks = [linear_wolff_constant(gen_quadric(d, seed=0), probes=8, max_anchors=64).K_lower for d in (1 / 8, 1 / 16)]
        assert max(ks) / min(ks) <= 4
        assert max(ks) <= 64

    def test_csv_and_summary(self):
        rep = linear_wolff_constant(Arrangement(4, D, [_axis_tube()]), probes=2)
        assert rep.to_csv().splitlines()[0] == "probe_id,description,lambda,count,bound,ratio"
        assert rep.summary()["K_lower"] == rep.K_lower


class TestPolynomial:
    def test_single_tube_neighborhood(self):
        t = _axis_tube()
        arr = Arrangement(4, D, [t])
        S = tube_neighborhood_set(t, 10 * D)
        rep = polynomial_wolff_constant(arr, E_max=6, catalog=[Probe("N10", S)], samples=200_000)
        vol, _ = measure_estimate(S, 200_000, 0)
        at_one = [r for r in rep.records if r.lam == 1.0][0]
        assert at_one.count == 1
        assert at_one.ratio == pytest.approx(D**3 / vol, rel=0.05)
        assert np.isfinite(rep.K_lower)

    def test_quadric_shell_grows(self):
        # the shell holds ~delta^-3 tubes while its bound is ~delta^-2
        ks = []
        for d in (1 / 8, 1 / 16):
            arr = gen_quadric(d, seed=0)
            cat = [p for p in default_probe_catalog(arr, 4, probes=2) if p.spec.get("kind") == "quadric"]
            ks.append(polynomial_wolff_constant(arr, E_max=4, catalog=cat, samples=100_000).K_lower)
        assert ks[1] > 1.5 * ks[0]

    def test_catalog_budget(self):
        with pytest.raises(PreconditionError):
            polynomial_wolff_constant(Arrangement(4, D, [_axis_tube()]), E_max=13)

    def test_more_probes_never_lower(self):
        arr = gen_direction_separated(3, 1 / 8, seed=0)
        cat = default_probe_catalog(arr, 4, probes=4)
        small = polynomial_wolff_constant(arr, catalog=cat[:3], samples=20_000).K_lower
        big = polynomial_wolff_constant(arr, catalog=cat, samples=20_000).K_lower
        assert big >= small


class TestHypersurface:
    def test_disjoint_count_zero(self):
        arr = Arrangement(4, D, [_axis_tube(0, (0.5, 0, 0))])
        res = hypersurface_concentration(arr, Polynomial.linear([0, 1, 0, 0], -0.5), ([0, 0, 0, 0], 1.0))
        assert res.count == 0 and res.ratio == 0

    def test_flat_saturates(self):
        d = 1 / 8
        arr = gen_flat_concentration(3, d, seed=0, count=64)
        res = hypersurface_concentration(arr, Polynomial.variable(4, 3), ([0, 0, 0, 0], 1.0), M=2)
        assert res.count == 64
        assert res.ratio >= 1

    def test_monotone_in_M(self):
        arr = gen_direction_separated(4, 1 / 8, seed=0)
        P = Polynomial.variable(4, 3)
        r = [hypersurface_concentration(arr, P, ([0, 0, 0, 0], 1.0), M=M).ratio for M in (1, 2, 4, 8)]
        assert r == sorted(r)

    def test_ball_outside(self):
        with pytest.raises(DomainError):
            hypersurface_concentration(Arrangement(4, D, []), quadric_polynomial(), ([3, 0, 0, 0], 0.5))


class TestDistinctness:
    def test_single(self):
        assert essential_distinctness(Arrangement(4, D, [_axis_tube()])) == 1

    def test_duplicates(self):
        tubes = [_axis_tube(i) for i in range(5)]
        assert essential_distinctness(Arrangement(4, D, tubes)) >= 5

    def test_empty(self):
        assert essential_distinctness(Arrangement(4, D, [])) == 0
