"""Union volumes, multiplicity statistics, multilinear functionals and inequality checks.

Cell data are streamed slab by slab (see :meth:`Arrangement.iter_incidence`)
so arrangements whose incidence does not fit in memory can still be
evaluated. Per-slab partial sums are combined with ``math.fsum`` in slab
order, which makes every result independent of thread count.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import kernels
from .arrangement import Arrangement, Incidence
from .errors import DomainError, PreconditionError, ResourceError, SpecificationError
from .geometry import VoxelGrid, VoxelSet

TRIPLE_CAP = 4096
MAX_PAIRS = 4_000_000
DEFAULT_EPSILON = 0.05


def _slab_cells(arr: Arrangement, max_pairs: int = MAX_PAIRS) -> Iterator[np.ndarray]:
    """All shading cells (with repetition, one entry per tube) slab by slab."""
    for box in arr.slab_boxes(max_pairs):
        cells, _ = arr.shading_cells(box=box)
        yield cells


def _require_same_grid(arrs: Sequence[Arrangement]) -> VoxelGrid:
    g = arrs[0].grid
    for a in arrs[1:]:
        g.require_same(a.grid)
    return g


# ---------------------------------------------------------------------------
# volume and multiplicity

def union_volume(arr: Arrangement, max_pairs: int = MAX_PAIRS) -> float:
    """Measure of the union of all shadings on the arrangement's grid."""
    if len(arr) == 0:
        return 0.0
    total = 0
    for cells in _slab_cells(arr, max_pairs):
        if cells.size:
            total += int(np.unique(cells).size)
    return total * arr.grid.cell_volume


def union_cells(arr: Arrangement) -> VoxelSet:
    """The union of all shadings as an explicit voxel set."""
    if len(arr) == 0:
        return VoxelSet.empty(arr.grid)
    parts = [np.unique(c) for c in _slab_cells(arr)]
    return VoxelSet(arr.grid, np.concatenate(parts))


def multiplicity_histogram(arr: Arrangement, max_pairs: int = MAX_PAIRS) -> np.ndarray:
    """``hist[m]`` = number of cells covered by exactly ``m`` shadings (``hist[0]`` unused)."""
    hist = np.zeros(2, dtype=np.int64)
    for cells in _slab_cells(arr, max_pairs):
        if not cells.size:
            continue
        _, counts = np.unique(cells, return_counts=True)
        h = np.bincount(counts)
        if h.size > hist.size:
            hist = np.pad(hist, (0, h.size - hist.size))
        hist[: h.size] += h
    hist[0] = 0
    return hist


def multiplicity_field(arr: Arrangement) -> tuple[np.ndarray, np.ndarray]:
    """Occupied cells and their multiplicities (sorted by cell)."""
    cs, ms = [], []
    for cells in _slab_cells(arr):
        if cells.size:
            c, m = np.unique(cells, return_counts=True)
            cs.append(c)
            ms.append(m)
    if not cs:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(cs), np.concatenate(ms)


def lp_norm(arr: Arrangement, p: float) -> float:
    """``|| sum_T chi_Y(T) ||_p`` on the grid."""
    if p < 1:
        raise PreconditionError("p must be at least 1")
    hist = multiplicity_histogram(arr)
    m = np.arange(hist.size, dtype=np.float64)
    s = math.fsum((hist[1:] * m[1:] ** p).tolist()) * arr.grid.cell_volume
    return s ** (1.0 / p)


def dyadic_class(values: np.ndarray) -> np.ndarray:
    """``floor(log2 v)`` for positive integers, computed exactly."""
    v = np.asarray(values, dtype=np.int64)
    out = np.zeros(v.shape, dtype=np.int64)
    x = v.copy()
    while np.any(x > 1):
        big = x > 1
        out[big] += 1
        x[big] >>= 1
    return out


@dataclass(frozen=True)
class MultiplicityResult:
    """Dyadic pigeonholing of cell multiplicities.

    ``mu`` is the mean multiplicity over the dominant class ``B`` (the class
    carrying the most shading mass, ties toward the smaller class).
    """

    mu: float
    klass: int
    B_measure: float
    B: VoxelSet | None
    class_mass: dict[int, float]
    total_mass: float
    max_multiplicity: int
    histogram: tuple[int, ...]
    empty: bool = False

    @property
    def mass_ratio(self) -> float:
        return self.class_mass.get(self.klass, 0.0) / self.total_mass if self.total_mass else 0.0

    def class_of(self, m: int) -> int:
        return int(dyadic_class(np.array([m]))[0])

    def class_mean(self, k: int) -> float:
        hist = np.asarray(self.histogram)
        m = np.arange(hist.size)
        sel = (m >= 2**k) & (m < 2 ** (k + 1))
        cells = hist[sel].sum()
        return float((hist[sel] * m[sel]).sum() / cells) if cells else 0.0


def multiplicity(arr: Arrangement, keep_set: bool | None = None, max_cells: int = 20_000_000) -> MultiplicityResult:
    """Per-cell multiplicity summary with the dominant dyadic class.

    ``B`` is materialized when ``keep_set`` is true, or by default when the
    union has at most ``max_cells`` cells.
    """
    hist = multiplicity_histogram(arr)
    vol = arr.grid.cell_volume
    if hist.sum() == 0:
        return MultiplicityResult(0.0, 0, 0.0, VoxelSet.empty(arr.grid), {}, 0.0, 0, tuple(hist.tolist()), True)
    m = np.arange(hist.size)
    cls = dyadic_class(np.maximum(m, 1))
    masses: dict[int, float] = {}
    for k in np.unique(cls[1:][hist[1:] > 0]):
        sel = (cls == k) & (m >= 1)
        masses[int(k)] = float((hist[sel] * m[sel]).sum()) * vol
    klass = min(masses, key=lambda k: (-masses[k], k))
    sel = (cls == klass) & (m >= 1)
    count = int(hist[sel].sum())
    mu = float((hist[sel] * m[sel]).sum() / count)
    total = float((hist * m).sum()) * vol
    want = keep_set if keep_set is not None else int(hist.sum()) <= max_cells
    B = None
    if want:
        cells, mult = multiplicity_field(arr)
        B = VoxelSet(arr.grid, cells[dyadic_class(mult) == klass])
    return MultiplicityResult(mu, klass, count * vol, B, masses, total, int(np.flatnonzero(hist)[-1]),
                              tuple(int(x) for x in hist))


# ---------------------------------------------------------------------------
# multilinear functionals

TRILINEAR_WEDGE_POWER = 12 / 13
TRILINEAR_OUTER_POWER = 13 / 27


def _incidences_with_min(arr: Arrangement, min_mult: int) -> Iterator[Incidence]:
    for inc in arr.iter_incidence():
        if not len(inc):
            continue
        keep = inc.multiplicity >= min_mult
        if not keep.any():
            continue
        if keep.all():
            yield inc
            continue
        idx = np.flatnonzero(keep)
        lens = inc.multiplicity[idx]
        starts = inc.indptr[idx]
        pos = np.repeat(starts - np.concatenate([[0], np.cumsum(lens)[:-1]]), lens) + np.arange(lens.sum())
        indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        yield Incidence(inc.grid, inc.cells[idx], indptr, inc.tubes[pos])


def trilinear_cell_sums(arr: Arrangement, cap: int = TRIPLE_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Cells with at least three incident shadings and their unordered-triple wedge sums."""
    dirs = np.ascontiguousarray(arr.directions())
    cs, ss = [], []
    for inc in _incidences_with_min(arr, 3):
        try:
            s = kernels.triple_sums(inc.indptr, np.ascontiguousarray(inc.tubes, dtype=np.int32), dirs,
                                    TRILINEAR_WEDGE_POWER, cap)
        except MemoryError as exc:
            raise ResourceError(str(exc)) from None
        cs.append(inc.cells)
        ss.append(np.asarray(s))
    if not cs:
        return np.empty(0, np.int64), np.empty(0)
    return np.concatenate(cs), np.concatenate(ss)


def trilinear_functional(arr: Arrangement, cap: int = TRIPLE_CAP) -> float:
    """``int ( sum over ordered triples chi chi chi |v1^v2^v3|^(12/13) )^(13/27)`` on the grid.

    Each unordered triple of distinct tubes appears six times among ordered
    triples; triples with a repeated tube have zero wedge.
    """
    if arr.n != 4:
        raise PreconditionError("the trilinear functional is defined in R^4")
    _, s = trilinear_cell_sums(arr, cap)
    vals = (6.0 * s) ** TRILINEAR_OUTER_POWER
    return math.fsum(vals.tolist()) * arr.grid.cell_volume


def multilinear_cell_sums(families: Sequence[Arrangement]) -> tuple[np.ndarray, np.ndarray, VoxelGrid]:
    """Cells covered by all three families and their cross-family wedge sums."""
    if len(families) != 3:
        raise DomainError("exactly three families are required")
    grid = _require_same_grid(families)
    if any(len(f) == 0 for f in families):
        return np.empty(0, np.int64), np.empty(0), grid
    merged_tubes, fam = [], []
    shadings = {}
    for k, f in enumerate(families):
        for t in f.tubes:
            nid = len(merged_tubes)
            merged_tubes.append(t.with_id(nid))
            fam.append(k)
            if t.id in f.shadings:
                sh = f.shadings[t.id]
                shadings[nid] = type(sh)(nid, sh.cells, sh.tube_volume)
    base = families[0]
    arr = Arrangement(base.n, base.delta, merged_tubes, shadings, h=base.h, cell_budget=base.cell_budget)
    family = np.asarray(fam, dtype=np.int8)
    dirs = np.ascontiguousarray(arr.directions())
    cs, ss = [], []
    for inc in _incidences_with_min(arr, 3):
        s = np.asarray(kernels.cross_triple_sums(inc.indptr, np.ascontiguousarray(inc.tubes, dtype=np.int32),
                                                 family, dirs, 1.0))
        keep = s > 0
        cs.append(inc.cells[keep])
        ss.append(s[keep])
    if not cs:
        return np.empty(0, np.int64), np.empty(0), grid
    return np.concatenate(cs), np.concatenate(ss), grid


def multilinear_kakeya_lhs(arr1: Arrangement, arr2: Arrangement, arr3: Arrangement, mode: str = "inner") -> float:
    """Three-family multilinear Kakeya quantity.

    ``mode="inner"`` integrates the square root of the cellwise sum
    ``sum chi_T1 chi_T2 chi_T3 |v1^v2^v3|``; ``mode="outer"`` takes the
    square root of its integral.
    """
    if mode not in ("inner", "outer"):
        raise DomainError("mode must be 'inner' or 'outer'")
    _, s, grid = multilinear_cell_sums((arr1, arr2, arr3))
    if mode == "inner":
        return math.fsum(np.sqrt(s).tolist()) * grid.cell_volume
    return math.sqrt(math.fsum(s.tolist()) * grid.cell_volume)


def multilinear_rhs(arr1: Arrangement, arr2: Arrangement, arr3: Arrangement) -> float:
    return arr1.delta**4 * math.sqrt(len(arr1) * len(arr2) * len(arr3))


# ---------------------------------------------------------------------------
# planar L2 estimate

@dataclass(frozen=True)
class CordobaResult:
    l2_norm: float
    bound: float
    ratio: float


def cordoba_l2(strips: Sequence[VoxelSet], E: float, theta: float, count: int | None = None) -> CordobaResult:
    """``|| sum chi_strip ||_2`` in the plane against ``theta^(-1/2) E^(1/2) N^(1/2) theta``."""
    if not strips:
        return CordobaResult(0.0, 0.0, 0.0)
    grid = strips[0].grid
    if grid.n != 2:
        raise PreconditionError("strips must live on a planar grid")
    for s in strips[1:]:
        grid.require_same(s.grid)
    if grid.h > theta * (1 + 1e-12):
        raise PreconditionError("grid must resolve the strip width")
    cells = np.concatenate([s.cells for s in strips])
    _, m = np.unique(cells, return_counts=True)
    l2 = math.sqrt(math.fsum((m.astype(np.float64) ** 2).tolist()) * grid.cell_volume)
    N = len(strips) if count is None else count
    bound = theta**-0.5 * math.sqrt(E) * math.sqrt(N) * theta
    return CordobaResult(l2, bound, l2 / bound if bound > 0 else math.inf)


def planar_strip(center: Sequence[float], direction: Sequence[float], theta: float, grid: VoxelGrid,
                 length: float = 1.0) -> VoxelSet:
    """Cells of a planar grid inside the width-``2 theta`` strip around a unit segment."""
    from .geometry import Tube, voxelize_tube

    return voxelize_tube(Tube.clipped(0, center, direction, theta, length), grid)


# ---------------------------------------------------------------------------
# inequality checks

@dataclass(frozen=True)
class CheckSpec:
    name: str
    direction: str  # "lower": LHS >= c RHS, "upper": LHS <= C RHS
    lhs: str
    symbols: tuple[str, ...]
    description: str


def _rhs(name: str, s: Mapping[str, float]) -> float:
    d, lam, K, N, eps = s.get("delta"), s.get("lambda"), s.get("K"), s.get("N"), s.get("epsilon")
    th = s.get("theta")
    mass = d**3 * N if d is not None and N is not None else None
    if name == "volumeBoundExplicit":
        return lam ** (3 + 1 / 28) / K * d ** (1 - 1 / 28 + eps) * mass
    if name == "volumeOfTrlinearTubes":
        return lam ** (3 + 1 / 4) * K ** -0.25 * th * d ** (3 / 4 + eps) * mass**0.25
    if name == "alternateTrilinBound":
        return lam ** (3 + 1 / 4) / K * th * d ** (3 / 4 + eps) * mass
    if name == "volumeBound1":
        return lam**3 / K * th ** (-1 / 6) * d ** (1 + eps) * mass
    if name == "WolffBoundOnTubes":
        rho = s["rho"]
        return lam**-0.5 / rho * math.sqrt(rho**3 * N)
    if name == "smallHairbrushCoarseEstimate":
        return 1 / lam / th * math.sqrt(s["E"]) * s["D"] ** 0.25 * s["rho"] ** 0.25 * (th**3 * N) ** 0.25
    if name == "hairBrushBd":
        return lam**2 * th**2 * s["mu_theta"] * max(1 / s["E"], 1 / s["D"])
    if name == "fineCoarseMu":
        return s["mu_fine"] * s["mu_coarse"]
    if name == "muBbound":
        return s["mu_fine"] / (th * s["B"])
    if name == "muest1":
        return lam**-0.5 / d / math.sqrt(s["A"]) / s["B"] * math.sqrt(mass)
    if name == "muest2":
        return lam ** (-11 / 6) * th ** (1 / 3) / d * math.sqrt(s["A"]) * s["B"] ** (1 / 3) * mass ** (-1 / 6)
    if name == "pointwiseMuBdInsideTube":
        return lam**-0.5 * th ** (1 + eps) / d / math.sqrt(s["A"]) * math.sqrt(mass)
    if name == "estimate2":
        return lam ** (-4 / 3) * th ** (-2 / 3) * s["A"] * s["B"] ** (1 / 3) * mass ** (-2 / 3)
    if name == "trilinearBoundFixedP":
        return d ** (-1 / 3 - eps) * K ** (1 / 9) * mass ** (4 / 3)
    if name == "trilinearBoundKInverse":
        return d ** (-1 / 3 - eps) / K * mass ** (4 / 3)
    if name == "multilinearKakeya":
        return d**4 * math.sqrt(s["N1"] * s["N2"] * s["N3"])
    if name == "maximalFnBd":
        return d ** (-27 / 85)
    raise SpecificationError(name, "check catalog")


CHECKS: dict[str, CheckSpec] = {
    c.name: c
    for c in [
        CheckSpec("volumeBoundExplicit", "lower", "union_volume", ("delta", "lambda", "K", "N", "epsilon"),
                  "union volume against lambda^(3+1/28) K^-1 delta^(1-1/28+eps) (delta^3 N)"),
        CheckSpec("volumeOfTrlinearTubes", "lower", "union_volume", ("delta", "lambda", "K", "N", "epsilon", "theta"),
                  "union volume against lambda^(13/4) K^(-1/4) theta delta^(3/4+eps) (delta^3 N)^(1/4)"),
        CheckSpec("alternateTrilinBound", "lower", "union_volume", ("delta", "lambda", "K", "N", "epsilon", "theta"),
                  "union volume against lambda^(13/4) K^-1 theta delta^(3/4+eps) (delta^3 N)"),
        CheckSpec("volumeBound1", "lower", "union_volume", ("delta", "lambda", "K", "N", "epsilon", "theta"),
                  "union volume against lambda^3 K^-1 theta^(-1/6) delta^(1+eps) (delta^3 N)"),
        CheckSpec("WolffBoundOnTubes", "upper", "mu", ("lambda", "N", "rho"),
                  "multiplicity against lambda^(-1/2) rho^-1 (rho^3 N)^(1/2)"),
        CheckSpec("smallHairbrushCoarseEstimate", "upper", "mu_coarse", ("lambda", "N", "theta", "E", "D", "rho"),
                  "coarse multiplicity against lambda^-1 theta^-1 E^(1/2) D^(1/4) rho^(1/4) (theta^3 N)^(1/4)"),
        CheckSpec("hairBrushBd", "lower", "hair_volume", ("lambda", "theta", "mu_theta", "E", "D"),
                  "hairbrush volume against lambda^2 theta^2 mu_theta max(1/E, 1/D)"),
        CheckSpec("fineCoarseMu", "upper", "mu", ("mu_fine", "mu_coarse"), "mu against mu_fine mu_coarse"),
        CheckSpec("muBbound", "upper", "mu", ("theta", "B", "mu_fine"), "mu against theta^-1 B^-1 mu_fine"),
        CheckSpec("muest1", "upper", "mu", ("lambda", "delta", "A", "B", "N"),
                  "mu against lambda^(-1/2) delta^-1 A^(-1/2) B^-1 (delta^3 N)^(1/2)"),
        CheckSpec("muest2", "upper", "mu", ("lambda", "theta", "delta", "A", "B", "N"),
                  "mu against lambda^(-11/6) theta^(1/3) delta^-1 A^(1/2) B^(1/3) (delta^3 N)^(-1/6)"),
        CheckSpec("pointwiseMuBdInsideTube", "upper", "mu_fine", ("lambda", "theta", "delta", "A", "N", "epsilon"),
                  "fine multiplicity against lambda^(-1/2) theta^(1+eps) delta^-1 A^(-1/2) (delta^3 N)^(1/2)"),
        CheckSpec("estimate2", "upper", "mu_coarse", ("lambda", "theta", "A", "B", "delta", "N"),
                  "coarse multiplicity against lambda^(-4/3) theta^(-2/3) A B^(1/3) (delta^3 N)^(-2/3)"),
        CheckSpec("trilinearBoundFixedP", "upper", "trilinear", ("delta", "K", "N", "epsilon"),
                  "trilinear functional against delta^(-1/3-eps) K^(1/9) (delta^3 N)^(4/3)"),
        CheckSpec("trilinearBoundKInverse", "upper", "trilinear", ("delta", "K", "N", "epsilon"),
                  "trilinear functional against delta^(-1/3-eps) K^-1 (delta^3 N)^(4/3)"),
        CheckSpec("maximalFnBd", "upper", "lp_85_57", ("delta",),
                  "L^(85/57) norm of the multiplicity against delta^(-27/85)"),
    ]
}

DEFAULT_BANDS = {"lower": (1e-3, math.inf), "upper": (0.0, 1e3)}


@dataclass(frozen=True)
class CheckResult:
    name: str
    lhs: float
    inputs: dict
    rhs: float
    ratio: float
    band: tuple[float, float]
    verdict: str
    direction: str
    epsilon: float = DEFAULT_EPSILON
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "vacuous-pass")

    def row(self) -> dict:
        return {
            "name": self.name,
            "delta": self.inputs.get("delta", ""),
            "lambda": self.inputs.get("lambda", ""),
            "theta": self.inputs.get("theta", ""),
            "K_lower": self.inputs.get("K", ""),
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "verdict": self.verdict,
        }


CHECK_CSV_COLUMNS = ["name", "delta", "lambda", "theta", "K_lower", "lhs", "rhs", "ratio", "verdict"]


def checks_to_csv(results: Iterable[CheckResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CHECK_CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in results:
        w.writerow({k: _fmt(v) for k, v in r.row().items()})
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def measured_lambda(arr: Arrangement) -> float:
    """Smallest shading density over tubes entering statistics (clipped to 1)."""
    lam = arr.lambdas()
    mask = arr.statistical_mask()
    if not lam.size or not mask.any():
        raise SpecificationError("lambda", "an arrangement without statistical tubes")
    return float(min(1.0, lam[mask].min()))


def _measure_lhs(kind: str, arr: Arrangement, params: Mapping) -> float:
    if kind in params:
        return float(params[kind])
    if kind == "union_volume":
        return union_volume(arr)
    if kind == "mu":
        return multiplicity(arr, keep_set=False).mu
    if kind == "trilinear":
        return trilinear_functional(arr)
    if kind == "lp_85_57":
        return lp_norm(arr, 85 / 57)
    raise SpecificationError(kind, "left-hand side")


def check(name: str, arr: Arrangement | None = None, params: Mapping | None = None,
          band: tuple[float, float] | None = None) -> CheckResult:
    """Evaluate one catalogued inequality as a ratio LHS / RHS (RHS at unit constant).

    Symbols not in ``params`` are measured from ``arr`` when possible: delta,
    N (tube count), lambda (smallest shading density), rho (= delta), K (the
    linear Wolff lower bound) and the left-hand side itself. Any other missing
    symbol raises :class:`SpecificationError`.
    """
    if name not in CHECKS:
        raise SpecificationError(name, "check catalog")
    spec = CHECKS[name]
    params = dict(params or {})
    band = band or tuple(params.pop("band", DEFAULT_BANDS[spec.direction]))
    eps = float(params.get("epsilon", DEFAULT_EPSILON))
    sym: dict[str, float] = {"epsilon": eps}
    if arr is not None:
        sym["delta"] = arr.delta
        sym["N"] = len(arr)
        sym["rho"] = arr.delta
    for k, v in params.items():
        if k in ("epsilon",) or k == spec.lhs:
            continue
        sym[k] = float(v)
    if arr is not None and len(arr) == 0:
        return CheckResult(name, 0.0, sym, math.nan, 0.0, band, "vacuous-pass", spec.direction, eps,
                           "empty arrangement")
    for needed in spec.symbols:
        if needed in sym:
            continue
        if needed == "lambda" and arr is not None:
            sym["lambda"] = measured_lambda(arr)
        elif needed == "K" and arr is not None:
            from .axioms import linear_wolff_constant

            sym["K"] = max(1.0, linear_wolff_constant(arr, probes=0).K_lower)
        else:
            raise SpecificationError(needed, name)
    if arr is None and spec.lhs not in params:
        raise SpecificationError(spec.lhs, name)
    lhs = _measure_lhs(spec.lhs, arr, params) if arr is not None else float(params[spec.lhs])
    rhs = _rhs(name, sym)
    ratio = lhs / rhs if rhs > 0 else math.inf
    lo, hi = band
    verdict = "pass" if lo <= ratio <= hi else "fail"
    return CheckResult(name, lhs, sym, rhs, ratio, (lo, hi), verdict, spec.direction, eps)
