"""Hyperplane-product partitioning, the cellular/algebraic dichotomy and grains.

Cubes are ``[0, delta)^n + delta v`` for integer rows ``v``. A partition is
cut out by a product of hyperplanes; cubes within ``margin`` of a cut go to a
boundary set instead of a cell. Grains are thin neighborhoods of fitted
low-degree varieties, each owning a disjoint set of cubes.
"""
from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AlgebraicSignal, AuditFailure, DichotomyFailure, DomainError, PreconditionError
from .geometry import VoxelGrid, VoxelSet, segment_distance, wedge3_batch
from .semialgebraic import (
    Grain,
    Polynomial,
    SemiAlgebraicSet,
    connected_components,
    monomials,
    variety_neighborhood,
)

C_ALG = 0.01
RETAIN_FRAC = 0.5
NEIGHBORHOOD_FACTOR = 4.0
# grains are small relative to the unit domain, so the gradient floor is off: a floor would accept
# every cube near a unit-norm polynomial whose gradient is tiny at the grain's scale
GRAIN_G_MIN = 0.0
BOUNDARY_MARGIN = 10.0
BALANCE_FACTOR = 2.0
SPLIT_DIRECTIONS = 64
FIT_SAMPLE_CAP = 4096


@dataclass(frozen=True)
class CubeSet:
    """Distinct lattice cubes of side ``delta``; rows of ``coords`` are sorted."""

    delta: float
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.int64)
        if c.ndim != 2:
            raise DomainError("cube coordinates must be a 2-d integer array")
        c = np.unique(c, axis=0) if c.shape[0] else c
        object.__setattr__(self, "coords", c)
        if not self.delta > 0:
            raise DomainError("cube side must be positive")

    @classmethod
    def from_points(cls, points, delta: float) -> "CubeSet":
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(delta, np.floor(p / delta).astype(np.int64))

    @classmethod
    def from_cells(cls, grid: VoxelGrid, cells) -> "CubeSet":
        """Voxel cells of ``grid`` viewed as cubes of side ``grid.h``."""
        return cls(grid.h, grid.coords(np.asarray(cells, dtype=np.int64)) - grid.half)

    @property
    def n(self) -> int:
        return int(self.coords.shape[1])

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    def centers(self, idx=None) -> np.ndarray:
        c = self.coords if idx is None else self.coords[idx]
        return (c.astype(np.float64) + 0.5) * self.delta

    def subset(self, idx) -> "CubeSet":
        return CubeSet(self.delta, self.coords[np.asarray(idx, dtype=np.int64)])

    def cells(self, grid: VoxelGrid) -> np.ndarray:
        """Flat voxel indices when ``grid.h == delta``."""
        if not math.isclose(grid.h, self.delta, rel_tol=1e-12):
            raise DomainError("grid spacing differs from cube side")
        return grid.flat(self.coords + grid.half)


# ---------------------------------------------------------------------------
# partitioning

@dataclass
class Partition:
    normals: np.ndarray
    offsets: np.ndarray
    cells: dict[int, np.ndarray]
    boundary: np.ndarray
    target_cells: int
    total: int
    balance_factor: float = BALANCE_FACTOR
    side_counts: dict[int, int] = field(default_factory=dict)

    @property
    def polynomial(self) -> Polynomial:
        n = self.normals.shape[1]
        p = Polynomial.constant(n, 1.0)
        for u, b in zip(self.normals, self.offsets):
            p = p * Polynomial.linear(u, b)
        return p

    @property
    def interior_count(self) -> int:
        return int(sum(v.size for v in self.cells.values()))

    @property
    def retention(self) -> float:
        return self.interior_count / self.total if self.total else 0.0

    @property
    def max_cell(self) -> int:
        return max((v.size for v in self.cells.values()), default=0)

    @property
    def balanced(self) -> bool:
        return self.max_cell <= self.balance_factor * self.total / self.target_cells + 1e-9

    def describe_cell(self, j: int) -> tuple[int, ...]:
        return tuple(1 if (j >> k) & 1 else -1 for k in range(len(self.offsets)))


def _is_power_of_two(a: int) -> bool:
    return a >= 1 and (a & (a - 1)) == 0


def polynomial_partition(cubes: CubeSet, target_cells: int, seed: int = 0, margin: float = BOUNDARY_MARGIN,
                         balance_factor: float = BALANCE_FACTOR, directions: int = SPLIT_DIRECTIONS) -> Partition:
    """Cut ``cubes`` by ``log2(target_cells)`` hyperplanes chosen to halve every cell.

    Each hyperplane sits at the median projection along the best of
    ``directions`` sampled unit vectors, scored by the sum of squared cell
    counts (then the largest cell). Cubes whose centers are within ``margin * delta`` plus the cube
    half-diagonal of some hyperplane form the boundary set.
    """
    m = len(cubes)
    A = int(target_cells)
    if m < 2:
        raise PreconditionError("partitioning needs at least two cubes")
    if not _is_power_of_two(A) or A > m:
        raise PreconditionError("target cell count must be a power of two not exceeding the cube count")
    X = cubes.centers()
    n = cubes.n
    rng = np.random.default_rng([seed, 21])
    label = np.zeros(m, dtype=np.int64)
    normals, offsets = [], []
    levels = int(round(math.log2(A)))
    spread_tol = 1e-9 * max(1.0, float(np.abs(X).max()))
    for k in range(levels):
        cand = rng.standard_normal((directions, n))
        if normals and len(normals) < n:
            basis, _ = np.linalg.qr(np.asarray(normals).T)
            half = directions // 2
            cand[:half] -= (cand[:half] @ basis) @ basis.T
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
        best = None
        for i, u in enumerate(cand):
            proj = X @ u
            if proj.max() - proj.min() <= spread_tol:
                continue
            off = float(np.median(proj))
            side = proj > off
            key = label * 2 + side
            cnt = np.bincount(key, minlength=2 ** (k + 1))
            score = (int(cnt @ cnt), int(cnt.max()))
            if best is None or score < best[0]:
                best = (score, u, off, side)
        if best is None:
            raise AlgebraicSignal("all cube centers coincide along every sampled direction")
        _, u, off, side = best
        normals.append(u)
        offsets.append(off)
        label = label | (side.astype(np.int64) << k)
    Nm = np.asarray(normals)
    Ob = np.asarray(offsets)
    dist = np.abs(X @ Nm.T - Ob)
    reach = margin * cubes.delta + cubes.delta * math.sqrt(n) / 2
    on_boundary = np.any(dist < reach, axis=1)
    cells = {}
    counts = np.bincount(label, minlength=A)
    for j in range(A):
        sel = np.flatnonzero((label == j) & ~on_boundary)
        if sel.size:
            cells[j] = sel
    return Partition(Nm, Ob, cells, np.flatnonzero(on_boundary), A, m, balance_factor,
                     {j: int(c) for j, c in enumerate(counts)})


# ---------------------------------------------------------------------------
# varieties

@dataclass(frozen=True)
class VarietyFit:
    polynomial: Polynomial
    degree: int
    captured: np.ndarray
    fraction: float


def fit_variety(cubes: CubeSet, degree: int, C: float = NEIGHBORHOOD_FACTOR, seed: int = 0) -> VarietyFit:
    """Least-squares vanishing polynomial of degree <= ``degree`` capturing the most cubes.

    Degrees are swept upward and a higher degree wins only when it captures
    strictly more cubes.
    """
    m = len(cubes)
    if m == 0:
        raise PreconditionError("no cubes to fit")
    X = cubes.centers()
    n = cubes.n
    width = C * cubes.delta
    if m == 1:
        e = np.zeros(n)
        e[0] = 1.0
        P = Polynomial.linear(e, float(X[0, 0]))
        return VarietyFit(P, 1, np.arange(1), 1.0)
    mu = X.mean(axis=0)
    scale = float(np.linalg.norm(X - mu, axis=1).max()) or 1.0
    Y = (X - mu) / scale
    fit_rows = np.arange(m)
    if m > FIT_SAMPLE_CAP:
        fit_rows = np.sort(np.random.default_rng([seed, 22]).choice(m, FIT_SAMPLE_CAP, replace=False))
    best = None
    for deg in range(1, max(1, degree) + 1):
        exps = [e for e in monomials(n, deg)]
        V = np.ones((fit_rows.size, len(exps)))
        for j, e in enumerate(exps):
            for i, k in enumerate(e):
                if k:
                    V[:, j] *= Y[fit_rows, i] ** k
        _, _, vt = np.linalg.svd(V, full_matrices=False)
        coef = vt[-1] if vt.shape[0] == len(exps) else _null_vector(V)
        Q = Polynomial.from_coefficients(n, exps, coef)
        if Q.degree < 1:
            continue
        P = Q.compose_affine(np.eye(n) / scale, -mu / scale)
        try:
            inside = variety_neighborhood(P, width, GRAIN_G_MIN).contains(X)
        except DomainError:
            continue
        cap = np.flatnonzero(inside)
        if best is None or cap.size > best.captured.size:
            best = VarietyFit(P.normalized(), deg, cap, cap.size / m)
    if best is None:
        raise DichotomyFailure("no non-constant vanishing polynomial found", {"cubes": m})
    return best


def _null_vector(V: np.ndarray) -> np.ndarray:
    _, _, vt = np.linalg.svd(V, full_matrices=True)
    return vt[-1]


@dataclass
class StepResult:
    branch: str  # "algebraic" or "cellular"
    partition: Partition | None = None
    variety: VarietyFit | None = None
    retention: float = 0.0
    capture: float = 0.0

    @property
    def algebraic(self) -> bool:
        return self.branch == "algebraic"


def cell_or_algebraic_step(cubes: CubeSet, degree: int, target_cells: int | None = None, seed: int = 0,
                           c_alg: float = C_ALG, retain_frac: float = RETAIN_FRAC, C: float = NEIGHBORHOOD_FACTOR,
                           margin: float = BOUNDARY_MARGIN, force_algebraic: bool = False) -> StepResult:
    """Take exactly one branch of the cellular/algebraic dichotomy.

    The algebraic branch is taken when the best fitted variety captures at
    least ``c_alg`` of the cubes and no less than the partition keeps in cell
    interiors; otherwise the partition is returned when it keeps at least
    ``retain_frac``.
    """
    m = len(cubes)
    if m < 1:
        raise PreconditionError("empty cube set")
    fit = fit_variety(cubes, degree, C, seed)
    part = None
    if m >= 2 and not force_algebraic:
        A = target_cells or 2 ** min(degree, cubes.n)
        A = min(A, 1 << int(math.floor(math.log2(m))))
        if A >= 2:
            try:
                part = polynomial_partition(cubes, A, seed=seed, margin=margin)
            except AlgebraicSignal:
                part = None
    retention = part.retention if part is not None else 0.0
    alg_ok = fit.fraction >= c_alg
    cell_ok = part is not None and retention >= retain_frac
    if force_algebraic or (alg_ok and (not cell_ok or fit.fraction >= retention)):
        if not alg_ok and not force_algebraic:
            raise DichotomyFailure("variety capture below threshold", {"capture": fit.fraction})
        return StepResult("algebraic", part, fit, retention, fit.fraction)
    if cell_ok:
        return StepResult("cellular", part, fit, retention, fit.fraction)
    raise DichotomyFailure(
        "neither branch of the dichotomy holds",
        {"capture": fit.fraction, "retention": retention, "c_alg": c_alg, "retain_frac": retain_frac, "cubes": m},
    )


# ---------------------------------------------------------------------------
# grains

@dataclass
class GrainsDecomposition:
    cubes: CubeSet
    epsilon: float
    degree: int
    grains: list[Grain]
    members: list[np.ndarray]  # indices into ``cubes`` per grain
    traces: list[tuple[int, ...]]
    t: int
    audits: dict
    discarded: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.grains)

    @property
    def captured(self) -> int:
        return int(sum(m.size for m in self.members))

    @property
    def passed(self) -> bool:
        return all(a["pass"] for a in self.audits.values())

    def manifest(self) -> dict:
        return {
            "delta": self.cubes.delta,
            "epsilon": self.epsilon,
            "degree": self.degree,
            "t": self.t,
            "grains": [
                {"trace": list(J), "polynomial": g.base.equalities[0].to_record(), "width": g.width,
                 "cubes": m.tolist()}
                for J, g, m in zip(self.traces, self.grains, self.members)
            ],
            "audits": self.audits,
            "discarded": self.discarded,
        }


def _dyadic_floor(x: np.ndarray) -> np.ndarray:
    return np.floor(np.log2(np.maximum(x, 1))).astype(np.int64)


def pigeonhole_classes(sizes: Sequence[int]) -> int:
    """Dyadic class ``k`` (sizes in ``[2^k, 2^{k+1})``) holding the most mass; ties go to the smaller class."""
    s = np.asarray(sizes, dtype=np.int64)
    if s.size == 0:
        raise PreconditionError("nothing to pigeonhole")
    k = _dyadic_floor(s)
    mass = defaultdict(int)
    for kk, ss in zip(k.tolist(), s.tolist()):
        mass[kk] += ss
    top = max(mass.values())
    return min(kk for kk, v in mass.items() if v == top)


def grains_decompose(cubes: CubeSet, epsilon: float, degree: int = 4, seed: int = 0,
                     target_cells: int | None = None, c_alg: float = C_ALG, retain_frac: float = RETAIN_FRAC,
                     C: float = NEIGHBORHOOD_FACTOR, margin: float = BOUNDARY_MARGIN, crossing_probes: int = 100,
                     C_eps: float = 4.0, check: bool = True, max_residual_passes: int = 4,
                     residual_frac: float = 0.25, recurse_boundary: bool = True) -> GrainsDecomposition:
    """Recursive partitioning until every branch turns algebraic, then a dyadic prune of grain sizes.

    When a variety leaves at least ``residual_frac`` of a branch uncaptured,
    the remainder is decomposed again (at most ``max_residual_passes`` times
    per branch); its trace gets the extra index ``A``. With
    ``recurse_boundary`` the cubes a cellular step leaves near its cuts are
    decomposed as a further branch (index ``A + 1``) instead of being dropped.

    The four audits (capture, balance, disjointness, tube crossing) are
    stored on the result; with ``check=True`` a failing audit raises
    :class:`AuditFailure`.
    """
    m = len(cubes)
    if m < 1:
        raise PreconditionError("empty cube set")
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    A = target_cells or 2 ** min(degree, cubes.n)
    s_max = max(1, math.ceil(math.log(m) / math.log(A))) if m > 1 else 1
    leaves: list[tuple[tuple[int, ...], VarietyFit, np.ndarray]] = []
    lost_boundary = 0
    # entries: trace, cube indices, depth, residual passes used
    stack: list[tuple[tuple[int, ...], np.ndarray, int, int]] = [((), np.arange(m), 0, 0)]
    while stack:
        J, idx, depth, peels = stack.pop()
        sub = cubes.subset(idx)
        node_seed = int(np.random.default_rng([seed, 23, *J]).integers(2**31))
        try:
            step = cell_or_algebraic_step(sub, degree, A, node_seed, c_alg, retain_frac, C, margin,
                                          force_algebraic=depth >= s_max)
        except DichotomyFailure as exc:
            exc.diagnostics["trace"] = list(J)
            raise
        if step.algebraic:
            cap = step.variety.captured
            leaves.append((J, step.variety, idx[cap]))
            rest = np.setdiff1d(np.arange(idx.size), cap)
            # uncaptured cubes get another pass at the same depth
            if peels < max_residual_passes and rest.size >= max(2, residual_frac * idx.size):
                stack.append((J + (A,), idx[rest], depth, peels + 1))
            continue
        part = step.partition
        if recurse_boundary and part.boundary.size:
            # cubes near the cut hyperplanes form one more branch, traced by index A + 1
            stack.append((J + (A + 1,), idx[part.boundary], depth + 1, 0))
        else:
            lost_boundary += part.boundary.size
        for j in sorted(part.cells, reverse=True):  # pushed in reverse so cells pop in order
            stack.append((J + (j,), idx[part.cells[j]], depth + 1, 0))
    leaves.sort(key=lambda r: r[0])
    sizes = [lf[2].size for lf in leaves]
    nonempty = [i for i, s in enumerate(sizes) if s > 0]
    k = pigeonhole_classes([sizes[i] for i in nonempty])
    keep = [i for i in nonempty if _dyadic_floor(np.array([sizes[i]]))[0] == k]
    grains, members, traces = [], [], []
    width = C * cubes.delta
    for i in keep:
        J, fit, mem = leaves[i]
        base = SemiAlgebraicSet(cubes.n, equalities=[fit.polynomial], label=f"grain {list(J)}")
        grains.append(Grain(base, width, cubes.delta, cubes.coords[mem], f"trace {list(J)}"))
        members.append(np.sort(mem))
        traces.append(J)
    gd = GrainsDecomposition(cubes, epsilon, degree, grains, members, traces, 2**k, {},
                             {"boundary": lost_boundary, "leaf_cubes": int(sum(sizes)),
                              "leaves": len(leaves), "pruned_leaves": len(leaves) - len(keep), "s_max": s_max})
    gd.audits = audit_grains(gd, seed=seed, probes=crossing_probes, C_eps=C_eps)
    if check and not gd.passed:
        raise AuditFailure("grains decomposition failed an audit", gd.audits)
    return gd


def _neighborhood_of(g: Grain):
    # relative slack absorbs rounding from normalizing the fitted polynomial
    return variety_neighborhood(g.base.equalities[0], g.width * (1 + 1e-9), GRAIN_G_MIN)


def audit_grains(gd: GrainsDecomposition, seed: int = 0, probes: int = 100, C_eps: float = 4.0) -> dict:
    cubes = gd.cubes
    delta, eps = cubes.delta, gd.epsilon
    total = len(cubes)
    G = len(gd.grains)
    cap = gd.captured
    out = {}
    out["capture"] = {"captured": cap, "total": total, "required": delta**eps * total,
                      "pass": bool(cap >= delta**eps * total)}
    sizes = [mm.size for mm in gd.members]
    if G:
        lo, hi = delta**eps * total / G, delta**-eps * total / G
        out["balance"] = {"min": min(sizes), "max": max(sizes), "lower": lo, "upper": hi,
                          "pass": bool(min(sizes) >= lo and max(sizes) <= hi)}
    else:
        out["balance"] = {"min": 0, "max": 0, "lower": 0.0, "upper": 0.0, "pass": False}
    seen = np.zeros(total, dtype=np.int64)
    inside = True
    for g, mm in zip(gd.grains, gd.members):
        np.add.at(seen, mm, 1)
        if mm.size and not np.all(_neighborhood_of(g).contains(cubes.centers(mm))):
            inside = False
    out["disjointness"] = {"max_overlap": int(seen.max()) if total else 0, "cubes_in_grain": inside,
                           "pass": bool((seen.max() if total else 0) <= 1 and inside)}
    out["tube_crossing"] = tube_crossing_audit(gd, seed, probes, C_eps)
    return out


def tube_crossing_audit(gd: GrainsDecomposition, seed: int = 0, probes: int = 100, C_eps: float = 4.0) -> dict:
    """Grains met by random delta-tubes through captured cubes, against ``C_eps delta^-eps |grains|^(1/n)``."""
    cubes = gd.cubes
    n, delta = cubes.n, cubes.delta
    G = len(gd.grains)
    bound = C_eps * delta**-gd.epsilon * max(G, 1) ** (1.0 / n)
    if G == 0:
        return {"max_crossings": 0, "bound": bound, "C_eps": C_eps, "implied_C": 0.0, "pass": True,
                "cardinality": "grain-set"}
    owner = np.full(len(cubes), -1, dtype=np.int64)
    for gi, mm in enumerate(gd.members):
        owner[mm] = gi
    held = np.flatnonzero(owner >= 0)
    X = cubes.centers()
    rng = np.random.default_rng([seed, 24])
    reach = delta + delta * math.sqrt(n) / 2
    worst = 0
    for _ in range(probes):
        p = X[held[rng.integers(held.size)]]
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        off = rng.uniform(-0.5, 0.5)
        a, b = p + (off - 0.5) * v, p + (off + 0.5) * v
        hit = segment_distance(X[held], a, b) <= reach
        worst = max(worst, int(np.unique(owner[held[hit]]).size))
    implied = worst / (delta**-gd.epsilon * G ** (1.0 / n))
    return {"max_crossings": worst, "bound": bound, "C_eps": C_eps, "implied_C": implied,
            "pass": bool(worst <= bound), "cardinality": "grain-set"}


# ---------------------------------------------------------------------------
# sub-grains

def subgrain_cover(g: Grain, ell: float) -> list[Grain]:
    """Cover a grain by boxes ``2 ell k + [-2 ell, 4 ell)^n``.

    Any piece of the grain of diameter at most ``2 ell`` sits in one box and
    every point lies in at most ``3^n`` boxes. Only boxes holding cubes are
    returned, one per distinct cube set.
    """
    if not g.delta * (1 - 1e-12) <= ell <= 2.0:
        raise PreconditionError("sub-grain scale must lie in [delta, 2]")
    X = g.centers()
    if X.shape[0] == 0 or ell >= g.diameter():
        return [g]
    s = 2.0 * ell
    n = X.shape[1]
    home = np.floor(X / s).astype(np.int64)
    keys = set()
    for shift in itertools.product((-1, 0, 1), repeat=n):
        for row in np.unique(home - np.asarray(shift), axis=0):
            keys.add(tuple(int(x) for x in row))
    out = []
    seen = set()
    for key in sorted(keys):
        k = np.asarray(key)
        lo, hi = s * k - s, s * k + 2 * s
        sel = np.all((X >= lo) & (X < hi), axis=1)
        sig = np.flatnonzero(sel).tobytes()
        if not sel.any() or sig in seen:  # boxes holding the same cubes are one sub-grain
            continue
        seen.add(sig)
        base = g.base.intersect(SemiAlgebraicSet(n, bbox=(lo, hi)))
        out.append(Grain(base, g.width, g.delta, g.cubes[sel], f"{g.description} box {list(key)}"))
    return out


def cover_overlap(subs: Sequence[Grain]) -> int:
    """Largest number of sub-grains sharing a cube."""
    count: dict[tuple, int] = defaultdict(int)
    for sg in subs:
        for row in map(tuple, np.asarray(sg.cubes).tolist()):
            count[row] += 1
    return max(count.values(), default=0)


# ---------------------------------------------------------------------------
# trilinear pigeonhole statistics

@dataclass
class TrilinearStatistics:
    theta: float | None
    ells: tuple[float, float, float] | None
    N: tuple[int, int, int] | None
    mu: float
    mu_i: tuple[float, float, float]
    per_cell_ok: bool
    cells_checked: int
    subgrains: int
    records: list[dict] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return self.theta is None


def active_cubes(arr) -> CubeSet:
    """Union of the shading cells of ``arr`` as a cube set of side ``arr.h``."""
    cells, _ = arr.shading_cells()
    return CubeSet.from_cells(arr.grid, np.unique(cells))


def trilinear_statistics(arr, gd: GrainsDecomposition | None, K: float = 1.0, epsilon: float | None = None,
                         max_cell_multiplicity: int = 160) -> TrilinearStatistics:
    """Pigeonholed theta, component-length classes, per-sub-grain tube counts and multiplicities.

    ``mu^3`` at a cell counts ordered triples ``(T1, T2, T3)`` through the
    cell whose wedge lies in the dominant dyadic class ``theta`` and whose
    components in the grain lie in the chosen length classes; ``mu_i``
    counts tubes of class ``ell_i`` through the cell.
    """
    if gd is None:
        raise DomainError("a grains decomposition is required")
    grid = arr.grid
    if not math.isclose(gd.cubes.delta, grid.h, rel_tol=1e-12):
        raise DomainError("decomposition was not built on this arrangement's cells")
    eps = gd.epsilon if epsilon is None else epsilon
    empty = TrilinearStatistics(None, None, None, 0.0, (0.0, 0.0, 0.0), True, 0, 0)
    if len(arr) < 3 or not gd.grains:
        return empty
    inc = arr.incidence()
    dirs = arr.directions()
    h = grid.h
    # (grain, cell row in inc) -> {tube position: length class}
    per_cell: dict[tuple[int, int], dict[int, int]] = {}
    comp_rows: list[tuple[int, int, int, np.ndarray]] = []  # grain, tube, class, cells
    for gi, mem in enumerate(gd.members):
        flats = np.sort(gd.cubes.subset(mem).cells(grid))
        rows = np.searchsorted(inc.cells, flats)
        ok = (rows < inc.cells.size) & (inc.cells[np.minimum(rows, inc.cells.size - 1)] == flats)
        rows = rows[ok]
        if rows.size == 0:
            continue
        region = VoxelSet(grid, flats)
        tubes_here = np.unique(np.concatenate([inc.incident(r) for r in rows]))
        cell_of_row = {int(inc.cells[r]): int(r) for r in rows}
        for tp in tubes_here.tolist():
            for comp, diam in connected_components(arr.tubes[tp], region, cap=10**6):
                cls = int(math.floor(math.log2(max(diam, h) / h) + 1e-12))
                comp_rows.append((gi, tp, cls, comp.cells))
                for c in comp.cells.tolist():
                    r = cell_of_row.get(c)
                    if r is not None and tp in set(inc.incident(r).tolist()):
                        per_cell.setdefault((gi, r), {})[tp] = cls
    # wedge classes and class triples
    theta_mass: dict[int, int] = defaultdict(int)
    cell_data = []
    for key in sorted(per_cell):
        tc = per_cell[key]
        tps = np.array(sorted(tc), dtype=np.int64)
        if tps.size > max_cell_multiplicity:
            from .errors import ResourceError

            raise ResourceError(f"cell multiplicity {tps.size} above {max_cell_multiplicity}")
        if tps.size < 3:
            cell_data.append((key, tps, None, None))
            continue
        comb = np.array(list(itertools.combinations(range(tps.size), 3)), dtype=np.int64)
        w = wedge3_batch(dirs[tps[comb[:, 0]]], dirs[tps[comb[:, 1]]], dirs[tps[comb[:, 2]]])
        pos = w > 1e-12
        wk = np.full(w.size, -1, dtype=np.int64)
        wk[pos] = np.floor(-np.log2(w[pos]) + 1e-12).astype(np.int64)
        for kk, cnt in zip(*np.unique(wk[pos], return_counts=True)):
            theta_mass[int(kk)] += int(cnt)
        cell_data.append((key, tps, comb, wk))
    if not theta_mass:
        return empty
    top = max(theta_mass.values())
    theta_k = max(kk for kk, v in theta_mass.items() if v == top)  # larger k is the smaller theta
    theta = 2.0 ** -theta_k
    triple_mass: dict[tuple[int, int, int], float] = defaultdict(float)
    per_cell_triples = []
    for key, tps, comb, wk in cell_data:
        if comb is None:
            continue
        tc = per_cell[key]
        cls = np.array([tc[t] for t in tps.tolist()], dtype=np.int64)
        sel = comb[wk == theta_k]
        if sel.size == 0:
            continue
        trip = np.sort(cls[sel], axis=1)[:, ::-1]
        keys, counts = np.unique(trip, axis=0, return_counts=True)
        for kk, cnt in zip(map(tuple, keys.tolist()), counts.tolist()):
            triple_mass[kk] += cnt ** (13 / 27)
        per_cell_triples.append((key, tps, cls, sel))
    top = max(triple_mass.values())
    ell_k = min(kk for kk, v in triple_mass.items() if math.isclose(v, top, rel_tol=1e-12))
    ells = tuple(h * 2.0**c for c in ell_k)
    mus, mu_is, ok = [], [], True
    for key, tps, cls, sel in per_cell_triples:
        counts_i = [int(np.count_nonzero(cls == c)) for c in ell_k]
        ordered = 0
        for perm in set(itertools.permutations(range(3))):
            ordered += int(np.count_nonzero(np.all(cls[sel[:, list(perm)]] == np.asarray(ell_k), axis=1)))
        if ordered == 0:
            continue
        if ordered > counts_i[0] * counts_i[1] * counts_i[2]:
            ok = False
        mus.append(ordered ** (1 / 3))
        mu_is.append(counts_i)
    if not mus:
        return empty
    mus_a = np.asarray(mus)
    mk = _dyadic_floor(mus_a)
    vals, cnts = np.unique(mk, return_counts=True)
    best_k = int(vals[cnts == cnts.max()].min())
    sel = mk == best_k
    mu = float(mus_a[sel].mean())
    mu_i = tuple(float(x) for x in np.asarray(mu_is)[sel].mean(axis=0))
    # sub-grains at the largest length class
    ell1 = max(ells)
    N_samples: list[list[int]] = [[], [], []]
    n_sub = 0
    for gi, g in enumerate(gd.grains):
        subs = subgrain_cover(g, min(max(ell1, g.delta), 2.0))
        for sg in subs:
            n_sub += 1
            box = set(map(tuple, np.asarray(sg.cubes).tolist()))
            for i, c in enumerate(ell_k):
                tubes = set()
                for gj, tp, cls, cells in comp_rows:
                    if gj != gi or cls != c or tp in tubes:
                        continue
                    co = grid.coords(cells) - grid.half
                    if all(tuple(r) in box for r in co.tolist()):
                        tubes.add(tp)
                N_samples[i].append(len(tubes))
    N = []
    for i in range(3):
        arr_i = np.asarray([x for x in N_samples[i] if x > 0])
        if arr_i.size == 0:
            N.append(0)
            continue
        k = pigeonhole_classes(arr_i)
        N.append(int(2**k))
    n = arr.n
    delta = arr.delta
    records = []
    nb = max(n_sub, 1)
    for i in range(3):
        bound = delta**-eps * len(arr) * nb ** (-(n - 1) / n)
        records.append({"name": f"N{i + 1}_vs_grains", "value": N[i], "bound": bound, "ratio": N[i] / bound})
    bound1 = K / ells[0] * delta ** (2 - n)
    records.append({"name": "N1_vs_wolff", "value": N[0], "bound": bound1, "ratio": N[0] / bound1})
    rhs = (mu_i[0] * mu_i[1] * mu_i[2]) ** (1 / 3)
    records.append({"name": "mu_vs_mu123", "value": mu, "bound": rhs, "ratio": mu / rhs if rhs else math.inf})
    return TrilinearStatistics(theta, ells, tuple(N), mu, mu_i, ok, len(mus), n_sub, records)
