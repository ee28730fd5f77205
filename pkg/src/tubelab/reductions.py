"""Structural reductions on shaded arrangements.

Every reduction returns new shadings that are subsets of the old ones and
records the exact mass ratio in cell counts.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import sparse

from .arrangement import Arrangement, Shading
from .errors import DomainError, PreconditionError, SpecificationError
from .functionals import check, dyadic_class, multiplicity, multiplicity_field
from .geometry import VoxelSet, segment_distance


def _per_tube_cells(arr: Arrangement) -> list[np.ndarray]:
    cells, off = arr.shading_cells()
    return [cells[off[i]:off[i + 1]] for i in range(len(arr))]


def _shading_mass(arr: Arrangement) -> int:
    _, off = arr.shading_cells()
    return int(off[-1])


@dataclass
class Refinement:
    """Subset shadings on surviving tubes, with exact cell-count bookkeeping."""

    parent: str
    arrangement: Arrangement
    mass_before: int
    mass_after: int
    meta: dict = field(default_factory=dict)

    @property
    def surviving(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.arrangement.tubes)

    @property
    def ratio(self) -> float:
        return self.mass_after / self.mass_before if self.mass_before else 0.0

    @property
    def empty(self) -> bool:
        return self.mass_after == 0

    @property
    def log_power(self) -> float:
        """``C`` with ratio = (log2 1/delta)^-C."""
        L = math.log2(1 / self.arrangement.delta)
        if self.ratio <= 0 or L <= 1:
            return math.inf if self.ratio <= 0 else 0.0
        return max(0.0, -math.log(self.ratio) / math.log(L))

    def manifest(self, parent: Arrangement | None = None) -> dict:
        out = {"parent": self.parent, "surviving": list(self.surviving), "mass_before": self.mass_before,
               "mass_after": self.mass_after, "ratio": self.ratio, "log_power": self.log_power,
               "meta": self.meta}
        if parent is not None:
            drops = {}
            for t in parent.tubes:
                before = len(parent.shading(t.id).cells)
                after = len(self.arrangement.shading(t.id).cells) if t.id in self.surviving else 0
                if after != before:
                    drops[str(t.id)] = before - after
            out["shading_deltas"] = drops
        return out


def _build(arr: Arrangement, new_cells: Mapping[int, np.ndarray], parent: str, meta: dict) -> Refinement:
    """Keep tubes with a nonempty new shading."""
    grid = arr.grid
    sh = {}
    for t in arr.tubes:
        c = new_cells.get(t.id)
        if c is not None and c.size:
            sh[t.id] = Shading(t.id, VoxelSet(grid, c), t.volume)
    out = arr.subset(sh.keys()).with_shadings(sh)
    return Refinement(parent, out, _shading_mass(arr), int(sum(len(s.cells) for s in sh.values())), meta)


def _arr_label(arr: Arrangement) -> str:
    return f"n={arr.n} delta={arr.delta:g} tubes={len(arr)} seed={arr.seed}"


# ---------------------------------------------------------------------------

def dyadic_refine(arr: Arrangement) -> Refinement:
    """Restrict every shading to the cells of the dominant dyadic multiplicity class."""
    label = _arr_label(arr)
    if _shading_mass(arr) == 0:
        return Refinement(label, arr.subset([]), 0, 0, {"empty": True})
    mres = multiplicity(arr, keep_set=True)
    per = _per_tube_cells(arr)
    new = {t.id: per[i][mres.B.contains(per[i])] for i, t in enumerate(arr.tubes)}
    ref = _build(arr, new, label, {"mu": mres.mu, "class": mres.klass, "B_measure": mres.B_measure})
    ref.meta["bound"] = 1.0 / (2 * math.log2(1 / arr.delta) + 4)
    return ref


# ---------------------------------------------------------------------------
# two ends

@dataclass
class TwoEndsRecord:
    tube_id: int
    center: tuple[float, ...]
    r: float
    alpha: float
    eps0: float


@dataclass
class TwoEndsCertificate:
    eps0: float
    records: list[TwoEndsRecord]
    r0: float | None
    skipped: list[int]
    alpha_bound: float

    @property
    def alpha(self) -> float:
        return max((r.alpha for r in self.records), default=0.0)

    @property
    def passed(self) -> bool:
        return self.alpha <= self.alpha_bound


def _dyadic_radii(delta: float, top: float = 2.0) -> list[float]:
    out, r = [], delta
    while r <= top * (1 + 1e-12):
        out.append(r)
        r *= 2
    return out


def _candidates(X: np.ndarray, tube, cap: int) -> np.ndarray:
    """Evenly spaced shading cells along the axis, plus the one nearest the tube center."""
    if X.shape[0] <= cap:
        return np.arange(X.shape[0])
    s = (X - tube.c) @ tube.v
    order = np.argsort(s, kind="stable")
    pick = order[np.linspace(0, X.shape[0] - 1, cap).round().astype(np.int64)]
    mid = int(np.argmin(np.abs(s)))
    return np.unique(np.append(pick, mid))


def _ball_counts(X: np.ndarray, centers: np.ndarray, radii: list[float]) -> np.ndarray:
    """``out[j, k]`` = number of points within ``radii[k]`` of ``centers[j]``.

    The relative slack on the radii only absorbs rounding in the expanded
    squared distances.
    """
    r2 = (np.asarray(radii) ** 2) * (1 + 1e-9)
    R = r2.size
    out = np.zeros((centers.shape[0], R), dtype=np.int64)
    sq = np.einsum("ij,ij->i", X, X)
    for s in range(0, centers.shape[0], 128):
        c = centers[s:s + 128]
        D2 = np.einsum("ij,ij->i", c, c)[:, None] + sq[None, :] - 2.0 * (c @ X.T)
        k = np.searchsorted(r2, D2.ravel(), side="left")
        k += np.repeat(np.arange(c.shape[0]) * (R + 1), X.shape[0])
        hist = np.bincount(k, minlength=c.shape[0] * (R + 1)).reshape(c.shape[0], R + 1)
        out[s:s + 128] = np.cumsum(hist[:, :R], axis=1)
    return out


def two_ends_alpha(X: np.ndarray, r: float, eps0: float, delta: float, cap: int = 64) -> float:
    """Largest ``|Y cap B(y, r')| / ((r'/r)^eps0 |Y|)`` over dyadic ``r' < r`` and centers in ``Y``."""
    if X.shape[0] == 0:
        return 0.0
    radii = [x for x in _dyadic_radii(delta) if x < r * (1 - 1e-12)]
    if not radii:
        return 0.0
    cand = np.arange(X.shape[0]) if X.shape[0] <= cap else np.linspace(0, X.shape[0] - 1, cap).round().astype(np.int64)
    counts = _ball_counts(X, X[cand], radii)
    best = counts.max(axis=0)
    scale = np.array([(x / r) ** eps0 for x in radii]) * X.shape[0]
    return float((best / scale).max())


def two_ends_reduce(arr: Arrangement, eps0: float, candidates: int = 64) -> tuple[Refinement, TwoEndsCertificate]:
    """Replace each shading by its smallest dyadic ball piece holding ``r^eps0`` of it, then pigeonhole ``r``."""
    if not 0 < eps0 < 1:
        raise DomainError("eps0 must lie in (0, 1)")
    grid = arr.grid
    delta = arr.delta
    radii = _dyadic_radii(delta)
    per = _per_tube_cells(arr)
    chosen: dict[int, tuple[np.ndarray, float, np.ndarray]] = {}
    skipped = []
    for i, t in enumerate(arr.tubes):
        cells = per[i]
        if cells.size == 0:
            skipped.append(t.id)
            continue
        X = grid.centers(cells)
        # shading cells, the tube midpoint (always succeeds at r = 1) and the shading centroid
        centers = np.vstack([X[_candidates(X, t, candidates)], t.c, X.mean(axis=0)])
        counts = _ball_counts(X, centers, radii)
        for k, r in enumerate(radii):
            j = int(np.argmax(counts[:, k]))
            if counts[j, k] >= r**eps0 * cells.size - 1e-9:
                x = centers[j]
                keep = np.sum((X - x) ** 2, axis=1) <= r * r * (1 + 1e-9)
                chosen[t.id] = (cells[keep], r, x)
                break
    label = _arr_label(arr)
    if not chosen:
        cert = TwoEndsCertificate(eps0, [], None, skipped, 4 * math.log2(1 / delta))
        return Refinement(label, arr.subset([]), _shading_mass(arr), 0, {"empty": True}), cert
    rs = np.array([chosen[tid][1] for tid in chosen])
    ks = np.round(np.log2(rs / delta)).astype(np.int64)
    mass = {}
    for tid, k in zip(chosen, ks.tolist()):
        mass[k] = mass.get(k, 0) + chosen[tid][0].size
    k0 = min(mass, key=lambda k: (-mass[k], k))
    r0 = delta * 2.0**k0
    new = {tid: v[0] for tid, v in chosen.items() if math.isclose(v[1], r0)}
    ref = _build(arr, new, label, {"eps0": eps0, "r0": r0})
    records = []
    for tid in ref.surviving:
        cells, r, x = chosen[tid]
        alpha = two_ends_alpha(grid.centers(cells), r, eps0, delta, candidates)
        records.append(TwoEndsRecord(tid, tuple(float(v) for v in x), r, alpha, eps0))
    cert = TwoEndsCertificate(eps0, records, r0, skipped, 4 * math.log2(1 / delta))
    return ref, cert


# ---------------------------------------------------------------------------
# robust transversality

@dataclass
class TransversalitySplit:
    s: float
    t: float
    good: VoxelSet
    bad: VoxelSet
    bad_directions: np.ndarray  # one row per cell of ``bad``, same order

    def direction_of(self, cell: int) -> np.ndarray:
        i = int(np.searchsorted(self.bad.cells, cell))
        if i >= len(self.bad) or self.bad.cells[i] != cell:
            raise DomainError("cell is not a bad cell")
        return self.bad_directions[i]


def _grouped_rows(inc, min_mult: int = 1):
    """Yield ``(rows, tube_matrix)`` for cells grouped by multiplicity."""
    mult = inc.multiplicity
    for m in np.unique(mult):
        if m < min_mult:
            continue
        rows = np.flatnonzero(mult == m)
        starts = inc.indptr[rows]
        idx = starts[:, None] + np.arange(m)[None, :]
        yield rows, inc.tubes[idx]


def robust_transversality_split(arr: Arrangement, s: float, t: float, chunk: int = 4096) -> TransversalitySplit:
    """Split the shaded cells by whether some incident direction ``v`` has more than ``t`` of the tubes within angle ``s``."""
    if not 0 < s < 1:
        raise DomainError("s must lie in (0, 1)")
    if not 0 < t <= 1:
        raise DomainError("t must lie in (0, 1]")
    dirs = arr.directions()
    cos_s = math.cos(s)
    good_parts, bad_parts, bad_dirs = [], [], []
    for inc in arr.iter_incidence():
        if not len(inc):
            continue
        bad = np.zeros(len(inc), dtype=bool)
        wit = np.zeros((len(inc), arr.n))
        for rows, tubes in _grouped_rows(inc):
            m = tubes.shape[1]
            step = max(1, chunk // (m * m) if m * m < chunk else 1)
            for s0 in range(0, rows.size, step):
                r = rows[s0:s0 + step]
                V = dirs[tubes[s0:s0 + step]]  # (k, m, n)
                Gm = np.abs(np.einsum("kin,kjn->kij", V, V))
                counts = (Gm > cos_s).sum(axis=2)
                best = counts.argmax(axis=1)
                top = counts[np.arange(r.size), best]
                is_bad = top > t * m + 1e-12
                bad[r] = is_bad
                wit[r] = V[np.arange(r.size), best]
        good_parts.append(inc.cells[~bad])
        bad_parts.append(inc.cells[bad])
        bad_dirs.append(wit[bad])
    grid = arr.grid
    good = VoxelSet(grid, np.concatenate(good_parts)) if good_parts else VoxelSet.empty(grid)
    badc = np.concatenate(bad_parts) if bad_parts else np.empty(0, np.int64)
    bd = np.concatenate(bad_dirs) if bad_dirs else np.empty((0, arr.n))
    order = np.argsort(badc, kind="stable")
    return TransversalitySplit(s, t, good, VoxelSet(grid, badc[order]), bd[order])


# ---------------------------------------------------------------------------
# planiness

def planiness_theta(delta: float, lam: float) -> float:
    if not 0 < lam <= 1:
        raise DomainError("lambda must lie in (0, 1]")
    return (delta / lam) ** (3 / 14)


@dataclass
class PlaninessSplit:
    theta0: float
    plainy: VoxelSet
    trilinear: VoxelSet
    mass_plainy: float
    mass_trilinear: float
    fraction: float

    @property
    def total(self) -> float:
        return self.mass_plainy + self.mass_trilinear

    @property
    def branch(self) -> str:
        return "plainy" if self.mass_plainy >= self.mass_trilinear else "trilinear"


def _witness_planes(V: np.ndarray, max_dirs: int) -> np.ndarray:
    """Orthonormal 2-frames: the second-moment plane and spans of incident direction pairs."""
    planes = []
    M = V.T @ V
    _, vec = np.linalg.eigh(M)
    planes.append(vec[:, -2:].T)
    W = V[:max_dirs]
    for i in range(W.shape[0]):
        for j in range(i + 1, W.shape[0]):
            u = W[i]
            w = W[j] - np.dot(W[j], u) * u
            nw = np.linalg.norm(w)
            if nw > 1e-9:
                planes.append(np.stack([u, w / nw]))
    return np.asarray(planes)


def planiness_split(arr: Arrangement, lam: float, fraction: float = 0.01, max_dirs: int = 24) -> PlaninessSplit:
    """Cells where some witness plane holds at least ``fraction`` of the incident tubes within ``theta0``.

    ``theta0 = (delta / lam)^(3/14)``; witness planes come from the incident
    directions, so membership in the trilinear branch is relative to them.
    """
    theta0 = planiness_theta(arr.delta, lam)
    dirs = arr.directions()
    cos_t = math.cos(theta0)
    grid = arr.grid
    p_parts, t_parts = [], []
    mass_p = mass_t = 0
    for inc in arr.iter_incidence():
        plainy = np.zeros(len(inc), dtype=bool)
        for i in range(len(inc)):
            tb = inc.incident(i)
            V = dirs[tb]
            m = V.shape[0]
            if m <= 2:
                plainy[i] = True  # one or two directions always span a plane
                continue
            P = _witness_planes(V, max_dirs)
            proj = np.linalg.norm(np.einsum("pkn,mn->pmk", P, V), axis=2)
            within = (proj > cos_t).sum(axis=1)  # angle to the plane below theta0
            plainy[i] = bool(within.max() >= fraction * m - 1e-12)
        mult = inc.multiplicity
        mass_p += int(mult[plainy].sum())
        mass_t += int(mult[~plainy].sum())
        p_parts.append(inc.cells[plainy])
        t_parts.append(inc.cells[~plainy])
    vol = grid.cell_volume
    X1 = VoxelSet(grid, np.concatenate(p_parts)) if p_parts else VoxelSet.empty(grid)
    X2 = VoxelSet(grid, np.concatenate(t_parts)) if t_parts else VoxelSet.empty(grid)
    return PlaninessSplit(theta0, X1, X2, mass_p * vol, mass_t * vol, fraction)


# ---------------------------------------------------------------------------
# hairbrushes

@dataclass(frozen=True)
class Hairbrush:
    stem: int
    hair: frozenset
    stem_shaded: bool


def hairbrush(arr: Arrangement, T0: int) -> Hairbrush:
    """Tubes whose shading meets the shading of ``T0`` (``T0`` itself excluded)."""
    pos = arr.position(T0)
    Y0 = arr.shading(T0).cells
    if not len(Y0):
        return Hairbrush(int(T0), frozenset(), False)
    grid = arr.grid
    co = grid.coords(Y0.cells)
    box = (co.min(axis=0), co.max(axis=0) + 1)
    inc = arr.incidence(box=box)
    rows = np.searchsorted(inc.cells, Y0.cells)
    ok = (rows < len(inc)) & (inc.cells[np.minimum(rows, max(len(inc) - 1, 0))] == Y0.cells)
    found = set()
    for r in rows[ok]:
        found.update(inc.incident(int(r)).tolist())
    found.discard(pos)
    return Hairbrush(int(T0), frozenset(int(arr.tubes[i].id) for i in found), True)


def _intersection_pairs(arr: Arrangement) -> sparse.csr_matrix:
    """Boolean matrix of tube positions whose shadings share a cell."""
    m = len(arr)
    rows, cols = [], []
    for inc in arr.iter_incidence():
        for r, tubes in _grouped_rows(inc, 2):
            k = tubes.shape[1]
            a = np.repeat(tubes, k, axis=1).ravel()
            b = np.tile(tubes, (1, k)).ravel()
            keep = a != b
            rows.append(a[keep])
            cols.append(b[keep])
    if not rows:
        return sparse.csr_matrix((m, m), dtype=bool)
    R = np.concatenate(rows)
    C = np.concatenate(cols)
    M = sparse.coo_matrix((np.ones(R.size, dtype=np.int8), (R, C)), shape=(m, m)).tocsr()
    M.data[:] = 1
    return M


@dataclass
class LargeHairbrush:
    stem: int
    hair: tuple[int, ...]
    r: float
    alpha: float
    eps0: float
    hair_volume: float
    check: dict


def find_large_hairbrush(arr: Arrangement, s: float, alpha: float = 1.0, eps0: float = 0.1,
                         theta: float | None = None, params: Mapping | None = None) -> LargeHairbrush:
    """Stem with the most hair at angle at least ``s``, with the hair volume outside ``N_r(T0)``.

    ``r = (200 alpha |log theta|^2)^(-1/eps0)``; ``theta`` defaults to ``s``.
    The volume is compared with the catalogued hairbrush bound when its
    symbols are available (``params`` may supply them).
    """
    if len(arr) == 0:
        raise DomainError("empty arrangement")
    M = _intersection_pairs(arr)
    dirs = arr.directions()
    cos_s = math.cos(s)
    best, best_hair = None, None
    for i in range(len(arr)):
        nb = M.indices[M.indptr[i]:M.indptr[i + 1]]
        if nb.size == 0:
            continue
        ang_ok = np.abs(dirs[nb] @ dirs[i]) <= cos_s + 1e-15
        hair = np.sort(nb[ang_ok])
        key = (hair.size, -arr.tubes[i].id)
        if hair.size and (best is None or key > best):
            best, best_hair = key, (i, hair)
    if best_hair is None:
        raise DomainError("every transversal hairbrush is empty")
    i, hair = best_hair
    th = s if theta is None else theta
    r = (200 * alpha * abs(math.log(th)) ** 2) ** (-1 / eps0)
    stem = arr.tubes[i]
    cells = np.unique(np.concatenate([arr.shading(arr.tubes[j].id).cells.cells for j in hair]))
    X = arr.grid.centers(cells)
    outside = segment_distance(X, stem.a, stem.b) > stem.radius + r
    vol = float(np.count_nonzero(outside)) * arr.grid.cell_volume
    p = dict(params or {})
    p.setdefault("theta", th)
    p["hair_volume"] = vol
    if "mu_theta" not in p:
        p["mu_theta"] = multiplicity(arr, keep_set=False).mu
    try:
        res = check("hairBrushBd", arr, p)
        rec = {"ratio": res.ratio, "rhs": res.rhs, "verdict": res.verdict}
    except SpecificationError as exc:
        rec = {"ratio": None, "rhs": None, "verdict": "missing", "missing": exc.symbol}
    return LargeHairbrush(stem.id, tuple(int(arr.tubes[j].id) for j in hair), r, alpha, eps0, vol, rec)


# ---------------------------------------------------------------------------
# fat scale

@dataclass
class FatScaleRecord:
    theta: float
    A: float
    B: float | None
    D: float | None
    mu: float
    mu_fine: float
    mu_coarse: float
    fat_planes: int
    alpha_fat: float | None
    checks: dict

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.__dict__, default=float))


def _theta_cubes(points: np.ndarray, theta: float) -> np.ndarray:
    return np.floor(points / theta).astype(np.int64)


def _principal_plane(V: np.ndarray) -> np.ndarray:
    _, vec = np.linalg.eigh(V.T @ V)
    return vec[:, -2:].T


def _plane_angle(P: np.ndarray, Q: np.ndarray) -> float:
    """Largest principal angle between two 2-planes given by orthonormal rows."""
    sv = np.linalg.svd(P @ Q.T, compute_uv=False)
    return float(math.acos(min(1.0, max(0.0, sv.min()))))


def fat_scale_pipeline(arr: Arrangement, theta: float, fat=None, eps0: float | None = None,
                       params: Mapping | None = None) -> FatScaleRecord:
    """Two-scale statistics: fat shadings on theta-cubes, fat planes, B, D and the multiplicity chain."""
    if theta <= arr.delta * (1 + 1e-12):
        raise DomainError("theta must exceed delta")
    from .arrangements import fatten_tubes

    fd = fat if fat is not None else fatten_tubes(arr, theta)
    grid = arr.grid
    per = _per_tube_cells(arr)
    pos = {t.id: i for i, t in enumerate(arr.tubes)}
    fat_by_id = {f.id: f for f in fd.fat}
    # theta-cube weights per fat tube: thin incidences falling in each cube
    weights: dict[int, dict[tuple, int]] = {}
    for f in fd.fat:
        w: dict[tuple, int] = {}
        for tid in fd.members[f.id]:
            c = per[pos[tid]]
            if not c.size:
                continue
            q, cnt = np.unique(_theta_cubes(grid.centers(c), theta), axis=0, return_counts=True)
            for row, k in zip(map(tuple, q.tolist()), cnt.tolist()):
                w[row] = w.get(row, 0) + k
        weights[f.id] = w
    allw = np.array([v for w in weights.values() for v in w.values()], dtype=np.int64)
    if allw.size == 0:
        raise PreconditionError("no shaded thin tubes inside fat tubes")
    cls = dyadic_class(allw)
    mass = {int(k): int(allw[cls == k].sum()) for k in np.unique(cls)}
    wk = min(mass, key=lambda k: (-mass[k], k))
    fat_shading = {fid: sorted(q for q, v in w.items() if int(dyadic_class(np.array([v]))[0]) == wk)
                   for fid, w in weights.items()}
    # coarse multiplicity on theta-cubes
    cube_fats: dict[tuple, list[int]] = {}
    for fid, qs in fat_shading.items():
        for q in qs:
            cube_fats.setdefault(q, []).append(fid)
    coarse = np.array([len(v) for v in cube_fats.values()], dtype=np.int64)
    mu_coarse = _dominant_mean(coarse)
    # fine multiplicity inside each fat tube, mass weighted
    fine_vals, fine_w = [], []
    for f in fd.fat:
        sub = arr.subset(fd.members[f.id])
        mr = multiplicity(sub, keep_set=False)
        if not mr.empty:
            fine_vals.append(mr.mu)
            fine_w.append(mr.total_mass)
    mu_fine = float(np.average(fine_vals, weights=fine_w)) if fine_vals else 0.0
    mu = multiplicity(arr, keep_set=False).mu
    # fat planes per theta-cube and the B, D statistics
    plane_of: dict[tuple, np.ndarray] = {}
    B_vals = []
    for q, fids in cube_fats.items():
        V = np.array([fat_by_id[fid].direction for fid in fids])
        if V.shape[0] < 2:
            B_vals.append(1.0 / theta)  # a lone fat tube lies in every plane through it
            continue
        P = _principal_plane(V)
        plane_of[q] = P
        near = np.linalg.norm(V @ P.T, axis=1) >= math.cos(2 * theta)
        B_vals.append(1.0 / (theta * max(1, int(near.sum()))))
    B = _dyadic_rep(np.asarray(B_vals)) if B_vals else None
    D_vals = []
    for fid, qs in fat_shading.items():
        planes = [plane_of[q] for q in qs if q in plane_of]
        groups: list[list[np.ndarray]] = []
        for P in planes:
            for g in groups:
                if _plane_angle(g[0], P) <= 2 * theta:
                    g.append(P)
                    break
            else:
                groups.append([P])
        D_vals.extend(len(g) for g in groups)
    D = float(2 ** _dominant_class(np.asarray(D_vals, dtype=np.int64))) if D_vals else None
    alpha_fat = None
    if eps0 is not None:
        alphas = []
        for fid, qs in fat_shading.items():
            if qs:
                pts = (np.asarray(qs, dtype=np.float64) + 0.5) * theta
                alphas.append(two_ends_alpha(pts, 1.0, eps0, theta))
        alpha_fat = max(alphas) if alphas else None
    sym = dict(params or {})
    sym.update({"mu": mu, "mu_fine": mu_fine, "mu_coarse": mu_coarse, "theta": theta, "A": fd.A})
    if B is not None:
        sym["B"] = B
    checks = {}
    for name in ("fineCoarseMu", "muBbound", "muest1", "muest2", "estimate2"):
        try:
            r = check(name, arr, sym)
            checks[name] = {"lhs": r.lhs, "rhs": r.rhs, "ratio": r.ratio, "verdict": r.verdict}
        except SpecificationError as exc:
            checks[name] = {"verdict": "missing", "missing": exc.symbol}
    return FatScaleRecord(theta, fd.A, B, D, mu, mu_fine, mu_coarse, len(plane_of), alpha_fat, checks)


def _dominant_class(values: np.ndarray) -> int:
    v = np.asarray(values, dtype=np.int64)
    cls = dyadic_class(np.maximum(v, 1))
    mass = {int(k): int(v[cls == k].sum()) for k in np.unique(cls)}
    return min(mass, key=lambda k: (-mass[k], k))


def _dominant_mean(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    k = _dominant_class(values)
    cls = dyadic_class(np.maximum(values, 1))
    return float(values[cls == k].mean())


def _dyadic_rep(values: np.ndarray) -> float:
    """Most frequent dyadic class ``2^k <= v < 2^(k+1)`` of positive reals, as ``2^k``."""
    k = np.floor(np.log2(values)).astype(np.int64)
    vals, cnt = np.unique(k, return_counts=True)
    return float(2.0 ** int(vals[cnt == cnt.max()].min()))


__all__ = [
    "Refinement", "dyadic_refine", "TwoEndsCertificate", "TwoEndsRecord", "two_ends_reduce", "two_ends_alpha",
    "TransversalitySplit", "robust_transversality_split", "PlaninessSplit", "planiness_split", "planiness_theta",
    "Hairbrush", "hairbrush", "LargeHairbrush", "find_large_hairbrush", "FatScaleRecord", "fat_scale_pipeline",
    "multiplicity_field",
]
