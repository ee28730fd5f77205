"""Arrangement generators, shading constructors, random sparsification and fattening."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .arrangement import Arrangement, Shading
from .errors import DomainError
from .geometry import DEFAULT_CELL_BUDGET, Tube, VoxelSet, canonical_direction, normalize, segment_distance
from .semialgebraic import Polynomial

DELTA_RANGE = (1 / 64, 1 / 4)


# ---------------------------------------------------------------------------
# sampling helpers

def random_unit_vectors(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    v = rng.standard_normal((count, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def random_ball_points(rng: np.random.Generator, count: int, n: int, radius: float = 1.0) -> np.ndarray:
    d = random_unit_vectors(rng, count, n)
    r = radius * rng.random(count) ** (1.0 / n)
    return d * r[:, None]


def _canonical_rows(v: np.ndarray) -> np.ndarray:
    return np.array([canonical_direction(x) for x in v]) if len(v) else v


def separated_directions(
    n: int,
    sep: float,
    rng: np.random.Generator,
    count: int | None = None,
    axis: Sequence[float] | None = None,
    spread: float | None = None,
    batch: int = 4096,
    min_rate: float = 0.05,
    max_batches: int = 10_000,
) -> np.ndarray:
    """Dart-throw line directions whose pairwise angles are at least ``sep``.

    Candidates are drawn uniformly on the sphere (or inside the cone of half
    angle ``spread`` around ``axis``). Throwing stops once ``count`` directions
    are accepted or a batch accepts fewer than ``min_rate`` of its candidates.
    """
    chord = 2.0 * math.sin(sep / 2.0)
    accepted = np.empty((0, n))
    tree = None
    ax = normalize(axis) if axis is not None else None
    cos_spread = math.cos(spread) if spread is not None else None
    for _ in range(max_batches):
        cand = random_unit_vectors(rng, batch, n)
        if ax is not None:
            cand *= np.sign(cand @ ax)[:, None] + (cand @ ax == 0)[:, None]
            if cos_spread is not None:
                cand = cand[cand @ ax >= cos_spread]
        if cand.shape[0] == 0:
            continue
        if tree is not None:
            d1, _ = tree.query(cand, k=1)
            d2, _ = tree.query(-cand, k=1)
            cand = cand[np.minimum(d1, d2) >= chord]
        taken: list[np.ndarray] = []
        for v in cand:
            if taken:
                t = np.asarray(taken)
                if np.min(np.minimum(np.linalg.norm(t - v, axis=1), np.linalg.norm(t + v, axis=1))) < chord:
                    continue
            taken.append(v)
            if count is not None and accepted.shape[0] + len(taken) >= count:
                break
        rate = len(taken) / batch
        if taken:
            accepted = np.vstack([accepted, np.asarray(taken)])
            tree = cKDTree(accepted)
        if count is not None and accepted.shape[0] >= count:
            break
        if rate < min_rate:
            break
    return _canonical_rows(accepted)


def _budget_kw(cell_budget: int | None) -> dict:
    return {"cell_budget": int(cell_budget) if cell_budget is not None else DEFAULT_CELL_BUDGET}


# ---------------------------------------------------------------------------
# generators

def gen_direction_separated(
    n: int,
    delta: float,
    seed: int = 0,
    min_rate: float = 0.05,
    cell_budget: int | None = None,
) -> Arrangement:
    """One tube per direction of a maximal-ish delta-separated set, centers uniform in B(0,1)."""
    if not DELTA_RANGE[0] - 1e-15 <= delta <= DELTA_RANGE[1] + 1e-15:
        raise DomainError(f"delta={delta} outside [1/64, 1/4]")
    if n not in (2, 3, 4):
        raise DomainError("n must be 2, 3 or 4")
    rng = np.random.default_rng([seed, 1])
    dirs = separated_directions(n, delta, rng, min_rate=min_rate)
    centers = random_ball_points(rng, dirs.shape[0], n)
    tubes = [Tube(i, tuple(c), tuple(v), delta) for i, (c, v) in enumerate(zip(centers, dirs))]
    return Arrangement(n, delta, tubes, seed=seed,
                       provenance={"kind": "separated", "min_rate": min_rate}, **_budget_kw(cell_budget))


QUADRIC_LEVEL = 0.25


def quadric_polynomial(level: float = QUADRIC_LEVEL) -> Polynomial:
    """``x1^2 + x2^2 - x3^2 - x4^2 - level``: a doubly ruled hypersurface in R^4."""
    return Polynomial(4, {(2, 0, 0, 0): 1.0, (0, 2, 0, 0): 1.0, (0, 0, 2, 0): -1.0,
                          (0, 0, 0, 2): -1.0, (0, 0, 0, 0): -level})


def quadric_distance(x: np.ndarray, level: float = QUADRIC_LEVEL) -> np.ndarray:
    """Exact Euclidean distance to ``|u|^2 - |w|^2 = level`` (``level > 0``), u, w in R^2.

    The nearest point keeps the directions of u and w, reducing the problem to
    the distance from ``(|u|, |w|)`` to the hyperbola ``a^2 - b^2 = level``.
    """
    x = np.atleast_2d(x)
    a0 = np.linalg.norm(x[:, :2], axis=1)
    b0 = np.linalg.norm(x[:, 2:], axis=1)
    # parametrize a = sqrt(level) cosh s, b = sqrt(level) sinh s, s >= 0; minimize by Newton
    k = math.sqrt(level)
    s = np.arcsinh(b0 / k)
    for _ in range(60):
        a, b = k * np.cosh(s), k * np.sinh(s)
        # d/ds of 0.5|(a,b)-(a0,b0)|^2
        g = (a - a0) * b + (b - b0) * a
        gp = b * b + (a - a0) * a + a * a + (b - b0) * b
        step = g / np.where(np.abs(gp) > 1e-300, gp, 1e-300)
        s = np.maximum(s - np.clip(step, -1.0, 1.0), 0.0)
    a, b = k * np.cosh(s), k * np.sinh(s)
    return np.hypot(a - a0, b - b0)


def _quadric_lines(rng: np.random.Generator, count: int, level: float, w_max: float):
    """Points ``p`` on the quadric and null directions ``v`` with the line ``p + tv`` inside it."""
    s = w_max * np.sqrt(rng.random(count))
    r_u = np.sqrt(level + s * s)
    phi_u = rng.uniform(0, 2 * math.pi, count)
    phi_w = rng.uniform(0, 2 * math.pi, count)
    u = np.column_stack([r_u * np.cos(phi_u), r_u * np.sin(phi_u)])
    w = np.column_stack([s * np.cos(phi_w), s * np.sin(phi_w)])
    beta = rng.uniform(0, 2 * math.pi, count)
    f = np.column_stack([np.cos(beta), np.sin(beta)]) / math.sqrt(2)
    k = np.einsum("ij,ij->i", w, f)
    # need <u, e> = <w, f> with |e| = 1/sqrt(2); |k| <= |w|/sqrt(2) < |u|/sqrt(2)
    ratio = np.clip(math.sqrt(2) * k / r_u, -1.0, 1.0)
    sign = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    alpha = phi_u + sign * np.arccos(ratio)
    e = np.column_stack([np.cos(alpha), np.sin(alpha)]) / math.sqrt(2)
    p = np.hstack([u, w])
    v = np.hstack([e, f])
    return p, v


def gen_quadric(
    delta: float,
    seed: int = 0,
    density: float = 4.0,
    level: float = QUADRIC_LEVEL,
    w_max: float = 0.5,
    cell_budget: int | None = None,
) -> Arrangement:
    """About ``density * delta^-3`` tubes along rulings of ``x1^2+x2^2-x3^2-x4^2 = level``.

    Each tube follows a line lying exactly in the hypersurface, with its
    midpoint moved by at most ``delta/4`` and its direction tilted by at most
    ``delta/4`` radians.
    """
    if not 0 < delta <= DELTA_RANGE[1]:
        raise DomainError("delta must lie in (0, 1/4]")
    rng = np.random.default_rng([seed, 2])
    count = int(round(density * delta**-3))
    p, v = _quadric_lines(rng, count, level, w_max)
    p = p + random_ball_points(rng, count, 4, delta / 4)
    tilt = rng.standard_normal((count, 4))
    tilt -= np.einsum("ij,ij->i", tilt, v)[:, None] * v
    tilt /= np.maximum(np.linalg.norm(tilt, axis=1, keepdims=True), 1e-300)
    ang = rng.uniform(0, delta / 4, count)
    v = np.cos(ang)[:, None] * v + np.sin(ang)[:, None] * tilt
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    tubes = [Tube.clipped(i, p[i], v[i], delta) for i in range(count)]
    return Arrangement(4, delta, tubes, seed=seed,
                       provenance={"kind": "quadric", "density": density, "level": level, "w_max": w_max},
                       **_budget_kw(cell_budget))


def flat_basis(n: int, ell: int) -> np.ndarray:
    """The coordinate flat spanned by the first ``ell`` axes."""
    return np.eye(n)[:ell]


def gen_flat_concentration(
    ell: int,
    delta: float,
    seed: int = 0,
    n: int = 4,
    count: int | None = None,
    cell_budget: int | None = None,
) -> Arrangement:
    """``delta^(1-n)`` random tubes inside the delta-neighborhood of the flat ``x_{ell+1..n} = 0``.

    Directions lie in the flat up to an angle of ``delta / 2``; axes stay
    within ``delta / 2`` of the flat, so every tube is inside its
    ``3 delta / 2``-neighborhood.
    """
    if not 1 <= ell <= n - 1:
        raise DomainError("flat dimension must lie in 1..n-1")
    if not 0 < delta <= DELTA_RANGE[1]:
        raise DomainError("delta must lie in (0, 1/4]")
    rng = np.random.default_rng([seed, 3])
    m = int(round(delta ** (1 - n))) if count is None else int(count)
    if ell == 1:
        base = np.tile(np.eye(n)[0], (m, 1))
    else:
        base = np.zeros((m, n))
        base[:, :ell] = random_unit_vectors(rng, m, ell)
    normal = np.zeros((m, n))
    normal[:, ell:] = random_unit_vectors(rng, m, n - ell)
    ang = rng.uniform(0, delta / 2, m)
    dirs = np.cos(ang)[:, None] * base + np.sin(ang)[:, None] * normal
    centers = np.zeros((m, n))
    centers[:, :ell] = random_ball_points(rng, m, ell, 0.75) if ell > 1 else rng.uniform(-0.75, 0.75, (m, 1))
    # tilt moves the segment ends off the flat by <= sin(delta/2)/2; keep the axis within delta/2
    off = random_ball_points(rng, m, n - ell, delta / 2 - 0.5 * math.sin(delta / 2))
    centers[:, ell:] = off
    tubes = [Tube.clipped(i, centers[i], dirs[i], delta) for i in range(m)]
    return Arrangement(n, delta, tubes, seed=seed, provenance={"kind": "flat", "ell": ell},
                       **_budget_kw(cell_budget))


def gen_bush(
    center: Sequence[float],
    count: int,
    delta: float,
    seed: int = 0,
    axis: Sequence[float] | None = None,
    spread: float | None = None,
    offset: float = 0.0,
    cell_budget: int | None = None,
) -> Arrangement:
    """``count`` tubes through ``center`` with pairwise delta-separated directions.

    ``axis``/``spread`` restrict directions to a cone; ``offset`` slides each
    tube along its axis by up to that amount so the common point is not always
    the midpoint.
    """
    c = np.asarray(center, dtype=np.float64)
    n = c.size
    if count > delta ** (1 - n) + 1e-9:
        raise DomainError(f"count {count} exceeds delta^(1-n) = {delta ** (1 - n):g}")
    rng = np.random.default_rng([seed, 4])
    dirs = separated_directions(n, delta, rng, count=count, axis=axis, spread=spread, min_rate=0.0005)
    if dirs.shape[0] < count:
        raise DomainError(f"only {dirs.shape[0]} separated directions fit, {count} requested")
    shift = rng.uniform(-offset, offset, count) if offset > 0 else np.zeros(count)
    tubes = [Tube.clipped(i, c + shift[i] * dirs[i], dirs[i], delta) for i in range(count)]
    return Arrangement(n, delta, tubes, seed=seed,
                       provenance={"kind": "bush", "center": c.tolist(), "spread": spread},
                       **_budget_kw(cell_budget))


def gen_empty(n: int, delta: float, seed: int = 0, cell_budget: int | None = None) -> Arrangement:
    return Arrangement(n, delta, [], seed=seed, provenance={"kind": "empty"}, **_budget_kw(cell_budget))


def merge(arrangements: Sequence[Arrangement]) -> Arrangement:
    """Union of same-scale arrangements with tube ids renumbered consecutively."""
    if not arrangements:
        raise DomainError("nothing to merge")
    first = arrangements[0]
    tubes, shadings = [], {}
    for arr in arrangements:
        if arr.n != first.n or arr.delta != first.delta or arr.h != first.h:
            raise DomainError("merged arrangements must share n, delta and h")
        for t in arr.tubes:
            nid = len(tubes)
            tubes.append(t.with_id(nid))
            if t.id in arr.shadings:
                sh = arr.shadings[t.id]
                shadings[nid] = Shading(nid, sh.cells, sh.tube_volume)
    return first.replace(tubes=tubes, shadings=shadings,
                         provenance={"kind": "merge", "parts": [a.provenance for a in arrangements]})


# ---------------------------------------------------------------------------
# shadings

def shade(arr: Arrangement, keep: Callable[[Tube, np.ndarray, np.random.Generator], np.ndarray],
          seed: int = 0) -> Arrangement:
    """Shade every tube with the cells of its voxelization selected by ``keep``.

    ``keep(tube, centers, rng)`` receives the cell centers of the tube and
    returns a boolean mask.
    """
    cells, off = arr.tube_cells()
    grid = arr.grid
    out = {}
    for i, t in enumerate(arr.tubes):
        c = cells[off[i]:off[i + 1]]
        rng = np.random.default_rng([seed, t.id])
        mask = np.asarray(keep(t, grid.centers(c), rng), dtype=bool)
        out[t.id] = Shading(t.id, VoxelSet(grid, c[mask]), t.volume)
    return arr.with_shadings(out)


def full_shading(arr: Arrangement) -> Arrangement:
    return arr.materialize_shadings()


def interval_shading(arr: Arrangement, fraction: float, seed: int = 0) -> Arrangement:
    """Keep a random sub-segment of relative length ``fraction`` of each tube."""
    if not 0 < fraction <= 1:
        raise DomainError("fraction must lie in (0, 1]")

    def keep(t: Tube, x: np.ndarray, rng) -> np.ndarray:
        s = (x - t.c) @ t.v
        L = t.length * fraction
        start = rng.uniform(-t.length / 2, t.length / 2 - L) if fraction < 1 else -t.length / 2
        pad = t.radius if fraction == 1 else 0.0
        return (s >= start - pad) & (s <= start + L + pad)

    return shade(arr, keep, seed)


def random_cell_shading(arr: Arrangement, probability: float, seed: int = 0) -> Arrangement:
    """Keep each cell of each tube independently with ``probability``."""
    return shade(arr, lambda t, x, rng: rng.random(x.shape[0]) < probability, seed)


def ball_shading(arr: Arrangement, centers: Sequence[Sequence[float]], radius: float) -> Arrangement:
    """Restrict every tube to the union of the given balls."""
    c = np.asarray(centers, dtype=np.float64).reshape(-1, arr.n)

    def keep(t: Tube, x: np.ndarray, rng) -> np.ndarray:
        d = np.min(np.linalg.norm(x[:, None, :] - c[None, :, :], axis=2), axis=1)
        return d <= radius

    return shade(arr, keep)


def axial_ball_shading(arr: Arrangement, positions: Sequence[float], radius: float) -> Arrangement:
    """Restrict each tube to balls centered at the given signed axial positions."""
    pos = np.asarray(positions, dtype=np.float64)

    def keep(t: Tube, x: np.ndarray, rng) -> np.ndarray:
        centres = t.c[None, :] + pos[:, None] * t.v[None, :]
        d = np.min(np.linalg.norm(x[:, None, :] - centres[None, :, :], axis=2), axis=1)
        return d <= radius

    return shade(arr, keep)


# ---------------------------------------------------------------------------
# sparsification

def random_sparsify(arr: Arrangement, K: float, C: float = 1.0, seed: int = 0) -> Arrangement:
    """Keep each tube independently with probability ``1 / (C K)``."""
    if K < 1 or C < 1:
        raise DomainError("K and C must be at least 1")
    rng = np.random.default_rng([seed, 5])
    draws = rng.random(len(arr))
    p = 1.0 / (K * C)
    keep = [t.id for t, u in zip(arr.tubes, draws) if u < p]
    out = arr.subset(keep)
    out.provenance = dict(arr.provenance, sparsify={"K": K, "C": C, "seed": seed})
    return out


# ---------------------------------------------------------------------------
# fattening

@dataclass(frozen=True, eq=False)
class FatThinDecomposition:
    """Coarse theta-tubes with the thin tubes they contain.

    ``fat`` holds the coaxial theta-tubes; a thin tube is assigned to a fat
    tube when it lies in the fat tube's 10-fold dilate.
    """

    theta: float
    delta: float
    fat: tuple[Tube, ...]
    assignment: dict[int, int]
    members: dict[int, tuple[int, ...]]
    total_thin: int
    retained_before_pigeonhole: int
    pigeonhole_class: int | None
    dilation: float = 10.0
    meta: dict = field(default_factory=dict)

    @property
    def A(self) -> float:
        return len(self.fat) * self.theta**3

    @property
    def retention(self) -> float:
        return len(self.assignment) / self.total_thin if self.total_thin else 1.0

    @property
    def retention_before_pigeonhole(self) -> float:
        return self.retained_before_pigeonhole / self.total_thin if self.total_thin else 1.0

    def counts(self) -> np.ndarray:
        return np.array([len(self.members[f.id]) for f in self.fat], dtype=np.int64)

    def dilated(self, factor: float | None = None) -> list[Tube]:
        """Fat tubes with radius ``factor * theta`` (default the assignment dilation), clipped to the domain."""
        k = self.dilation if factor is None else factor
        r = min(1.0, k * self.theta)
        return [Tube.clipped(f.id, f.center, f.direction, r, f.length) for f in self.fat]

    def audit(self) -> dict:
        """Re-check the structural invariants; returns named booleans and measurements."""
        nested = 0
        fat = [] if self.meta.get("identity") else list(self.fat)
        for i in range(len(fat)):
            for j in range(len(fat)):
                if i != j and _inside(fat[j], fat[i], 20 * self.theta - self.theta):
                    nested += 1
        counts = self.counts()
        spread = float(counts.max() / counts.min()) if counts.size else 1.0
        partition = sorted(self.assignment) == sorted(i for m in self.members.values() for i in m)
        return {
            "nested_pairs": nested,
            "non_nested": nested == 0,
            "partition": partition,
            "retention_before_pigeonhole": self.retention_before_pigeonhole,
            "retention": self.retention,
            "count_spread": spread,
            "dyadic_balanced": spread < 2.0 + 1e-12 if self.pigeonhole_class is not None else True,
        }


def _inside(inner: Tube, outer: Tube, reach: float) -> bool:
    """Both axis endpoints of ``inner`` within ``reach`` of the axis segment of ``outer``."""
    d = segment_distance(np.vstack([inner.a, inner.b]), outer.a, outer.b)
    return bool(np.all(d <= reach + 1e-12))


def fatten_tubes(arr: Arrangement, theta: float, pigeonhole: bool = True, dilation: float = 10.0) -> FatThinDecomposition:
    """Greedy selection of theta-tubes covering the thin tubes.

    Candidates are the theta-tubes coaxial with thin tubes, ranked by how many
    thin tubes their ``dilation``-fold dilate contains (ties by id). A
    candidate is rejected when its 20-fold dilate and that of an accepted tube
    contain one another. Thin tubes go to the first accepted fat tube
    containing them. With ``pigeonhole`` only fat tubes whose thin count lies
    in the heaviest dyadic class are kept (ties toward the smaller class).
    """
    delta = arr.delta
    if theta < delta * (1 - 1e-12):
        raise DomainError("theta must be at least delta")
    if theta > 1:
        raise DomainError("theta must be at most 1")
    m = len(arr)
    if m == 0:
        return FatThinDecomposition(theta, delta, (), {}, {}, 0, 0, None, dilation)
    if theta <= delta * (1 + 1e-12):
        # at the thin scale every tube is its own fat tube
        fat = tuple(arr.tubes)
        return FatThinDecomposition(theta, delta, fat, {t.id: t.id for t in fat}, {t.id: (t.id,) for t in fat},
                                    m, m, 0 if pigeonhole else None, dilation, {"identity": True})
    a, b = arr.endpoints()
    reach = dilation * theta - delta
    ep = np.hstack([a, b])
    ep_swapped = np.hstack([b, a])
    radius = 2 * reach * math.sqrt(2)
    everyone = np.arange(m, dtype=np.int64)
    tree = cKDTree(ep) if radius < 4 * math.sqrt(2) else None
    contains: list[np.ndarray] = []
    for i in range(m):
        # endpoint pairs within 2*reach of each other are the only containment candidates
        if tree is None:
            cand = everyone
        else:
            cand = np.union1d(np.asarray(tree.query_ball_point(ep[i], radius), dtype=np.int64),
                              np.asarray(tree.query_ball_point(ep_swapped[i], radius), dtype=np.int64))
        da = segment_distance(a[cand], a[i], b[i])
        db = segment_distance(b[cand], a[i], b[i])
        contains.append(cand[(da <= reach + 1e-12) & (db <= reach + 1e-12)])
    counts = np.array([c.size for c in contains])
    order = sorted(range(m), key=lambda i: (-counts[i], arr.tubes[i].id))
    nest_reach = 20 * theta - theta
    accepted: list[int] = []
    acc_a = np.empty((0, arr.n))
    acc_b = np.empty((0, arr.n))
    for i in order:
        if accepted:
            # either nesting direction forbids selection
            d1 = np.maximum(segment_distance_many(a[i], acc_a, acc_b), segment_distance_many(b[i], acc_a, acc_b))
            d2 = np.maximum(_point_to_segment(acc_a, a[i], b[i]), _point_to_segment(acc_b, a[i], b[i]))
            if np.any(d1 <= nest_reach + 1e-12) or np.any(d2 <= nest_reach + 1e-12):
                continue
        accepted.append(i)
        acc_a = np.vstack([acc_a, a[i]])
        acc_b = np.vstack([acc_b, b[i]])
    assignment: dict[int, int] = {}
    members: dict[int, list[int]] = {}
    fat_tubes = []
    for i in accepted:
        t = arr.tubes[i]
        ft = Tube.clipped(t.id, t.center, t.direction, min(theta, 1.0), t.length)
        fat_tubes.append(ft)
        members[ft.id] = []
        for j in contains[i]:
            tid = arr.tubes[int(j)].id
            if tid not in assignment:
                assignment[tid] = ft.id
                members[ft.id].append(tid)
    retained_before = len(assignment)
    fat_tubes = [f for f in fat_tubes if members[f.id]]
    klass = None
    if pigeonhole and fat_tubes:
        cnt = np.array([len(members[f.id]) for f in fat_tubes])
        cls = np.floor(np.log2(cnt)).astype(int)
        mass = {int(k): int(cnt[cls == k].sum()) for k in np.unique(cls)}
        klass = min(mass, key=lambda k: (-mass[k], k))
        fat_tubes = [f for f, k in zip(fat_tubes, cls) if k == klass]
        keep = {f.id for f in fat_tubes}
        assignment = {t: f for t, f in assignment.items() if f in keep}
    members_t = {f.id: tuple(sorted(members[f.id], key=arr.position)) for f in fat_tubes}
    return FatThinDecomposition(theta, delta, tuple(fat_tubes), assignment, members_t, m,
                                retained_before, klass, dilation)


def _point_to_segment(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return segment_distance(points, a, b)


def segment_distance_many(point: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Distance from one point to each segment ``[A_k, B_k]``."""
    d = B - A
    L2 = np.einsum("ij,ij->i", d, d)
    t = np.where(L2 > 0, np.einsum("ij,ij->i", point - A, d) / np.where(L2 > 0, L2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(A + t[:, None] * d - point, axis=1)
