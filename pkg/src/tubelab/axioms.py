"""Lower bounds for Wolff-type non-concentration constants of an arrangement.

Every constant here is a maximum over a finite probe family, so it certifies
a lower bound for the true supremum and nothing more.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .arrangement import Arrangement
from .errors import DomainError, PreconditionError
from .geometry import DOMAIN_RADIUS, normalize
from .semialgebraic import (
    Polynomial,
    SemiAlgebraicSet,
    ball_set,
    measure_estimate,
    prism_set,
    slab_set,
    tube_neighborhood_set,
    variety_neighborhood,
)

CATALOG_VERSION = "1"
E_MAX_BUDGET = 12
CONTAIN_TOL = 1e-9


@dataclass(frozen=True)
class ProbeRecord:
    probe_id: int
    description: str
    lam: float
    count: int
    bound: float
    ratio: float
    probe: dict = field(default_factory=dict, compare=False)
    complexity: int = 0


@dataclass
class AxiomReport:
    kind: str
    records: list[ProbeRecord] = field(default_factory=list)
    per_complexity: dict[int, float] = field(default_factory=dict)
    catalog_version: str = CATALOG_VERSION
    meta: dict = field(default_factory=dict)

    @property
    def K_lower(self) -> float:
        return max((r.ratio for r in self.records), default=0.0)

    @property
    def witness(self) -> ProbeRecord | None:
        best = None
        for r in self.records:  # first maximal record wins
            if best is None or r.ratio > best.ratio:
                best = r
        return best

    def add(self, rec: ProbeRecord) -> None:
        self.records.append(rec)
        if rec.complexity:
            self.per_complexity[rec.complexity] = max(self.per_complexity.get(rec.complexity, 0.0), rec.ratio)

    def extend(self, other: "AxiomReport") -> None:
        for r in other.records:
            self.add(ProbeRecord(len(self.records), r.description, r.lam, r.count, r.bound, r.ratio, r.probe,
                                 r.complexity))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["probe_id", "description", "lambda", "count", "bound", "ratio"])
        for r in self.records:
            w.writerow([r.probe_id, r.description, repr(r.lam), r.count, repr(r.bound), repr(r.ratio)])
        return buf.getvalue()

    def summary(self) -> dict:
        wit = self.witness
        return {
            "kind": self.kind,
            "K_lower": self.K_lower,
            "probes": len(self.records),
            "catalog_version": self.catalog_version,
            "witness": None if wit is None else {"probe_id": wit.probe_id, "description": wit.description,
                                                 "probe": wit.probe},
            "per_complexity": {str(k): v for k, v in sorted(self.per_complexity.items())},
            **self.meta,
        }


# ---------------------------------------------------------------------------
# prisms

def complete_frame(u: Sequence[float]) -> np.ndarray:
    """Orthonormal frame whose first row is ``u`` (deterministic completion)."""
    u = normalize(u)
    n = u.size
    M = np.column_stack([u, np.eye(n)])
    q, _ = np.linalg.qr(M)
    q = q[:, :n].T
    if np.dot(q[0], u) < 0:
        q[0] = -q[0]
    for i in range(1, n):  # canonical sign for reproducibility
        k = int(np.argmax(np.abs(q[i])))
        if q[i, k] < 0:
            q[i] = -q[i]
    return q


def dyadic_sides(delta: float, top: float = 1.0) -> list[float]:
    out = []
    t = delta
    while t <= top * (1 + 1e-12):
        out.append(t)
        t *= 2
    return out


def _prism_coords(a: np.ndarray, b: np.ndarray, center: np.ndarray, frame: np.ndarray):
    return (a - center) @ frame.T, (b - center) @ frame.T


def prism_count(arr: Arrangement, center, frame, sides: Sequence[float], long_side: float = 1.0,
                mask: np.ndarray | None = None) -> int:
    """Tubes whose axis lies in the prism ``long_side x sides`` (frame row 0 is the long axis)."""
    a, b = arr.endpoints()
    if mask is None:
        mask = arr.statistical_mask()
    if not mask.any():
        return 0
    F = np.asarray(frame, dtype=np.float64)
    pa, pb = _prism_coords(a[mask], b[mask], np.asarray(center, dtype=np.float64), F)
    half = np.concatenate([[long_side / 2 + CONTAIN_TOL], np.asarray(sides) / 2 - CONTAIN_TOL])
    ok = np.all(np.abs(pa) <= half, axis=1) & np.all(np.abs(pb) <= half, axis=1)
    return int(ok.sum())


def prism_bound(sides: Sequence[float], delta: float) -> float:
    return float(np.prod(sides)) * delta ** (1 - (len(sides) + 1))


def _anchor_sweep(arr: Arrangement, idx: int, sides_list: list[float], mask: np.ndarray, long_side: float,
                  frame: np.ndarray | None = None, center: np.ndarray | None = None):
    """Best prism around one anchor tube over all sorted dyadic side tuples."""
    a, b = arr.endpoints()
    t = arr.tubes[idx]
    F = complete_frame(t.direction) if frame is None else frame
    c = t.c if center is None else center
    pa, pb = _prism_coords(a[mask], b[mask], c, F)
    inside_long = (np.abs(pa[:, 0]) <= long_side / 2 + CONTAIN_TOL) & (np.abs(pb[:, 0]) <= long_side / 2 + CONTAIN_TOL)
    need = np.maximum(np.abs(pa[inside_long, 1:]), np.abs(pb[inside_long, 1:]))  # half-widths required
    sides = np.asarray(sides_list)
    # smallest dyadic side index with need <= side/2 - tol
    cls = np.searchsorted(sides / 2 - CONTAIN_TOL, need, side="left")
    n1 = arr.n - 1
    best = (0.0, None, 0)
    S = len(sides)
    if cls.size == 0:
        return best, F, c
    for combo in _sorted_combos(S, n1):
        k = np.asarray(combo)
        cnt = int(np.count_nonzero(np.all(cls <= k, axis=1)))
        if cnt == 0:
            continue
        sd = sides[k]
        ratio = cnt / prism_bound(sd, arr.delta)
        if ratio > best[0]:
            best = (ratio, tuple(float(x) for x in sd), cnt)
    return best, F, c


def _sorted_combos(S: int, k: int):
    if k == 0:
        yield ()
        return
    for i in range(S):
        for rest in _sorted_combos(i + 1, k - 1):
            yield (i,) + rest


def linear_wolff_constant(arr: Arrangement, probes: int = 64, seed: int = 0, max_anchors: int = 512,
                          long_side: float = 1.0, refine_steps: int = 20) -> AxiomReport:
    """Lower bound for the linear Wolff constant over a prism catalog.

    The catalog has prisms aligned with (a deterministic sample of) tubes and
    with coordinate axes through those tubes' snapped centers, plus ``probes``
    random prisms. A prism counts the tubes whose axis lies inside it; the
    bound is ``t_1 ... t_{n-1} delta^(1-n)``. The best prism is then improved
    by up to ``refine_steps`` coordinate moves.
    """
    rep = AxiomReport("linear", meta={"long_side": long_side})
    mask = arr.statistical_mask()
    if len(arr) == 0 or not mask.any():
        return rep
    delta = arr.delta
    sides_list = dyadic_sides(delta)
    rng = np.random.default_rng([seed, 11])
    stat_idx = np.flatnonzero(mask)
    if stat_idx.size > max_anchors:
        anchors = np.sort(rng.choice(stat_idx, size=max_anchors, replace=False))
    else:
        anchors = stat_idx
    n = arr.n
    pid = 0
    for i in anchors:
        for kind in ("tube", "axis"):
            if kind == "tube":
                (ratio, sd, cnt), F, c = _anchor_sweep(arr, int(i), sides_list, mask, long_side)
            else:
                v = np.abs(np.asarray(arr.tubes[i].direction))
                k = int(np.argmax(v))
                F = np.eye(n)[[k] + [j for j in range(n) if j != k]]
                c = np.round(arr.tubes[i].c / delta) * delta
                (ratio, sd, cnt), F, c = _anchor_sweep(arr, int(i), sides_list, mask, long_side, F, c)
            if sd is None:
                continue
            probe = {"kind": "prism", "center": c.tolist(), "frame": F.tolist(), "sides": list(sd),
                     "long_side": long_side}
            rep.add(ProbeRecord(pid, f"{kind}-aligned prism at tube {arr.tubes[i].id}", math.nan, cnt,
                                prism_bound(sd, delta), ratio, probe))
            pid += 1
    for _ in range(probes):
        F = complete_frame(rng.standard_normal(n))
        c = rng.standard_normal(n)
        c *= rng.random() ** (1 / n) / np.linalg.norm(c)
        sd = tuple(sorted((float(rng.choice(sides_list)) for _ in range(n - 1)), reverse=True))
        cnt = prism_count(arr, c, F, sd, long_side, mask)
        probe = {"kind": "prism", "center": c.tolist(), "frame": F.tolist(), "sides": list(sd), "long_side": long_side}
        rep.add(ProbeRecord(pid, "random prism", math.nan, cnt, prism_bound(sd, delta),
                            cnt / prism_bound(sd, delta), probe))
        pid += 1
    if refine_steps and rep.witness is not None and rep.witness.count > 0:
        rec = _refine_prism(arr, rep.witness.probe, refine_steps, mask)
        if rec is not None:
            rep.add(ProbeRecord(pid, "refined prism", math.nan, rec[1], rec[2], rec[1] / rec[2], rec[0]))
    return rep


def _refine_prism(arr: Arrangement, probe: dict, steps: int, mask: np.ndarray):
    """Coordinate-wise local search: halve a side or shift the center by delta along a frame axis."""
    delta = arr.delta
    c = np.asarray(probe["center"])
    F = np.asarray(probe["frame"])
    sd = list(probe["sides"])
    L = probe["long_side"]
    cnt = prism_count(arr, c, F, sd, L, mask)
    best = cnt / prism_bound(sd, delta)
    for _ in range(steps):
        improved = False
        moves = []
        for i in range(len(sd)):
            if sd[i] / 2 >= delta * (1 - 1e-12):
                s2 = list(sd)
                s2[i] /= 2
                moves.append((c, s2))
            for sgn in (-1, 1):
                moves.append((c + sgn * delta * F[i + 1], sd))
        for c2, s2 in moves:
            k = prism_count(arr, c2, F, s2, L, mask)
            r = k / prism_bound(s2, delta)
            if r > best + 1e-15:
                best, c, sd, cnt, improved = r, c2, list(s2), k, True
                break
        if not improved:
            break
    return ({"kind": "prism", "center": np.asarray(c).tolist(), "frame": F.tolist(), "sides": sd, "long_side": L},
            cnt, prism_bound(sd, delta))


def evaluate_probe(arr: Arrangement, probe: dict) -> int:
    """Recount a serialized prism probe (used to reproduce witnesses)."""
    if probe.get("kind") != "prism":
        raise DomainError(f"cannot re-evaluate probe kind {probe.get('kind')!r}")
    return prism_count(arr, probe["center"], probe["frame"], probe["sides"], probe.get("long_side", 1.0))


# ---------------------------------------------------------------------------
# polynomial Wolff

@dataclass(frozen=True)
class Probe:
    description: str
    region: SemiAlgebraicSet
    spec: dict = field(default_factory=dict)

    @property
    def complexity(self) -> int:
        return self.region.complexity


def default_probe_catalog(arr: Arrangement, E_max: int, probes: int = 16, seed: int = 0,
                          extra: Iterable[Probe] = ()) -> list[Probe]:
    """Slabs, balls, hyperplane/sphere/quadric/graph neighborhoods, tube neighborhoods and prisms."""
    n, delta = arr.n, arr.delta
    rng = np.random.default_rng([seed, 12])
    cat: list[Probe] = []

    def add(desc, S, spec):
        if S.complexity <= E_max:
            cat.append(Probe(desc, S, spec))

    add("ball B(0,2)", ball_set(np.zeros(n), DOMAIN_RADIUS), {"kind": "ball", "r": DOMAIN_RADIUS})
    for k in range(n):
        for w in (delta, 4 * delta):
            normal = np.eye(n)[k]
            add(f"coordinate slab x{k + 1} width {2 * w:g}", slab_set(normal, 0.0, w),
                {"kind": "slab", "normal": normal.tolist(), "half_width": w})
    for _ in range(probes):
        normal = normalize(rng.standard_normal(n))
        off = float(rng.uniform(-0.5, 0.5))
        w = float(delta * 2 ** rng.integers(0, 3))
        add(f"random slab width {2 * w:g}", slab_set(normal, off, w),
            {"kind": "slab", "normal": normal.tolist(), "offset": off, "half_width": w})
    for r in (0.5, 1.0):
        P = Polynomial.sphere(np.zeros(n), r)
        add(f"sphere shell r={r:g}", variety_neighborhood(P, delta), {"kind": "sphere", "r": r, "width": delta})
    if n == 4:
        from .arrangements import quadric_polynomial

        Q = quadric_polynomial()
        for w in (delta, 2 * delta):
            add(f"split quadric shell width {w:g}", variety_neighborhood(Q, w), {"kind": "quadric", "width": w})
    for _ in range(max(1, probes // 4)):
        # graph x_n = q(x_1..x_{n-1}) of a random quadratic
        terms = {}
        for e in _monomials_upto(n - 1, 2):
            terms[e + (0,)] = float(rng.normal(scale=0.3))
        terms[(0,) * (n - 1) + (1,)] = -1.0
        P = Polynomial(n, terms)
        add("random quadratic graph", variety_neighborhood(P, delta), {"kind": "graph", "poly": P.to_record()})
    mask = arr.statistical_mask()
    pos = np.flatnonzero(mask)
    if pos.size:
        pick = np.sort(rng.choice(pos, size=min(4, pos.size), replace=False))
        for i in pick:
            t = arr.tubes[int(i)]
            add(f"N_10delta(tube {t.id})", tube_neighborhood_set(t, 10 * delta), {"kind": "tube", "id": t.id})
    if E_max >= 2 * n:
        lin = linear_wolff_constant(arr, probes=0, seed=seed, max_anchors=32, refine_steps=0)
        wit = lin.witness
        if wit is not None and wit.count > 0:
            p = wit.probe
            half = [p["long_side"] / 2] + [s / 2 for s in p["sides"]]
            add("linear-catalog witness prism", prism_set(p["center"], p["frame"], half), dict(p))
    cat.extend(extra)
    return cat


def _monomials_upto(m: int, d: int):
    from .semialgebraic import monomials

    return monomials(m, d)


def tube_fractions(arr: Arrangement, S: SemiAlgebraicSet) -> np.ndarray:
    """``|T cap S| / |T|`` per tube, measured on the tube's own voxel cells."""
    out = np.zeros(len(arr))
    if len(arr) == 0:
        return out
    a, b = arr.endpoints()
    cand = np.ones(len(arr), dtype=bool)
    if S.bbox is not None:
        lo, hi = np.asarray(S.bbox[0]) - arr.delta, np.asarray(S.bbox[1]) + arr.delta
        cand = np.all((np.maximum(a, b) >= lo) & (np.minimum(a, b) <= hi), axis=1)
    idx = np.flatnonzero(cand)
    g = arr.grid
    from .geometry import voxelize_segments

    for s in range(0, idx.size, 256):
        chunk = idx[s:s + 256]
        cells, off = voxelize_segments(a[chunk], b[chunk], np.full(chunk.size, arr.delta), g)
        inside = S.contains(g.centers(cells)) if cells.size else np.zeros(0, bool)
        csum = np.concatenate([[0], np.cumsum(inside)])
        hit = csum[off[1:]] - csum[off[:-1]]
        tot = np.diff(off)
        out[chunk] = np.where(tot > 0, hit / np.maximum(tot, 1), 0.0)
    return out


def polynomial_wolff_constant(arr: Arrangement, E_max: int = 4, probes: int = 16, seed: int = 0,
                              samples: int = 1_000_000, extra: Iterable[Probe] = (),
                              catalog: Sequence[Probe] | None = None) -> AxiomReport:
    """Lower bounds for ``K_E`` (E <= E_max) over a probe catalog and a dyadic lambda sweep.

    For each probe ``S`` and ``lambda = delta 2^k <= 1`` the ratio is
    ``#{T : |T cap S| >= lambda |T|} / (|S| delta^(1-n) lambda^-n)``.
    """
    if E_max > E_MAX_BUDGET:
        raise PreconditionError(f"E_max above catalog budget {E_MAX_BUDGET}")
    rep = AxiomReport("polynomial", meta={"E_max": E_max, "samples": samples})
    if len(arr) == 0:
        return rep
    cat = list(catalog) if catalog is not None else default_probe_catalog(arr, E_max, probes, seed, extra)
    n, delta = arr.n, arr.delta
    lams = dyadic_sides(delta)
    mask = arr.statistical_mask()
    pid = 0
    for j, probe in enumerate(cat):
        if probe.complexity > E_max:
            continue
        vol, se = measure_estimate(probe.region, samples, seed + j)
        frac = tube_fractions(arr, probe.region)[mask]
        for lam in lams:
            cnt = int(np.count_nonzero(frac >= lam - 1e-12))
            bound = vol * delta ** (1 - n) * lam ** (-n)
            ratio = cnt / bound if bound > 0 else (math.inf if cnt else 0.0)
            spec = dict(probe.spec, measure=vol, measure_se=se)
            rep.add(ProbeRecord(pid, probe.description, lam, cnt, bound, ratio, spec, probe.complexity))
            pid += 1
    return rep


# ---------------------------------------------------------------------------
# hypersurfaces and distinctness

@dataclass(frozen=True)
class ConcentrationResult:
    count: int
    bound: float
    ratio: float


def hypersurface_concentration(arr: Arrangement, P: Polynomial, ball: tuple[Sequence[float], float],
                               M: float = 1.0) -> ConcentrationResult:
    """Tubes with ``T cap B`` inside the ``M delta``-neighborhood of Z(P), against ``(delta/r) delta^(2-n)``."""
    center = np.asarray(ball[0], dtype=np.float64)
    r = float(ball[1])
    if P.degree < 1:
        raise DomainError("polynomial must have degree >= 1")
    delta, n = arr.delta, arr.n
    if not delta * (1 - 1e-12) <= r <= DOMAIN_RADIUS:
        raise DomainError("ball radius must lie in [delta, 2]")
    if np.linalg.norm(center) + r > DOMAIN_RADIUS + 1e-9 and np.linalg.norm(center) - r >= DOMAIN_RADIUS:
        raise DomainError("ball lies outside B(0,2)")
    if np.linalg.norm(center) > DOMAIN_RADIUS:
        raise DomainError("ball center outside B(0,2)")
    S = variety_neighborhood(P, M * delta)
    count = 0
    if len(arr):
        g = arr.grid
        a, b = arr.endpoints()
        from .geometry import voxelize_segments

        for s in range(0, len(arr), 256):
            sl = slice(s, s + 256)
            cells, off = voxelize_segments(a[sl], b[sl], np.full(a[sl].shape[0], delta), g)
            x = g.centers(cells)
            inb = np.linalg.norm(x - center, axis=1) <= r
            good = S.contains(x) | ~inb
            cs_in = np.concatenate([[0], np.cumsum(inb)])
            cs_bad = np.concatenate([[0], np.cumsum(~good)])
            meets = (cs_in[off[1:]] - cs_in[off[:-1]]) > 0
            clean = (cs_bad[off[1:]] - cs_bad[off[:-1]]) == 0
            count += int(np.count_nonzero(meets & clean))
    bound = (delta / r) * delta ** (2 - n)
    return ConcentrationResult(count, bound, count / bound)


def essential_distinctness(arr: Arrangement, factor: float = 10.0) -> int:
    """Largest number of tubes inside the ``factor * delta``-neighborhood of a single tube.

    ``T'`` counts for ``T`` when both axis endpoints of ``T'`` are within
    ``(factor - 1) delta`` of the axis of ``T``. Each tube counts itself.
    """
    m = len(arr)
    if m == 0:
        return 0
    from .geometry import segment_distance

    a, b = arr.endpoints()
    reach = (factor - 1) * arr.delta
    lengths = arr.lengths()
    full = lengths >= 1 - 1e-9
    ep = np.hstack([a, b])
    tree = cKDTree(ep)
    # unit-length tubes nested this way have matching endpoints up to ~reach
    rad = 2 * (reach + 2 * reach * reach) + 1e-9
    best = 1
    short = np.flatnonzero(~full)
    flipped = np.hstack([b, a])
    everyone = np.arange(m)
    for i in range(m):
        if i % 256 == 0:
            near = tree.query_ball_point(ep[i:i + 256], rad)
            near_f = tree.query_ball_point(flipped[i:i + 256], rad)
        if full[i]:
            cand = np.unique(np.concatenate([np.asarray(near[i % 256], np.int64), np.asarray(near_f[i % 256], np.int64), short]))
        else:
            cand = everyone
        if cand.size <= best:
            continue
        da = segment_distance(a[cand], a[i], b[i])
        db = segment_distance(b[cand], a[i], b[i])
        best = max(best, int(np.count_nonzero((da <= reach + 1e-12) & (db <= reach + 1e-12))))
    return best


def report_to_json(rep: AxiomReport) -> str:
    return json.dumps(rep.summary(), sort_keys=True, default=float)
