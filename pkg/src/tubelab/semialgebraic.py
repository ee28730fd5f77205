"""Polynomials, semi-algebraic sets, quasi-Monte-Carlo measure and voxel components."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import qmc

from .errors import DomainError, PreconditionError
from .geometry import DOMAIN_RADIUS, Tube, VoxelGrid, VoxelSet, normalize, voxelize_tube

D_MAX = 8
TAU_EQ = 1e-9
G_MIN = 1e-3


def monomials(n: int, degree: int) -> list[tuple[int, ...]]:
    """Exponent tuples of total degree <= ``degree``, graded then lexicographic."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = [0] * n
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    # combinations_with_replacement yields reverse-lex inside a degree; keep it stable
    return out


def _neumaier(terms: Iterable[np.ndarray], shape) -> np.ndarray:
    total = np.zeros(shape)
    comp = np.zeros(shape)
    for t in terms:
        s = total + t
        big = np.abs(total) >= np.abs(t)
        comp += np.where(big, (total - s) + t, (t - s) + total)
        total = s
    return total + comp


class Polynomial:
    """Real polynomial in ``n`` variables with a dense monomial -> coefficient map."""

    def __init__(self, n: int, terms: Mapping[tuple[int, ...], float] | None = None, d_max: int = D_MAX):
        self.n = int(n)
        self.d_max = int(d_max)
        clean: dict[tuple[int, ...], float] = {}
        for e, c in (terms or {}).items():
            e = tuple(int(x) for x in e)
            if len(e) != self.n or any(x < 0 for x in e):
                raise DomainError(f"bad exponent {e} for n={self.n}")
            c = float(c)
            if c != 0.0:
                clean[e] = clean.get(e, 0.0) + c
        clean = {e: c for e, c in clean.items() if c != 0.0}
        self.terms = dict(sorted(clean.items(), key=lambda kv: (sum(kv[0]), kv[0])))
        if self.degree > self.d_max:
            raise DomainError(f"degree {self.degree} exceeds d_max={self.d_max}")
        self._exps = np.array(list(self.terms.keys()), dtype=np.int64).reshape(-1, self.n)
        self._coefs = np.array(list(self.terms.values()), dtype=np.float64)

    # construction ---------------------------------------------------
    @classmethod
    def constant(cls, n: int, c: float) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, i: int) -> "Polynomial":
        e = [0] * n
        e[i] = 1
        return cls(n, {tuple(e): 1.0})

    @classmethod
    def linear(cls, normal: Sequence[float], offset: float = 0.0) -> "Polynomial":
        """``normal . x - offset``."""
        n = len(normal)
        terms = {(0,) * n: -float(offset)}
        for i, a in enumerate(normal):
            e = [0] * n
            e[i] = 1
            terms[tuple(e)] = float(a)
        return cls(n, terms)

    @classmethod
    def sphere(cls, center: Sequence[float], radius: float) -> "Polynomial":
        """``|x - center|^2 - radius^2``."""
        n = len(center)
        p = cls.constant(n, -float(radius) ** 2)
        for i, c in enumerate(center):
            xi = cls.variable(n, i) - float(c)
            p = p + xi * xi
        return p

    @classmethod
    def from_coefficients(cls, n: int, exps: Sequence[tuple[int, ...]], coefs: Sequence[float], **kw) -> "Polynomial":
        return cls(n, dict(zip((tuple(e) for e in exps), coefs)), **kw)

    # algebra ----------------------------------------------------------
    @property
    def degree(self) -> int:
        if not self.terms:
            return -1
        return max(sum(e) for e in self.terms)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def coefficient_norm(self) -> float:
        return math.sqrt(math.fsum(c * c for c in self.terms.values()))

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise DomainError("polynomial dimension mismatch")
            return other
        return Polynomial.constant(self.n, float(other))

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        terms = dict(self.terms)
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(self.n, terms, max(self.d_max, other.d_max))

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.n, {e: -c for e, c in self.terms.items()}, self.d_max)

    def __sub__(self, other) -> "Polynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Polynomial":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Polynomial":
        other = self._coerce(other)
        terms: dict[tuple[int, ...], list[float]] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms.setdefault(e, []).append(c1 * c2)
        return Polynomial(self.n, {e: math.fsum(v) for e, v in terms.items()}, max(self.d_max, other.d_max, self.degree + other.degree))

    __rmul__ = __mul__

    def scaled(self, factor: float) -> "Polynomial":
        return Polynomial(self.n, {e: factor * c for e, c in self.terms.items()}, self.d_max)

    def normalized(self) -> "Polynomial":
        norm = self.coefficient_norm()
        if norm == 0.0:
            raise DomainError("zero polynomial")
        return self.scaled(1.0 / norm)

    def compose_affine(self, matrix, shift) -> "Polynomial":
        """Return ``x -> P(matrix @ x + shift)``."""
        A = np.asarray(matrix, dtype=np.float64)
        b = np.asarray(shift, dtype=np.float64)
        m = A.shape[1]
        ys = [Polynomial.linear(A[i], -b[i]) for i in range(self.n)]
        if m != self.n:
            ys = [Polynomial(m, y.terms) for y in ys]
        out = Polynomial.constant(m, 0.0)
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(i: int, k: int) -> Polynomial:
            if (i, k) not in cache:
                cache[(i, k)] = Polynomial.constant(m, 1.0) if k == 0 else power(i, k - 1) * ys[i]
            return cache[(i, k)]

        for e, c in self.terms.items():
            term = Polynomial.constant(m, c)
            for i, k in enumerate(e):
                if k:
                    term = term * power(i, k)
            out = out + term
        return Polynomial(m, out.terms, self.d_max)

    # evaluation -------------------------------------------------------
    def _powers(self, x: np.ndarray) -> list[list[np.ndarray]]:
        top = int(self._exps.max()) if self._exps.size else 0
        pw = []
        for i in range(self.n):
            col = [np.ones(x.shape[0])]
            for _ in range(top):
                col.append(col[-1] * x[:, i])
            pw.append(col)
        return pw

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.n:
            raise DomainError("point dimension does not match polynomial")
        if not self.terms:
            out = np.zeros(x.shape[0])
        else:
            pw = self._powers(x)

            def gen():
                for e, c in zip(self._exps, self._coefs):
                    t = np.full(x.shape[0], c)
                    for i, k in enumerate(e):
                        if k:
                            t = t * pw[i][k]
                    yield t

            out = _neumaier(gen(), x.shape[0])
        return out[0] if single else out

    def derivative(self, i: int) -> "Polynomial":
        terms = {}
        for e, c in self.terms.items():
            if e[i]:
                f = list(e)
                f[i] -= 1
                terms[tuple(f)] = c * e[i]
        return Polynomial(self.n, terms, self.d_max)

    def gradient(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return np.column_stack([self.derivative(i)(x) for i in range(self.n)])

    # persistence ------------------------------------------------------
    def to_record(self) -> dict:
        return {"n": self.n, "terms": [[list(e), c] for e, c in self.terms.items()]}

    @classmethod
    def from_record(cls, rec: Mapping) -> "Polynomial":
        return cls(rec["n"], {tuple(e): c for e, c in rec["terms"]})

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and self.n == other.n and self.terms == other.terms

    def __hash__(self):
        return hash((self.n, tuple(self.terms.items())))

    def __repr__(self) -> str:
        return f"Polynomial(n={self.n}, degree={self.degree}, terms={len(self.terms)})"


@dataclass(frozen=True)
class Neighborhood:
    """Gradient-calibrated sublevel set ``|P| <= w * max(|grad P|, g_min)``."""

    poly: Polynomial
    width: float
    g_min: float = G_MIN

    def contains(self, x: np.ndarray) -> np.ndarray:
        val = np.abs(self.poly(x))
        grad = np.linalg.norm(self.poly.gradient(x), axis=1)
        return val <= self.width * np.maximum(grad, self.g_min)


@dataclass(frozen=True, eq=False)
class SemiAlgebraicSet:
    """``{P_i = 0} & {Q_j > 0} & calibrated neighborhoods``, optionally boxed.

    ``complexity`` counts the degrees of this particular representation, which
    bounds the minimal complexity from above.
    """

    n: int
    equalities: tuple[Polynomial, ...] = ()
    inequalities: tuple[Polynomial, ...] = ()
    neighborhoods: tuple[Neighborhood, ...] = ()
    tau_eq: float = TAU_EQ
    bbox: tuple[tuple[float, ...], tuple[float, ...]] | None = None
    label: str = ""
    complexity_is_upper_bound: bool = field(default=True, init=False)

    def __post_init__(self):
        object.__setattr__(self, "equalities", tuple(self.equalities))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        object.__setattr__(self, "neighborhoods", tuple(self.neighborhoods))
        for p in (*self.equalities, *self.inequalities, *(nb.poly for nb in self.neighborhoods)):
            if p.n != self.n:
                raise DomainError("polynomial dimension mismatch in semi-algebraic set")
        if self.bbox is not None:
            lo, hi = self.bbox
            object.__setattr__(self, "bbox", (tuple(float(x) for x in lo), tuple(float(x) for x in hi)))

    @property
    def complexity(self) -> int:
        c = sum(max(p.degree, 0) for p in self.equalities)
        c += sum(max(q.degree, 0) for q in self.inequalities)
        c += sum(2 * max(nb.poly.degree, 0) for nb in self.neighborhoods)
        return max(1, c)

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        ok = np.ones(x.shape[0], dtype=bool)
        if self.bbox is not None:
            lo, hi = np.asarray(self.bbox[0]), np.asarray(self.bbox[1])
            ok &= np.all((x >= lo) & (x <= hi), axis=1)
        for p in self.equalities:
            ok &= np.abs(p(x)) <= self.tau_eq
        for q in self.inequalities:
            ok &= q(x) > 0
        for nb in self.neighborhoods:
            ok &= nb.contains(x)
        return ok

    __call__ = contains

    def sampling_box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.n, -DOMAIN_RADIUS)
        hi = np.full(self.n, DOMAIN_RADIUS)
        if self.bbox is not None:
            lo = np.maximum(lo, self.bbox[0])
            hi = np.minimum(hi, self.bbox[1])
        return lo, hi

    def intersect(self, other: "SemiAlgebraicSet", label: str = "") -> "SemiAlgebraicSet":
        bbox = None
        if self.bbox is not None or other.bbox is not None:
            lo1, hi1 = self.sampling_box()
            lo2, hi2 = other.sampling_box()
            bbox = (tuple(np.maximum(lo1, lo2)), tuple(np.minimum(hi1, hi2)))
        return SemiAlgebraicSet(
            self.n,
            self.equalities + other.equalities,
            self.inequalities + other.inequalities,
            self.neighborhoods + other.neighborhoods,
            min(self.tau_eq, other.tau_eq),
            bbox,
            label or f"({self.label})&({other.label})",
        )

    def describe(self) -> str:
        return self.label or f"semi-algebraic set of complexity {self.complexity}"


def ball_set(center: Sequence[float], radius: float) -> SemiAlgebraicSet:
    c = np.asarray(center, dtype=np.float64)
    q = -Polynomial.sphere(c, radius)
    return SemiAlgebraicSet(c.size, inequalities=(q,), bbox=(tuple(c - radius), tuple(c + radius)),
                            label=f"ball(r={radius:g})")


def slab_set(normal: Sequence[float], offset: float, half_width: float) -> SemiAlgebraicSet:
    """``|u.x - offset| < half_width`` for unit ``u``."""
    u = normalize(normal)
    lin = Polynomial.linear(u, offset)
    return SemiAlgebraicSet(u.size, inequalities=(lin + half_width, half_width - lin),
                            label=f"slab(w={2 * half_width:g})")


def prism_set(center: Sequence[float], frame, half_lengths: Sequence[float]) -> SemiAlgebraicSet:
    """Open box ``|<x - center, f_i>| < half_lengths[i]`` in the orthonormal ``frame``."""
    c = np.asarray(center, dtype=np.float64)
    F = np.asarray(frame, dtype=np.float64)
    ineqs = []
    for f, hl in zip(F, half_lengths):
        lin = Polynomial.linear(f, float(np.dot(f, c)))
        ineqs += [lin + float(hl), float(hl) - lin]
    reach = float(np.sum(np.abs(F) * np.asarray(half_lengths)[:, None], axis=0).max())
    return SemiAlgebraicSet(c.size, inequalities=tuple(ineqs),
                            bbox=(tuple(c - reach), tuple(c + reach)),
                            label="prism(" + "x".join(f"{2 * h:g}" for h in half_lengths) + ")")


def tube_neighborhood_set(tube: Tube, width: float) -> SemiAlgebraicSet:
    """Cylinder of radius ``width`` around the tube axis, capped by two slabs (complexity 4)."""
    n = tube.n
    c, v = tube.c, tube.v
    along = Polynomial.linear(v, float(np.dot(v, c)))
    dist2 = Polynomial.sphere(c, 0.0) - along * along
    half = tube.length / 2 + width
    ineqs = (width**2 - dist2, half * half - along * along)
    reach = half + width
    return SemiAlgebraicSet(n, inequalities=ineqs, bbox=(tuple(c - reach), tuple(c + reach)),
                            label=f"N_{width:g}(tube {tube.id})")


def measure_estimate(S: SemiAlgebraicSet, samples: int = 2**16, seed: int = 0, replicates: int = 8):
    """Randomized quasi-Monte-Carlo volume estimate with its standard error.

    ``replicates`` independently scrambled Sobol sequences are drawn in the
    set's sampling box; the spread of their estimates gives the error.
    """
    if samples < 1000:
        raise PreconditionError("measure_estimate needs at least 1000 samples")
    lo, hi = S.sampling_box()
    if np.any(hi <= lo):
        return 0.0, 0.0
    box_vol = float(np.prod(hi - lo))
    per = max(1, samples // replicates)
    m = max(4, int(math.ceil(math.log2(per))))
    estimates = []
    for r in range(replicates):
        eng = qmc.Sobol(d=S.n, scramble=True, seed=np.random.default_rng([int(seed), r]))
        pts = lo + (hi - lo) * eng.random_base2(m)
        hits = 0
        for chunk in np.array_split(pts, max(1, pts.shape[0] // 65536)):
            hits += int(np.count_nonzero(S.contains(chunk)))
        estimates.append(box_vol * hits / pts.shape[0])
    est = np.asarray(estimates)
    mean = float(est.mean())
    se = float(est.std(ddof=1) / math.sqrt(replicates)) if replicates > 1 else float("nan")
    return mean, se


def variety_neighborhood(P: Polynomial, width: float, g_min: float = G_MIN, bbox=None) -> SemiAlgebraicSet:
    """Width-``width`` neighborhood of Z(P) by a gradient-calibrated test.

    ``P`` is rescaled to unit coefficient norm first so that membership does
    not depend on multiplying ``P`` by a positive constant.
    """
    if P.is_zero:
        raise DomainError("zero polynomial has no zero set to thicken")
    if P.degree < 1:
        raise DomainError("constant polynomial: neighborhood undefined")
    if not width > 0:
        raise DomainError("width must be positive")
    nb = Neighborhood(P.normalized(), float(width), float(g_min))
    return SemiAlgebraicSet(P.n, neighborhoods=(nb,), bbox=bbox, label=f"N_{width:g}(Z(deg {P.degree}))")


def project_to_zero_set(P: Polynomial, x: np.ndarray, iters: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """Approximate nearest points on Z(P) by projected gradient (Newton) steps.

    Returns ``(points, converged)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = x.copy()
    for _ in range(iters):
        g = P.gradient(y)
        g2 = np.einsum("ij,ij->i", g, g)
        g2 = np.where(g2 > 1e-30, g2, np.nan)
        lam = (P(y) + np.einsum("ij,ij->i", g, x - y)) / g2
        y_new = x - lam[:, None] * g
        y = np.where(np.isfinite(y_new), y_new, y)
    scale = np.maximum(np.linalg.norm(P.gradient(y), axis=1), 1e-12)
    converged = np.abs(P(y)) / scale < 1e-9
    return y, converged


@dataclass(frozen=True)
class NeighborhoodAudit:
    agreement: float
    samples: int
    unconverged: int


def audit_neighborhood(
    P: Polynomial,
    width: float,
    samples: int = 10_000,
    seed: int = 0,
    distance: Callable[[np.ndarray], np.ndarray] | None = None,
    g_min: float = G_MIN,
    box: float = DOMAIN_RADIUS,
) -> NeighborhoodAudit:
    """Agreement rate between calibrated membership and distance-to-Z(P) <= width.

    Half the samples are uniform in ``[-box, box]^n``; the rest are placed
    within ``3 * width`` of Z(P) along its normal, where disagreement can occur.
    ``distance`` overrides the projected-gradient distance when an exact one is
    known.
    """
    rng = np.random.default_rng(seed)
    n = P.n
    S = variety_neighborhood(P, width, g_min)
    half = samples // 2
    uni = rng.uniform(-box, box, size=(half, n))
    want = samples - half
    feet = []
    got = 0
    for _ in range(8):
        if got >= want:
            break
        seeds = rng.uniform(-box, box, size=(2 * (want - got), n))
        foot, ok = project_to_zero_set(P, seeds)
        foot = foot[ok & np.all(np.abs(foot) <= box, axis=1)][: want - got]
        feet.append(foot)
        got += foot.shape[0]
    foot = np.vstack(feet) if feet else np.empty((0, n))
    normal = P.gradient(foot)
    normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-300)
    near = foot + rng.uniform(-3 * width, 3 * width, size=(foot.shape[0], 1)) * normal
    pts = np.vstack([uni, near])
    member = S.contains(pts)
    unconverged = 0
    if distance is not None:
        dist = np.asarray(distance(pts))
    else:
        proj, conv = project_to_zero_set(P, pts)
        unconverged = int((~conv).sum())
        # a failed projection means no nearby zero was found
        dist = np.where(conv, np.linalg.norm(pts - proj, axis=1), np.inf)
    truth = dist <= width
    agree = float(np.mean(member == truth))
    return NeighborhoodAudit(agree, int(pts.shape[0]), unconverged)


def voxelize_region(S: SemiAlgebraicSet, grid: VoxelGrid, chunk: int = 1 << 20) -> VoxelSet:
    """Cells of ``grid`` whose centers belong to ``S`` (scanning S's sampling box)."""
    if S.n != grid.n:
        raise DomainError("set and grid dimensions differ")
    lo, hi = S.sampling_box()
    blo, bhi = grid.index_box(lo, hi)
    if np.any(bhi <= blo):
        return VoxelSet.empty(grid)
    axes = [np.arange(l, h_, dtype=np.int64) for l, h_ in zip(blo, bhi)]
    total = int(np.prod([a.size for a in axes]))
    keep = []
    shape = tuple(a.size for a in axes)
    for start in range(0, total, chunk):
        idx = np.arange(start, min(total, start + chunk))
        local = np.stack(np.unravel_index(idx, shape), axis=1) + blo
        flat = grid.flat(local)
        inside = S.contains(grid.centers(flat))
        keep.append(flat[inside])
    return VoxelSet(grid, np.sort(np.concatenate(keep)))


def max_pairwise_distance(points: np.ndarray, block: int = 2048) -> float:
    p = np.asarray(points, dtype=np.float64)
    if p.shape[0] < 2:
        return 0.0
    best = 0.0
    for s in range(0, p.shape[0], block):
        blk = p[s:s + block]
        d2 = np.sum(blk * blk, axis=1)[:, None] + np.sum(p * p, axis=1)[None, :] - 2.0 * blk @ p.T
        best = max(best, float(d2.max()))
    return math.sqrt(max(best, 0.0))


def connected_components(tube: Tube, region: VoxelSet, cap: int = 64, grid: VoxelGrid | None = None):
    """Face-connected components of ``tube`` intersected with ``region``.

    Returns a list of ``(component, diameter)`` ordered by smallest cell
    index; diameter is the largest distance between cell centers.
    """
    if grid is not None:
        grid.require_same(region.grid)
    g = region.grid
    if tube.n != g.n:
        raise DomainError("tube and region dimensions differ")
    inter = voxelize_tube(tube, g).intersection(region)
    if not inter:
        return []
    co = g.coords(inter.cells)
    lo = co.min(axis=0)
    shape = tuple(int(x) for x in co.max(axis=0) - lo + 1)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple((co - lo).T)] = True
    labels, count = ndimage.label(mask, structure=ndimage.generate_binary_structure(g.n, 1))
    if count > cap:
        warnings.warn(f"{count} components exceed the configured cap {cap}", RuntimeWarning, stacklevel=2)
    lab = labels[tuple((co - lo).T)]
    comps = []
    for k in range(1, count + 1):
        cells = inter.cells[lab == k]
        comps.append(VoxelSet(g, cells))
    comps.sort(key=lambda s: int(s.cells[0]))
    return [(c, max_pairwise_distance(c.centers())) for c in comps]


@dataclass(frozen=True, eq=False)
class Grain:
    """Width-``width`` neighborhood of a lower-dimensional semi-algebraic set.

    ``cubes`` holds integer coordinates of the delta-cubes realizing it.
    """

    base: SemiAlgebraicSet
    width: float
    delta: float
    cubes: np.ndarray
    description: str = ""

    def __post_init__(self):
        if not self.delta * (1 - 1e-12) <= self.width <= 100 * self.delta * (1 + 1e-12):
            raise DomainError("grain width must lie in [delta, 100 delta]")

    def centers(self) -> np.ndarray:
        return (np.asarray(self.cubes, dtype=np.float64) + 0.5) * self.delta

    def diameter(self) -> float:
        return max_pairwise_distance(self.centers())
