"""Tubes, voxel grids, voxel sets, wedges, central projection and rescaling maps."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DomainError, PreconditionError, ResourceError, SingularityError

if TYPE_CHECKING:  # pragma: no cover
    from .arrangement import Arrangement

DEFAULT_CELL_BUDGET = 2**31
UNIT_TOL = 1e-12
DOMAIN_RADIUS = 2.0


def ball_volume(n: int, r: float) -> float:
    """Lebesgue measure of a radius-``r`` ball in R^n."""
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * r**n


def capsule_volume(n: int, r: float, length: float) -> float:
    """Measure of a segment of the given length thickened by radius ``r``."""
    return ball_volume(n - 1, r) * length + ball_volume(n, r)


def canonical_direction(v: Sequence[float]) -> np.ndarray:
    """Return ``v`` flipped so its first nonzero coordinate is positive."""
    v = np.asarray(v, dtype=np.float64)
    nz = np.flatnonzero(v)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v.copy()


def normalize(v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DomainError("zero vector has no direction")
    return v / norm


def line_angle(u: Sequence[float], v: Sequence[float]) -> float:
    """Angle in [0, pi/2] between the lines spanned by ``u`` and ``v``."""
    u = normalize(u)
    v = normalize(v)
    c = min(1.0, abs(float(np.dot(u, v))))
    return math.acos(c)


@dataclass(frozen=True)
class Tube:
    """Closed radius-``radius`` neighborhood of a segment of length ``length``.

    ``direction`` is stored with canonical sign; since the segment is centered
    at ``center`` the flip does not move the tube. Construct tubes that might
    poke out of B(0,2) with :meth:`clipped`.
    """

    id: int
    center: tuple[float, ...]
    direction: tuple[float, ...]
    radius: float
    length: float = 1.0

    def __post_init__(self):
        c = tuple(float(x) for x in self.center)
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (len(c),):
            raise DomainError("center and direction dimensions differ")
        if not 2 <= len(c) <= 4:
            raise DomainError(f"dimension {len(c)} not in 2..4")
        if abs(float(np.linalg.norm(d)) - 1.0) > UNIT_TOL:
            raise DomainError("tube direction must be a unit vector")
        if not 0.0 < self.radius <= 1.0:
            raise DomainError("tube radius must lie in (0, 1]")
        if not 0.0 <= self.length <= 1.0 + 1e-12:
            raise DomainError("tube length must lie in [0, 1]")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "direction", tuple(float(x) for x in canonical_direction(d)))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "length", float(self.length))
        object.__setattr__(self, "id", int(self.id))
        reach = max(np.linalg.norm(self.a), np.linalg.norm(self.b)) + self.radius
        if reach > DOMAIN_RADIUS + 1e-9:
            raise DomainError(f"tube {self.id} leaves B(0,2) (reach {reach:.6g})")

    @classmethod
    def clipped(cls, id: int, center, direction, radius: float, length: float = 1.0) -> "Tube":
        """Build a tube, shrinking its segment until the tube fits in B(0,2)."""
        c = np.asarray(center, dtype=np.float64)
        v = normalize(direction)
        limit = DOMAIN_RADIUS - radius
        cv = float(np.dot(c, v))
        disc = cv * cv - (float(np.dot(c, c)) - limit * limit)
        if disc < 0:
            raise DomainError(f"tube {id} line misses B(0,2)")
        root = math.sqrt(disc)
        t0 = max(-length / 2, -cv - root)
        t1 = min(length / 2, -cv + root)
        if t1 < t0:
            raise DomainError(f"tube {id} lies outside B(0,2)")
        # a hair of slack so the rebuilt tube passes its own containment check
        shrink = min(1e-12, (t1 - t0) / 2)
        t0 += shrink
        t1 -= shrink
        mid = c + 0.5 * (t0 + t1) * v
        return cls(id, tuple(mid), tuple(v), radius, t1 - t0)

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center)

    @property
    def v(self) -> np.ndarray:
        return np.asarray(self.direction)

    @property
    def a(self) -> np.ndarray:
        return self.c - 0.5 * self.length * self.v

    @property
    def b(self) -> np.ndarray:
        return self.c + 0.5 * self.length * self.v

    @property
    def volume(self) -> float:
        return capsule_volume(self.n, self.radius, self.length)

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the tube's axis segment."""
        return segment_distance(points, self.a, self.b)

    def contains_points(self, points) -> np.ndarray:
        return self.distance(points) <= self.radius

    def with_id(self, new_id: int) -> "Tube":
        return Tube(new_id, self.center, self.direction, self.radius, self.length)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "center": list(self.center),
            "direction": list(self.direction),
            "radius": self.radius,
            "length": self.length,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Tube":
        return cls(rec["id"], rec["center"], rec["direction"], rec["radius"], rec.get("length", 1.0))


def segment_distance(points, a, b) -> np.ndarray:
    """Distances from rows of ``points`` to the segment [a, b]."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = np.asarray(a, dtype=np.float64)
    d = np.asarray(b, dtype=np.float64) - a
    L2 = float(np.dot(d, d))
    w = p - a
    if L2 == 0.0:
        return np.linalg.norm(w, axis=1)
    s = np.clip(w @ d / L2, 0.0, 1.0)
    return np.linalg.norm(w - s[:, None] * d, axis=1)


@dataclass(frozen=True)
class VoxelGrid:
    """Lattice of cubes ``[0,h)^n + h v`` covering ``[-2, 2]^n``.

    Cell ``v`` (integer, ``-M <= v_i < M``) is stored as the flat index
    ``sum((v_i + M) * (2M)**i)``.
    """

    n: int
    h: float
    budget: int = DEFAULT_CELL_BUDGET

    def __post_init__(self):
        if self.n not in (2, 3, 4):
            raise DomainError(f"grid dimension {self.n} not in 2..4")
        if not self.h > 0:
            raise DomainError("cell size must be positive")
        if self.cell_count > self.budget:
            raise ResourceError(
                f"grid with h={self.h:g} in R^{self.n} has {self.cell_count} cells, budget {self.budget}"
            )

    @property
    def half(self) -> int:
        return int(math.ceil(DOMAIN_RADIUS / self.h - 1e-9))

    @property
    def side(self) -> int:
        return 2 * self.half

    @property
    def cell_count(self) -> int:
        return self.side**self.n

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def strides(self) -> np.ndarray:
        return np.array([self.side**i for i in range(self.n)], dtype=np.int64)

    def same_lattice(self, other: "VoxelGrid") -> bool:
        return self.n == other.n and self.h == other.h

    def require_same(self, other: "VoxelGrid") -> None:
        if not self.same_lattice(other):
            raise DomainError(f"grid mismatch: (n={self.n}, h={self.h}) vs (n={other.n}, h={other.h})")

    def coords(self, cells) -> np.ndarray:
        """Offset integer coordinates in ``[0, 2M)`` for flat indices."""
        cells = np.asarray(cells, dtype=np.int64)
        out = np.empty((cells.size, self.n), dtype=np.int64)
        rem = cells.copy()
        for i in range(self.n):
            out[:, i] = rem % self.side
            rem //= self.side
        return out

    def flat(self, coords) -> np.ndarray:
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        return coords @ self.strides

    def centers(self, cells) -> np.ndarray:
        return ((self.coords(cells).astype(np.float64) + 0.5) - float(self.half)) * self.h

    def cell_of(self, points) -> np.ndarray:
        """Flat index of the cell containing each point (points must lie in the domain)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        v = np.floor(p / self.h).astype(np.int64) + self.half
        if np.any(v < 0) or np.any(v >= self.side):
            raise DomainError("point outside the grid domain")
        return self.flat(v)

    def index_box(self, lo_point=None, hi_point=None) -> tuple[np.ndarray, np.ndarray]:
        """Half-open integer box of cells whose centers lie in [lo_point, hi_point]."""
        lo = np.zeros(self.n, dtype=np.int64)
        hi = np.full(self.n, self.side, dtype=np.int64)
        if lo_point is not None:
            lo = np.maximum(lo, np.ceil(np.asarray(lo_point) / self.h + self.half - 0.5).astype(np.int64))
        if hi_point is not None:
            hi = np.minimum(hi, np.floor(np.asarray(hi_point) / self.h + self.half - 0.5).astype(np.int64) + 1)
        return lo, hi

    def header(self) -> dict:
        return {"n": self.n, "h": self.h, "half_extent": self.half}


@dataclass(frozen=True, eq=False)
class VoxelSet:
    """A set of grid cells, stored as sorted unique flat indices."""

    grid: VoxelGrid
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64).ravel()
        if cells.size > 1 and not np.all(cells[1:] > cells[:-1]):
            cells = np.unique(cells)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def empty(cls, grid: VoxelGrid) -> "VoxelSet":
        return cls(grid, np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.cells.size)

    @property
    def popcount(self) -> int:
        return int(self.cells.size)

    @property
    def measure(self) -> float:
        return self.grid.cell_volume * self.cells.size

    def __bool__(self) -> bool:
        return self.cells.size > 0

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VoxelSet)
            and self.grid.same_lattice(other.grid)
            and np.array_equal(self.cells, other.cells)
        )

    def __hash__(self):
        return hash((self.grid.n, self.grid.h, self.cells.tobytes()))

    def _check(self, other: "VoxelSet") -> None:
        self.grid.require_same(other.grid)

    def union(self, other: "VoxelSet") -> "VoxelSet":
        self._check(other)
        return VoxelSet(self.grid, np.union1d(self.cells, other.cells))

    def intersection(self, other: "VoxelSet") -> "VoxelSet":
        self._check(other)
        return VoxelSet(self.grid, np.intersect1d(self.cells, other.cells, assume_unique=True))

    def difference(self, other: "VoxelSet") -> "VoxelSet":
        self._check(other)
        return VoxelSet(self.grid, np.setdiff1d(self.cells, other.cells, assume_unique=True))

    def issubset(self, other: "VoxelSet") -> bool:
        self._check(other)
        return bool(np.all(np.isin(self.cells, other.cells, assume_unique=True)))

    def isdisjoint(self, other: "VoxelSet") -> bool:
        self._check(other)
        return np.intersect1d(self.cells, other.cells, assume_unique=True).size == 0

    def contains(self, cells) -> np.ndarray:
        q = np.asarray(cells, dtype=np.int64)
        if not self.cells.size:
            return np.zeros(q.shape, dtype=bool)
        i = np.minimum(np.searchsorted(self.cells, q), self.cells.size - 1)
        return self.cells[i] == q

    def centers(self) -> np.ndarray:
        return self.grid.centers(self.cells)

    def select(self, mask) -> "VoxelSet":
        return VoxelSet(self.grid, self.cells[np.asarray(mask, dtype=bool)])

    @staticmethod
    def union_all(grid: VoxelGrid, sets: Iterable["VoxelSet"]) -> "VoxelSet":
        parts = []
        for s in sets:
            grid.require_same(s.grid)
            parts.append(s.cells)
        if not parts:
            return VoxelSet.empty(grid)
        return VoxelSet(grid, np.unique(np.concatenate(parts)))

    def to_bytes(self) -> bytes:
        """Header line (n, h, extents, bitmap box) followed by the raw bitmap."""
        head = self.grid.header()
        if self.cells.size:
            co = self.grid.coords(self.cells)
            lo = co.min(axis=0)
            shape = co.max(axis=0) - lo + 1
        else:
            lo = np.zeros(self.grid.n, dtype=np.int64)
            shape = np.zeros(self.grid.n, dtype=np.int64)
        head.update({"box_lo": lo.tolist(), "box_shape": shape.tolist(), "count": int(self.cells.size)})
        bits = np.zeros(int(np.prod(shape)), dtype=bool)
        if self.cells.size:
            local = co - lo
            idx = np.ravel_multi_index(tuple(local.T), tuple(int(s) for s in shape))
            bits[idx] = True
        return (json.dumps(head, sort_keys=True) + "\n").encode() + np.packbits(bits, bitorder="little").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, budget: int = DEFAULT_CELL_BUDGET) -> "VoxelSet":
        line, _, payload = data.partition(b"\n")
        head = json.loads(line)
        grid = VoxelGrid(head["n"], head["h"], budget=max(budget, (2 * head["half_extent"]) ** head["n"]))
        if grid.half != head["half_extent"]:
            raise DomainError("grid extents in header do not match cell size")
        shape = tuple(int(s) for s in head["box_shape"])
        total = int(np.prod(shape))
        if total == 0:
            return cls.empty(grid)
        bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=total, bitorder="little").astype(bool)
        local = np.stack(np.unravel_index(np.flatnonzero(bits), shape), axis=1)
        return cls(grid, np.sort(grid.flat(local + np.asarray(head["box_lo"]))))


def _segments(tubes: Sequence[Tube]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = np.array([t.a for t in tubes], dtype=np.float64).reshape(len(tubes), -1)
    b = np.array([t.b for t in tubes], dtype=np.float64).reshape(len(tubes), -1)
    r = np.array([t.radius for t in tubes], dtype=np.float64)
    return a, b, r


def inflation(grid: VoxelGrid) -> float:
    """Half-diagonal of a grid cell, the outer-approximation margin."""
    return grid.h * math.sqrt(grid.n) / 2


def voxelize_segments(a, b, radii, grid: VoxelGrid, box=None, chunk: int = 2048):
    """Voxelize many capsules; returns ``(cells, offsets)`` as in the kernels."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    radii = np.ascontiguousarray(radii, dtype=np.float64)
    lo, hi = box if box is not None else (np.zeros(grid.n, np.int64), np.full(grid.n, grid.side, np.int64))
    lo = np.ascontiguousarray(lo, dtype=np.int64)
    hi = np.ascontiguousarray(hi, dtype=np.int64)
    m = a.shape[0]
    if m == 0:
        return np.empty(0, np.int64), np.zeros(1, np.int64)
    starts = list(range(0, m, chunk))
    parts = kernels.ordered_map(
        lambda s: kernels.voxelize_segments(a[s:s + chunk], b[s:s + chunk], radii[s:s + chunk],
                                            grid.h, grid.half, lo, hi),
        starts,
    )
    cells = np.concatenate([p[0] for p in parts])
    offsets = np.zeros(m + 1, dtype=np.int64)
    pos = 0
    for s, (_, off) in zip(starts, parts):
        k = off.size - 1
        offsets[s + 1:s + k + 1] = off[1:] + pos
        pos += off[-1]
    return cells, offsets


def _check_tube_grid(tube: Tube, grid: VoxelGrid) -> None:
    if tube.n != grid.n:
        raise DomainError("tube and grid dimensions differ")
    if grid.h > tube.radius * (1 + 1e-12):
        raise PreconditionError(f"cell size {grid.h:g} exceeds tube radius {tube.radius:g}")
    reach = max(np.linalg.norm(tube.a), np.linalg.norm(tube.b)) + tube.radius
    if reach > DOMAIN_RADIUS + 1e-9:
        raise DomainError(f"tube {tube.id} leaves B(0,2)")


def voxelize_tube(tube: Tube, grid: VoxelGrid, box=None, outer: bool = False) -> VoxelSet:
    """Cells of ``grid`` whose centers lie within the tube.

    With ``outer=True`` the radius is inflated by the cell half-diagonal, so
    every cell meeting the tube is returned (a conservative outer
    approximation). ``box`` restricts the output to a half-open index box.
    """
    _check_tube_grid(tube, grid)
    r = tube.radius + (inflation(grid) if outer else 0.0)
    cells, _ = voxelize_segments(tube.a[None], tube.b[None], np.array([r]), grid, box=box)
    return VoxelSet(grid, cells)


def voxelize_tubes(tubes: Sequence[Tube], grid: VoxelGrid, box=None, outer: bool = False):
    """Voxelize many tubes at once; returns ``(cells, offsets)``."""
    for t in tubes:
        _check_tube_grid(t, grid)
    if not tubes:
        return np.empty(0, np.int64), np.zeros(1, np.int64)
    a, b, r = _segments(tubes)
    if outer:
        r = r + inflation(grid)
    return voxelize_segments(a, b, r, grid, box=box)


def _check_unit(v: np.ndarray, tol: float = 1e-9) -> None:
    if abs(float(np.linalg.norm(v)) - 1.0) > tol:
        raise DomainError("wedge3 expects unit vectors")


def wedge3(v1, v2, v3) -> float:
    """Volume of the parallelepiped spanned by three unit vectors.

    Computed from the 3x3 minors (Cauchy-Binet), so it agrees with the
    square root of the Gram determinant without forming it.
    """
    m = np.array([v1, v2, v3], dtype=np.float64)
    if m.ndim != 2 or m.shape[1] < 3:
        raise DomainError("wedge3 needs three vectors in R^n with n >= 3")
    for row in m:
        _check_unit(row)
    total = 0.0
    for cols in itertools.combinations(range(m.shape[1]), 3):
        sub = m[:, cols]
        det = (
            sub[0, 0] * (sub[1, 1] * sub[2, 2] - sub[1, 2] * sub[2, 1])
            - sub[0, 1] * (sub[1, 0] * sub[2, 2] - sub[1, 2] * sub[2, 0])
            + sub[0, 2] * (sub[1, 0] * sub[2, 1] - sub[1, 1] * sub[2, 0])
        )
        total += det * det
    return min(1.0, math.sqrt(total))


def wedge3_batch(v1, v2, v3) -> np.ndarray:
    """Vectorized :func:`wedge3` over rows (no unit check)."""
    m = np.stack([np.asarray(v1, float), np.asarray(v2, float), np.asarray(v3, float)], axis=1)
    total = np.zeros(m.shape[0])
    for cols in itertools.combinations(range(m.shape[2]), 3):
        total += np.linalg.det(m[:, :, cols]) ** 2
    return np.minimum(1.0, np.sqrt(total))


class CentralProjection:
    """Projection of R^n minus a line onto a 2-plane through pencils of 2-planes.

    ``psi(x)`` is the point where the 2-plane spanned by ``x`` and the axis
    line meets the target plane.
    """

    def __init__(self, axis_point, axis_dir, plane_point, plane_basis, singular_tol: float = 1e-12):
        self.p = np.asarray(axis_point, dtype=np.float64)
        self.u = normalize(axis_dir)
        self.q = np.asarray(plane_point, dtype=np.float64)
        basis = np.asarray(plane_basis, dtype=np.float64)
        if basis.shape != (2, self.p.size) or self.p.size != 4:
            raise DomainError("central projection is defined for a line and a 2-plane in R^4")
        qb, _ = np.linalg.qr(basis.T)
        self.e = qb[:, 0]
        self.f = qb[:, 1]
        self.tol = singular_tol
        probe = np.column_stack([self.u, self.e, self.f])
        if np.linalg.matrix_rank(probe, tol=1e-10) < 3:
            raise DomainError("target plane contains the axis direction")

    def _solve(self, x: np.ndarray):
        w = x - self.p
        perp = w - np.dot(w, self.u) * self.u
        if np.linalg.norm(perp) <= self.tol * max(1.0, np.linalg.norm(w)):
            raise SingularityError("point lies on the axis line")
        # p + t u + s (x - p) = q + a e + b f
        mat = np.column_stack([self.u, w, -self.e, -self.f])
        rhs = self.q - self.p
        if abs(np.linalg.det(mat)) < 1e-14:
            raise DomainError("pencil plane is parallel to the target plane")
        return np.linalg.solve(mat, rhs)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        _, _, a, b = self._solve(x)
        return self.q + a * self.e + b * self.f

    def jacobian(self, x, step: float = 1e-6) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        cols = []
        for i in range(x.size):
            d = np.zeros_like(x)
            d[i] = step
            cols.append((self(x + d) - self(x - d)) / (2 * step))
        return np.column_stack(cols)

    def lipschitz_bound(self, r: float, samples: int = 2000, seed: int = 0) -> float:
        """Largest sampled operator norm of the Jacobian on B(0,2) minus N_r(axis)."""
        rng = np.random.default_rng(seed)
        best = 0.0
        kept = 0
        while kept < samples:
            x = rng.uniform(-2, 2, size=4)
            if np.linalg.norm(x) > 2:
                continue
            w = x - self.p
            if np.linalg.norm(w - np.dot(w, self.u) * self.u) < r:
                continue
            try:
                best = max(best, float(np.linalg.norm(self.jacobian(x), 2)))
            except DomainError:
                continue
            kept += 1
        return best


def central_projection(x, axis_line, target_plane) -> np.ndarray:
    """Evaluate the central projection once.

    ``axis_line`` is ``(point, direction)``; ``target_plane`` is
    ``(point, (basis1, basis2))``.
    """
    (p, u), (q, basis) = axis_line, target_plane
    return CentralProjection(p, u, q, basis)(x)


RIGID_KINDS = ("cylinder-rescale", "anisotropic-dilation", "ball-rescale")


@dataclass(frozen=True, eq=False)
class RigidMap:
    """Affine map ``x -> linear @ x + translation`` with a recorded determinant."""

    linear: np.ndarray
    translation: np.ndarray
    kind: str
    det: float = float("nan")

    def __post_init__(self):
        lin = np.array(self.linear, dtype=np.float64)
        tr = np.array(self.translation, dtype=np.float64)
        if lin.shape != (tr.size, tr.size):
            raise DomainError("linear part must be square and match the translation")
        if self.kind not in RIGID_KINDS:
            raise DomainError(f"unknown map kind {self.kind!r}")
        det = float(np.linalg.det(lin))
        if abs(det) < 1e-300:
            raise DomainError("linear part is singular")
        lin.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)
        if math.isnan(self.det):
            object.__setattr__(self, "det", det)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.linear.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.linear.T

    def inverse(self) -> "RigidMap":
        inv = np.linalg.inv(self.linear)
        return RigidMap(inv, -inv @ self.translation, self.kind, 1.0 / self.det)

    def scale_measure(self, measure: float) -> float:
        return abs(self.det) * measure


def anisotropic_dilation(axis_point, axis_dir, factor: float, kind: str = "anisotropic-dilation") -> RigidMap:
    """Fix the line through ``axis_point`` and dilate orthogonal directions by ``factor``."""
    p = np.asarray(axis_point, dtype=np.float64)
    u = normalize(axis_dir)
    n = p.size
    proj = np.outer(u, u)
    lin = proj + factor * (np.eye(n) - proj)
    det = factor ** (n - 1)
    return RigidMap(lin, p - lin @ p, kind, det)


def ball_rescale(center, radius: float) -> RigidMap:
    """Send B(center, radius) onto B(0, 2)."""
    c = np.asarray(center, dtype=np.float64)
    s = DOMAIN_RADIUS / radius
    return RigidMap(s * np.eye(c.size), -s * c, "ball-rescale", s**c.size)


@dataclass(frozen=True)
class Cylinder:
    """Solid cylinder of length ``length`` and radius ``rho`` around an axis segment."""

    center: tuple[float, ...]
    axis: tuple[float, ...]
    rho: float
    length: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(x) for x in self.center))
        object.__setattr__(self, "axis", tuple(float(x) for x in normalize(self.axis)))

    def contains_tube(self, tube: Tube, tol: float = 1e-9) -> bool:
        c = np.asarray(self.center)
        u = np.asarray(self.axis)
        for end in (tube.a, tube.b):
            w = end - c
            along = float(np.dot(w, u))
            perp = float(np.linalg.norm(w - along * u))
            if abs(along) > self.length / 2 + tube.radius + tol or perp > self.rho + tol:
                return False
        return True


def cylinder_rescale(arr: "Arrangement", cylinder: Cylinder, C: float = 2.0):
    """Rescale the tubes inside ``cylinder`` to a unit-width cylinder at the origin.

    The map fixes the axis direction, dilates orthogonal directions by
    ``1/rho`` and recentres the cylinder at the origin. Each image tube is the
    radius ``C * delta / rho`` tube around the image of the source segment's
    midpoint and direction. Shadings are carried over by mapping cell centers
    onto the new grid.
    """
    from .arrangement import Arrangement, Shading

    rho = cylinder.rho
    if not arr.delta < rho <= 1.0:
        raise PreconditionError(f"need delta < rho <= 1, got rho={rho}")
    bad = [t.id for t in arr.tubes if not cylinder.contains_tube(t)]
    if bad:
        raise PreconditionError(f"tubes not contained in cylinder: {bad[:5]}")
    c = np.asarray(cylinder.center)
    dil = anisotropic_dilation(c, cylinder.axis, 1.0 / rho, kind="cylinder-rescale")
    fmap = RigidMap(dil.linear, dil.translation - c, "cylinder-rescale", dil.det)
    new_delta = C * arr.delta / rho
    if new_delta > 1.0:
        raise PreconditionError("rescaled radius exceeds 1; choose a larger rho or smaller C")
    tubes = []
    for t in arr.tubes:
        center = fmap.apply(t.c)
        direction = normalize(fmap.apply_vector(t.v))
        tubes.append(Tube.clipped(t.id, center, direction, new_delta, 1.0))
    out = Arrangement(arr.n, new_delta, tubes, seed=arr.seed,
                      provenance={**arr.provenance, "rescaled_by": "cylinder", "rho": rho, "C": C})
    if arr.shadings:
        grid = out.grid
        shadings = {}
        for tid, sh in arr.shadings.items():
            pts = fmap.apply(sh.cells.centers())
            inside = np.all(np.abs(pts) < DOMAIN_RADIUS, axis=1)
            cells = grid.cell_of(pts[inside]) if inside.any() else np.empty(0, np.int64)
            shadings[tid] = Shading(tid, VoxelSet(grid, cells), out.tube(tid).volume)
        out = out.with_shadings(shadings)
    return out, fmap
