"""Arrangements of tubes with shadings, cell incidence structures and file I/O."""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DomainError
from .geometry import (
    DEFAULT_CELL_BUDGET,
    Tube,
    VoxelGrid,
    VoxelSet,
    voxelize_segments,
)

# tubes whose clipped length falls below this are left out of axiom statistics
MIN_STAT_LENGTH = 0.5


@dataclass(frozen=True, eq=False)
class Shading:
    """Subset ``cells`` of tube ``tube_id``; ``lam`` is its relative measure."""

    tube_id: int
    cells: VoxelSet
    tube_volume: float

    @property
    def measure(self) -> float:
        return self.cells.measure

    @property
    def lam(self) -> float:
        return self.cells.measure / self.tube_volume if self.tube_volume > 0 else 0.0


class Arrangement:
    """A finite set of same-radius tubes in R^n with optional shadings.

    Tubes without a stored shading are treated as fully shaded. ``h`` is the
    voxel size used for every measure (default ``delta / 2``).
    """

    def __init__(
        self,
        n: int,
        delta: float,
        tubes: Sequence[Tube],
        shadings: Mapping[int, Shading] | None = None,
        seed: int | None = None,
        provenance: Mapping | None = None,
        h: float | None = None,
        cell_budget: int = DEFAULT_CELL_BUDGET,
    ):
        self.n = int(n)
        self.delta = float(delta)
        self.tubes: tuple[Tube, ...] = tuple(tubes)
        self.seed = seed
        self.provenance = dict(provenance or {})
        self.h = float(h) if h is not None else self.delta / 2
        self.cell_budget = int(cell_budget)
        ids = [t.id for t in self.tubes]
        if len(set(ids)) != len(ids):
            raise DomainError("tube ids must be unique")
        for t in self.tubes:
            if t.n != self.n:
                raise DomainError(f"tube {t.id} has dimension {t.n}, expected {self.n}")
            if not math.isclose(t.radius, self.delta, rel_tol=1e-12):
                raise DomainError(f"tube {t.id} radius {t.radius} differs from delta {self.delta}")
        self._pos = {tid: i for i, tid in enumerate(ids)}
        self.shadings: dict[int, Shading] = {}
        self._grid: VoxelGrid | None = None
        self._ends: tuple[np.ndarray, np.ndarray] | None = None
        if shadings:
            for tid, sh in shadings.items():
                if tid not in self._pos:
                    raise DomainError(f"shading for unknown tube {tid}")
                self.shadings[int(tid)] = sh

    # basic access -----------------------------------------------------
    def __len__(self) -> int:
        return len(self.tubes)

    def __repr__(self) -> str:
        return f"Arrangement(n={self.n}, delta={self.delta:g}, tubes={len(self)}, shaded={len(self.shadings)})"

    @property
    def grid(self) -> VoxelGrid:
        if self._grid is None:
            self._grid = VoxelGrid(self.n, self.h, self.cell_budget)
        return self._grid

    @property
    def ids(self) -> np.ndarray:
        return np.array([t.id for t in self.tubes], dtype=np.int64)

    def position(self, tube_id: int) -> int:
        try:
            return self._pos[int(tube_id)]
        except KeyError:
            raise DomainError(f"unknown tube id {tube_id}") from None

    def tube(self, tube_id: int) -> Tube:
        return self.tubes[self.position(tube_id)]

    def directions(self) -> np.ndarray:
        return np.array([t.direction for t in self.tubes], dtype=np.float64).reshape(len(self), self.n)

    def centers(self) -> np.ndarray:
        return np.array([t.center for t in self.tubes], dtype=np.float64).reshape(len(self), self.n)

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        if self._ends is None:
            a = np.array([t.a for t in self.tubes], dtype=np.float64).reshape(len(self), self.n)
            b = np.array([t.b for t in self.tubes], dtype=np.float64).reshape(len(self), self.n)
            self._ends = (a, b)
        return self._ends

    def lengths(self) -> np.ndarray:
        return np.array([t.length for t in self.tubes], dtype=np.float64)

    def statistical_mask(self) -> np.ndarray:
        """Tubes long enough to enter axiom statistics."""
        return self.lengths() >= MIN_STAT_LENGTH

    # derived arrangements --------------------------------------------
    def replace(self, **changes) -> "Arrangement":
        kw = dict(
            n=self.n, delta=self.delta, tubes=self.tubes, shadings=self.shadings, seed=self.seed,
            provenance=self.provenance, h=self.h, cell_budget=self.cell_budget,
        )
        kw.update(changes)
        return Arrangement(**kw)

    def with_shadings(self, shadings: Mapping[int, Shading] | None) -> "Arrangement":
        return self.replace(shadings=shadings or {})

    def subset(self, tube_ids: Iterable[int]) -> "Arrangement":
        keep = sorted({int(i) for i in tube_ids}, key=self.position)
        tubes = [self.tube(i) for i in keep]
        sh = {i: self.shadings[i] for i in keep if i in self.shadings}
        return self.replace(tubes=tubes, shadings=sh)

    @property
    def has_shadings(self) -> bool:
        return bool(self.shadings)

    def shading(self, tube_id: int) -> Shading:
        """Stored shading, or the full voxelized tube when none is stored."""
        tid = int(tube_id)
        if tid in self.shadings:
            return self.shadings[tid]
        t = self.tube(tid)
        cells, _ = voxelize_segments(t.a[None], t.b[None], np.array([t.radius]), self.grid)
        return Shading(tid, VoxelSet(self.grid, cells), t.volume)

    def materialize_shadings(self) -> "Arrangement":
        """Return a copy where every tube carries an explicit shading."""
        cells, offsets = self.tube_cells()
        sh = {}
        for i, t in enumerate(self.tubes):
            if t.id in self.shadings:
                sh[t.id] = self.shadings[t.id]
            else:
                sh[t.id] = Shading(t.id, VoxelSet(self.grid, cells[offsets[i]:offsets[i + 1]]), t.volume)
        return self.with_shadings(sh)

    def tube_cells(self, box=None) -> tuple[np.ndarray, np.ndarray]:
        """Full voxelizations of all tubes (``cells``, ``offsets``)."""
        if not self.tubes:
            return np.empty(0, np.int64), np.zeros(1, np.int64)
        a, b = self.endpoints()
        r = np.full(len(self), self.delta)
        return voxelize_segments(a, b, r, self.grid, box=box)

    def shading_cells(self, box=None) -> tuple[np.ndarray, np.ndarray]:
        """Shading cells of all tubes in tube order (``cells``, ``offsets``)."""
        if not self.shadings:
            return self.tube_cells(box=box)
        pieces = []
        need = [i for i, t in enumerate(self.tubes) if t.id not in self.shadings]
        full = {}
        if need:
            a, b = self.endpoints()
            r = np.full(len(need), self.delta)
            fc, fo = voxelize_segments(a[need], b[need], r, self.grid, box=box)
            full = {i: fc[fo[j]:fo[j + 1]] for j, i in enumerate(need)}
        lo = hi = None
        if box is not None:
            lo, hi = box
        for i, t in enumerate(self.tubes):
            if t.id in self.shadings:
                c = self.shadings[t.id].cells.cells
                if box is not None:
                    co = self.grid.coords(c)
                    keep = np.all((co >= lo) & (co < hi), axis=1)
                    c = c[keep]
                pieces.append(c)
            else:
                pieces.append(full[i])
        offsets = np.zeros(len(pieces) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum([p.size for p in pieces])
        return np.concatenate(pieces).astype(np.int64), offsets

    def shading_measures(self) -> np.ndarray:
        _, off = self.shading_cells()
        return np.diff(off) * self.grid.cell_volume

    def lambdas(self) -> np.ndarray:
        vols = np.array([t.volume for t in self.tubes])
        return self.shading_measures() / vols if len(self) else np.empty(0)

    # incidence --------------------------------------------------------
    def incidence(self, box=None) -> "Incidence":
        cells, offsets = self.shading_cells(box=box)
        return Incidence.from_lists(self.grid, cells, offsets)

    def slab_boxes(self, max_pairs: int = 4_000_000) -> list[tuple[np.ndarray, np.ndarray]]:
        """Split the grid along its slowest axis into boxes of bounded incidence load.

        The load of each layer is estimated by spreading every tube's cell
        count evenly over the layers its axis spans.
        """
        g = self.grid
        side = g.side
        load = np.zeros(side)
        if self.tubes:
            a, b = self.endpoints()
            lo_c = np.minimum(a[:, -1], b[:, -1]) - self.delta
            hi_c = np.maximum(a[:, -1], b[:, -1]) + self.delta
            first = np.clip(np.floor(lo_c / g.h).astype(np.int64) + g.half, 0, side - 1)
            last = np.clip(np.floor(hi_c / g.h).astype(np.int64) + g.half, 0, side - 1)
            if self.shadings:
                per = np.array([len(self.shadings[t.id].cells) if t.id in self.shadings else t.volume / g.cell_volume
                                for t in self.tubes])
            else:
                per = np.array([t.volume for t in self.tubes]) / g.cell_volume
            span = last - first + 1
            dens = per / span
            diff = np.zeros(side + 1)
            np.add.at(diff, first, dens)
            np.add.at(diff, last + 1, -dens)
            load = np.cumsum(diff[:-1])
        bounds = [0]
        acc = 0.0
        for layer in range(side):
            if acc > 0 and acc + load[layer] > max_pairs:
                bounds.append(layer)
                acc = 0.0
            acc += load[layer]
        bounds.append(side)
        boxes = []
        for s_, e in zip(bounds[:-1], bounds[1:]):
            lo = np.zeros(g.n, np.int64)
            hi = np.full(g.n, side, np.int64)
            lo[-1], hi[-1] = s_, e
            boxes.append((lo, hi))
        return boxes

    def iter_incidence(self, max_pairs: int = 4_000_000) -> Iterator["Incidence"]:
        """Incidence structures over consecutive slabs; concatenated they cover all cells in order."""
        for box in self.slab_boxes(max_pairs):
            yield self.incidence(box=box)

    # persistence -----------------------------------------------------
    def meta(self) -> dict:
        return {
            "n": self.n,
            "delta": self.delta,
            "h": self.h,
            "seed": self.seed,
            "provenance": self.provenance,
            "cell_budget": self.cell_budget,
            "count": len(self),
        }

    def save(self, path: str | Path) -> None:
        save_arrangement(self, path)


@dataclass(frozen=True, eq=False)
class Incidence:
    """Compressed cell -> incident-tube table.

    ``cells`` are sorted occupied cells; tubes incident to ``cells[i]`` are
    ``tubes[indptr[i]:indptr[i+1]]`` given as positions in the arrangement.
    """

    grid: VoxelGrid
    cells: np.ndarray
    indptr: np.ndarray
    tubes: np.ndarray = field(repr=False)

    @classmethod
    def from_lists(cls, grid: VoxelGrid, cells: np.ndarray, offsets: np.ndarray) -> "Incidence":
        owner = np.repeat(np.arange(offsets.size - 1, dtype=np.int32), np.diff(offsets))
        if cells.size == 0:
            return cls(grid, np.empty(0, np.int64), np.zeros(1, np.int64), np.empty(0, np.int32))
        order = np.lexsort((owner, cells))
        sc = cells[order]
        so = owner[order]
        boundary = np.flatnonzero(np.diff(sc)) + 1
        starts = np.concatenate([[0], boundary])
        indptr = np.concatenate([starts, [sc.size]]).astype(np.int64)
        return cls(grid, sc[starts], indptr, so.astype(np.int32))

    @property
    def multiplicity(self) -> np.ndarray:
        return np.diff(self.indptr)

    def __len__(self) -> int:
        return int(self.cells.size)

    def incident(self, i: int) -> np.ndarray:
        return self.tubes[self.indptr[i]:self.indptr[i + 1]]

    def owners_of_pairs(self) -> np.ndarray:
        """Cell position (into ``cells``) for every stored (cell, tube) pair."""
        return np.repeat(np.arange(self.cells.size), self.multiplicity)


def save_arrangement(arr: Arrangement, path: str | Path) -> None:
    """Write a line-delimited file: one metadata line, then one record per tube."""
    lines = [json.dumps({"meta": arr.meta()}, sort_keys=True)]
    for t in arr.tubes:
        rec = t.to_record()
        if t.id in arr.shadings:
            rec["shading"] = base64.b64encode(arr.shadings[t.id].cells.to_bytes()).decode("ascii")
        lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def load_arrangement(path: str | Path) -> Arrangement:
    text = Path(path).read_text().splitlines()
    if not text:
        raise DomainError(f"{path} is empty")
    first = json.loads(text[0])
    meta = first.get("meta", {})
    recs = [json.loads(line) for line in text[1:] if line.strip()]
    tubes = [Tube.from_record(r) for r in recs]
    n = meta.get("n") or (tubes[0].n if tubes else 2)
    delta = meta.get("delta") or (tubes[0].radius if tubes else 0.125)
    arr = Arrangement(n, delta, tubes, seed=meta.get("seed"), provenance=meta.get("provenance"),
                      h=meta.get("h"), cell_budget=meta.get("cell_budget", DEFAULT_CELL_BUDGET))
    shadings = {}
    for r, t in zip(recs, tubes):
        if "shading" in r:
            vs = VoxelSet.from_bytes(base64.b64decode(r["shading"]), budget=arr.cell_budget)
            shadings[t.id] = Shading(t.id, VoxelSet(arr.grid, vs.cells), t.volume)
    return arr.with_shadings(shadings) if shadings else arr
