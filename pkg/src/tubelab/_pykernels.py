"""Pure numpy twins of the compiled kernels in ``_ckernels.pyx``.

The arithmetic is written in the same order as the compiled code so that
integer outputs agree exactly and float outputs agree to rounding.
"""
from __future__ import annotations

import numpy as np


def _merge(lo, hi, a, b):
    ok = a <= b
    lo = np.where(ok & (a < lo), a, lo)
    hi = np.where(ok & (b > hi), b, hi)
    return lo, hi


def _ball_interval(w, k, R, lo, hi):
    ww = np.zeros(w.shape[0])
    for i in range(w.shape[1]):
        ww = ww + w[:, i] * w[:, i]
    disc = w[:, k] * w[:, k] - (ww - R * R)
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    a = np.where(ok, -w[:, k] - sq, np.inf)
    b = np.where(ok, -w[:, k] + sq, -np.inf)
    return _merge(lo, hi, a, b)


def _line_interval(q, a, b, k, R):
    rows, n = q.shape
    lo = np.full(rows, np.inf)
    hi = np.full(rows, -np.inf)
    wa = q - a
    wb = q - b
    L2 = 0.0
    wd = np.zeros(rows)
    ww = np.zeros(rows)
    for i in range(n):
        L2 = L2 + (b[i] - a[i]) * (b[i] - a[i])
        wd = wd + wa[:, i] * (b[i] - a[i])
        ww = ww + wa[:, i] * wa[:, i]
    dk = b[k] - a[k]
    if L2 > 0.0 and dk != 0.0:
        A = 1.0 - dk * dk / L2
        Bc = 2.0 * (wa[:, k] - dk * wd / L2)
        C = ww - wd * wd / L2 - R * R
        if A > 1e-15:
            disc = Bc * Bc - 4.0 * A * C
            ok = disc >= 0.0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t0 = np.where(ok, (-Bc - sq) / (2.0 * A), np.inf)
            t1 = np.where(ok, (-Bc + sq) / (2.0 * A), -np.inf)
        else:
            inside = C <= 0.0
            t0 = np.where(inside, -np.inf, np.inf)
            t1 = np.where(inside, np.inf, -np.inf)
        s0 = -wd / dk
        s1 = (L2 - wd) / dk
        s0, s1 = np.minimum(s0, s1), np.maximum(s0, s1)
        t0 = np.where(s0 > t0, s0, t0)
        t1 = np.where(s1 < t1, s1, t1)
        lo, hi = _merge(lo, hi, t0, t1)
    lo, hi = _ball_interval(wa, k, R, lo, hi)
    lo, hi = _ball_interval(wb, k, R, lo, hi)
    return lo, hi


def _one_segment(a, b, R, h, M, lo, hi):
    n = a.shape[0]
    side = 2 * M
    k = int(np.argmax(np.abs(b - a))) if n else 0
    stride = np.array([side**i for i in range(n)], dtype=np.int64)
    rlo = np.empty(n, dtype=np.int64)
    rhi = np.empty(n, dtype=np.int64)
    for i in range(n):
        emin = min(a[i], b[i])
        emax = max(a[i], b[i])
        rlo[i] = max(int(np.ceil((emin - R) / h + M - 0.5)), int(lo[i]))
        rhi[i] = min(int(np.floor((emax + R) / h + M - 0.5)), int(hi[i]) - 1)
        if rlo[i] > rhi[i]:
            return np.empty(0, dtype=np.int64)
    other = [i for i in range(n) if i != k]
    axes = [np.arange(rlo[i], rhi[i] + 1, dtype=np.int64) for i in other]
    grids = np.meshgrid(*axes, indexing="ij") if axes else []
    rows = grids[0].size if grids else 1
    q = np.zeros((rows, n))
    base = np.zeros(rows, dtype=np.int64)
    for i, g in zip(other, grids):
        g = g.ravel()
        q[:, i] = ((g.astype(np.float64) + 0.5) - float(M)) * h
        base += g * stride[i]
    lo_t, hi_t = _line_interval(q, a, b, k, R)
    valid = lo_t <= hi_t
    jlo = np.full(rows, 1, dtype=np.int64)
    jhi = np.zeros(rows, dtype=np.int64)
    jlo[valid] = np.ceil(lo_t[valid] / h + M - 0.5).astype(np.int64)
    jhi[valid] = np.floor(hi_t[valid] / h + M - 0.5).astype(np.int64)
    jlo = np.maximum(jlo, rlo[k])
    jhi = np.minimum(jhi, rhi[k])
    cnt = np.where(valid, np.maximum(jhi - jlo + 1, 0), 0)
    total = int(cnt.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    rep_base = np.repeat(base, cnt)
    rep_lo = np.repeat(jlo, cnt)
    starts = np.repeat(np.cumsum(cnt) - cnt, cnt)
    j = rep_lo + (np.arange(total, dtype=np.int64) - starts)
    return np.sort(rep_base + j * stride[k])


def voxelize_segments(a, b, radius, h, M, lo, hi):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    radius = np.ascontiguousarray(radius, dtype=np.float64)
    m = a.shape[0]
    if a.ndim != 2 or not 2 <= a.shape[1] <= 4:
        raise ValueError("dimension must be 2..4")
    pieces = [_one_segment(a[t], b[t], float(radius[t]), float(h), int(M), lo, hi) for t in range(m)]
    offsets = np.zeros(m + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([p.size for p in pieces]) if m else []
    cells = np.concatenate(pieces) if pieces else np.empty(0, dtype=np.int64)
    return cells.astype(np.int64, copy=False), offsets


def _wedge_pow_vec(dirs, i, j, l, p):
    n = dirs.shape[1]
    g11 = g22 = g33 = g12 = g13 = g23 = 0.0
    for c in range(n):
        vi, vj, vl = dirs[i, c], dirs[j, c], dirs[l, c]
        g11 = g11 + vi * vi
        g22 = g22 + vj * vj
        g33 = g33 + vl * vl
        g12 = g12 + vi * vj
        g13 = g13 + vi * vl
        g23 = g23 + vj * vl
    w2 = g11 * g22 * g33 + 2.0 * g12 * g13 * g23 - g11 * g23 * g23 - g22 * g13 * g13 - g33 * g12 * g12
    pos = w2 > 0.0
    out = np.zeros(np.shape(w2))
    out[pos] = np.power(np.sqrt(w2[pos]), p)
    return out


def _sequential_sum(values):
    acc = 0.0
    for v in values.tolist():
        acc = acc + v
    return acc


def triple_sums(indptr, ids, dirs, p, cap):
    indptr = np.asarray(indptr, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int32)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    ncell = indptr.size - 1
    lengths = np.diff(indptr)
    worst = int(lengths.max()) if ncell else 0
    if worst > cap:
        raise MemoryError(f"cell incidence list of length {worst} exceeds cap {cap}")
    out = np.zeros(ncell)
    for c in np.nonzero(lengths >= 3)[0]:
        loc = ids[indptr[c]:indptr[c + 1]]
        m = loc.size
        x, y, z = _ordered_triples(m)
        out[c] = _sequential_sum(_wedge_pow_vec(dirs, loc[x], loc[y], loc[z], p))
    return out


def _ordered_triples(m):
    idx = np.arange(m)
    x, y, z = np.meshgrid(idx, idx, idx, indexing="ij")
    keep = (x < y) & (y < z)
    return x[keep], y[keep], z[keep]


def cross_triple_sums(indptr, ids, family, dirs, p):
    indptr = np.asarray(indptr, dtype=np.int64)
    ids = np.asarray(ids, dtype=np.int32)
    family = np.asarray(family, dtype=np.int8)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    ncell = indptr.size - 1
    out = np.zeros(ncell)
    for c in np.nonzero(np.diff(indptr) >= 3)[0]:
        loc = ids[indptr[c]:indptr[c + 1]]
        f = family[loc]
        a, b, d = loc[f == 0], loc[f == 1], loc[f == 2]
        if not (a.size and b.size and d.size):
            continue
        x, y, z = np.meshgrid(a, b, d, indexing="ij")
        out[c] = _sequential_sum(_wedge_pow_vec(dirs, x.ravel(), y.ravel(), z.ravel(), p))
    return out
