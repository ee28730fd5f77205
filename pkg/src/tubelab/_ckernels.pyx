# cython: language_level=3
"""Compiled hot loops: capsule voxelization and per-cell wedge sums.

Every function here has a line-for-line twin in ``_pykernels``; the two must
agree exactly on integer outputs and to rounding on float outputs.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, ceil, floor, pow, INFINITY
from libc.stdlib cimport qsort, malloc, free
from libc.stdint cimport int64_t, int32_t, int8_t

cnp.import_array()


cdef int _cmp_i64(const void* a, const void* b) noexcept nogil:
    cdef int64_t x = (<int64_t*>a)[0]
    cdef int64_t y = (<int64_t*>b)[0]
    return (x > y) - (x < y)


cdef inline void _merge(double* lo, double* hi, double a, double b) noexcept nogil:
    if a > b:
        return
    if a < lo[0]:
        lo[0] = a
    if b > hi[0]:
        hi[0] = b


cdef inline void _ball_interval(double* w, int n, int k, double R,
                                double* lo, double* hi) noexcept nogil:
    # t with |w + t e_k| <= R
    cdef double ww = 0.0
    cdef int i
    for i in range(n):
        ww = ww + w[i] * w[i]
    cdef double disc = w[k] * w[k] - (ww - R * R)
    if disc < 0.0:
        return
    disc = sqrt(disc)
    _merge(lo, hi, -w[k] - disc, -w[k] + disc)


cdef inline void _line_interval(double* q, double* a, double* b, int n, int k,
                                double R, double* lo, double* hi,
                                double* wa, double* wb) noexcept nogil:
    """Parameter interval of {q + t e_k} inside the capsule [a,b] (+) B(R)."""
    cdef int i
    cdef double L2 = 0.0, wd = 0.0, ww = 0.0, dk, A, Bc, C, disc, t0, t1, s0, s1, tmp, sq
    lo[0] = INFINITY
    hi[0] = -INFINITY
    for i in range(n):
        wa[i] = q[i] - a[i]
        wb[i] = q[i] - b[i]
        L2 = L2 + (b[i] - a[i]) * (b[i] - a[i])
        wd = wd + wa[i] * (b[i] - a[i])
        ww = ww + wa[i] * wa[i]
    dk = b[k] - a[k]
    if L2 > 0.0 and dk != 0.0:
        A = 1.0 - dk * dk / L2
        Bc = 2.0 * (wa[k] - dk * wd / L2)
        C = ww - wd * wd / L2 - R * R
        if A > 1e-15:
            disc = Bc * Bc - 4.0 * A * C
            if disc >= 0.0:
                sq = sqrt(disc)
                t0 = (-Bc - sq) / (2.0 * A)
                t1 = (-Bc + sq) / (2.0 * A)
            else:
                t0 = INFINITY
                t1 = -INFINITY
        else:
            if C <= 0.0:
                t0 = -INFINITY
                t1 = INFINITY
            else:
                t0 = INFINITY
                t1 = -INFINITY
        s0 = -wd / dk
        s1 = (L2 - wd) / dk
        if s0 > s1:
            tmp = s0
            s0 = s1
            s1 = tmp
        if s0 > t0:
            t0 = s0
        if s1 < t1:
            t1 = s1
        _merge(lo, hi, t0, t1)
    _ball_interval(wa, n, k, R, lo, hi)
    _ball_interval(wb, n, k, R, lo, hi)


cdef int64_t _one_segment(double* a, double* b, double R, int n, double h, int64_t M,
                          int64_t* lo, int64_t* hi, int64_t* out, int fill) noexcept nogil:
    cdef int i, k = 0, j, pos
    cdef double best = -1.0, d, lo_t, hi_t, emin, emax
    cdef int64_t side = 2 * M
    cdef int64_t rlo[4]
    cdef int64_t rhi[4]
    cdef int64_t cur[4]
    cdef int64_t stride[4]
    cdef int64_t other[4]
    cdef double q[4]
    cdef double wa[4]
    cdef double wb[4]
    cdef int64_t count = 0, jlo, jhi, jj, base
    cdef double half = 0.5
    for i in range(n):
        d = b[i] - a[i]
        if d < 0.0:
            d = -d
        if d > best:
            best = d
            k = i
    stride[0] = 1
    for i in range(1, n):
        stride[i] = stride[i - 1] * side
    for i in range(n):
        emin = a[i] if a[i] < b[i] else b[i]
        emax = b[i] if a[i] < b[i] else a[i]
        rlo[i] = <int64_t>ceil((emin - R) / h + M - half)
        rhi[i] = <int64_t>floor((emax + R) / h + M - half)
        if rlo[i] < lo[i]:
            rlo[i] = lo[i]
        if rhi[i] > hi[i] - 1:
            rhi[i] = hi[i] - 1
        if rlo[i] > rhi[i]:
            return 0
    # lines along k meet the capsule iff their foot lies in the projected
    # capsule; walk axis j (largest remaining extent) over that interval only
    pos = 0
    for i in range(n):
        if i != k:
            other[pos] = i
            pos += 1
    cdef int jax = -1, np2 = n - 1, jsub = 0, nrest = 0
    cdef int rest[4]
    cdef double a2[4]
    cdef double b2[4]
    cdef double q2[4]
    cdef double pad = 1e-6 * h
    cdef int64_t plo, phi_, pj
    best = -1.0
    for i in range(n - 1):
        d = b[other[i]] - a[other[i]]
        if d < 0.0:
            d = -d
        if d > best:
            best = d
            jax = other[i]
            jsub = i
    for i in range(n - 1):
        a2[i] = a[other[i]]
        b2[i] = b[other[i]]
        if other[i] != jax:
            rest[nrest] = other[i]
            nrest += 1
    for i in range(nrest):
        cur[rest[i]] = rlo[rest[i]]
    q[k] = 0.0
    while True:
        base = 0
        for i in range(nrest):
            j = rest[i]
            q[j] = ((<double>cur[j] + half) - <double>M) * h
            base = base + cur[j] * stride[j]
        plo = rlo[jax]
        phi_ = rhi[jax]
        if np2 >= 2:
            for i in range(np2):
                q2[i] = q[other[i]]
            q2[jsub] = 0.0
            _line_interval(q2, a2, b2, np2, jsub, R, &lo_t, &hi_t, wa, wb)
            if lo_t <= hi_t:
                pj = <int64_t>ceil((lo_t - pad) / h + M - half)
                if pj > plo:
                    plo = pj
                pj = <int64_t>floor((hi_t + pad) / h + M - half)
                if pj < phi_:
                    phi_ = pj
            else:
                phi_ = plo - 1
        for pj in range(plo, phi_ + 1):
            q[jax] = ((<double>pj + half) - <double>M) * h
            _line_interval(q, a, b, n, k, R, &lo_t, &hi_t, wa, wb)
            if lo_t <= hi_t:
                jlo = <int64_t>ceil(lo_t / h + M - half)
                jhi = <int64_t>floor(hi_t / h + M - half)
                if jlo < rlo[k]:
                    jlo = rlo[k]
                if jhi > rhi[k]:
                    jhi = rhi[k]
                if fill:
                    for jj in range(jlo, jhi + 1):
                        out[count] = base + pj * stride[jax] + jj * stride[k]
                        count += 1
                elif jhi >= jlo:
                    count += jhi - jlo + 1
        # odometer over the remaining axes
        i = 0
        while i < nrest:
            j = rest[i]
            cur[j] += 1
            if cur[j] <= rhi[j]:
                break
            cur[j] = rlo[j]
            i += 1
        if i == nrest:
            break
    if fill and count > 1:
        qsort(out, count, sizeof(int64_t), _cmp_i64)
    return count


def voxelize_segments(double[:, ::1] a, double[:, ::1] b, double[::1] radius,
                      double h, int64_t M, int64_t[::1] lo, int64_t[::1] hi):
    """Cells (flat indices) whose centers lie within radius of each segment.

    Returns ``(cells, offsets)``; tube ``t`` owns ``cells[offsets[t]:offsets[t+1]]``,
    sorted ascending.
    """
    cdef Py_ssize_t m = a.shape[0], t
    cdef int n = a.shape[1]
    if n < 2 or n > 4:
        raise ValueError("dimension must be 2..4")
    offsets = np.zeros(m + 1, dtype=np.int64)
    cdef int64_t[::1] off = offsets
    cdef int64_t c
    with nogil:
        for t in range(m):
            c = _one_segment(&a[t, 0], &b[t, 0], radius[t], n, h, M, &lo[0], &hi[0], NULL, 0)
            off[t + 1] = off[t] + c
    cells = np.empty(off[m], dtype=np.int64)
    cdef int64_t[::1] out = cells
    if off[m] > 0:
        with nogil:
            for t in range(m):
                _one_segment(&a[t, 0], &b[t, 0], radius[t], n, h, M, &lo[0], &hi[0],
                             &out[off[t]], 1)
    return cells, offsets


cdef inline double _wedge_sq(double[:, ::1] v, int32_t i, int32_t j, int32_t l, int n) noexcept nogil:
    cdef double g11 = 0.0, g22 = 0.0, g33 = 0.0, g12 = 0.0, g13 = 0.0, g23 = 0.0
    cdef int c
    for c in range(n):
        g11 = g11 + v[i, c] * v[i, c]
        g22 = g22 + v[j, c] * v[j, c]
        g33 = g33 + v[l, c] * v[l, c]
        g12 = g12 + v[i, c] * v[j, c]
        g13 = g13 + v[i, c] * v[l, c]
        g23 = g23 + v[j, c] * v[l, c]
    return (g11 * g22 * g33 + 2.0 * g12 * g13 * g23
            - g11 * g23 * g23 - g22 * g13 * g13 - g33 * g12 * g12)


cdef inline double _wedge_pow(double[:, ::1] v, int32_t i, int32_t j, int32_t l, int n, double p) noexcept nogil:
    cdef double w2 = _wedge_sq(v, i, j, l, n)
    if w2 <= 0.0:
        return 0.0
    return pow(sqrt(w2), p)


def triple_sums(int64_t[::1] indptr, int32_t[::1] ids, double[:, ::1] dirs,
                double p, int64_t cap):
    """Per cell, the sum over unordered triples of incident tubes of wedge**p."""
    cdef Py_ssize_t ncell = indptr.shape[0] - 1, c
    cdef int n = dirs.shape[1]
    cdef int64_t s, e, x, y, z
    cdef double acc
    cdef int64_t worst = 0
    result = np.zeros(ncell, dtype=np.float64)
    cdef double[::1] out = result
    for c in range(ncell):
        if indptr[c + 1] - indptr[c] > worst:
            worst = indptr[c + 1] - indptr[c]
    if worst > cap:
        raise MemoryError(f"cell incidence list of length {worst} exceeds cap {cap}")
    with nogil:
        for c in range(ncell):
            s = indptr[c]
            e = indptr[c + 1]
            acc = 0.0
            for x in range(s, e):
                for y in range(x + 1, e):
                    for z in range(y + 1, e):
                        acc = acc + _wedge_pow(dirs, ids[x], ids[y], ids[z], n, p)
            out[c] = acc
    return result


def cross_triple_sums(int64_t[::1] indptr, int32_t[::1] ids, int8_t[::1] family,
                      double[:, ::1] dirs, double p):
    """Per cell, the sum over (family 0, family 1, family 2) triples of wedge**p."""
    cdef Py_ssize_t ncell = indptr.shape[0] - 1, c
    cdef int n = dirs.shape[1]
    cdef int64_t s, e, x, y, z
    cdef double acc
    result = np.zeros(ncell, dtype=np.float64)
    cdef double[::1] out = result
    with nogil:
        for c in range(ncell):
            s = indptr[c]
            e = indptr[c + 1]
            acc = 0.0
            for x in range(s, e):
                if family[ids[x]] != 0:
                    continue
                for y in range(s, e):
                    if family[ids[y]] != 1:
                        continue
                    for z in range(s, e):
                        if family[ids[z]] != 2:
                            continue
                        acc = acc + _wedge_pow(dirs, ids[x], ids[y], ids[z], n, p)
            out[c] = acc
    return result
