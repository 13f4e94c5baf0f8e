# cython: language_level=3
"""Compiled kernels; signatures mirror ``corrhash._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs

cnp.import_array()

ctypedef unsigned long long u64

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil
    int __builtin_ctzll(unsigned long long) nogil


cdef inline long _dist(const u64[:, ::1] db, Py_ssize_t row,
                       const u64[::1] q, Py_ssize_t w) noexcept nogil:
    cdef long acc = 0
    cdef Py_ssize_t j
    for j in range(w):
        acc += __builtin_popcountll(db[row, j] ^ q[j])
    return acc


def hamming_to_all(const u64[:, ::1] db, const u64[::1] query):
    cdef Py_ssize_t n = db.shape[0], w = db.shape[1], i
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _dist(db, i, query, w)
    return out


cdef Py_ssize_t _topk(const u64[:, ::1] db, const u64[::1] q, Py_ssize_t k,
                      Py_ssize_t exclude, cnp.int64_t[::1] dist,
                      cnp.int64_t[::1] hist, cnp.int64_t[::1] rows_out,
                      cnp.int64_t[::1] dists_out) noexcept nogil:
    # counting sort over distance; scanning rows in order keeps ties by row
    cdef Py_ssize_t n = db.shape[0], w = db.shape[1], i, d
    cdef Py_ssize_t maxd = hist.shape[0] - 1
    cdef Py_ssize_t total = 0, cut = -1, taken = 0, need
    for d in range(maxd + 1):
        hist[d] = 0
    for i in range(n):
        if i == exclude:
            dist[i] = -1
            continue
        d = _dist(db, i, q, w)
        dist[i] = d
        hist[d] += 1
    for d in range(maxd + 1):
        total += hist[d]
        if total >= k:
            cut = d
            break
    if cut < 0:
        cut = maxd
    # slots remaining at distance == cut
    need = k - (total - hist[cut]) if total >= k else hist[cut]
    # prefix offsets for distances < cut
    cdef Py_ssize_t off = 0, tmp
    for d in range(cut + 1):
        tmp = hist[d]
        hist[d] = off
        off += tmp
    for i in range(n):
        d = dist[i]
        if d < 0 or d > cut:
            continue
        if d == cut:
            if need <= 0:
                continue
            need -= 1
        rows_out[hist[d]] = i
        dists_out[hist[d]] = d
        hist[d] += 1
        taken += 1
    return taken


def topk_hamming(const u64[:, ::1] db, const u64[::1] query, Py_ssize_t k,
                 Py_ssize_t exclude_row):
    cdef Py_ssize_t n = db.shape[0]
    cdef Py_ssize_t kk = min(k, n)
    rows = np.empty(kk, dtype=np.int64)
    dists = np.empty(kk, dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    hist = np.empty(db.shape[1] * 64 + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] rv = rows
    cdef cnp.int64_t[::1] dv = dists
    cdef cnp.int64_t[::1] dist_v = dist
    cdef cnp.int64_t[::1] hist_v = hist
    cdef Py_ssize_t got
    if kk == 0:
        return rows, dists
    with nogil:
        got = _topk(db, query, kk, exclude_row, dist_v, hist_v, rv, dv)
    return rows[:got], dists[:got]


def topk_hamming_batch(const u64[:, ::1] db, const u64[:, ::1] queries,
                       Py_ssize_t k, const cnp.int64_t[::1] exclude_rows):
    cdef Py_ssize_t n = db.shape[0], nq = queries.shape[0], q
    cdef Py_ssize_t kk = min(k, n)
    rows = np.full((nq, kk), -1, dtype=np.int64)
    dists = np.full((nq, kk), -1, dtype=np.int64)
    counts = np.zeros(nq, dtype=np.int64)
    dist = np.empty(n, dtype=np.int64)
    hist = np.empty(db.shape[1] * 64 + 1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] r = rows
    cdef cnp.int64_t[:, ::1] dd = dists
    cdef cnp.int64_t[::1] c = counts
    cdef cnp.int64_t[::1] dist_v = dist
    cdef cnp.int64_t[::1] hist_v = hist
    if kk == 0:
        return rows, dists, counts
    with nogil:
        for q in range(nq):
            c[q] = _topk(db, queries[q], kk, exclude_rows[q], dist_v, hist_v,
                         r[q], dd[q])
    return rows, dists, counts


def enumerate_log_mass(const double[::1] mu, const double[:, ::1] sigma):
    # Gray-code walk: one bit flips per state, O(m) update of the field
    cdef Py_ssize_t m = mu.shape[0], i, j, i2
    cdef Py_ssize_t n = (<Py_ssize_t>1) << m
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    field = np.zeros(m, dtype=np.float64)  # sigma @ s
    cdef double[::1] h = field
    cdef double f = 0.0
    cdef u64 g, prev = 0
    state = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] sv = state
    with nogil:
        o[0] = 0.0
        for i in range(1, n):
            g = <u64>i ^ (<u64>i >> 1)
            j = __builtin_ctzll(g ^ prev)
            prev = g
            if sv[j] == 0:
                f += mu[j] + h[j] + 0.5 * sigma[j, j]
                sv[j] = 1
                for i2 in range(m):
                    h[i2] += sigma[i2, j]
            else:
                f += -mu[j] - h[j] + 0.5 * sigma[j, j]
                sv[j] = 0
                for i2 in range(m):
                    h[i2] -= sigma[i2, j]
            o[g] = f
    return out


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


def mixture_logpmf(const double[:, ::1] states, const double[:, :, ::1] R):
    cdef Py_ssize_t S = states.shape[0], m = states.shape[1]
    cdef Py_ssize_t T = R.shape[0], k = R.shape[1]
    cdef Py_ssize_t t, j, s, i
    out = np.empty((T, S), dtype=np.float64)
    cdef double[:, ::1] o = out
    sp_arr = np.empty(k, dtype=np.float64)
    ll_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] sp = sp_arr
    cdef double[::1] ll = ll_arr
    cdef double acc, top, tot
    with nogil:
        for t in range(T):
            for j in range(k):
                acc = 0.0
                for i in range(m):
                    acc += _softplus(R[t, j, i])
                sp[j] = acc
            for s in range(S):
                top = -1e308
                for j in range(k):
                    acc = -sp[j]
                    for i in range(m):
                        acc += states[s, i] * R[t, j, i]
                    ll[j] = acc
                    if acc > top:
                        top = acc
                tot = 0.0
                for j in range(k):
                    tot += exp(ll[j] - top)
                o[t, s] = top + log(tot / k)
    return out
