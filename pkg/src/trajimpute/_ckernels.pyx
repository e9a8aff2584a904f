# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Semantics mirror ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, asin, sqrt, fabs, fmod, isfinite, INFINITY, M_PI

cnp.import_array()

BACKEND = "cython"

cdef double EARTH_RADIUS_M = 6371000.0
cdef double DEG2RAD = M_PI / 180.0
cdef double DAY_S = 86400.0


cdef inline double _haversine(double lat1, double lon1, double lat2, double lon2) nogil:
    cdef double p1 = lat1 * DEG2RAD
    cdef double p2 = lat2 * DEG2RAD
    cdef double dphi = p2 - p1
    cdef double dlmb = lon2 * DEG2RAD - lon1 * DEG2RAD
    cdef double s1 = sin(dphi / 2.0)
    cdef double s2 = sin(dlmb / 2.0)
    cdef double h = s1 * s1 + cos(p1) * cos(p2) * s2 * s2
    if h > 1.0:
        h = 1.0
    return 2.0 * EARTH_RADIUS_M * asin(sqrt(h))


def stay_labels(t, lat, lon, double radius, double min_duration):
    cdef const double[::1] tv = np.ascontiguousarray(t, dtype=np.float64)
    cdef const double[::1] la = np.ascontiguousarray(lat, dtype=np.float64)
    cdef const double[::1] lo = np.ascontiguousarray(lon, dtype=np.float64)
    cdef Py_ssize_t n = tv.shape[0]
    labels_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef Py_ssize_t i = 0, j, q
    cdef cnp.int64_t k = 0
    cdef double slat, slon
    cdef long c
    with nogil:
        while i < n:
            slat = la[i]
            slon = lo[i]
            c = 1
            j = i + 1
            while j < n:
                if _haversine(slat / c, slon / c, la[j], lo[j]) > radius:
                    break
                slat += la[j]
                slon += lo[j]
                c += 1
                j += 1
            if tv[j - 1] - tv[i] >= min_duration:
                for q in range(i, j):
                    labels[q] = k
                k += 1
                i = j
            else:
                i += 1
    return labels_arr


def dtw_accumulate(cost, allowed, bint open_begin, bint diagonal_only):
    cdef const double[:, ::1] c = np.ascontiguousarray(cost, dtype=np.float64)
    cdef const cnp.uint8_t[:, ::1] ok = np.ascontiguousarray(allowed, dtype=np.uint8)
    cdef Py_ssize_t n = c.shape[0], m = c.shape[1], i, j
    acc_arr = np.full((n, m), np.inf)
    cdef double[:, ::1] a = acc_arr
    cdef double best
    with nogil:
        for j in range(m):
            if not ok[0, j]:
                continue
            if open_begin or j == 0:
                a[0, j] = c[0, j]
            elif not diagonal_only and a[0, j - 1] != INFINITY:
                a[0, j] = c[0, j] + a[0, j - 1]
        for i in range(1, n):
            for j in range(m):
                if not ok[i, j]:
                    continue
                best = a[i - 1, j - 1] if j > 0 else INFINITY
                if not diagonal_only:
                    if a[i - 1, j] < best:
                        best = a[i - 1, j]
                    if j > 0 and a[i, j - 1] < best:
                        best = a[i, j - 1]
                if best != INFINITY:
                    a[i, j] = c[i, j] + best
    return acc_arr


def placement_scores(donor, dclock, qvals, qclock, Py_ssize_t n_pre, Py_ssize_t gap_len, double window):
    cdef const double[::1] d = np.ascontiguousarray(donor, dtype=np.float64)
    cdef const double[::1] dc = np.ascontiguousarray(dclock, dtype=np.float64)
    cdef const double[::1] q = np.ascontiguousarray(qvals, dtype=np.float64)
    cdef const double[::1] qc = np.ascontiguousarray(qclock, dtype=np.float64)
    cdef Py_ssize_t length = q.shape[0]
    cdef Py_ssize_t n_place = d.shape[0] - length + 1
    if n_place <= 0 or length == 0:
        return np.full(max(n_place, 0), np.inf)
    out_arr = np.empty(n_place)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t p, k
    cdef double pre, post, off
    cdef bint feasible
    with nogil:
        for p in range(n_place):
            feasible = True
            for k in range(length):
                if not isfinite(d[p + k]):
                    feasible = False
                    break
                if window >= 0:
                    off = fmod(fabs(dc[p + k] - qc[k]), DAY_S)
                    if DAY_S - off < off:
                        off = DAY_S - off
                    if off > window:
                        feasible = False
                        break
            if not feasible:
                out[p] = INFINITY
                continue
            pre = 0.0
            for k in range(n_pre):
                pre = pre + fabs(q[k] - d[p + k])
            post = 0.0
            for k in range(n_pre + gap_len, length):
                post = post + fabs(q[k] - d[p + k])
            out[p] = pre + post
    return out_arr
