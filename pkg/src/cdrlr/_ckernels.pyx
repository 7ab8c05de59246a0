# cython: language_level=3
"""Compiled inner loops. Signatures mirror :mod:`cdrlr._pykernels`."""

import numpy as np

from libc.math cimport asin, cos, exp, fabs, floor, log, sin, sqrt, M_PI

cdef double EARTH_RADIUS_M = 6371000.0
cdef double DEG = M_PI / 180.0


cdef inline double _hav(double lat1, double lon1, double lat2, double lon2) nogil:
    cdef double phi1 = lat1 * DEG
    cdef double phi2 = lat2 * DEG
    cdef double s1 = sin((phi2 - phi1) * 0.5)
    cdef double s2 = sin((lon2 - lon1) * DEG * 0.5)
    cdef double h = s1 * s1 + cos(phi1) * cos(phi2) * s2 * s2
    if h > 1.0:
        h = 1.0
    return 2.0 * EARTH_RADIUS_M * asin(sqrt(h))


def haversine_many(const double[::1] lat1, const double[::1] lon1,
                   const double[::1] lat2, const double[::1] lon2):
    cdef Py_ssize_t n = lat1.shape[0], k
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for k in range(n):
            o[k] = _hav(lat1[k], lon1[k], lat2[k], lon2[k])
    return out


def merge_switches(const long long[::1] ta, const long long[::1] tb, bint a_first_on_tie):
    cdef Py_ssize_t na = ta.shape[0], nb = tb.shape[0]
    cdef Py_ssize_t cap = na + nb - 1 if na + nb > 0 else 0
    first_is_b = np.empty(cap, dtype=np.int8)
    i_first = np.empty(cap, dtype=np.int64)
    i_second = np.empty(cap, dtype=np.int64)
    cdef signed char[::1] fb = first_is_b
    cdef long long[::1] f1 = i_first
    cdef long long[::1] f2 = i_second
    cdef Py_ssize_t i = 0, j = 0, n = 0
    cdef int src, prev_src = -1
    cdef long long idx, prev_idx = -1
    cdef bint take_a
    with nogil:
        while i < na or j < nb:
            if i >= na:
                take_a = False
            elif j >= nb:
                take_a = True
            elif ta[i] < tb[j]:
                take_a = True
            elif ta[i] > tb[j]:
                take_a = False
            else:
                take_a = a_first_on_tie
            if take_a:
                src = 0
                idx = i
                i += 1
            else:
                src = 1
                idx = j
                j += 1
            if prev_src >= 0 and src != prev_src:
                fb[n] = prev_src
                f1[n] = prev_idx
                f2[n] = idx
                n += 1
            prev_src = src
            prev_idx = idx
    return first_is_b[:n].astype(bool), i_first[:n], i_second[:n]


def pav(const double[::1] y, const double[::1] w):
    cdef Py_ssize_t n = y.shape[0], k, b, start
    out = np.empty(n, dtype=np.float64)
    if n == 0:
        return out
    cdef double[::1] o = out
    cdef double[::1] val = np.empty(n, dtype=np.float64)
    cdef double[::1] wt = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] size = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t nb = 0
    cdef double nw
    with nogil:
        for k in range(n):
            val[nb] = y[k]
            wt[nb] = w[k]
            size[nb] = 1
            nb += 1
            while nb > 1 and val[nb - 2] > val[nb - 1]:
                nw = wt[nb - 2] + wt[nb - 1]
                val[nb - 2] = (wt[nb - 2] * val[nb - 2] + wt[nb - 1] * val[nb - 1]) / nw
                wt[nb - 2] = nw
                size[nb - 2] += size[nb - 1]
                nb -= 1
        start = 0
        for b in range(nb):
            for k in range(start, start + size[b]):
                o[k] = val[b]
            start += size[b]
    return out


def kde_logpdf(const double[::1] sorted_samples, double h, const double[::1] x):
    cdef Py_ssize_t n = sorted_samples.shape[0], m = x.shape[0], k, i, lo, hi, mid
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] o = out
    cdef double xi, z, zmin, acc, d, norm = log(n * h * sqrt(2.0 * M_PI))
    with nogil:
        for i in range(m):
            xi = x[i]
            # nearest sample gives the dominant term
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) // 2
                if sorted_samples[mid] < xi:
                    lo = mid + 1
                else:
                    hi = mid
            d = 1e308
            if lo < n:
                d = fabs(sorted_samples[lo] - xi)
            if lo > 0 and fabs(xi - sorted_samples[lo - 1]) < d:
                d = fabs(xi - sorted_samples[lo - 1])
            zmin = 0.5 * (d / h) * (d / h)
            acc = 0.0
            for k in range(n):
                z = (xi - sorted_samples[k]) / h
                acc += exp(zmin - 0.5 * z * z)
            o[i] = log(acc) - zmin - norm
    return out


def nearest_lattice(const double[::1] lat, const double[::1] lon,
                    double lat0, double lon0, double dlat, double dlon):
    cdef Py_ssize_t n = lat.shape[0], k
    gi = np.empty(n, dtype=np.int64)
    gj = np.empty(n, dtype=np.int64)
    cdef long long[::1] oi = gi
    cdef long long[::1] oj = gj
    cdef long long ci, cj, besti, bestj
    cdef int a, b
    cdef double best, h, phi, cphi, s
    cdef double rowc[3]
    cdef double rows[3]
    cdef double cols[3]
    with nogil:
        for k in range(n):
            ci = <long long>floor((lat[k] - lat0) / dlat + 0.5)
            cj = <long long>floor((lon[k] - lon0) / dlon + 0.5)
            phi = lat[k] * DEG
            cphi = cos(phi)
            for a in range(3):
                s = (lat0 + (ci - 1 + a) * dlat) * DEG
                rowc[a] = cphi * cos(s)
                s = sin((s - phi) * 0.5)
                rows[a] = s * s
            for b in range(3):
                s = sin(((lon0 + (cj - 1 + b) * dlon) - lon[k]) * DEG * 0.5)
                cols[b] = s * s
            best = 1e308
            besti = ci
            bestj = cj
            # the haversine term is monotone in distance; increasing (a, b)
            # visits candidates in lexicographic (lat, lon) order
            for a in range(3):
                for b in range(3):
                    h = rows[a] + rowc[a] * cols[b]
                    if h < best:
                        best = h
                        besti = ci - 1 + a
                        bestj = cj - 1 + b
            oi[k] = besti
            oj[k] = bestj
    return gi, gj
