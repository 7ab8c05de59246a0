"""Pure numpy/Python versions of the hot loops.

Used when the compiled extension is unavailable or ``CDRLR_PURE_PYTHON=1``.
"""

import numpy as np
from scipy.special import logsumexp

EARTH_RADIUS_M = 6_371_000.0
_DEG = np.pi / 180.0

_KDE_CHUNK = 1 << 22


def haversine_many(lat1, lon1, lat2, lon2):
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    s1 = np.sin((phi2 - phi1) * 0.5)
    s2 = np.sin(np.radians(lon2 - lon1) * 0.5)
    h = s1 * s1 + np.cos(phi1) * np.cos(phi2) * s2 * s2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(h, 1.0)))


def merge_switches(ta, tb, a_first_on_tie):
    na, nb = len(ta), len(tb)
    times = np.concatenate([ta, tb])
    src = np.concatenate([np.zeros(na, dtype=np.int8), np.ones(nb, dtype=np.int8)])
    idx = np.concatenate([np.arange(na), np.arange(nb)]).astype(np.int64)
    tie_key = src if a_first_on_tie else 1 - src
    order = np.lexsort((tie_key, times))
    src, idx = src[order], idx[order]
    pos = np.flatnonzero(src[:-1] != src[1:])
    return src[pos].astype(bool), idx[pos], idx[pos + 1]


def pav(y, w):
    values, weights, sizes = [], [], []
    for yk, wk in zip(y, w):
        values.append(float(yk))
        weights.append(float(wk))
        sizes.append(1)
        while len(values) > 1 and values[-2] > values[-1]:
            v, wt, s = values.pop(), weights.pop(), sizes.pop()
            nw = weights[-1] + wt
            values[-1] = (weights[-1] * values[-1] + wt * v) / nw
            weights[-1] = nw
            sizes[-1] += s
    return np.repeat(np.asarray(values, dtype=float), sizes)


def kde_logpdf(sorted_samples, h, x):
    n = len(sorted_samples)
    norm = np.log(n * h * np.sqrt(2.0 * np.pi))
    out = np.empty(len(x))
    step = max(1, _KDE_CHUNK // max(n, 1))
    for start in range(0, len(x), step):
        xs = x[start:start + step]
        z = (xs[:, None] - sorted_samples[None, :]) / h
        out[start:start + step] = logsumexp(-0.5 * z * z, axis=1) - norm
    return out


def nearest_lattice(lat, lon, lat0, lon0, dlat, dlon):
    ci = np.floor((lat - lat0) / dlat + 0.5).astype(np.int64)
    cj = np.floor((lon - lon0) / dlon + 0.5).astype(np.int64)
    phi = lat * _DEG
    cphi = np.cos(phi)
    best = np.full(len(lat), np.inf)
    bi = ci.copy()
    bj = cj.copy()
    cols = []
    for db in (-1, 0, 1):
        s = np.sin(((lon0 + (cj + db) * dlon) - lon) * _DEG * 0.5)
        cols.append(s * s)
    # the haversine term is monotone in distance; increasing offsets visit
    # candidates in lexicographic (lat, lon) order and strict < keeps the
    # first (smallest) node on exact ties
    for da in (-1, 0, 1):
        a = ci + da
        nphi = (lat0 + a * dlat) * _DEG
        rowc = cphi * np.cos(nphi)
        s = np.sin((nphi - phi) * 0.5)
        row = s * s
        for db, col in zip((-1, 0, 1), cols):
            h = row + rowc * col
            better = h < best
            best = np.where(better, h, best)
            bi = np.where(better, a, bi)
            bj = np.where(better, cj + db, bj)
    return bi, bj
