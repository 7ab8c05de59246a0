"""Hot-loop kernels with import-time backend selection.

The compiled extension ``cdrlr._ckernels`` is used when it was built;
otherwise (or when the environment variable ``CDRLR_PURE_PYTHON`` is set to
a non-empty value other than ``0``) the numpy implementations in
:mod:`cdrlr._pykernels` are used. Both backends share one calling
convention; the wrappers here normalise dtypes and memory layout.
"""

from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from cdrlr import _pykernels


def _load_backend() -> tuple[ModuleType, str]:
    if os.environ.get("CDRLR_PURE_PYTHON", "0") not in ("", "0"):
        return _pykernels, "python"
    try:
        from cdrlr import _ckernels
    except ImportError:
        return _pykernels, "python"
    return _ckernels, "cython"


_impl, BACKEND = _load_backend()


def available_backends() -> dict[str, ModuleType]:
    out = {"python": _pykernels}
    try:
        from cdrlr import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def haversine_many(lat1, lon1, lat2, lon2, *, impl: ModuleType | None = None) -> np.ndarray:
    """Elementwise great-circle distance in meters; inputs broadcast."""
    arrays = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (lat1, lon1, lat2, lon2)))
    shape = arrays[0].shape
    flat = [_f64(a.ravel()) for a in arrays]
    return (impl or _impl).haversine_many(*flat).reshape(shape)


def merge_switches(ta, tb, a_first_on_tie: bool, *, impl: ModuleType | None = None):
    """Switch endpoints of two sorted timestamp arrays.

    Returns ``(first_is_b, i_first, i_second)``: for each switch, whether its
    earlier element comes from ``tb``, and the indices of the earlier and
    later element in their own arrays. Equal timestamps are ordered with the
    ``a`` element first iff ``a_first_on_tie``.
    """
    ta = np.ascontiguousarray(ta, dtype=np.int64)
    tb = np.ascontiguousarray(tb, dtype=np.int64)
    return (impl or _impl).merge_switches(ta, tb, bool(a_first_on_tie))


def pav(y, w=None, *, impl: ModuleType | None = None) -> np.ndarray:
    """Weighted isotonic (non-decreasing) least-squares fit of ``y`` in given order."""
    y = _f64(y)
    w = np.ones_like(y) if w is None else _f64(w)
    if y.shape != w.shape:
        raise ValueError("values and weights must have the same length")
    return (impl or _impl).pav(y, w)


def kde_logpdf(samples, bandwidth: float, x, *, impl: ModuleType | None = None) -> np.ndarray:
    """Log of the Gaussian-kernel density of ``samples`` evaluated at ``x``."""
    s = np.sort(_f64(samples))
    if s.size == 0:
        raise ValueError("kernel density needs at least one sample")
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    x = np.asarray(x, dtype=np.float64)
    return (impl or _impl).kde_logpdf(s, float(bandwidth), _f64(x.ravel())).reshape(x.shape)


def nearest_lattice(lat, lon, lat0: float, lon0: float, dlat: float, dlon: float,
                    *, impl: ModuleType | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Lattice indices of the haversine-nearest node; ties go to the smaller (lat, lon)."""
    return (impl or _impl).nearest_lattice(_f64(lat), _f64(lon), float(lat0), float(lon0),
                                           float(dlat), float(dlon))
