"""Switch extraction between two tracks, per-switch features, robust scaling.

A switch is a pair of time-adjacent measurements from different phones in
the time-merged sequence of both tracks. Equal timestamps across phones are
ordered by phone id and kept as a switch with the time difference clamped to
one second.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from cdrlr.core_model import Measurement, Track, TrackPair
from cdrlr.kernels import haversine_many, merge_switches

FEATURE_NAMES = ("distance", "dt", "speed", "bearing")
DEFAULT_FEATURES = ("distance", "dt", "speed")
MIN_DT_S = 1.0


@dataclass(frozen=True)
class SwitchEnd:
    phone_id: str
    index: int
    measurement: Measurement


@dataclass(frozen=True)
class Switch:
    first: SwitchEnd
    second: SwitchEnd

    def __post_init__(self):
        if self.first.phone_id == self.second.phone_id:
            raise ValueError("a switch joins measurements of two different phones")
        if self.first.measurement.timestamp > self.second.measurement.timestamp:
            raise ValueError("switch endpoints out of time order")


@dataclass(frozen=True)
class SwitchFeatures:
    distance_m: float
    dt_s: float
    speed_mps: float
    bearing_diff_deg: Optional[float] = None

    def vector(self, features: Sequence[str] = DEFAULT_FEATURES) -> np.ndarray:
        row = {"distance": self.distance_m, "dt": self.dt_s, "speed": self.speed_mps,
               "bearing": 0.0 if self.bearing_diff_deg is None else self.bearing_diff_deg}
        return np.array([row[f] for f in features], dtype=float)


def validate_features(features: Sequence[str]) -> tuple[str, ...]:
    features = tuple(features)
    if not features:
        raise ValueError("at least one feature is required")
    unknown = [f for f in features if f not in FEATURE_NAMES]
    if unknown:
        raise ValueError(f"unknown feature(s) {unknown}; choose from {FEATURE_NAMES}")
    if len(set(features)) != len(features):
        raise ValueError("duplicate feature names")
    return features


def feature_columns(features: Sequence[str]) -> list[int]:
    return [FEATURE_NAMES.index(f) for f in validate_features(features)]


def _switch_indices(pair: TrackPair):
    a, b = pair.a, pair.b
    return merge_switches(a.timestamps(), b.timestamps(), a.phone_id < b.phone_id)


def extract_switches(pair: TrackPair) -> list[Switch]:
    first_is_b, i1, i2 = _switch_indices(pair)
    tracks = (pair.a, pair.b)
    out = []
    for fb, k1, k2 in zip(first_is_b.tolist(), i1.tolist(), i2.tolist()):
        t1, t2 = tracks[int(fb)], tracks[1 - int(fb)]
        out.append(Switch(SwitchEnd(t1.phone_id, k1, t1.measurements[k1]),
                          SwitchEnd(t2.phone_id, k2, t2.measurements[k2])))
    return out


def initial_bearing(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Forward azimuth in degrees [0, 360); NaN where the two points coincide."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    y = np.sin(dl) * np.cos(phi2)
    x = np.cos(phi1) * np.sin(phi2) - np.sin(phi1) * np.cos(phi2) * np.cos(dl)
    brg = np.degrees(np.arctan2(y, x)) % 360.0
    same = (np.asarray(lat1) == np.asarray(lat2)) & (np.asarray(lon1) == np.asarray(lon2))
    return np.where(same, np.nan, brg)


def _arrival_bearings(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    """Bearing of each measurement's arrival leg from its predecessor (NaN for the first)."""
    out = np.full(len(lat), np.nan)
    if len(lat) > 1:
        out[1:] = initial_bearing(lat[:-1], lon[:-1], lat[1:], lon[1:])
    return out


def fold_angle(diff) -> np.ndarray:
    d = np.abs(np.asarray(diff, dtype=float)) % 360.0
    return np.where(d > 180.0, 360.0 - d, d)


def switch_feature_matrix(pair: TrackPair) -> np.ndarray:
    """Features of every switch as an ``(n, 4)`` array ordered as :data:`FEATURE_NAMES`."""
    first_is_b, i1, i2 = _switch_indices(pair)
    n = len(i1)
    if n == 0:
        return np.empty((0, len(FEATURE_NAMES)))
    ta, tb = pair.a.timestamps(), pair.b.timestamps()
    lat_a, lon_a = pair.a.coordinates()
    lat_b, lon_b = pair.b.coordinates()
    brg_a, brg_b = _arrival_bearings(lat_a, lon_a), _arrival_bearings(lat_b, lon_b)

    # index into a / b for each switch regardless of which came first
    ia = np.where(first_is_b, i2, i1)
    ib = np.where(first_is_b, i1, i2)
    dist = haversine_many(lat_a[ia], lon_a[ia], lat_b[ib], lon_b[ib])
    dt = np.abs(tb[ib] - ta[ia]).astype(float)
    dt = np.maximum(dt, MIN_DT_S)
    speed = dist / dt
    diff = brg_a[ia] - brg_b[ib]
    bearing = np.where(np.isnan(diff), 0.0, fold_angle(np.nan_to_num(diff)))
    return np.column_stack([dist, dt, speed, bearing])


def compute_features(s: Switch, pair: Optional[TrackPair] = None) -> SwitchFeatures:
    """Features of a single switch.

    The bearing difference needs each phone's previous measurement, so it is
    only filled in when the originating ``pair`` is supplied.
    """
    m1, m2 = s.first.measurement, s.second.measurement
    dist = float(haversine_many(m1.location.lat, m1.location.lon, m2.location.lat, m2.location.lon))
    dt = max(float(m2.timestamp - m1.timestamp), MIN_DT_S)
    bearing = None
    if pair is not None:
        tracks = {pair.a.phone_id: pair.a, pair.b.phone_id: pair.b}
        brgs = []
        for end in (s.first, s.second):
            t = tracks[end.phone_id]
            if end.index == 0:
                brgs.append(np.nan)
                continue
            prev = t.measurements[end.index - 1].location
            cur = end.measurement.location
            brgs.append(float(initial_bearing(prev.lat, prev.lon, cur.lat, cur.lon)))
        diff = brgs[0] - brgs[1]
        bearing = 0.0 if np.isnan(diff) else float(fold_angle(diff))
    return SwitchFeatures(dist, dt, dist / dt, bearing)


@dataclass(frozen=True)
class ScalerParams:
    """Per-feature median and interquartile range; a zero IQR divides by one."""

    median: tuple[float, ...]
    iqr: tuple[float, ...]

    @property
    def divisor(self) -> np.ndarray:
        iqr = np.asarray(self.iqr, dtype=float)
        return np.where(iqr > 0, iqr, 1.0)

    def to_dict(self) -> dict:
        return {"median": list(self.median), "iqr": list(self.iqr)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalerParams":
        return cls(tuple(float(v) for v in d["median"]), tuple(float(v) for v in d["iqr"]))


def fit_robust_scaler(features) -> ScalerParams:
    """Median / IQR per column, quantiles by linear interpolation."""
    X = _as_matrix(features)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a scaler on zero samples")
    q1, med, q3 = np.percentile(X, [25, 50, 75], axis=0)
    return ScalerParams(tuple(float(v) for v in med), tuple(float(v) for v in q3 - q1))


def apply_scaler(params: ScalerParams, f) -> np.ndarray:
    X = _as_matrix(f) if not isinstance(f, np.ndarray) or f.ndim != 1 else f
    X = np.asarray(X, dtype=float)
    return (X - np.asarray(params.median)) / params.divisor


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return features.reshape(len(features), -1).astype(float) if features.ndim == 1 else features.astype(float)
    rows = [f.vector() if isinstance(f, SwitchFeatures) else np.asarray(f, dtype=float) for f in features]
    if not rows:
        return np.empty((0, 0))
    return np.vstack(rows)


def export_switches_csv(rows: Iterable[tuple[str, TrackPair]]) -> bytes:
    """Debug dump ``pair_id,t1,t2,distance_m,dt_s,speed_mps`` for the given pairs."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["pair_id", "t1", "t2", "distance_m", "dt_s", "speed_mps"])
    for pair_id, pair in rows:
        for s in extract_switches(pair):
            f = compute_features(s)
            w.writerow([pair_id, s.first.measurement.timestamp, s.second.measurement.timestamp,
                        repr(f.distance_m), repr(f.dt_s), repr(f.speed_mps)])
    return out.getvalue().encode("utf-8")
