"""Geographic and temporal domain types plus elementary track summaries."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
SECONDS_PER_DAY = 86_400


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class Measurement:
    """A single timestamped cell-tower registration."""

    timestamp: int
    location: GeoPoint
    cell_id: Optional[str] = None

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")


class Hypothesis(enum.Enum):
    H_su = "same_user"
    H_du = "different_user"


class PairLabel(str, enum.Enum):
    SAME_USER = "same_user"
    DIFFERENT_USER = "different_user"
    UNKNOWN = "unknown"

    @property
    def hypothesis(self) -> Optional[Hypothesis]:
        if self is PairLabel.SAME_USER:
            return Hypothesis.H_su
        if self is PairLabel.DIFFERENT_USER:
            return Hypothesis.H_du
        return None


@dataclass(frozen=True)
class Track:
    """One phone's measurements inside one or more consecutive daily windows.

    ``window_start`` is the opening of the first daily window and
    ``window_end`` the close of the last one, both in UTC seconds. For a
    multi-day track the overnight gaps between windows are not part of the
    observation period; :attr:`window_seconds` gives the in-window length.
    """

    phone_id: str
    user_id: str
    window_start: int
    window_end: int
    measurements: tuple[Measurement, ...] = field(default_factory=tuple)
    days: int = 1

    def __post_init__(self):
        if not isinstance(self.measurements, tuple):
            object.__setattr__(self, "measurements", tuple(self.measurements))
        if self.days < 1:
            raise ValueError("a track covers at least one day")
        daily = self.daily_seconds
        if not 0 < daily <= SECONDS_PER_DAY:
            raise ValueError(
                f"window [{self.window_start}, {self.window_end}] is inconsistent "
                f"with {self.days} day(s)")
        prev = None
        for m in self.measurements:
            if prev is not None and m.timestamp < prev:
                raise ValueError("measurements must be sorted by timestamp")
            if not self.window_start <= m.timestamp <= self.window_end:
                raise ValueError(
                    f"measurement at {m.timestamp} lies outside the track window")
            prev = m.timestamp

    @property
    def daily_seconds(self) -> int:
        return self.window_end - self.window_start - (self.days - 1) * SECONDS_PER_DAY

    @property
    def window_seconds(self) -> int:
        return self.days * self.daily_seconds

    def __len__(self):
        return len(self.measurements)

    def timestamps(self) -> np.ndarray:
        return np.fromiter((m.timestamp for m in self.measurements), dtype=np.int64,
                           count=len(self.measurements))

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.measurements)
        lat = np.fromiter((m.location.lat for m in self.measurements), dtype=float, count=n)
        lon = np.fromiter((m.location.lon for m in self.measurements), dtype=float, count=n)
        return lat, lon


@dataclass(frozen=True)
class TrackPair:
    a: Track
    b: Track
    label: PairLabel = PairLabel.UNKNOWN

    def __post_init__(self):
        object.__setattr__(self, "label", PairLabel(self.label))
        if self.a.phone_id == self.b.phone_id:
            raise ValueError(f"cannot pair phone {self.a.phone_id!r} with itself")
        if (self.a.window_start, self.a.window_end) != (self.b.window_start, self.b.window_end):
            raise ValueError("paired tracks must cover the same date range")

    @property
    def pair_id(self) -> str:
        return f"{self.a.phone_id}|{self.b.phone_id}@{self.a.window_start}"


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters on a sphere of radius 6 371 km."""
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def track_time_coverage(t: Track) -> float:
    """Fraction of the in-window observation period spanned by the events.

    The span runs from the first to the last measurement; overnight gaps of
    multi-day tracks are excluded from both numerator and denominator.
    """
    if len(t.measurements) < 2:
        return 0.0
    first = t.measurements[0].timestamp
    last = t.measurements[-1].timestamp
    first_day = (first - t.window_start) // SECONDS_PER_DAY
    last_day = (last - t.window_start) // SECONDS_PER_DAY
    overnight = SECONDS_PER_DAY - t.daily_seconds
    span = (last - first) - (last_day - first_day) * overnight
    return span / t.window_seconds


def track_total_movement(t: Track) -> float:
    """Summed haversine distance between consecutive measurements, in meters."""
    if len(t.measurements) < 2:
        return 0.0
    from cdrlr.kernels import haversine_many

    lat, lon = t.coordinates()
    return float(np.sum(haversine_many(lat[:-1], lon[:-1], lat[1:], lon[1:])))
