"""Synthetic population of commuting users carrying several phones each.

Each user has a home and a work anchor scattered around a region centre.
Every day the user leaves home in the morning, travels in a straight line to
work at ``travel_speed``, stays until the evening and travels back. Each
phone logs, every ``log_interval`` seconds, the lattice tower nearest to the
user's position perturbed by its own snapping noise, so phones of one user
share a position but not necessarily a tower.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cdrlr.core_model import EARTH_RADIUS_M, SECONDS_PER_DAY, GeoPoint
from cdrlr.ingestion import NetmonLog, TowerRecord
from cdrlr.kernels import haversine_many, nearest_lattice
from cdrlr.synthesis import derive_seed

# departure and return windows, seconds after local midnight
MORNING_DEPARTURE = (7 * 3600, 9 * 3600)
EVENING_DEPARTURE = (16 * 3600, 19 * 3600)


@dataclass(frozen=True)
class SimConfig:
    n_users: int = 20
    phones_per_user: int = 2
    n_days: int = 14
    anchor_dispersion: float = 15_000.0
    travel_speed: float = 10.0
    tower_grid_spacing: float = 2_000.0
    tower_snap_noise: float = 1_000.0
    log_interval: int = 10
    seed: int = 0
    center_lat: float = 52.1
    center_lon: float = 5.1
    start_epoch: int = 1_614_556_800  # 2021-03-01T00:00:00Z

    def __post_init__(self):
        for name in ("n_users", "phones_per_user", "n_days", "log_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.tower_grid_spacing > 0:
            raise ValueError("tower_grid_spacing must be positive")
        for name in ("anchor_dispersion", "travel_speed", "tower_snap_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        GeoPoint(self.center_lat, self.center_lon)
        if self.start_epoch <= 0:
            raise ValueError("start_epoch must be positive")


@dataclass(frozen=True)
class TowerGrid:
    """Regular lat/lon lattice with ``spacing_m`` meters between nodes at ``lat0``."""

    lat0: float
    lon0: float
    spacing_m: float

    @property
    def dlat(self) -> float:
        return math.degrees(self.spacing_m / EARTH_RADIUS_M)

    @property
    def dlon(self) -> float:
        return math.degrees(self.spacing_m / (EARTH_RADIUS_M * math.cos(math.radians(self.lat0))))

    @property
    def diagonal_m(self) -> float:
        return math.sqrt(2.0) * self.spacing_m

    def node_lat(self, i):
        return self.lat0 + i * self.dlat

    def node_lon(self, j):
        return self.lon0 + j * self.dlon

    @staticmethod
    def cell_id(i: int, j: int) -> str:
        return f"T{i}_{j}"

    def tower(self, i: int, j: int) -> TowerRecord:
        return TowerRecord(self.cell_id(i, j), GeoPoint(self.node_lat(i), self.node_lon(j)))


def nearest_tower(p: GeoPoint, grid: TowerGrid) -> TowerRecord:
    i, j = nearest_lattice(np.array([p.lat]), np.array([p.lon]),
                           grid.lat0, grid.lon0, grid.dlat, grid.dlon)
    return grid.tower(int(i[0]), int(j[0]))


@dataclass
class SimulatedPopulation:
    logs: dict[str, NetmonLog]
    users: dict[str, str]
    grid: TowerGrid
    config: SimConfig = field(repr=False, default=None)


def _offset_degrees(lat, dy_m, dx_m):
    dlat = np.degrees(dy_m / EARTH_RADIUS_M)
    dlon = np.degrees(dx_m / (EARTH_RADIUS_M * np.cos(np.radians(lat))))
    return dlat, dlon


def _user_positions(cfg: SimConfig, user: int, tod: np.ndarray, day: np.ndarray):
    rng = np.random.default_rng(derive_seed(cfg.seed, "user", user))
    anchors = rng.normal(0.0, cfg.anchor_dispersion, size=(2, 2)) if cfg.anchor_dispersion else np.zeros((2, 2))
    (hy, hx), (wy, wx) = anchors
    hlat, hlon = _offset_degrees(cfg.center_lat, hy, hx)
    wlat, wlon = _offset_degrees(cfg.center_lat, wy, wx)
    home = np.array([cfg.center_lat + hlat, cfg.center_lon + hlon])
    work = np.array([cfg.center_lat + wlat, cfg.center_lon + wlon])

    dep = rng.uniform(*MORNING_DEPARTURE, size=cfg.n_days)
    ret = rng.uniform(*EVENING_DEPARTURE, size=cfg.n_days)
    commute = float(haversine_many(home[0], home[1], work[0], work[1]))
    if cfg.travel_speed > 0:
        duration = commute / cfg.travel_speed
        ret = np.maximum(ret, dep + duration)
        d = dep[day]
        r = ret[day]
        if duration > 0:
            out = np.clip((tod - d) / duration, 0.0, 1.0)
            back = np.clip((tod - r) / duration, 0.0, 1.0)
        else:
            out = (tod >= d).astype(float)
            back = (tod >= r).astype(float)
        progress = out - back
    else:
        progress = np.zeros(len(tod))
    lat = home[0] + progress * (work[0] - home[0])
    lon = home[1] + progress * (work[1] - home[1])
    return lat, lon


def _snap_noise(cfg: SimConfig, rng: np.random.Generator, lat: np.ndarray):
    """Isotropic Gaussian offset (sd = noise/2 per axis) truncated at radius ``noise``."""
    n = len(lat)
    if cfg.tower_snap_noise == 0:
        return np.zeros(n), np.zeros(n)
    xy = rng.normal(0.0, cfg.tower_snap_noise / 2.0, size=(n, 2))
    r = np.hypot(xy[:, 0], xy[:, 1])
    scale = np.where(r > cfg.tower_snap_noise, cfg.tower_snap_noise / np.maximum(r, 1e-300), 1.0)
    xy *= scale[:, None]
    return _offset_degrees(lat, xy[:, 0], xy[:, 1])


def simulate_population(cfg: SimConfig) -> SimulatedPopulation:
    grid = TowerGrid(cfg.center_lat, cfg.center_lon, cfg.tower_grid_spacing)
    per_day = SECONDS_PER_DAY // cfg.log_interval
    k = np.arange(cfg.n_days * per_day, dtype=np.int64)
    offsets = k * cfg.log_interval
    times = cfg.start_epoch + offsets
    day = offsets // SECONDS_PER_DAY
    tod = (offsets % SECONDS_PER_DAY).astype(float)

    logs: dict[str, NetmonLog] = {}
    users: dict[str, str] = {}
    for u in range(cfg.n_users):
        user_id = f"u{u:03d}"
        lat, lon = _user_positions(cfg, u, tod, day)
        for p in range(cfg.phones_per_user):
            phone_id = f"{user_id}p{p}"
            rng = np.random.default_rng(derive_seed(cfg.seed, "phone", phone_id))
            dlat, dlon = _snap_noise(cfg, rng, lat)
            gi, gj = nearest_lattice(lat + dlat, lon + dlon, grid.lat0, grid.lon0, grid.dlat, grid.dlon)
            i0, j0 = gi.min(), gj.min()
            width = int(gj.max() - j0) + 1
            keys, codes = np.unique((gi - i0) * width + (gj - j0), return_inverse=True)
            vocab = [grid.cell_id(int(i0 + key // width), int(j0 + key % width)) for key in keys]
            logs[phone_id] = NetmonLog(phone_id, times, grid.node_lat(gi), grid.node_lon(gj),
                                       codes.ravel(), vocab)
            users[phone_id] = user_id
    return SimulatedPopulation(logs, users, grid, cfg)
