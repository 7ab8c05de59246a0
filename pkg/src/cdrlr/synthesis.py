"""Synthetic CDRs from continuous logs, daily track extraction and pairing."""

from __future__ import annotations

import hashlib
import itertools
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from cdrlr.core_model import (
    SECONDS_PER_DAY,
    GeoPoint,
    Measurement,
    PairLabel,
    Track,
    TrackPair,
    track_time_coverage,
    track_total_movement,
)
from cdrlr.ingestion import NetmonEntry, NetmonLog


def parse_clock(value: str) -> int:
    """Seconds after midnight for ``HH:MM`` or ``HH:MM:SS``."""
    parts = value.strip().split(":")
    if len(parts) not in (2, 3):
        raise ValueError(f"bad clock time {value!r}")
    h, m = int(parts[0]), int(parts[1])
    s = int(parts[2]) if len(parts) == 3 else 0
    if not (0 <= h <= 24 and 0 <= m < 60 and 0 <= s < 60) or h * 3600 + m * 60 + s > SECONDS_PER_DAY:
        raise ValueError(f"bad clock time {value!r}")
    return h * 3600 + m * 60 + s


@dataclass(frozen=True)
class SynthesisConfig:
    rate: float = 1.0
    window_start_local: str = "07:00"
    window_end_local: str = "22:00"
    days_per_track: int = 1
    min_coverage: float = 0.8
    min_movement: float = 10_000.0
    seed: int = 0
    utc_offset_hours: float = 0.0

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")
        if self.window_end_seconds <= self.window_start_seconds:
            raise ValueError("window_end_local must be after window_start_local")
        if self.days_per_track < 1:
            raise ValueError("days_per_track must be at least 1")
        if not 0 < self.min_coverage <= 1:
            raise ValueError("min_coverage must lie in (0, 1]")
        if self.min_movement < 0:
            raise ValueError("min_movement must be non-negative")

    @property
    def window_start_seconds(self) -> int:
        return parse_clock(self.window_start_local)

    @property
    def window_end_seconds(self) -> int:
        return parse_clock(self.window_end_local)

    @property
    def utc_offset_seconds(self) -> int:
        return int(round(self.utc_offset_hours * 3600))


def _stable_int(key) -> int:
    return int.from_bytes(hashlib.sha256(str(key).encode("utf-8")).digest()[:8], "little")


def derive_seed(seed: int, *keys) -> np.random.SeedSequence:
    """Independent, reproducible child seed for ``keys`` (not salted like ``hash``)."""
    return np.random.SeedSequence([int(seed) & (2**64 - 1), *(_stable_int(k) for k in keys)])


def sample_event_times(rate: float, t0: int, t1: int, rng_seed) -> list[int]:
    """Homogeneous Poisson event times in ``[t0, t1)``, floored to whole seconds.

    ``rate`` is in events per hour; ``rng_seed`` is anything accepted by
    :func:`numpy.random.default_rng`.
    """
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if t1 <= t0:
        raise ValueError("empty sampling window")
    if rate == 0:
        return []
    rng = np.random.default_rng(rng_seed)
    scale = 3600.0 / rate
    span = float(t1 - t0)
    expected = span / scale
    batch = int(expected + 6 * np.sqrt(expected) + 16)
    offsets = []
    last = 0.0
    while last < span:
        cum = last + np.cumsum(rng.exponential(scale, size=batch))
        offsets.append(cum)
        last = cum[-1]
    cum = np.concatenate(offsets)
    cum = cum[cum < span]
    return (t0 + np.floor(cum).astype(np.int64)).tolist()


def _as_log(log: Union[NetmonLog, Sequence[NetmonEntry]]) -> NetmonLog:
    if isinstance(log, NetmonLog):
        return log
    if not log:
        raise ValueError("cannot synthesize CDRs from an empty log")
    return NetmonLog.from_entries(log)


def nearest_log_indices(times: np.ndarray, event_times) -> np.ndarray:
    """Index of the log entry closest in time to each event; ties go to the earlier entry."""
    ev = np.asarray(event_times, dtype=np.int64)
    right = np.searchsorted(times, ev, side="left")
    right_c = np.minimum(right, len(times) - 1)
    left = np.maximum(right - 1, 0)
    d_right = np.abs(times[right_c] - ev)
    d_left = np.abs(ev - times[left])
    return np.where(d_right < d_left, right_c, left)


def synthesize_cdr(log: Union[NetmonLog, Sequence[NetmonEntry]], event_times) -> list[Measurement]:
    """One measurement per event time, located at the log entry nearest in time."""
    nl = _as_log(log)
    if len(nl) == 0:
        raise ValueError("cannot synthesize CDRs from an empty log")
    idx = nearest_log_indices(nl.times, event_times)
    lat = nl.lat[idx].tolist()
    lon = nl.lon[idx].tolist()
    return [Measurement(int(t), GeoPoint(la, lo), nl.cell_id(k))
            for t, la, lo, k in zip(event_times, lat, lon, idx.tolist())]


def thin_measurements(ms: Sequence[Measurement], keep_probability: float, rng_seed) -> list[Measurement]:
    """Independent Bernoulli thinning; thinning a Poisson stream keeps it Poisson."""
    if not 0 <= keep_probability <= 1:
        raise ValueError("keep_probability must lie in [0, 1]")
    if keep_probability == 1:
        return list(ms)
    keep = np.random.default_rng(rng_seed).random(len(ms)) < keep_probability
    return [m for m, k in zip(ms, keep) if k]


def local_day(ts: int, cfg: SynthesisConfig) -> int:
    return (ts + cfg.utc_offset_seconds) // SECONDS_PER_DAY


def extract_daily_tracks(ms: Sequence[Measurement], cfg: SynthesisConfig, *,
                         phone_id: str = "", user_id: str = "",
                         anchor_day: int = 0, apply_filters: bool = True) -> list[Track]:
    """Cut a phone's measurements into filtered tracks of ``days_per_track`` local days.

    Blocks of consecutive days are aligned to ``anchor_day`` (days since the
    epoch in local time) so that tracks of different phones line up.
    """
    k = cfg.days_per_track
    ws, we = cfg.window_start_seconds, cfg.window_end_seconds
    off = cfg.utc_offset_seconds
    blocks: dict[int, list[Measurement]] = defaultdict(list)
    prev = None
    for m in ms:
        if prev is not None and m.timestamp < prev:
            raise ValueError("measurements must be sorted by timestamp")
        prev = m.timestamp
        local = m.timestamp + off
        tod = local % SECONDS_PER_DAY
        if ws <= tod <= we:
            blocks[(local // SECONDS_PER_DAY - anchor_day) // k].append(m)
    tracks = []
    for b in sorted(blocks):
        first_day = anchor_day + b * k
        start = first_day * SECONDS_PER_DAY - off + ws
        end = (first_day + k - 1) * SECONDS_PER_DAY - off + we
        t = Track(phone_id, user_id, start, end, tuple(blocks[b]), days=k)
        if apply_filters and not passes_filters(t, cfg):
            continue
        tracks.append(t)
    return tracks


def passes_filters(t: Track, cfg: SynthesisConfig) -> bool:
    return (track_time_coverage(t) >= cfg.min_coverage
            and track_total_movement(t) >= cfg.min_movement)


def pair_tracks(tracks: Sequence[Track]) -> list[TrackPair]:
    """All unordered same-date-range pairs of tracks from distinct phones."""
    by_range: dict[tuple[int, int], list[Track]] = defaultdict(list)
    for t in tracks:
        by_range[(t.window_start, t.window_end)].append(t)
    pairs = []
    for key in sorted(by_range):
        group = sorted(by_range[key], key=lambda t: t.phone_id)
        for a, b in itertools.combinations(group, 2):
            if a.phone_id == b.phone_id:
                continue
            label = PairLabel.SAME_USER if a.user_id == b.user_id else PairLabel.DIFFERENT_USER
            pairs.append(TrackPair(a, b, label))
    return pairs


def first_local_day(days: Sequence[Optional[int]]) -> int:
    present = [d for d in days if d is not None]
    return min(present) if present else 0


def tracks_from_logs(logs: Mapping[str, NetmonLog], users: Mapping[str, str],
                     cfg: SynthesisConfig) -> list[Track]:
    """Poisson-sample every phone's log, then cut and filter its tracks."""
    cdrs = {}
    for pid in sorted(logs):
        nl = logs[pid]
        if len(nl) == 0:
            continue
        times = sample_event_times(cfg.rate, int(nl.times[0]), int(nl.times[-1]) + 1,
                                   derive_seed(cfg.seed, "events", pid))
        cdrs[pid] = synthesize_cdr(nl, times)
    return tracks_from_measurements(cdrs, users, cfg)


def tracks_from_measurements(measurements: Mapping[str, Sequence[Measurement]],
                             users: Mapping[str, str], cfg: SynthesisConfig) -> list[Track]:
    anchor = first_local_day([local_day(ms[0].timestamp, cfg) if ms else None
                              for ms in measurements.values()])
    tracks = []
    for pid in sorted(measurements):
        if pid not in users:
            raise KeyError(f"no user recorded for phone {pid!r}")
        tracks.extend(extract_daily_tracks(measurements[pid], cfg, phone_id=pid,
                                           user_id=users[pid], anchor_day=anchor))
    return tracks
