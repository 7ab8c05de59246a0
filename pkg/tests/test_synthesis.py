import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdrlr.core_model import EARTH_RADIUS_M, GeoPoint, Measurement, PairLabel, track_time_coverage, track_total_movement
from cdrlr.ingestion import NetmonEntry, NetmonLog
from cdrlr.synthesis import (
    SynthesisConfig,
    derive_seed,
    extract_daily_tracks,
    pair_tracks,
    passes_filters,
    sample_event_times,
    synthesize_cdr,
    thin_measurements,
)
from conftest import DAY, EPOCH_DAY, H7, H22, make_track

STEP_DEG = math.degrees(1.0 / EARTH_RADIUS_M)  # one meter along a meridian


def log_of(times, lats=None):
    lats = lats if lats is not None else [52.0 + 0.001 * k for k in range(len(times))]
    return [NetmonEntry("p", t, f"c{k}", GeoPoint(lat, 4.0)) for k, (t, lat) in enumerate(zip(times, lats))]


class TestEventTimes:
    def test_rate_zero(self):
        assert sample_event_times(0.0, 0, 3600, 1) == []

    def test_deterministic(self):
        assert sample_event_times(2.0, 10, 90_000, 5) == sample_event_times(2.0, 10, 90_000, 5)

    def test_in_window_sorted_integers(self):
        t = sample_event_times(30.0, 1000, 5000, 2)
        assert all(isinstance(v, int) for v in t)
        assert t == sorted(t) and all(1000 <= v < 5000 for v in t)

    def test_poisson_mean_monte_carlo(self):
        # 10 000 independent seeds over 15 h at 1/h: the mean count estimates 15 with sd sqrt(15/10 000)
        counts = [len(sample_event_times(1.0, 0, 15 * 3600, derive_seed(0, "mc", k))) for k in range(10_000)]
        assert abs(np.mean(counts) - 15.0) <= 0.4
        assert np.var(counts) == pytest.approx(15.0, rel=0.1)

    def test_rejects_negative_rate(self):
        with pytest.raises(ValueError):
            sample_event_times(-1, 0, 10, 0)


class TestSynthesizeCdr:
    def test_exact_time(self):
        (m,) = synthesize_cdr(log_of([95, 110]), [110])
        assert m.cell_id == "c1"

    def test_nearest(self):
        (m,) = synthesize_cdr(log_of([95, 110]), [100])
        assert m.cell_id == "c0" and m.timestamp == 100

    def test_tie_goes_to_earlier(self):
        (m,) = synthesize_cdr(log_of([90, 110]), [100])
        assert m.cell_id == "c0"

    def test_columnar_log(self):
        log = NetmonLog.from_entries(log_of([10, 20, 30]))
        assert [m.cell_id for m in synthesize_cdr(log, [11, 26, 40])] == ["c0", "c2", "c2"]

    @given(st.lists(st.integers(1, 10_000), min_size=1, max_size=30, unique=True),
           st.lists(st.integers(1, 12_000), max_size=30))
    def test_timestamps_preserved_and_nearest(self, log_times, events):
        log_times = sorted(log_times)
        events = sorted(events)
        ms = synthesize_cdr(log_of(log_times), events)
        assert [m.timestamp for m in ms] == events
        for m in ms:
            k = int(m.cell_id[1:])
            best = min(abs(t - m.timestamp) for t in log_times)
            assert abs(log_times[k] - m.timestamp) == best
            earlier = [j for j, t in enumerate(log_times) if abs(t - m.timestamp) == best]
            assert k == earlier[0]


def day_track_ms(start_h, end_h, movement_m=20_000.0, n=30, day=0):
    t0 = EPOCH_DAY + day * DAY + int(start_h * 3600)
    t1 = EPOCH_DAY + day * DAY + int(end_h * 3600)
    times = np.linspace(t0, t1, n).round().astype(int)
    lats = 52.0 + np.linspace(0, movement_m, n) * STEP_DEG
    return [Measurement(int(t), GeoPoint(float(la), 4.0)) for t, la in zip(times, lats)]


class TestDailyTracks:
    cfg = SynthesisConfig()

    def test_night_only(self):
        ms = [Measurement(EPOCH_DAY + h * 3600, GeoPoint(52, 4)) for h in (0, 3, 6, 23)]
        assert extract_daily_tracks(ms, self.cfg) == []

    def test_coverage_threshold(self):
        kept = extract_daily_tracks(day_track_ms(7, 19), self.cfg)
        assert len(kept) == 1 and track_time_coverage(kept[0]) == pytest.approx(0.8)
        ms = day_track_ms(7, 19)[:-1] + [Measurement(EPOCH_DAY + 19 * 3600 - 60, GeoPoint(52.1796, 4.0))]
        assert extract_daily_tracks(ms, self.cfg) == []

    @pytest.mark.parametrize("movement,kept", [(9_999.0, 0), (10_001.0, 1)])
    def test_movement_threshold(self, movement, kept):
        ms = day_track_ms(7, 22, movement_m=movement)
        tracks = extract_daily_tracks(ms, self.cfg, apply_filters=False)
        assert track_total_movement(tracks[0]) == pytest.approx(movement, abs=0.01)
        assert len(extract_daily_tracks(ms, self.cfg)) == kept

    def test_window_edges_inclusive(self):
        ms = [Measurement(t, GeoPoint(52, 4)) for t in (H7 - 1, H7, H22, H22 + 1)]
        (t,) = extract_daily_tracks(ms, self.cfg, apply_filters=False)
        assert [m.timestamp for m in t.measurements] == [H7, H22]
        assert (t.window_start, t.window_end) == (H7, H22)

    def test_multi_day_blocks_and_filters(self):
        ms = day_track_ms(7, 22, day=0) + day_track_ms(7, 22, day=1) + day_track_ms(7, 22, day=2)
        cfg = SynthesisConfig(days_per_track=2)
        tracks = extract_daily_tracks(ms, cfg, apply_filters=False, anchor_day=EPOCH_DAY // DAY)
        assert [t.days for t in tracks] == [2, 2]
        assert tracks[0].window_end == H22 + DAY
        assert len(tracks[0]) == 60 and len(tracks[1]) == 30
        # the trailing half-filled block covers only half its window
        assert [passes_filters(t, cfg) for t in tracks] == [True, False]

    def test_utc_offset(self):
        cfg = SynthesisConfig(utc_offset_hours=2.0)
        ms = [Measurement(H7 - 2 * 3600, GeoPoint(52, 4)), Measurement(H22 - 2 * 3600, GeoPoint(52.2, 4))]
        (t,) = extract_daily_tracks(ms, cfg)
        assert t.window_start == H7 - 2 * 3600

    @given(st.lists(st.integers(EPOCH_DAY, EPOCH_DAY + 3 * DAY), max_size=60).map(sorted),
           st.integers(1, 3))
    def test_emitted_tracks_pass_filters(self, times, days):
        cfg = SynthesisConfig(days_per_track=days, min_movement=100.0)
        ms = [Measurement(t, GeoPoint(52 + (t % 997) * 1e-4, 4.0)) for t in times]
        for t in extract_daily_tracks(ms, cfg):
            assert track_time_coverage(t) >= cfg.min_coverage
            assert track_total_movement(t) >= cfg.min_movement

    def test_rejects_unsorted(self):
        ms = [Measurement(H7 + 10, GeoPoint(52, 4)), Measurement(H7, GeoPoint(52, 4))]
        with pytest.raises(ValueError):
            extract_daily_tracks(ms, self.cfg)


class TestPairing:
    def test_different_dates(self):
        a = make_track("a", [H7], user_id="u1")
        b = make_track("b", [H7 + DAY], user_id="u1", start=H7 + DAY, end=H22 + DAY)
        assert pair_tracks([a, b]) == []

    def test_same_user(self):
        (p,) = pair_tracks([make_track("b", [H7], user_id="u"), make_track("a", [H7], user_id="u")])
        assert p.label is PairLabel.SAME_USER and (p.a.phone_id, p.b.phone_id) == ("a", "b")

    def test_three_users(self):
        pairs = pair_tracks([make_track(f"p{k}", [H7], user_id=f"u{k}") for k in range(3)])
        assert len(pairs) == 3 and all(p.label is PairLabel.DIFFERENT_USER for p in pairs)

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 2)), max_size=12, unique=True))
    def test_partition_and_no_self_pairs(self, layout):
        tracks = [make_track(f"p{u}_{k}", [H7], user_id=f"u{u}") for u, k in layout]
        pairs = pair_tracks(tracks)
        assert len(pairs) == len(tracks) * (len(tracks) - 1) // 2
        for p in pairs:
            assert p.a.phone_id != p.b.phone_id
            assert p.label is (PairLabel.SAME_USER if p.a.user_id == p.b.user_id else PairLabel.DIFFERENT_USER)


class TestThinning:
    def test_keep_all_and_fraction(self):
        ms = [Measurement(100 + k, GeoPoint(52, 4)) for k in range(20_000)]
        assert thin_measurements(ms, 1.0, 0) == ms
        kept = thin_measurements(ms, 0.25, 0)
        assert len(kept) == pytest.approx(5_000, abs=250)
        assert kept == sorted(kept, key=lambda m: m.timestamp)


def test_derive_seed_stable():
    a = np.random.default_rng(derive_seed(1, "events", "p0")).integers(0, 2**31)
    b = np.random.default_rng(derive_seed(1, "events", "p0")).integers(0, 2**31)
    c = np.random.default_rng(derive_seed(1, "events", "p1")).integers(0, 2**31)
    assert a == b != c
