import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdrlr.core_model import GeoPoint
from cdrlr.ingestion import (
    CdrRecord,
    CsvFormatError,
    NetmonEntry,
    NetmonLog,
    TowerRecord,
    UnresolvedCellError,
    group_netmon,
    parse_cdr_csv,
    parse_netmon_csv,
    parse_timestamp,
    parse_tower_csv,
    read_netmon_logs,
    resolve_cell_locations,
    write_cdr_csv,
    write_netmon_csv,
    write_tower_csv,
)

HEADER = "phone_id,timestamp,cell_id,lat,lon\n"


class TestCdr:
    def test_header_only(self):
        assert parse_cdr_csv(HEADER.encode()) == []

    def test_single_row(self):
        (r,) = parse_cdr_csv((HEADER + "p1,1600000000,NL-123,52.1,4.3\n").encode())
        assert r == CdrRecord("p1", 1600000000, "NL-123", 52.1, 4.3)
        assert r.location == GeoPoint(52.1, 4.3)

    def test_bad_timestamp_names_line(self):
        with pytest.raises(CsvFormatError) as ei:
            parse_cdr_csv(HEADER + "p1,not-a-time,NL-123,52.1,4.3\n")
        assert ei.value.line == 2
        assert "line 2" in str(ei.value)

    def test_iso_timestamps(self):
        assert parse_timestamp("2020-09-13T12:26:40Z") == 1600000000
        assert parse_timestamp("2020-09-13T14:26:40+02:00") == 1600000000
        assert parse_timestamp("2020-09-13T12:26:40") == 1600000000

    @pytest.mark.parametrize("text", ["", "a,b,c\n", "phone_id,timestamp,cell_id,lat\n"])
    def test_bad_header(self, text):
        with pytest.raises(CsvFormatError):
            parse_cdr_csv(text)

    @pytest.mark.parametrize("row", ["p1,100,c,52.1,\n", "p1,100,c,95,4\n", "p1,100,,52,4\n",
                                     "p1,100,c,52\n", "p1,-5,c,52,4\n", "p1,100,c,x,4\n"])
    def test_bad_rows(self, row):
        with pytest.raises(CsvFormatError):
            parse_cdr_csv(HEADER + row)

    def test_columns_in_any_order(self):
        (r,) = parse_cdr_csv("lat,lon,cell_id,timestamp,phone_id\n52,4,c,100,p\n")
        assert (r.phone_id, r.timestamp, r.cell_id, r.lat, r.lon) == ("p", 100, "c", 52.0, 4.0)

    def test_missing_coordinates_allowed(self):
        (r,) = parse_cdr_csv(HEADER + "p1,100,NL-1,,\n")
        assert r.lat is None and r.location is None

    @given(st.lists(st.builds(
        CdrRecord,
        st.text("abcXYZ-_09", min_size=1, max_size=6),
        st.integers(1, 2_000_000_000),
        st.text("abcXYZ-_09", min_size=1, max_size=6),
        st.floats(-90, 90), st.floats(-180, 180)), max_size=20))
    def test_round_trip(self, records):
        assert parse_cdr_csv(write_cdr_csv(records)) == records


class TestTowers:
    def test_round_trip(self):
        towers = [TowerRecord("a", GeoPoint(52.0, 4.0)), TowerRecord("b", GeoPoint(-1.5, 170.25))]
        assert parse_tower_csv(write_tower_csv(towers)) == towers


class TestResolve:
    def test_inline_coordinates(self):
        recs = [CdrRecord("p", 100, "NL-123", 52.1, 4.3)]
        (m,) = resolve_cell_locations(recs, [])["p"]
        assert m.location == GeoPoint(52.1, 4.3)

    def test_database_lookup(self):
        recs = [CdrRecord("p", 100, "NL-123")]
        (m,) = resolve_cell_locations(recs, [TowerRecord("NL-123", GeoPoint(51.0, 5.0))])["p"]
        assert m.location == GeoPoint(51.0, 5.0) and m.cell_id == "NL-123"

    def test_unresolved(self):
        with pytest.raises(UnresolvedCellError) as ei:
            resolve_cell_locations([CdrRecord("p", 100, "XX-9")], [])
        assert ei.value.cell_ids == ["XX-9"]

    def test_size_and_order(self):
        recs = [CdrRecord("p", t, "c", 52, 4) for t in (300, 100, 200)] + [CdrRecord("q", 5, "c", 52, 4)]
        out = resolve_cell_locations(recs)
        assert sum(len(v) for v in out.values()) == len(recs)
        assert [m.timestamp for m in out["p"]] == [100, 200, 300]


class TestNetmon:
    def test_two_entries(self):
        es = parse_netmon_csv(HEADER + "p,100,c1,52,4\np,110,c2,52.1,4\n")
        assert [e.timestamp for e in es] == [100, 110]

    def test_sorted(self):
        es = parse_netmon_csv(HEADER + "p,110,c2,52.1,4\np,100,c1,52,4\n")
        assert [e.timestamp for e in es] == [100, 110]

    def test_missing_lon(self):
        with pytest.raises(CsvFormatError):
            parse_netmon_csv(HEADER + "p,100,c1,52,\n")

    def test_duplicates_keep_first(self, caplog):
        with caplog.at_level(logging.WARNING):
            es = parse_netmon_csv(HEADER + "p,100,first,52,4\np,100,second,53,4\n")
        assert [e.cell_id for e in es] == ["first"]
        assert "dropped 1 duplicate" in caplog.text

    def test_columnar_reader_matches(self):
        rng = np.random.default_rng(0)
        rows = [f"p{rng.integers(0, 3)},{rng.integers(1, 50)},c{rng.integers(0, 5)},{rng.uniform(50, 53)!r},"
                f"{rng.uniform(3, 6)!r}" for _ in range(200)]
        text = HEADER + "\n".join(rows) + "\n"
        ref = group_netmon(parse_netmon_csv(text))
        got = read_netmon_logs(text)
        assert sorted(ref) == sorted(got)
        for pid in ref:
            assert list(ref[pid].entries()) == list(got[pid].entries())

    def test_log_round_trip(self):
        entries = [NetmonEntry("p", 100 + 10 * k, f"c{k % 3}", GeoPoint(52 + k / 100, 4.0)) for k in range(10)]
        log = NetmonLog.from_entries(entries)
        back = read_netmon_logs(write_netmon_csv(log))["p"]
        assert list(back.entries()) == entries

    def test_log_rejects_unsorted(self):
        with pytest.raises(ValueError):
            NetmonLog("p", [2, 1], [0, 0], [0, 0], [0, 0], ["c"])
