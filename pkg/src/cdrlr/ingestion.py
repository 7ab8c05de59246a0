"""Parsing of CDR files, cell-tower databases and network-monitor logs.

All files share one canonical CSV layout (UTF-8, comma separated, header row
mandatory)::

    phone_id,timestamp,cell_id,lat,lon

Tower databases use ``cell_id,lat,lon``. Timestamps are integer epoch seconds
or ISO-8601 strings (naive values are read as UTC).
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from cdrlr.core_model import GeoPoint, Measurement

log = logging.getLogger(__name__)

CDR_COLUMNS = ("phone_id", "timestamp", "cell_id", "lat", "lon")
TOWER_COLUMNS = ("cell_id", "lat", "lon")


class CsvFormatError(ValueError):
    """Malformed CSV input; ``line`` is 1-based with the header on line 1."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class UnresolvedCellError(ValueError):
    def __init__(self, cell_ids: Iterable[str]):
        self.cell_ids = sorted(set(cell_ids))
        super().__init__("no location for cell id(s): " + ", ".join(self.cell_ids))


@dataclass(frozen=True)
class CdrRecord:
    phone_id: str
    timestamp: int
    cell_id: str
    lat: Optional[float] = None
    lon: Optional[float] = None

    def __post_init__(self):
        if not self.cell_id:
            raise ValueError("cell_id must be non-empty")
        if (self.lat is None) != (self.lon is None):
            raise ValueError("lat and lon must be given together")

    @property
    def location(self) -> Optional[GeoPoint]:
        if self.lat is None:
            return None
        return GeoPoint(self.lat, self.lon)


@dataclass(frozen=True)
class TowerRecord:
    cell_id: str
    location: GeoPoint


@dataclass(frozen=True)
class NetmonEntry:
    phone_id: str
    timestamp: int
    cell_id: str
    location: GeoPoint


class NetmonLog:
    """Columnar, time-sorted log of one phone.

    Simulated logs run to millions of rows, so entries are kept as arrays and
    cell ids as integer codes into ``cell_vocab``.
    """

    __slots__ = ("phone_id", "times", "lat", "lon", "cell_codes", "cell_vocab")

    def __init__(self, phone_id: str, times, lat, lon, cell_codes, cell_vocab: Sequence[str]):
        self.phone_id = phone_id
        self.times = np.asarray(times, dtype=np.int64)
        self.lat = np.asarray(lat, dtype=np.float64)
        self.lon = np.asarray(lon, dtype=np.float64)
        self.cell_codes = np.asarray(cell_codes, dtype=np.int64)
        self.cell_vocab = list(cell_vocab)
        n = len(self.times)
        if not (len(self.lat) == len(self.lon) == len(self.cell_codes) == n):
            raise ValueError("log columns differ in length")
        if n > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError(f"log of phone {phone_id!r} is not sorted by time")

    def __len__(self):
        return len(self.times)

    def cell_id(self, k: int) -> str:
        return self.cell_vocab[self.cell_codes[k]]

    def entries(self) -> Iterator[NetmonEntry]:
        for k in range(len(self.times)):
            yield NetmonEntry(self.phone_id, int(self.times[k]), self.cell_id(k),
                              GeoPoint(float(self.lat[k]), float(self.lon[k])))

    @classmethod
    def from_entries(cls, entries: Sequence[NetmonEntry]) -> "NetmonLog":
        if not entries:
            raise ValueError("cannot build a log from zero entries")
        phone_ids = {e.phone_id for e in entries}
        if len(phone_ids) != 1:
            raise ValueError("entries belong to more than one phone")
        vocab: dict[str, int] = {}
        codes = [vocab.setdefault(e.cell_id, len(vocab)) for e in entries]
        return cls(entries[0].phone_id,
                   [e.timestamp for e in entries],
                   [e.location.lat for e in entries],
                   [e.location.lon for e in entries],
                   codes, list(vocab))


def _text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        try:
            return bytes(data).decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise CsvFormatError(f"input is not UTF-8: {exc}") from exc
    return data


def _rows(data, columns: Sequence[str]) -> Iterator[tuple[int, dict[str, str]]]:
    reader = csv.reader(io.StringIO(_text(data), newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError("missing header row", line=1) from None
    header = [h.strip() for h in header]
    if sorted(header) != sorted(columns) or len(header) != len(columns):
        raise CsvFormatError(
            f"unexpected header {','.join(header)!r}; expected {','.join(columns)!r}", line=1)
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"expected {len(header)} fields, found {len(row)}", line=line)
        yield line, {k: v.strip() for k, v in zip(header, row)}


def parse_timestamp(value: str) -> int:
    """Epoch seconds from an integer string or an ISO-8601 timestamp."""
    try:
        return int(value)
    except ValueError:
        pass
    text = value[:-1] + "+00:00" if value.endswith(("Z", "z")) else value
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _coordinate(value: str, line: int, name: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise CsvFormatError(f"bad {name} {value!r}", line=line) from None
    if not math.isfinite(v):
        raise CsvFormatError(f"non-finite {name}", line=line)
    return v


def _timestamp(value: str, line: int) -> int:
    try:
        ts = parse_timestamp(value)
    except ValueError:
        raise CsvFormatError(f"bad timestamp {value!r}", line=line) from None
    if ts <= 0:
        raise CsvFormatError(f"timestamp must be positive, got {value!r}", line=line)
    return ts


def parse_cdr_csv(data) -> list[CdrRecord]:
    records = []
    for line, row in _rows(data, CDR_COLUMNS):
        if not row["phone_id"]:
            raise CsvFormatError("empty phone_id", line=line)
        if not row["cell_id"]:
            raise CsvFormatError("empty cell_id", line=line)
        ts = _timestamp(row["timestamp"], line)
        lat_s, lon_s = row["lat"], row["lon"]
        if bool(lat_s) != bool(lon_s):
            raise CsvFormatError("lat and lon must both be present or both empty", line=line)
        lat = lon = None
        if lat_s:
            lat = _coordinate(lat_s, line, "lat")
            lon = _coordinate(lon_s, line, "lon")
            try:
                GeoPoint(lat, lon)
            except ValueError as exc:
                raise CsvFormatError(str(exc), line=line) from None
        records.append(CdrRecord(row["phone_id"], ts, row["cell_id"], lat, lon))
    return records


def write_cdr_csv(records: Iterable[CdrRecord]) -> bytes:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CDR_COLUMNS)
    for r in records:
        w.writerow([r.phone_id, r.timestamp, r.cell_id,
                    "" if r.lat is None else repr(r.lat),
                    "" if r.lon is None else repr(r.lon)])
    return out.getvalue().encode("utf-8")


def parse_tower_csv(data) -> list[TowerRecord]:
    towers = []
    seen = set()
    for line, row in _rows(data, TOWER_COLUMNS):
        cid = row["cell_id"]
        if not cid:
            raise CsvFormatError("empty cell_id", line=line)
        if cid in seen:
            raise CsvFormatError(f"duplicate cell_id {cid!r}", line=line)
        seen.add(cid)
        lat = _coordinate(row["lat"], line, "lat")
        lon = _coordinate(row["lon"], line, "lon")
        try:
            towers.append(TowerRecord(cid, GeoPoint(lat, lon)))
        except ValueError as exc:
            raise CsvFormatError(str(exc), line=line) from None
    return towers


def write_tower_csv(towers: Iterable[TowerRecord]) -> bytes:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TOWER_COLUMNS)
    for t in towers:
        w.writerow([t.cell_id, repr(t.location.lat), repr(t.location.lon)])
    return out.getvalue().encode("utf-8")


def resolve_cell_locations(records: Sequence[CdrRecord],
                           db: Sequence[TowerRecord] = ()) -> dict[str, list[Measurement]]:
    """Attach a location to every record, grouped per phone and sorted by time.

    Inline coordinates take precedence over the tower database.
    """
    lookup: dict[str, GeoPoint] = {}
    for t in db:
        if t.cell_id in lookup:
            raise ValueError(f"duplicate cell_id {t.cell_id!r} in tower database")
        lookup[t.cell_id] = t.location
    missing = [r.cell_id for r in records if r.lat is None and r.cell_id not in lookup]
    if missing:
        raise UnresolvedCellError(missing)
    grouped: dict[str, list[Measurement]] = defaultdict(list)
    for r in records:
        loc = r.location or lookup[r.cell_id]
        grouped[r.phone_id].append(Measurement(r.timestamp, loc, r.cell_id))
    for ms in grouped.values():
        ms.sort(key=lambda m: m.timestamp)
    return dict(grouped)


def parse_netmon_csv(data) -> list[NetmonEntry]:
    """Entries sorted by (phone_id, timestamp); duplicate timestamps keep the first row."""
    entries = []
    for line, row in _rows(data, CDR_COLUMNS):
        if not row["phone_id"] or not row["cell_id"]:
            raise CsvFormatError("phone_id and cell_id are required", line=line)
        if not row["lat"] or not row["lon"]:
            raise CsvFormatError("network-monitor entries need lat and lon", line=line)
        ts = _timestamp(row["timestamp"], line)
        lat = _coordinate(row["lat"], line, "lat")
        lon = _coordinate(row["lon"], line, "lon")
        try:
            loc = GeoPoint(lat, lon)
        except ValueError as exc:
            raise CsvFormatError(str(exc), line=line) from None
        entries.append(NetmonEntry(row["phone_id"], ts, row["cell_id"], loc))
    entries.sort(key=lambda e: (e.phone_id, e.timestamp))
    kept = []
    for e in entries:
        if kept and kept[-1].phone_id == e.phone_id and kept[-1].timestamp == e.timestamp:
            continue
        kept.append(e)
    dropped = len(entries) - len(kept)
    if dropped:
        log.warning("dropped %d duplicate network-monitor entries", dropped)
    return kept


def group_netmon(entries: Sequence[NetmonEntry]) -> dict[str, NetmonLog]:
    grouped: dict[str, list[NetmonEntry]] = defaultdict(list)
    for e in entries:
        grouped[e.phone_id].append(e)
    return {pid: NetmonLog.from_entries(sorted(es, key=lambda e: e.timestamp))
            for pid, es in grouped.items()}


def write_netmon_csv(log_: NetmonLog) -> bytes:
    out = io.StringIO()
    out.write(",".join(CDR_COLUMNS) + "\n")
    pid = log_.phone_id
    vocab = log_.cell_vocab
    lines = [f"{pid},{t},{vocab[c]},{la!r},{lo!r}\n"
             for t, c, la, lo in zip(log_.times.tolist(), log_.cell_codes.tolist(),
                                     log_.lat.tolist(), log_.lon.tolist())]
    out.writelines(lines)
    return out.getvalue().encode("utf-8")


def read_netmon_logs(data) -> dict[str, NetmonLog]:
    """Columnar equivalent of ``group_netmon(parse_netmon_csv(data))`` for large files."""
    phones: list[str] = []
    cells: list[str] = []
    times: list[int] = []
    lats: list[float] = []
    lons: list[float] = []
    for line, row in _rows(data, CDR_COLUMNS):
        if not row["phone_id"] or not row["cell_id"]:
            raise CsvFormatError("phone_id and cell_id are required", line=line)
        if not row["lat"] or not row["lon"]:
            raise CsvFormatError("network-monitor entries need lat and lon", line=line)
        ts = row["timestamp"]
        times.append(int(ts) if ts.isdigit() and int(ts) > 0 else _timestamp(ts, line))
        lat = _coordinate(row["lat"], line, "lat")
        lon = _coordinate(row["lon"], line, "lon")
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            raise CsvFormatError(f"coordinates out of range: {lat}, {lon}", line=line)
        lats.append(lat)
        lons.append(lon)
        phones.append(row["phone_id"])
        cells.append(row["cell_id"])
    if not times:
        return {}
    phone_vocab, phone_codes = np.unique(np.array(phones), return_inverse=True)
    t = np.array(times, dtype=np.int64)
    order = np.lexsort((np.arange(len(t)), t, phone_codes))  # stable: first duplicate wins
    pc, t = phone_codes[order], t[order]
    keep = np.ones(len(t), dtype=bool)
    keep[1:] = (pc[1:] != pc[:-1]) | (t[1:] != t[:-1])
    if not keep.all():
        log.warning("dropped %d duplicate network-monitor entries", int((~keep).sum()))
    order = order[keep]
    lat_a = np.array(lats)[order]
    lon_a = np.array(lons)[order]
    cell_a = np.array(cells)[order]
    pc = phone_codes[order]
    t = np.array(times, dtype=np.int64)[order]
    out = {}
    for k, pid in enumerate(phone_vocab.tolist()):
        sel = pc == k
        vocab, codes = np.unique(cell_a[sel], return_inverse=True)
        out[pid] = NetmonLog(pid, t[sel], lat_a[sel], lon_a[sel], codes.ravel(), vocab.tolist())
    return out
