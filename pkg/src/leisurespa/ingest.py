"""Parsers and validators for every external input.

Tables are UTF-8, comma separated, with a header row.  Column layouts are
documented in ``FORMATS.md``.  All parsers are deterministic: the same
bytes give the same objects, in file order.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
import re
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    BadCoordinate,
    BadValue,
    BadWeight,
    DanglingReference,
    MissingAnchor,
    MissingTable,
    NonMonotoneStopTimes,
    UnknownCell,
    UnknownLevel,
)

log = logging.getLogger(__name__)

TRIP_MODES = ("car", "transit", "walk", "bike", "other")
TRIP_PURPOSES = ("HOME", "WORK", "STUDY", "LEISURE", "SHOPPING", "PERSONAL", "ESCORT", "OTHER")
POI_CATEGORIES = ("social_leisure", "other")
ROAD_MODES = ("car", "walk")

# Categorical attribute vocabularies: canonical slug -> survey label.
VOCABULARIES = {
    "household_type": {
        "living_alone": "Living alone",
        "couple_no_children": "In a couple w/o children",
        "single_parent": "Single parent",
        "with_parents": "Living with parent(s)",
        "unrelated_household": "Not related to other household members",
        "shared_apartment": "In a shared apartment",
        "couple_with_children": "In a couple w/ child(ren)",
        "other_family": "Another family member in the household",
    },
    "education": {
        "no_diploma": "No diploma",
        "vocational": "Vocational",
        "lower_secondary": "Lower secondary",
        "upper_secondary": "Upper secondary",
        "higher_3_4y": "3-4-year higher education",
        "higher_5y_plus": "5-year-and-above higher education",
        "missing": "Missing",
    },
    "gender": {"man": "Man", "woman": "Woman"},
    "active_mode": {"no": "No", "yes": "Yes"},
    "main_mode": {"car": "Car", "transit": "Public transit"},
    "pt_subscription": {"no": "No", "yes": "Yes"},
}
NUMERIC_ATTRIBUTES = ("age", "poverty_rate")
PERSON_ATTRIBUTES = tuple(VOCABULARIES) + NUMERIC_ATTRIBUTES


def _norm_label(s):
    s = s.strip().lower().replace("–", "-").replace("—", "-")
    return re.sub(r"\s+", " ", s)


_LEVEL_LOOKUP = {
    attr: {**{slug: slug for slug in levels}, **{_norm_label(lbl): slug for slug, lbl in levels.items()}}
    for attr, levels in VOCABULARIES.items()
}


def canonical_level(attribute, value):
    """Map a survey label or slug to its canonical slug, or raise UnknownLevel."""
    try:
        return _LEVEL_LOOKUP[attribute][_norm_label(value)]
    except KeyError:
        raise UnknownLevel(f"unknown level {value!r} for attribute {attribute!r}") from None


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    home_cell: str
    work_cell: str
    weight: float
    attributes: dict = field(default_factory=dict, compare=True, hash=False)
    commute_samples: tuple = ()

    def validate(self):
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise BadWeight(f"person {self.person_id!r}: weight must be positive, got {self.weight}")
        if not self.home_cell or not self.work_cell:
            raise MissingAnchor(f"person {self.person_id!r}: missing home or work cell")
        for dur, w in self.commute_samples:
            if dur < 0 or not w > 0:
                raise BadValue(f"person {self.person_id!r}: bad commute sample ({dur}, {w})")
        return self


@dataclass(frozen=True)
class TripRecord:
    person_id: str
    date: dt.date
    origin_cell: str
    dest_cell: str
    mode: str
    purpose: str
    duration_min: float
    depart_time: int
    day_weight: float = 1.0

    def validate(self):
        if self.duration_min < 0 or not math.isfinite(self.duration_min):
            raise BadValue(f"trip of {self.person_id!r} on {self.date}: negative duration")
        if self.purpose not in TRIP_PURPOSES:
            raise UnknownLevel(f"trip of {self.person_id!r}: unknown purpose {self.purpose!r}")
        if self.mode not in TRIP_MODES:
            raise UnknownLevel(f"trip of {self.person_id!r}: unknown mode {self.mode!r}")
        if not self.day_weight > 0:
            raise BadWeight(f"trip of {self.person_id!r} on {self.date}: day weight must be positive")
        return self


@dataclass(frozen=True)
class DayRecord:
    person_id: str
    date: dt.date
    day_weight: float = 1.0


@dataclass(frozen=True)
class Poi:
    poi_id: str
    lat: float
    lon: float
    category: str
    confidence: float


@dataclass(frozen=True)
class Stop:
    stop_id: str
    name: str
    lat: float
    lon: float


@dataclass(frozen=True)
class Route:
    route_id: str
    short_name: str = ""
    route_type: int = 3


@dataclass(frozen=True)
class Trip:
    trip_id: str
    route_id: str
    service_id: str


@dataclass(frozen=True)
class StopTime:
    trip_id: str
    arrival: int
    departure: int
    stop_id: str
    stop_sequence: int


@dataclass(frozen=True)
class Calendar:
    service_id: str
    days: tuple  # Monday..Sunday flags
    start_date: dt.date
    end_date: dt.date


@dataclass(frozen=True)
class CalendarDate:
    service_id: str
    date: dt.date
    exception_type: int  # 1 added, 2 removed


@dataclass(frozen=True)
class Transfer:
    from_stop_id: str
    to_stop_id: str
    transfer_type: int
    min_transfer_time: int | None


@dataclass(frozen=True)
class GtfsBundle:
    stops: tuple
    routes: tuple
    trips: tuple
    stop_times: tuple  # sorted by (trip order, stop_sequence)
    calendar: tuple = ()
    calendar_dates: tuple = ()
    transfers: tuple = ()

    def counts(self):
        return {
            "stops": len(self.stops),
            "routes": len(self.routes),
            "trips": len(self.trips),
            "stop_times": len(self.stop_times),
            "calendar": len(self.calendar),
            "calendar_dates": len(self.calendar_dates),
            "transfers": len(self.transfers),
        }

    def stop_times_by_trip(self):
        out = {}
        for st in self.stop_times:
            out.setdefault(st.trip_id, []).append(st)
        return out

    def active_services(self, date):
        """Service ids running on ``date`` (calendar plus exceptions)."""
        active = set()
        for c in self.calendar:
            if c.start_date <= date <= c.end_date and c.days[date.weekday()]:
                active.add(c.service_id)
        for cd in self.calendar_dates:
            if cd.date == date:
                if cd.exception_type == 1:
                    active.add(cd.service_id)
                elif cd.exception_type == 2:
                    active.discard(cd.service_id)
        return active

    def validate(self):
        _validate_gtfs(self)
        return self


@dataclass(frozen=True)
class RoadNode:
    node_id: str
    lat: float
    lon: float


@dataclass(frozen=True)
class RoadEdge:
    from_node: str
    to_node: str
    length_m: float
    speed_kmh: float
    modes: frozenset

    @property
    def travel_seconds(self):
        return self.length_m / (self.speed_kmh * 1000 / 3600)


@dataclass(frozen=True)
class RoadGraphSource:
    nodes: tuple
    edges: tuple

    def validate(self):
        ids = set()
        for n in self.nodes:
            _check_coord(n.lat, n.lon, f"road node {n.node_id!r}")
            if n.node_id in ids:
                raise BadValue(f"duplicate road node {n.node_id!r}")
            ids.add(n.node_id)
        for i, e in enumerate(self.edges):
            for end in (e.from_node, e.to_node):
                if end not in ids:
                    raise DanglingReference(end, "road node", f"edge {i}")
            if not (e.length_m > 0 and math.isfinite(e.length_m)):
                raise BadValue(f"edge {i} ({e.from_node}->{e.to_node}): length must be positive")
            if not (e.speed_kmh > 0 and math.isfinite(e.speed_kmh)):
                raise BadValue(f"edge {i} ({e.from_node}->{e.to_node}): speed must be positive")
            if not e.modes or not e.modes <= set(ROAD_MODES):
                raise BadValue(f"edge {i}: bad mode mask {sorted(e.modes)}")
        return self


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _check_coord(lat, lon, where):
    if not (math.isfinite(lat) and math.isfinite(lon)) or not (-90 <= lat <= 90) or not (-180 <= lon <= 180):
        raise BadCoordinate(f"{where}: coordinate out of range ({lat}, {lon})")


def _read_rows(text, source):
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return [], []
    fields = [f.strip() for f in reader.fieldnames]
    rows = []
    for row in reader:
        rows.append({k.strip(): (v.strip() if isinstance(v, str) else "") for k, v in row.items() if k is not None})
    return fields, rows


def read_table(path):
    """Read a CSV file into ``(fieldnames, rows)``."""
    path = Path(path)
    if not path.exists():
        raise MissingTable(path.name, str(path.parent))
    return _read_rows(path.read_text(encoding="utf-8-sig"), str(path))


def _require(fields, needed, source):
    missing = [c for c in needed if c not in fields]
    if missing:
        raise BadValue(f"{source}: missing column(s) {', '.join(missing)}")


def _float(value, where, name):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise BadValue(f"{where}: column {name!r} is not a number: {value!r}") from None


def _int(value, where, name):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise BadValue(f"{where}: column {name!r} is not an integer: {value!r}") from None


def parse_date(value, where="date"):
    v = value.strip()
    for fmt in ("%Y%m%d", "%Y-%m-%d"):
        try:
            return dt.datetime.strptime(v, fmt).date()
        except ValueError:
            pass
    raise BadValue(f"{where}: bad date {value!r}")


_TIME_RE = re.compile(r"^(\d{1,3}):([0-5]\d):([0-5]\d)$")


def parse_gtfs_time(value, where="time"):
    """``H:MM:SS`` or ``HH:MM:SS`` (hours may exceed 23) to seconds."""
    m = _TIME_RE.match(value.strip())
    if not m:
        raise BadValue(f"{where}: bad time {value!r}")
    h, mi, s = (int(x) for x in m.groups())
    return h * 3600 + mi * 60 + s


def format_gtfs_time(seconds):
    seconds = int(seconds)
    return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}:{seconds % 60:02d}"


# ---------------------------------------------------------------------------
# GTFS
# ---------------------------------------------------------------------------

GTFS_REQUIRED = ("stops", "routes", "trips", "stop_times")


def _gtfs_reader(path):
    path = Path(path)
    if path.is_dir():
        def get(name):
            p = path / f"{name}.txt"
            return p.read_text(encoding="utf-8-sig") if p.exists() else None
        return get
    if path.is_file() and zipfile.is_zipfile(path):
        zf = zipfile.ZipFile(path)
        names = {Path(n).name: n for n in zf.namelist()}

        def get(name):
            n = names.get(f"{name}.txt")
            return zf.read(n).decode("utf-8-sig") if n else None
        return get
    raise MissingTable("stops", str(path))


def parse_gtfs(path):
    """Parse and validate a GTFS feed from a directory or zip archive."""
    get = _gtfs_reader(path)
    texts = {}
    for name in GTFS_REQUIRED + ("calendar", "calendar_dates", "transfers"):
        texts[name] = get(name)
    for name in GTFS_REQUIRED:
        if texts[name] is None:
            raise MissingTable(name, str(path))
    if texts["calendar"] is None and texts["calendar_dates"] is None:
        raise MissingTable("calendar", str(path))

    def rows(name, needed):
        fields, rs = _read_rows(texts[name], f"{path}/{name}.txt")
        _require(fields, needed, f"{name}.txt")
        return rs

    stops = []
    for i, r in enumerate(rows("stops", ("stop_id", "stop_lat", "stop_lon")), start=2):
        where = f"stops.txt:{i}"
        lat, lon = _float(r["stop_lat"], where, "stop_lat"), _float(r["stop_lon"], where, "stop_lon")
        _check_coord(lat, lon, where)
        stops.append(Stop(r["stop_id"], r.get("stop_name", ""), lat, lon))
    routes = [
        Route(r["route_id"], r.get("route_short_name", ""), _int(r.get("route_type") or 3, f"routes.txt:{i}", "route_type"))
        for i, r in enumerate(rows("routes", ("route_id",)), start=2)
    ]
    trips = [Trip(r["trip_id"], r["route_id"], r["service_id"]) for r in rows("trips", ("trip_id", "route_id", "service_id"))]

    raw_st = []
    for i, r in enumerate(rows("stop_times", ("trip_id", "stop_id", "stop_sequence")), start=2):
        where = f"stop_times.txt:{i}"
        arr_s, dep_s = r.get("arrival_time", ""), r.get("departure_time", "")
        if not arr_s and not dep_s:
            raise BadValue(f"{where}: trip {r['trip_id']!r} has a stop without times")
        arr = parse_gtfs_time(arr_s or dep_s, where)
        dep = parse_gtfs_time(dep_s or arr_s, where)
        raw_st.append(StopTime(r["trip_id"], arr, dep, r["stop_id"], _int(r["stop_sequence"], where, "stop_sequence")))

    calendar = []
    if texts["calendar"] is not None:
        day_cols = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
        for i, r in enumerate(rows("calendar", ("service_id", "start_date", "end_date") + day_cols), start=2):
            where = f"calendar.txt:{i}"
            calendar.append(Calendar(
                r["service_id"],
                tuple(r[d] == "1" for d in day_cols),
                parse_date(r["start_date"], where),
                parse_date(r["end_date"], where),
            ))
    calendar_dates = []
    if texts["calendar_dates"] is not None:
        for i, r in enumerate(rows("calendar_dates", ("service_id", "date", "exception_type")), start=2):
            where = f"calendar_dates.txt:{i}"
            calendar_dates.append(CalendarDate(r["service_id"], parse_date(r["date"], where), _int(r["exception_type"], where, "exception_type")))
    transfers = []
    if texts["transfers"] is not None:
        for i, r in enumerate(rows("transfers", ("from_stop_id", "to_stop_id", "transfer_type")), start=2):
            where = f"transfers.txt:{i}"
            mtt = r.get("min_transfer_time", "")
            transfers.append(Transfer(
                r["from_stop_id"], r["to_stop_id"], _int(r["transfer_type"] or 0, where, "transfer_type"),
                _int(mtt, where, "min_transfer_time") if mtt else None,
            ))

    # order stop_times by trip file order, then stop_sequence
    trip_pos = {t.trip_id: k for k, t in enumerate(trips)}
    for st in raw_st:
        if st.trip_id not in trip_pos:
            raise DanglingReference(st.trip_id, "trip", "stop_times.txt")
    raw_st.sort(key=lambda s: (trip_pos[s.trip_id], s.stop_sequence))

    bundle = GtfsBundle(
        stops=tuple(stops), routes=tuple(routes), trips=tuple(trips), stop_times=tuple(raw_st),
        calendar=tuple(calendar), calendar_dates=tuple(calendar_dates), transfers=tuple(transfers),
    )
    bundle.validate()
    log.info("parsed GTFS %s: %s", path, bundle.counts())
    return bundle


def _validate_gtfs(b):
    stop_ids = set()
    for s in b.stops:
        if s.stop_id in stop_ids:
            raise BadValue(f"duplicate stop_id {s.stop_id!r}")
        stop_ids.add(s.stop_id)
        _check_coord(s.lat, s.lon, f"stop {s.stop_id!r}")
    route_ids = {r.route_id for r in b.routes}
    services = {c.service_id for c in b.calendar} | {c.service_id for c in b.calendar_dates}
    trip_ids = set()
    for t in b.trips:
        if t.trip_id in trip_ids:
            raise BadValue(f"duplicate trip_id {t.trip_id!r}")
        trip_ids.add(t.trip_id)
        if t.route_id not in route_ids:
            raise DanglingReference(t.route_id, "route", f"trip {t.trip_id!r}")
        if t.service_id not in services:
            raise DanglingReference(t.service_id, "service", f"trip {t.trip_id!r}")
    for tr in b.transfers:
        for sid in (tr.from_stop_id, tr.to_stop_id):
            if sid not in stop_ids:
                raise DanglingReference(sid, "stop", "transfers.txt")
    by_trip = {}
    for st in b.stop_times:
        if st.trip_id not in trip_ids:
            raise DanglingReference(st.trip_id, "trip", "stop_times.txt")
        if st.stop_id not in stop_ids:
            raise DanglingReference(st.stop_id, "stop", f"stop_times of trip {st.trip_id!r}")
        by_trip.setdefault(st.trip_id, []).append(st)
    for tid, sts in by_trip.items():
        prev = None
        for st in sts:
            if st.departure < st.arrival:
                raise NonMonotoneStopTimes(tid, f"departure before arrival at sequence {st.stop_sequence}")
            if prev is not None:
                if st.stop_sequence <= prev.stop_sequence:
                    raise NonMonotoneStopTimes(tid, f"stop_sequence {st.stop_sequence} not increasing")
                if st.arrival < prev.departure:
                    raise NonMonotoneStopTimes(tid, f"time decreases at sequence {st.stop_sequence}")
            prev = st


def write_gtfs(bundle, directory):
    """Serialise a bundle as a GTFS directory (inverse of ``parse_gtfs``)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)

    def dump(name, header, rows):
        with open(d / f"{name}.txt", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    dump("stops", ("stop_id", "stop_name", "stop_lat", "stop_lon"),
         [(s.stop_id, s.name, repr(s.lat), repr(s.lon)) for s in bundle.stops])
    dump("routes", ("route_id", "route_short_name", "route_type"),
         [(r.route_id, r.short_name, r.route_type) for r in bundle.routes])
    dump("trips", ("route_id", "service_id", "trip_id"),
         [(t.route_id, t.service_id, t.trip_id) for t in bundle.trips])
    dump("stop_times", ("trip_id", "arrival_time", "departure_time", "stop_id", "stop_sequence"),
         [(s.trip_id, format_gtfs_time(s.arrival), format_gtfs_time(s.departure), s.stop_id, s.stop_sequence)
          for s in bundle.stop_times])
    if bundle.calendar:
        dump("calendar", ("service_id", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday",
                          "sunday", "start_date", "end_date"),
             [(c.service_id, *(int(x) for x in c.days), c.start_date.strftime("%Y%m%d"), c.end_date.strftime("%Y%m%d"))
              for c in bundle.calendar])
    if bundle.calendar_dates:
        dump("calendar_dates", ("service_id", "date", "exception_type"),
             [(c.service_id, c.date.strftime("%Y%m%d"), c.exception_type) for c in bundle.calendar_dates])
    if bundle.transfers:
        dump("transfers", ("from_stop_id", "to_stop_id", "transfer_type", "min_transfer_time"),
             [(t.from_stop_id, t.to_stop_id, t.transfer_type, "" if t.min_transfer_time is None else t.min_transfer_time)
              for t in bundle.transfers])
    return d


# ---------------------------------------------------------------------------
# road network
# ---------------------------------------------------------------------------


def parse_roads(nodes_path, edges_path):
    fields, rows = read_table(nodes_path)
    _require(fields, ("node_id", "lat", "lon"), "roads_nodes.csv")
    nodes = []
    for i, r in enumerate(rows, start=2):
        where = f"{Path(nodes_path).name}:{i}"
        lat, lon = _float(r["lat"], where, "lat"), _float(r["lon"], where, "lon")
        _check_coord(lat, lon, where)
        nodes.append(RoadNode(r["node_id"], lat, lon))
    fields, rows = read_table(edges_path)
    _require(fields, ("from_node", "to_node", "length_m", "speed_kmh", "modes"), "roads_edges.csv")
    edges = []
    for i, r in enumerate(rows, start=2):
        where = f"{Path(edges_path).name}:{i}"
        modes = frozenset(m for m in r["modes"].replace(";", "|").split("|") if m)
        edges.append(RoadEdge(r["from_node"], r["to_node"], _float(r["length_m"], where, "length_m"),
                              _float(r["speed_kmh"], where, "speed_kmh"), modes))
    src = RoadGraphSource(tuple(nodes), tuple(edges))
    try:
        src.validate()
    except BadValue as exc:
        raise BadValue(f"{edges_path}: {exc}") from None
    log.info("parsed road graph: %d nodes, %d edges", len(nodes), len(edges))
    return src


def write_roads(src, nodes_path, edges_path):
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("node_id", "lat", "lon"))
        w.writerows((n.node_id, repr(n.lat), repr(n.lon)) for n in src.nodes)
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("from_node", "to_node", "length_m", "speed_kmh", "modes"))
        w.writerows((e.from_node, e.to_node, repr(e.length_m), repr(e.speed_kmh), "|".join(sorted(e.modes)))
                    for e in src.edges)


# ---------------------------------------------------------------------------
# POIs
# ---------------------------------------------------------------------------


def parse_pois(path, confidence_threshold=0.7, keep_all_categories=False):
    """Read POIs and keep social/leisure ones with confidence above the threshold.

    The comparison is strict: a POI whose confidence equals the threshold is
    dropped.
    """
    if not 0 <= confidence_threshold <= 1:
        raise BadValue(f"confidence threshold must lie in [0, 1], got {confidence_threshold}")
    fields, rows = read_table(path)
    _require(fields, ("poi_id", "lat", "lon", "category", "confidence"), "pois.csv")
    out = []
    for i, r in enumerate(rows, start=2):
        where = f"{Path(path).name}:{i}"
        lat, lon = _float(r["lat"], where, "lat"), _float(r["lon"], where, "lon")
        _check_coord(lat, lon, where)
        conf = _float(r["confidence"], where, "confidence")
        if not 0 <= conf <= 1:
            raise BadValue(f"{where}: confidence {conf} outside [0, 1]")
        cat = r["category"].strip().lower()
        if cat not in POI_CATEGORIES:
            raise UnknownLevel(f"{where}: unknown POI category {r['category']!r}")
        if conf > confidence_threshold and (keep_all_categories or cat == "social_leisure"):
            out.append(Poi(r["poi_id"], lat, lon, cat, conf))
    log.info("kept %d of %d POIs (confidence > %s)", len(out), len(rows), confidence_threshold)
    return out


def write_pois(pois, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("poi_id", "lat", "lon", "category", "confidence"))
        w.writerows((p.poi_id, repr(p.lat), repr(p.lon), p.category, repr(p.confidence)) for p in pois)


# ---------------------------------------------------------------------------
# persons, trips, days
# ---------------------------------------------------------------------------


def _cell_or_bin(row, prefix, where, index, cells_from):
    if cells_from == "coords":
        lat_s, lon_s = row.get(f"{prefix}_lat", ""), row.get(f"{prefix}_lon", "")
        if not lat_s or not lon_s:
            raise MissingAnchor(f"{where}: missing {prefix} coordinates")
        lat, lon = _float(lat_s, where, f"{prefix}_lat"), _float(lon_s, where, f"{prefix}_lon")
        _check_coord(lat, lon, where)
        return index.bin_point(lat, lon, "fine")
    token = row.get(f"{prefix}_cell", "")
    if not token:
        raise MissingAnchor(f"{where}: missing {prefix}_cell")
    if index is not None:
        try:
            res = index.resolution(token)
        except UnknownCell:
            raise UnknownCell(f"{where}: unknown {prefix} cell {token!r}") from None
        if res != "fine":
            raise UnknownCell(f"{where}: {prefix} cell {token!r} is not a fine cell")
    return token


def parse_persons(path, index=None, cells_from="tokens"):
    """Read persons with anchors, survey weight and categorical attributes.

    ``cells_from`` selects whether anchors come as fine-cell tokens
    (``home_cell``/``work_cell``) or as coordinates binned with ``index``.
    """
    if cells_from not in ("tokens", "coords"):
        raise BadValue(f"cells_from must be 'tokens' or 'coords', got {cells_from!r}")
    fields, rows = read_table(path)
    anchor_cols = ("home_cell", "work_cell") if cells_from == "tokens" else ("home_lat", "home_lon", "work_lat", "work_lon")
    _require(fields, ("person_id", "weight") + anchor_cols + PERSON_ATTRIBUTES, Path(path).name)
    out = []
    seen = set()
    for i, r in enumerate(rows, start=2):
        where = f"{Path(path).name}:{i}"
        pid = r["person_id"]
        if not pid:
            raise BadValue(f"{where}: empty person_id")
        if pid in seen:
            raise BadValue(f"{where}: duplicate person_id {pid!r}")
        seen.add(pid)
        weight = _float(r["weight"], where, "weight")
        if not (weight > 0 and math.isfinite(weight)):
            raise BadWeight(f"{where}: nonpositive weight {r['weight']!r} for person {pid!r}")
        home = _cell_or_bin(r, "home", where, index, cells_from)
        work = _cell_or_bin(r, "work", where, index, cells_from)
        attrs = {}
        for a in VOCABULARIES:
            try:
                attrs[a] = canonical_level(a, r[a])
            except UnknownLevel as exc:
                raise UnknownLevel(f"{where}: {exc}") from None
        for a in NUMERIC_ATTRIBUTES:
            attrs[a] = _float(r[a], where, a) if r[a] else None
        out.append(PersonRecord(pid, home, work, weight, attrs).validate())
    log.info("parsed %d persons", len(out))
    return out


def write_persons(persons, path):
    header = ("person_id", "home_cell", "work_cell", "weight") + PERSON_ATTRIBUTES
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for p in persons:
            vals = [p.attributes.get(a) for a in PERSON_ATTRIBUTES]
            vals = ["" if v is None else (repr(v) if isinstance(v, float) else v) for v in vals]
            w.writerow((p.person_id, p.home_cell, p.work_cell, repr(p.weight), *vals))


def parse_trips(path, index=None):
    fields, rows = read_table(path)
    needed = ("person_id", "date", "origin_cell", "dest_cell", "mode", "purpose", "duration_min", "depart_time")
    _require(fields, needed, Path(path).name)
    out = []
    for i, r in enumerate(rows, start=2):
        where = f"{Path(path).name}:{i}"
        for col in ("origin_cell", "dest_cell"):
            if index is not None:
                try:
                    index.resolution(r[col])
                except UnknownCell:
                    raise UnknownCell(f"{where}: unknown cell {r[col]!r}") from None
        mode = r["mode"].strip().lower()
        purpose = r["purpose"].strip().upper()
        if mode not in TRIP_MODES:
            raise UnknownLevel(f"{where}: unknown trip mode {r['mode']!r}")
        if purpose not in TRIP_PURPOSES:
            raise UnknownLevel(f"{where}: unknown trip purpose {r['purpose']!r}")
        dur = _float(r["duration_min"], where, "duration_min")
        if not (dur >= 0 and math.isfinite(dur)):
            raise BadValue(f"{where}: duration_min must be nonnegative")
        dw = _float(r.get("day_weight") or 1.0, where, "day_weight")
        if not dw > 0:
            raise BadWeight(f"{where}: day_weight must be positive")
        out.append(TripRecord(
            r["person_id"], parse_date(r["date"], where), r["origin_cell"], r["dest_cell"], mode, purpose,
            dur, _int(r["depart_time"], where, "depart_time"), dw,
        ))
    log.info("parsed %d trips", len(out))
    return out


def write_trips(trips, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("person_id", "date", "origin_cell", "dest_cell", "mode", "purpose", "duration_min",
                    "depart_time", "day_weight"))
        w.writerows((t.person_id, t.date.isoformat(), t.origin_cell, t.dest_cell, t.mode, t.purpose,
                     repr(t.duration_min), t.depart_time, repr(t.day_weight)) for t in trips)


def parse_days(path):
    fields, rows = read_table(path)
    _require(fields, ("person_id", "date"), Path(path).name)
    out = []
    for i, r in enumerate(rows, start=2):
        where = f"{Path(path).name}:{i}"
        dw = _float(r.get("day_weight") or 1.0, where, "day_weight")
        if not dw > 0:
            raise BadWeight(f"{where}: day_weight must be positive")
        out.append(DayRecord(r["person_id"], parse_date(r["date"], where), dw))
    return out


def write_days(days, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("person_id", "date", "day_weight"))
        w.writerows((d.person_id, d.date.isoformat(), repr(d.day_weight)) for d in days)


def attach_commutes(persons, trips):
    """Fill each person's commute samples from observed home -> work trips."""
    samples = {}
    for t in trips:
        samples.setdefault(t.person_id, []).append(t)
    out = []
    for p in persons:
        cs = tuple(
            (t.duration_min, t.day_weight)
            for t in samples.get(p.person_id, ())
            if t.purpose == "WORK" and t.origin_cell == p.home_cell and t.dest_cell == p.work_cell
        )
        out.append(replace(p, commute_samples=cs))
    return out
