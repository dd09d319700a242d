"""Synthetic cities, populations and diaries with known ground truth.

Also holds the reference implementations used to check the main engines:

* ``OracleRouter`` answers walk, car and transit queries straight from the
  raw road edges and GTFS stop times.  Car uses Bellman-Ford; transit is a
  Dijkstra over (stop, rides used) and (trip, boarding position) states, so
  it shares no code with the round-based search.
* ``oracle_spa`` checks every POI against the budget condition one by one
  and ranks cells by counting.
* ``exact_selectivity_p`` enumerates every subset of ranks.
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import heapq
import itertools
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .access import BudgetSpec, FeasibleEntry, FeasibleSet
from .behavior import VisitSet
from .ingest import (
    Calendar, GtfsBundle, Poi, PersonRecord, RoadEdge, RoadGraphSource, RoadNode, Route, Stop, StopTime,
    Transfer, Trip, TripRecord, DayRecord, VOCABULARIES,
)
from .router import DEFAULT_DEPART_S, edge_ms, walk_limit_ms
from .spatial import EARTH_RADIUS_M, BBox, haversine_m

ANALYSIS_DATE = dt.date(2024, 3, 12)  # a Tuesday


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of a synthetic instance.  Every output is a function of these."""

    rows: int = 8
    cols: int = 8
    spacing_m: float = 400.0
    origin_lat: float = 48.80
    origin_lon: float = 2.30
    car_speeds: tuple = (30.0, 50.0)
    one_way_share: float = 0.0
    n_lines: int = 4
    stop_every: int = 1
    headway_s: int = 600
    service_start_s: int = 16 * 3600
    service_end_s: int = 20 * 3600
    bus_kmh: float = 20.0
    dwell_s: int = 20
    express: bool = True
    weekend_service: bool = True
    n_transfers: int = 2
    n_pois: int = 200
    n_clusters: int = 4
    cluster_sd_m: float = 500.0
    n_persons: int = 300
    car_share: float = 0.45
    days: int = 2
    no_commute_share: float = 0.05
    world: str = "selective"
    rank_bias: float = 0.6
    outside_share: float = 0.2
    date: dt.date = ANALYSIS_DATE
    seed: int = 0

    def __post_init__(self):
        for name in ("rows", "cols", "n_lines", "stop_every", "headway_s", "n_clusters", "n_persons", "days"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_pois < 0:
            raise ValueError("n_pois must be nonnegative")
        if self.world not in ("null", "selective"):
            raise ValueError(f"unknown world {self.world!r}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["date"] = self.date.isoformat()
        d["car_speeds"] = list(self.car_speeds)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "date" in d and isinstance(d["date"], str):
            d["date"] = dt.date.fromisoformat(d["date"])
        if "car_speeds" in d:
            d["car_speeds"] = tuple(d["car_speeds"])
        return cls(**d)


def spec_rng(spec, stream):
    """Independent generator per (seed, stream name)."""
    key = [int(spec.seed) & 0xFFFFFFFF, sum(ord(c) << (8 * (i % 4)) for i, c in enumerate(stream)) & 0xFFFFFFFF]
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# city
# ---------------------------------------------------------------------------


@dataclass
class City:
    spec: SynthSpec
    road: RoadGraphSource
    gtfs: GtfsBundle
    pois: list
    bbox: BBox

    @property
    def leisure_pois(self):
        return [p for p in self.pois if p.category == "social_leisure" and p.confidence > 0.7]


def _offset(spec, north_m, east_m):
    lat0 = spec.origin_lat
    lat = lat0 + math.degrees(north_m / EARTH_RADIUS_M)
    lon = spec.origin_lon + math.degrees(east_m / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def _grid_extent(spec):
    return (spec.rows - 1) * spec.spacing_m, (spec.cols - 1) * spec.spacing_m


def city_bbox(spec, pad_m=600.0):
    h, w = _grid_extent(spec)
    lat_a, lon_a = _offset(spec, -pad_m, -pad_m)
    lat_b, lon_b = _offset(spec, h + pad_m, w + pad_m)
    return BBox(lat_a, lon_a, lat_b, lon_b)


def _node_id(r, c):
    return f"n{r}_{c}"


def gen_roads(spec, rng):
    nodes = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            lat, lon = _offset(spec, r * spec.spacing_m, c * spec.spacing_m)
            nodes.append(RoadNode(_node_id(r, c), lat, lon))
    pos = {n.node_id: (n.lat, n.lon) for n in nodes}
    edges = []
    pairs = []
    for r in range(spec.rows):
        for c in range(spec.cols):
            if c + 1 < spec.cols:
                pairs.append((_node_id(r, c), _node_id(r, c + 1)))
            if r + 1 < spec.rows:
                pairs.append((_node_id(r, c), _node_id(r + 1, c)))
    both = frozenset({"car", "walk"})
    for a, b in pairs:
        length = haversine_m(pos[a], pos[b])
        speed = float(rng.choice(spec.car_speeds))
        one_way = rng.random() < spec.one_way_share
        edges.append(RoadEdge(a, b, length, speed, both))
        edges.append(RoadEdge(b, a, length, speed, frozenset({"walk"}) if one_way else both))
    return RoadGraphSource(tuple(nodes), tuple(edges))


def _line_path(spec, rng, straight=False):
    kind = 0 if straight else rng.integers(3)
    if kind == 0:
        r = int(rng.integers(spec.rows))
        path = [(r, c) for c in range(spec.cols)]
    elif kind == 1:
        c = int(rng.integers(spec.cols))
        path = [(r, c) for r in range(spec.rows)]
    else:
        r = int(rng.integers(spec.rows // 2 + 1))
        c = int(rng.integers(spec.cols // 2, spec.cols))
        path = [(r, cc) for cc in range(0, c + 1)] + [(rr, c) for rr in range(r + 1, spec.rows)]
    if rng.random() < 0.5:
        path.reverse()
    thinned = path[:: spec.stop_every]
    return thinned if len(thinned) >= 2 else path


def _trip_times(spec, coords, start, speed_kmh, dwell):
    arr, dep = [start], [start]
    t = start
    for a, b in zip(coords, coords[1:]):
        run = max(1, int(round(haversine_m(a, b) / (speed_kmh / 3.6))))
        t += run
        arr.append(t)
        t += dwell
        dep.append(t)
    dep[-1] = arr[-1]
    return arr, dep


def gen_gtfs(spec, rng):
    stops, routes, trips, stop_times = [], [], [], []
    transfers = []
    for li in range(spec.n_lines):
        path = _line_path(spec, rng, straight=(li == 0))
        rid = f"L{li}"
        routes.append(Route(rid, f"Line {li}", 3))
        sids = []
        for k, (r, c) in enumerate(path):
            lat, lon = _offset(spec, r * spec.spacing_m + 15.0, c * spec.spacing_m + 15.0 * (li + 1) / spec.n_lines)
            sid = f"S{li}_{k}"
            stops.append(Stop(sid, f"{rid} stop {k}", lat, lon))
            sids.append((sid, (lat, lon)))
        offset = int(rng.integers(spec.headway_s))
        for direction in (0, 1):
            seq = sids if direction == 0 else sids[::-1]
            coords = [p for _, p in seq]
            t0 = spec.service_start_s + offset + direction * (spec.headway_s // 3)
            k = 0
            while t0 <= spec.service_end_s:
                tid = f"{rid}_{direction}_{k:03d}"
                trips.append(Trip(tid, rid, "WK"))
                arr, dep = _trip_times(spec, coords, t0, spec.bus_kmh, spec.dwell_s)
                stop_times += [StopTime(tid, a, d, s, i + 1) for i, ((s, _), a, d) in enumerate(zip(seq, arr, dep))]
                if spec.express and li == 0 and direction == 0 and k % 2 == 0:
                    xid = f"{rid}_{direction}_{k:03d}x"
                    trips.append(Trip(xid, rid, "WK"))
                    arr, dep = _trip_times(spec, coords, t0 + spec.headway_s // 10, spec.bus_kmh * 3.0, 0)
                    stop_times += [StopTime(xid, a, d, s, i + 1) for i, ((s, _), a, d) in enumerate(zip(seq, arr, dep))]
                if spec.weekend_service and k % 3 == 0:
                    wid = f"{rid}_{direction}_{k:03d}w"
                    trips.append(Trip(wid, rid, "WE"))
                    arr, dep = _trip_times(spec, coords, t0 + 60, spec.bus_kmh, spec.dwell_s)
                    stop_times += [StopTime(wid, a, d, s, i + 1) for i, ((s, _), a, d) in enumerate(zip(seq, arr, dep))]
                t0 += spec.headway_s
                k += 1
    stop_ids = [s.stop_id for s in stops]
    for _ in range(spec.n_transfers if len(stops) > 1 else 0):
        a, b = rng.choice(len(stop_ids), size=2, replace=False)
        transfers.append(Transfer(stop_ids[a], stop_ids[b], 2, int(rng.integers(60, 301))))
    year = spec.date.year
    calendar = [Calendar("WK", (True,) * 5 + (False,) * 2, dt.date(year, 1, 1), dt.date(year, 12, 31))]
    if spec.weekend_service:
        calendar.append(Calendar("WE", (False,) * 5 + (True,) * 2, dt.date(year, 1, 1), dt.date(year, 12, 31)))
    order = {t.trip_id: i for i, t in enumerate(trips)}
    stop_times.sort(key=lambda s: (order[s.trip_id], s.stop_sequence))
    return GtfsBundle(tuple(stops), tuple(routes), tuple(trips), tuple(stop_times), tuple(calendar), (),
                      tuple(transfers)).validate()


def gen_pois(spec, rng):
    h, w = _grid_extent(spec)
    centers = np.column_stack([rng.uniform(0, h, spec.n_clusters), rng.uniform(0, w, spec.n_clusters)])
    out = []
    i = 0
    while len(out) < spec.n_pois:
        c = centers[rng.integers(spec.n_clusters)]
        y, x = rng.normal(c, spec.cluster_sd_m)
        if not (0 <= y <= h and 0 <= x <= w):
            continue
        lat, lon = _offset(spec, y, x)
        cat = "social_leisure" if rng.random() < 0.9 else "other"
        conf = round(float(rng.uniform(0.4, 1.0)), 3)
        out.append(Poi(f"P{i:05d}", lat, lon, cat, conf))
        i += 1
    return out


def gen_city(spec):
    """Grid roads (both directions, car and walk), bus lines, clustered POIs."""
    road = gen_roads(spec, spec_rng(spec, "roads")).validate()
    gtfs = gen_gtfs(spec, spec_rng(spec, "gtfs"))
    pois = gen_pois(spec, spec_rng(spec, "pois"))
    return City(spec, road, gtfs, pois, city_bbox(spec))


def random_point(spec, rng):
    h, w = _grid_extent(spec)
    return _offset(spec, float(rng.uniform(0, h)), float(rng.uniform(0, w)))


# ---------------------------------------------------------------------------
# reference router
# ---------------------------------------------------------------------------


class OracleRouter:
    """Reference travel times from raw road edges and GTFS rows.

    Uses the same conventions as the main engine (integer milliseconds,
    nearest-node snapping with ties to the lowest node, a walking radius
    for access, egress and transfers, a cap on rides) but implements them
    with textbook algorithms.
    """

    def __init__(self, road, bundle=None, date=None, walk_kmh=4.8, snap_radius_m=500.0, max_walk_m=1000.0,
                 max_transfers=5):
        self.nodes = list(road.nodes)
        self.idx = {n.node_id: i for i, n in enumerate(self.nodes)}
        self.snap_radius_m = snap_radius_m
        self.limit = walk_limit_ms(max_walk_m, walk_kmh)
        self.max_rides = max_transfers + 1
        self.car_edges = []
        self.walk_out = defaultdict(dict)
        self.walk_in = defaultdict(dict)
        for e in road.edges:
            u, v = self.idx[e.from_node], self.idx[e.to_node]
            if "car" in e.modes:
                self.car_edges.append((u, v, edge_ms(e.length_m, e.speed_kmh)))
            if "walk" in e.modes:
                w = edge_ms(e.length_m, walk_kmh)
                if w < self.walk_out[u].get(v, math.inf):
                    self.walk_out[u][v] = w
                    self.walk_in[v][u] = w
        self.stops = []
        self.boarding = defaultdict(list)
        self.trips = []
        if bundle is not None:
            self._load_transit(bundle, date)

    def snap(self, lat, lon):
        best = None
        for i, n in enumerate(self.nodes):
            d = haversine_m((lat, lon), (n.lat, n.lon))
            if best is None or d < best[0]:
                best = (d, i)
        if best is None or best[0] > self.snap_radius_m:
            return None
        return best[1]

    def walk_from(self, node, reverse=False, limit=None):
        adj = self.walk_in if reverse else self.walk_out
        limit = self.limit if limit is None else limit
        dist = {node: 0}
        heap = [(0, node)]
        done = set()
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            done.add(u)
            for v, w in adj[u].items():
                nd = d + w
                if nd <= limit and nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def car_from(self, node):
        """Bellman-Ford over car edges (ms, ``inf`` unreachable)."""
        n = len(self.nodes)
        dist = np.full(n, np.inf)
        dist[node] = 0.0
        if not self.car_edges:
            return dist
        u = np.array([e[0] for e in self.car_edges])
        v = np.array([e[1] for e in self.car_edges])
        w = np.array([e[2] for e in self.car_edges], dtype=float)
        for _ in range(n - 1):
            cand = dist[u] + w
            new = dist.copy()
            np.minimum.at(new, v, cand)
            if np.array_equal(new, dist):
                break
            dist = new
        return dist

    def _load_transit(self, bundle, date):
        active = bundle.active_services(date)
        sidx = {s.stop_id: i for i, s in enumerate(bundle.stops)}
        self.stops = [self.snap(s.lat, s.lon) for s in bundle.stops]
        n = len(self.stops)
        links = defaultdict(dict)
        for i, node in enumerate(self.stops):
            if node is None:
                continue
            reach = self.walk_from(node)
            for j, other in enumerate(self.stops):
                if j != i and other is not None and other in reach:
                    links[i][j] = reach[other]
        for tr in bundle.transfers:
            i, j = sidx[tr.from_stop_id], sidx[tr.to_stop_id]
            if i == j:
                continue
            if tr.transfer_type == 3:
                links[i].pop(j, None)
            elif tr.min_transfer_time is not None:
                links[i][j] = tr.min_transfer_time * 1000
        self.links = {i: dict(links[i]) for i in range(n)}
        rows = defaultdict(list)
        for st in bundle.stop_times:
            rows[st.trip_id].append(st)
        for t in bundle.trips:
            if t.service_id not in active or len(rows[t.trip_id]) < 2:
                continue
            sts = sorted(rows[t.trip_id], key=lambda s: s.stop_sequence)
            ti = len(self.trips)
            self.trips.append(([sidx[s.stop_id] for s in sts], [s.arrival * 1000 for s in sts],
                               [s.departure * 1000 for s in sts]))
            for pos, s in enumerate(sts[:-1]):
                self.boarding[sidx[s.stop_id]].append((s.departure * 1000, ti, pos))
        for lst in self.boarding.values():
            lst.sort()

    def transit_from(self, origin, depart_ms, dests):
        """Earliest arrival minus departure (ms, ``inf`` unreachable) per destination node."""
        walk_o = self.walk_from(origin)
        egress = {d: self.walk_from(d, reverse=True) for d in set(dests)}
        heap = []
        for s, node in enumerate(self.stops):
            if node is not None and node in walk_o:
                heapq.heappush(heap, (depart_ms + walk_o[node], 0, s, 0))
        settled = {}
        boarded = defaultdict(dict)  # trip -> rides -> lowest boarding position
        while heap:
            t, kind, a, k = heapq.heappop(heap)
            if kind == 0:
                if (a, k) in settled:
                    continue
                settled[(a, k)] = t
                for q, w in self.links.get(a, {}).items():
                    if (q, k) not in settled:
                        heapq.heappush(heap, (t + w, 0, q, k))
                if k < self.max_rides:
                    lst = self.boarding.get(a, [])
                    for dep, ti, pos in lst[_bisect_first(lst, t):]:
                        heapq.heappush(heap, (dep, 1, (ti, pos), k + 1))
            else:
                ti, pos = a
                if any(kk <= k and p <= pos for kk, p in boarded[ti].items()):
                    continue
                boarded[ti][k] = pos
                stops, arr, _ = self.trips[ti]
                for p in range(pos + 1, len(stops)):
                    if (stops[p], k) not in settled:
                        heapq.heappush(heap, (arr[p], 0, stops[p], k))
        best_at = {}
        for (s, _), t in settled.items():
            if t < best_at.get(s, math.inf):
                best_at[s] = t
        out = []
        for d in dests:
            best = depart_ms + walk_o[d] if d in walk_o else math.inf
            for s, t in best_at.items():
                node = self.stops[s]
                if node in egress[d]:
                    best = min(best, t + egress[d][node])
            out.append(best - depart_ms)
        return out

    def times_from(self, mode, origin, depart_ms, dests):
        if mode == "car":
            row = self.car_from(origin)
            return [row[d] for d in dests]
        return self.transit_from(origin, depart_ms, dests)


def _bisect_first(lst, t):
    lo, hi = 0, len(lst)
    while lo < hi:
        mid = (lo + hi) // 2
        if lst[mid][0] < t:
            lo = mid + 1
        else:
            hi = mid
    return lo


def oracle_spa(person_id, pois, router, budget=BudgetSpec(), *, mode, t_hw_min, home, work, poi_cells,
               cache=None):
    """Exhaustive feasible set: test every POI, then rank cells by counting.

    ``home`` and ``work`` are coordinates; ``cache`` (a dict) memoises
    routed rows between calls on the same router.
    """
    cache = {} if cache is None else cache
    depart_ms = budget.depart * 1000
    h, w = router.snap(*home), router.snap(*work)
    nodes = [router.snap(p.lat, p.lon) for p in pois]

    def row(origin, dests):
        key = (mode, origin, tuple(dests))
        if key not in cache:
            cache[key] = router.times_from(mode, origin, depart_ms, list(dests))
        return cache[key]

    ok = [nd for nd in nodes if nd is not None]
    wk = dict(zip(ok, row(w, ok))) if w is not None else {}
    best, count = {}, {}
    for p, nd in zip(pois, nodes):
        if nd is None or h is None or w is None:
            continue
        a = wk[nd]
        b = row(nd, (h,))[0]
        if not (math.isfinite(a) and math.isfinite(b)):
            continue
        remaining = budget.tb_min - t_hw_min - (float(a) / 1000.0) / 60.0 - (float(b) / 1000.0) / 60.0
        if remaining >= 0 and t_hw_min <= budget.tb_min:
            c = poi_cells[p.poi_id]
            count[c] = count.get(c, 0) + 1
            best[c] = max(best.get(c, -math.inf), remaining)
    entries = []
    for c in best:
        rank = 1 + sum(1 for o in best if best[o] > best[c] or (best[o] == best[c] and o < c))
        entries.append(FeasibleEntry(c, best[c], count[c], rank))
    entries.sort(key=lambda e: e.rank)
    return FeasibleSet(person_id, mode, float(t_hw_min), tuple(entries), sum(count.values()))


# ---------------------------------------------------------------------------
# selectivity worlds
# ---------------------------------------------------------------------------


def exact_selectivity_p(N, visited_ranks):
    """Share of all k-subsets of ``1..N`` whose rank sum is at most the observed one."""
    k = len(visited_ranks)
    s = sum(visited_ranks)
    sums = [sum(c) for c in itertools.combinations(range(1, N + 1), k)]
    return sum(1 for x in sums if x <= s) / len(sums)


def synthetic_feasible_set(person_id, N, rng, mode="car"):
    scores = np.sort(rng.uniform(0, 60, N))[::-1]
    entries = tuple(FeasibleEntry(f"8:{i}:0", float(sc), 1, i + 1) for i, sc in enumerate(scores))
    return FeasibleSet(person_id, mode, 30.0, entries, N)


def draw_visits(spa, rng, k, world="null", bias=0.6, outside=(), max_count=3):
    """Visit set with ``k`` distinct feasible cells plus the ``outside`` cells.

    In the null world cells are drawn uniformly without replacement; in the
    selective world cell ranks are drawn sequentially with weight
    ``bias ** (rank - 1)``.
    """
    cells = [e.coarse_cell for e in spa.entries]
    k = min(k, len(cells))
    if world == "null":
        picked = list(rng.choice(len(cells), size=k, replace=False)) if k else []
    else:
        w = bias ** np.arange(len(cells), dtype=float)
        picked = []
        for _ in range(k):
            p = w / w.sum()
            i = int(rng.choice(len(cells), p=p))
            picked.append(i)
            w[i] = 0.0
    chosen = [cells[i] for i in picked] + list(outside)
    visits = []
    for c in chosen:
        visits += [c] * int(rng.integers(1, max_count + 1))
    return VisitSet.from_cells(spa.person_id, visits)


def gen_null_sets(n_persons, seed=0, N_range=(40, 120), k_range=(2, 6), world="null", bias=0.6):
    """Synthetic (FeasibleSet, VisitSet) pairs without any routing."""
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0x5E1EC7]))
    out = []
    for i in range(n_persons):
        N = int(rng.integers(N_range[0], N_range[1] + 1))
        k = int(rng.integers(k_range[0], k_range[1] + 1))
        spa = synthetic_feasible_set(f"q{i:05d}", N, rng)
        n_out = int(rng.integers(0, 2))
        visits = draw_visits(spa, rng, k, world, bias, outside=[f"8:{-j - 1}:1" for j in range(n_out)])
        out.append((spa, visits))
    return out


def calibrate_share_weights(weights, mask, target_pct):
    """Rescale weights inside and outside ``mask`` so its weighted share is ``target_pct``."""
    w = np.asarray(weights, dtype=float).copy()
    m = np.asarray(mask, dtype=bool)
    if not (m.any() and (~m).any()):
        raise ValueError("mask must contain both groups")
    t = target_pct / 100.0
    w[m] *= t / w[m].sum()
    w[~m] *= (1 - t) / w[~m].sum()
    return w * (len(w) / w.sum())


# ---------------------------------------------------------------------------
# path model simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathTruth:
    """Generating model for attribute / mode / accessibility / trips / diversity data.

    Binary attributes are independent Bernoulli draws, continuous ones are
    standard normal with correlation ``rho``.  Mode variables are binary
    with a linear probability in the binary attributes, so the conditional
    mean is exactly linear.  The other three equations are linear with
    normal errors.
    """

    z_binary: dict = field(default_factory=lambda: {"hh_couple_kids": 0.30, "active_mode": 0.38})
    z_continuous: tuple = ("poverty_rate", "age")
    rho: float = 0.3
    m_intercept: dict = field(default_factory=lambda: {"car_main": 0.45, "pt_sub": 0.30})
    m_slopes: dict = field(default_factory=lambda: {
        "car_main": {"hh_couple_kids": 0.20, "active_mode": -0.25},
        "pt_sub": {"hh_couple_kids": -0.10, "active_mode": 0.30},
    })
    equations: dict = field(default_factory=lambda: {
        "A": {"hh_couple_kids": 0.10, "active_mode": 0.15, "poverty_rate": -0.20, "age": 0.05,
              "car_main": -0.40, "pt_sub": 0.30},
        "B": {"A": -0.35, "hh_couple_kids": 0.20, "active_mode": -0.10, "poverty_rate": 0.10, "age": 0.05,
              "car_main": 0.30, "pt_sub": 0.10},
        "H1": {"A": 0.13, "B": 0.23, "car_main": 0.05, "pt_sub": 0.10, "hh_couple_kids": 0.10,
               "active_mode": 0.20, "poverty_rate": -0.05, "age": 0.0},
    })
    residual_sd: dict = field(default_factory=lambda: {"A": 1.0, "B": 1.0, "H1": 1.0})

    @property
    def z(self):
        return list(self.z_binary) + list(self.z_continuous)

    @property
    def m(self):
        return list(self.m_intercept)

    @property
    def order(self):
        return self.z + self.m + ["A", "B", "H1"]

    def dag(self):
        from .pathmodel import fig6_dag

        return fig6_dag(self.z, self.m)

    def raw_matrix(self):
        """Coefficient matrix ``Bm[target, source]`` over ``order``."""
        order = self.order
        pos = {v: i for i, v in enumerate(order)}
        Bm = np.zeros((len(order), len(order)))
        for mv, slopes in self.m_slopes.items():
            for zv, b in slopes.items():
                Bm[pos[mv], pos[zv]] = b
        for tv, coefs in self.equations.items():
            for sv, b in coefs.items():
                Bm[pos[tv], pos[sv]] = b
        return Bm

    def population_cov(self):
        order = self.order
        pos = {v: i for i, v in enumerate(order)}
        p = len(order)
        psi = np.zeros((p, p))
        for zv, pr in self.z_binary.items():
            psi[pos[zv], pos[zv]] = pr * (1 - pr)
        zc = [pos[v] for v in self.z_continuous]
        for i in zc:
            for j in zc:
                psi[i, j] = 1.0 if i == j else self.rho
        zb = list(self.z_binary)
        for mv in self.m:
            ev = 0.0
            for combo in itertools.product((0, 1), repeat=len(zb)):
                prob = 1.0
                pm = self.m_intercept[mv]
                for zv, x in zip(zb, combo):
                    prob *= self.z_binary[zv] if x else 1 - self.z_binary[zv]
                    pm += self.m_slopes[mv].get(zv, 0.0) * x
                ev += prob * pm * (1 - pm)
            psi[pos[mv], pos[mv]] = ev
        for v, sd in self.residual_sd.items():
            psi[pos[v], pos[v]] = sd * sd
        inv = np.linalg.inv(np.eye(p) - self.raw_matrix())
        return inv @ psi @ inv.T

    def true_std(self):
        """Population standardized coefficient of every edge of the DAG."""
        order = self.order
        pos = {v: i for i, v in enumerate(order)}
        S = self.population_cov()
        Bm = self.raw_matrix()
        out = {}
        for s, t in self.dag().edges:
            out[(s, t)] = float(Bm[pos[t], pos[s]] * math.sqrt(S[pos[s], pos[s]] / S[pos[t], pos[t]]))
        return out

    def to_json(self):
        d = dataclasses.asdict(self)
        d["z_continuous"] = list(self.z_continuous)
        d["true_std"] = [{"source": s, "target": t, "value": v} for (s, t), v in self.true_std().items()]
        return d

    @classmethod
    def from_json(cls, d):
        d = {k: v for k, v in d.items() if k != "true_std"}
        d["z_continuous"] = tuple(d["z_continuous"])
        return cls(**d)


def simulate_path_data(n, seed, truth=None, weight_sd=0.5):
    """Draw ``n`` rows from ``truth``; returns (columns, survey weights)."""
    truth = truth or PathTruth()
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0xFA7A]))
    data = {}
    for zv, pr in truth.z_binary.items():
        data[zv] = (rng.random(n) < pr).astype(float)
    k = len(truth.z_continuous)
    cov = np.full((k, k), truth.rho)
    np.fill_diagonal(cov, 1.0)
    zc = rng.multivariate_normal(np.zeros(k), cov, size=n, method="cholesky")
    for j, v in enumerate(truth.z_continuous):
        data[v] = zc[:, j]
    for mv in truth.m:
        pm = np.full(n, truth.m_intercept[mv])
        for zv, b in truth.m_slopes[mv].items():
            pm = pm + b * data[zv]
        data[mv] = (rng.random(n) < pm).astype(float)
    for tv in ("A", "B", "H1"):
        mu = np.zeros(n)
        for sv, b in truth.equations[tv].items():
            mu = mu + b * data[sv]
        data[tv] = mu + rng.normal(0.0, truth.residual_sd[tv], n)
    weights = rng.lognormal(0.0, weight_sd, n)
    return data, weights


# ---------------------------------------------------------------------------
# population and diaries
# ---------------------------------------------------------------------------


def gen_persons(spec, index, rng=None):
    """Persons with anchors inside the grid, survey-style attributes and weights."""
    rng = rng or spec_rng(spec, "persons")
    levels = {a: list(v) for a, v in VOCABULARIES.items()}
    out = []
    for i in range(spec.n_persons):
        home = index.bin_point(*random_point(spec, rng), "fine")
        work = index.bin_point(*random_point(spec, rng), "fine")
        car = rng.random() < spec.car_share
        attrs = {
            "household_type": str(rng.choice(levels["household_type"])),
            "education": str(rng.choice(levels["education"])),
            "gender": "woman" if rng.random() < 0.5 else "man",
            "active_mode": "yes" if rng.random() < 0.379 else "no",
            "main_mode": "car" if car else "transit",
            "pt_subscription": "yes" if rng.random() < (0.25 if car else 0.8) else "no",
            "age": float(int(rng.integers(20, 65))),
            "poverty_rate": round(float(rng.uniform(5, 30)), 1),
        }
        weight = round(float(rng.lognormal(0.0, 0.4)), 4)
        out.append(PersonRecord(f"p{i:05d}", home, work, weight, attrs))
    return out


def _weekdays(start, n):
    days, d = [], start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def gen_population(spec, city, index, road_net, transit_net, budget=BudgetSpec(), workers=1):
    """Persons, diaries and day list for a synthetic city.

    Commute durations scatter around the routed work -> home time of each
    person's main mode.  Leisure visits go to POIs in the person's feasible
    cells, drawn uniformly (null world) or with a geometric preference for
    top-ranked cells (selective world); a share of visits lands outside the
    feasible set.  Returns ``(persons, trips, days, sets)``.
    """
    from .access import spa_population
    from .ingest import attach_commutes

    rng = spec_rng(spec, "diaries")
    persons = gen_persons(spec, index)
    pois = city.leisure_pois
    poi_fine = {p.poi_id: index.bin_point(p.lat, p.lon, "fine") for p in pois}
    by_coarse = defaultdict(list)
    for p in pois:
        by_coarse[index.parent(poi_fine[p.poi_id])].append(p.poi_id)
    all_fine = sorted(set(poi_fine.values()))

    # routed commutes from a first pass with the fallback enabled
    first = spa_population(persons, pois, road_net, transit_net, budget, index=index, workers=workers)
    dates = _weekdays(spec.date, spec.days + 1)
    trips, days = [], []
    for p, s in zip(persons, first.sets):
        base = s.t_hw_min if math.isfinite(s.t_hw_min) else 60.0
        observed = rng.random() >= spec.no_commute_share
        n_leisure = int(rng.poisson(2.0)) + 1
        k = max(1, n_leisure - int(rng.binomial(n_leisure, spec.outside_share)))
        if s.N:
            n_out = n_leisure - k
            out_cells = [index.parent(all_fine[int(rng.integers(len(all_fine)))]) for _ in range(n_out)]
            visits = draw_visits(s, rng, k, spec.world, spec.rank_bias, outside=out_cells, max_count=2)
        else:
            cells = [index.parent(all_fine[int(rng.integers(len(all_fine)))]) for _ in range(n_leisure)] if all_fine else []
            visits = VisitSet.from_cells(p.person_id, cells)
        leisure = []
        for c, cnt in visits.counts:
            ids = by_coarse.get(c)
            fine = poi_fine[ids[int(rng.integers(len(ids)))]] if ids else index.children(c)[0]
            leisure += [fine] * cnt
        rng.shuffle(leisure)
        mode = p.attributes["main_mode"]
        for di, date in enumerate(dates):
            day_w = 1.0
            days.append(DayRecord(p.person_id, date, day_w))
            if di == spec.days:  # trailing day with no travel
                continue
            dur = round(base * float(rng.uniform(0.85, 1.25)), 1)
            trips.append(TripRecord(p.person_id, date, p.home_cell, p.work_cell, mode, "WORK" if observed else "OTHER",
                                    dur, 8 * 3600 + int(rng.integers(0, 3600)), day_w))
            todays = leisure[di::spec.days]
            t = DEFAULT_DEPART_S
            here = p.work_cell
            for cell in todays:
                d = round(float(rng.uniform(5, 35)), 1)
                trips.append(TripRecord(p.person_id, date, here, cell, mode, "LEISURE", d, t, day_w))
                t += int(d * 60) + 3600
                here = cell
            trips.append(TripRecord(p.person_id, date, here, p.home_cell, mode, "HOME",
                                    round(base * float(rng.uniform(0.85, 1.3)), 1), t, day_w))
    persons = attach_commutes(persons, trips)
    return persons, trips, days, first.sets


def write_input_dir(spec, out, workers=1):
    """Write a complete input directory (data, GTFS, config, ground truth)."""
    from .ingest import write_days, write_gtfs, write_persons, write_pois, write_roads, write_trips
    from .pathmodel import fig6_dag
    from .router import RoadNetwork, build_transit
    from .spatial import HexLatticeIndex

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    city = gen_city(spec)
    index = HexLatticeIndex(city.bbox)
    road_net = RoadNetwork(city.road)
    transit_net = build_transit(city.gtfs, road_net, spec.date)
    persons, trips, days, _ = gen_population(spec, city, index, road_net, transit_net, workers=workers)
    write_roads(city.road, out / "roads_nodes.csv", out / "roads_edges.csv")
    write_gtfs(city.gtfs, out / "gtfs")
    write_pois(city.pois, out / "pois.csv")
    write_persons(persons, out / "persons.csv")
    write_trips(trips, out / "trips.csv")
    write_days(days, out / "days.csv")
    b = city.bbox
    config = {
        "persons": "persons.csv",
        "trips": "trips.csv",
        "days": "days.csv",
        "pois": "pois.csv",
        "roads_nodes": "roads_nodes.csv",
        "roads_edges": "roads_edges.csv",
        "gtfs": "gtfs",
        "model": "model.txt",
        "date": spec.date.isoformat(),
        "hex_mode": "lattice",
        "bbox": f"{b.min_lat!r},{b.min_lon!r},{b.max_lat!r},{b.max_lon!r}",
        "seed": str(spec.seed),
    }
    with open(out / "config.txt", "w", encoding="utf-8") as fh:
        fh.write("# synthetic input directory\n")
        for k, v in config.items():
            fh.write(f"{k} = {v}\n")
    z = ["hh_couple_kids", "hh_alone", "active_mode_yes", "woman", "higher_edu", "age", "poverty_rate"]
    with open(out / "model.txt", "w", encoding="utf-8") as fh:
        fh.write(fig6_dag(z, ["car_main", "pt_sub"], "log1p_A", "travel_time", "diversity").to_text())
    truth = {"spec": spec.to_dict(), "world": spec.world, "path_truth": PathTruth().to_json()}
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out
