"""Earliest-arrival travel times by car and public transit.

Road routing is plain Dijkstra over a CSR graph.  Transit routing is a
round-based (RAPTOR-style) search over a compiled timetable with walking
access, egress and transfers derived from the walk graph.

All internal times are integer milliseconds so that sums are exact and two
independent engines can be compared to the millisecond.  Public results are
seconds.  Every coordinate is snapped to its nearest road node; the snap
connector itself costs nothing.
"""
from __future__ import annotations

import bisect
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from .errors import NoServiceOnDate, SnapFailure
from .spatial import haversine_m

log = logging.getLogger(__name__)

DEFAULT_DEPART_S = 17 * 3600
DEFAULT_WALK_KMH = 4.8
DEFAULT_SNAP_M = 500.0
DEFAULT_MAX_WALK_M = 1000.0
DEFAULT_MAX_TRANSFERS = 5
INF = math.inf


def edge_ms(length_m, speed_kmh):
    """Traversal time of an edge in whole milliseconds (at least 1)."""
    return max(1, int(round(length_m / (speed_kmh / 3.6) * 1000)))


def walk_limit_ms(max_walk_m, walk_kmh):
    return int(round(max_walk_m / (walk_kmh / 3.6) * 1000))


@dataclass
class TravelTimeMatrix:
    """One-to-many result; unreachable destinations are absent from ``times``."""

    origin: str
    depart_s: int
    mode: str
    times: dict = field(default_factory=dict)


def _unit_xyz(lat, lon):
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


class RoadNetwork:
    """Directed road graph with car and walk travel times.

    Parameters
    ----------
    source : RoadGraphSource
    walk_kmh : float
        Walking speed used for every walk-enabled edge.
    snap_radius_m : float
        Maximum distance from a coordinate to its road node.
    """

    def __init__(self, source, walk_kmh=DEFAULT_WALK_KMH, snap_radius_m=DEFAULT_SNAP_M):
        self.walk_kmh = walk_kmh
        self.snap_radius_m = snap_radius_m
        self.node_ids = [n.node_id for n in source.nodes]
        self.index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.lat = np.array([n.lat for n in source.nodes], dtype=float)
        self.lon = np.array([n.lon for n in source.nodes], dtype=float)
        n = len(self.node_ids)
        car, walk = {}, {}
        for e in source.edges:
            key = (self.index[e.from_node], self.index[e.to_node])
            if "car" in e.modes:
                w = edge_ms(e.length_m, e.speed_kmh)
                car[key] = min(car.get(key, w), w)
            if "walk" in e.modes:
                w = edge_ms(e.length_m, walk_kmh)
                walk[key] = min(walk.get(key, w), w)
        self.car = _csr(car, n)
        self.walk = _csr(walk, n)
        self.walk_t = self.walk.T.tocsr()
        self.car_t = self.car.T.tocsr()
        both = (self.car + self.walk).tocsr()
        ncomp, labels = connected_components(both, directed=True, connection="weak")
        self.component = labels
        sizes = np.bincount(labels)
        self.main_component = int(np.argmax(sizes)) if n else 0
        self.small_component_nodes = [self.node_ids[i] for i in range(n) if labels[i] != self.main_component]
        if ncomp > 1:
            log.warning("road graph has %d weak components; %d nodes outside the largest",
                        ncomp, len(self.small_component_nodes))
        self._tree = cKDTree(_unit_xyz(self.lat, self.lon)) if n else None

    def __len__(self):
        return len(self.node_ids)

    def graph(self, mode):
        return self.car if mode == "car" else self.walk

    def snap(self, lat, lon):
        """Index of the nearest node (ties to the lowest index)."""
        if self._tree is None:
            raise SnapFailure("empty road network")
        k = min(4, len(self.node_ids))
        dist, idx = self._tree.query(_unit_xyz([lat], [lon])[0], k=k)
        dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
        best = min(zip(np.round(dist, 15), idx))[1]
        d = haversine_m((lat, lon), (self.lat[best], self.lon[best]))
        if d > self.snap_radius_m:
            raise SnapFailure(f"no road node within {self.snap_radius_m} m of ({lat}, {lon}); nearest is {d:.0f} m")
        return int(best)

    def snap_many(self, latlons):
        return [self.snap(lat, lon) for lat, lon in latlons]

    def times_ms(self, mode, sources, limit_ms=None, reverse=False):
        """Shortest travel times (ms, ``inf`` when unreachable) from each source."""
        g = (self.car_t if mode == "car" else self.walk_t) if reverse else self.graph(mode)
        lim = np.inf if limit_ms is None else limit_ms + 0.5
        d = dijkstra(g, directed=True, indices=np.asarray(sources, dtype=int), limit=lim)
        d = np.atleast_2d(d)
        if limit_ms is not None:
            d[d > limit_ms] = np.inf
        return d


def _csr(weights, n):
    if not weights:
        return sp.csr_matrix((n, n), dtype=float)
    keys = sorted(weights)
    rows = np.array([k[0] for k in keys], dtype=int)
    cols = np.array([k[1] for k in keys], dtype=int)
    vals = np.array([weights[k] for k in keys], dtype=float)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _latlon_list(dests):
    if isinstance(dests, dict):
        return list(dests.keys()), list(dests.values())
    dests = list(dests)
    return [str(i) for i in range(len(dests))], dests


def car_travel_time(net, origin, dests, depart=DEFAULT_DEPART_S, origin_id="origin"):
    """Free-flow car travel times from one coordinate to many.

    ``dests`` is a sequence of ``(lat, lon)`` (ids are positions) or a mapping
    id -> ``(lat, lon)``.  ``depart`` is recorded but does not affect times.
    """
    ids, pts = _latlon_list(dests)
    o = net.snap(*origin)
    dn = net.snap_many(pts)
    row = net.times_ms("car", [o])[0]
    out = TravelTimeMatrix(origin_id, int(depart), "car")
    for did, node in zip(ids, dn):
        t = row[node]
        if np.isfinite(t):
            out.times[did] = float(t) / 1000.0
    return out


def car_matrix_ms(net, origin_nodes, dest_nodes):
    """Array ``(len(origins), len(dests))`` of car times in ms."""
    if len(origin_nodes) == 0:
        return np.zeros((0, len(dest_nodes)))
    d = net.times_ms("car", origin_nodes)
    return d[:, np.asarray(dest_nodes, dtype=int)]


# ---------------------------------------------------------------------------
# transit
# ---------------------------------------------------------------------------


@dataclass
class CompiledRoute:
    route_id: str
    stops: tuple  # stop indices along the pattern
    trip_ids: tuple
    arr: list  # arr[trip][pos], ms
    dep: list  # dep[trip][pos], ms
    dep_by_pos: list = field(default_factory=list)  # dep_by_pos[pos][trip], sorted

    def __post_init__(self):
        self.dep_by_pos = [[d[p] for d in self.dep] for p in range(len(self.stops))]


def _dominates(later, earlier):
    """True when trip ``later`` never arrives or departs before ``earlier``."""
    return all(a >= b for a, b in zip(later[0], earlier[0])) and all(a >= b for a, b in zip(later[1], earlier[1]))


class TransitNetwork:
    """Compiled timetable for one service date plus walking structures."""

    def __init__(self, road, stop_ids, stop_nodes, routes, footpaths, max_walk_ms, max_transfers, date):
        self.road = road
        self.stop_ids = stop_ids
        self.stop_index = {s: i for i, s in enumerate(stop_ids)}
        self.stop_nodes = np.asarray(stop_nodes, dtype=int)
        self.routes = routes
        self.footpaths = footpaths
        self.max_walk_ms = max_walk_ms
        self.max_transfers = max_transfers
        self.date = date
        stop_routes = [[] for _ in stop_ids]
        for ri, r in enumerate(routes):
            for pos, s in enumerate(r.stops):
                stop_routes[s].append((ri, pos))
        self.stop_routes = stop_routes
        self._valid_stops = np.flatnonzero(self.stop_nodes >= 0)

    @property
    def max_rides(self):
        return self.max_transfers + 1


def build_transit(bundle, road, date, max_walk_m=DEFAULT_MAX_WALK_M, max_transfers=DEFAULT_MAX_TRANSFERS):
    """Compile the services active on ``date`` into non-overtaking routes.

    Trips sharing a route id and stop pattern are split greedily into
    chains in which every trip dominates its predecessor at every stop.
    Footpaths connect stops whose walk distance is within ``max_walk_m``
    and are closed under concatenation, so a single footpath between rides
    is as good as any chain of them.
    """
    active = bundle.active_services(date)
    trips = [t for t in bundle.trips if t.service_id in active]
    if not trips:
        raise NoServiceOnDate(f"no active service on {date}")
    stop_ids = [s.stop_id for s in bundle.stops]
    sidx = {s: i for i, s in enumerate(stop_ids)}
    by_trip = bundle.stop_times_by_trip()

    groups = {}
    for t in trips:
        sts = by_trip.get(t.trip_id, [])
        if len(sts) < 2:
            continue
        pattern = tuple(sidx[st.stop_id] for st in sts)
        arr = tuple(st.arrival * 1000 for st in sts)
        dep = tuple(st.departure * 1000 for st in sts)
        groups.setdefault((t.route_id, pattern), []).append((dep[0], arr, dep, t.trip_id))

    routes = []
    for (route_id, pattern) in sorted(groups, key=lambda k: (k[0], k[1])):
        members = sorted(groups[(route_id, pattern)])
        chains = []
        for _, arr, dep, tid in members:
            for ch in chains:
                if _dominates((arr, dep), (ch[-1][0], ch[-1][1])):
                    ch.append((arr, dep, tid))
                    break
            else:
                chains.append([(arr, dep, tid)])
        for ch in chains:
            routes.append(CompiledRoute(
                route_id, pattern, tuple(c[2] for c in ch),
                [list(c[0]) for c in ch], [list(c[1]) for c in ch],
            ))

    limit = walk_limit_ms(max_walk_m, road.walk_kmh)
    stop_nodes = []
    for s in bundle.stops:
        try:
            stop_nodes.append(road.snap(s.lat, s.lon))
        except SnapFailure:
            log.warning("stop %s has no road node within snap radius; it gets no walking links", s.stop_id)
            stop_nodes.append(-1)
    footpaths = _footpaths(road, stop_nodes, bundle, sidx, limit)
    log.info("compiled %d routes from %d active trips; %d stops", len(routes), len(trips), len(stop_ids))
    return TransitNetwork(road, stop_ids, stop_nodes, routes, footpaths, limit, max_transfers, date)


def _footpaths(road, stop_nodes, bundle, sidx, limit):
    n = len(stop_nodes)
    valid = [i for i in range(n) if stop_nodes[i] >= 0]
    direct = {}
    if valid:
        uniq = sorted({stop_nodes[i] for i in valid})
        d = road.times_ms("walk", uniq, limit_ms=limit)
        row_of = {node: k for k, node in enumerate(uniq)}
        node_arr = np.array([stop_nodes[i] for i in valid])
        for i in valid:
            row = d[row_of[stop_nodes[i]]][node_arr]
            for j, t in zip(valid, row):
                if j != i and np.isfinite(t):
                    direct[(i, j)] = int(t)
    for tr in bundle.transfers:
        i, j = sidx[tr.from_stop_id], sidx[tr.to_stop_id]
        if i == j:
            continue
        if tr.transfer_type == 3:
            direct.pop((i, j), None)
        elif tr.min_transfer_time is not None:
            direct[(i, j)] = tr.min_transfer_time * 1000
    if not direct:
        return [[] for _ in range(n)]
    g = _csr(direct, n)
    closed = dijkstra(g, directed=True)
    out = []
    for i in range(n):
        row = closed[i]
        out.append([(int(j), int(row[j])) for j in np.flatnonzero(np.isfinite(row)) if j != i])
    return out


def raptor(net, access, max_rides=None):
    """Earliest arrival (ms) at every stop given initial stop labels.

    ``access`` maps stop index -> earliest time the stop is reached
    without riding.  Footpaths are relaxed after the access step and after
    every round of rides.
    """
    K = net.max_rides if max_rides is None else max_rides
    n = len(net.stop_ids)
    best = [INF] * n
    for s, t in access.items():
        if t < best[s]:
            best[s] = t
    marked = set(access)
    # footpaths after the access step
    for s in sorted(access):
        for q, w in net.footpaths[s]:
            t = access[s] + w
            if t < best[q]:
                best[q] = t
                marked.add(q)
    prev = best[:]
    routes = net.routes
    for _ in range(K):
        if not marked:
            break
        queue = {}
        for p in marked:
            for ri, pos in net.stop_routes[p]:
                if pos < queue.get(ri, 1 << 30):
                    queue[ri] = pos
        cur = prev[:]
        improved = []
        for ri in sorted(queue):
            r = routes[ri]
            trip = -1
            stops = r.stops
            for pos in range(queue[ri], len(stops)):
                s = stops[pos]
                if trip >= 0:
                    a = r.arr[trip][pos]
                    if a < best[s]:
                        best[s] = a
                        cur[s] = a
                        improved.append(s)
                ready = prev[s]
                if ready < INF and (trip < 0 or ready <= r.dep[trip][pos]):
                    deps = r.dep_by_pos[pos]
                    k = bisect.bisect_left(deps, ready)
                    if k < len(deps) and (trip < 0 or k < trip):
                        trip = k
        marked = set(improved)
        for s in sorted(set(improved)):
            base = cur[s]
            for q, w in net.footpaths[s]:
                t = base + w
                if t < best[q]:
                    best[q] = t
                    cur[q] = t
                    marked.add(q)
        prev = cur
    return best


def egress_table_ms(net, dest_nodes):
    """Walk time (ms) from every stop to every destination node."""
    dest_nodes = np.asarray(dest_nodes, dtype=int)
    n_stops = len(net.stop_ids)
    out = np.full((len(dest_nodes), n_stops), np.inf)
    if len(dest_nodes) == 0 or len(net._valid_stops) == 0:
        return out
    uniq, inv = np.unique(dest_nodes, return_inverse=True)
    d = net.road.times_ms("walk", uniq, limit_ms=net.max_walk_ms, reverse=True)
    valid = net._valid_stops
    block = d[:, net.stop_nodes[valid]]
    out[:, valid] = block[inv]
    return out


def transit_times_from_node(net, origin_node, depart_ms, dest_nodes, egress=None):
    """Arrival minus departure (ms, ``inf`` unreachable) to each destination node."""
    dest_nodes = np.asarray(dest_nodes, dtype=int)
    if egress is None:
        egress = egress_table_ms(net, dest_nodes)
    walk = net.road.times_ms("walk", [origin_node], limit_ms=net.max_walk_ms)[0]
    access = {}
    for s in net._valid_stops:
        w = walk[net.stop_nodes[s]]
        if np.isfinite(w):
            access[int(s)] = depart_ms + int(w)
    best = np.array(raptor(net, access), dtype=float)
    via = (best[None, :] + egress).min(axis=1) if egress.shape[1] else np.full(len(dest_nodes), np.inf)
    direct = depart_ms + walk[dest_nodes]
    arrival = np.minimum(via, direct)
    return arrival - depart_ms


def transit_travel_time(net, origin, dests, depart=DEFAULT_DEPART_S, origin_id="origin"):
    """Earliest-arrival transit travel times (seconds) from one coordinate.

    Unreachable destinations, including ones that cannot be snapped to
    the road network, are absent from the result.
    """
    if not 0 <= depart < 48 * 3600:
        raise ValueError("depart must lie in [0, 48h)")
    ids, pts = _latlon_list(dests)
    out = TravelTimeMatrix(origin_id, int(depart), "transit")
    try:
        o = net.road.snap(*origin)
    except SnapFailure:
        return out
    keep = []
    for did, (lat, lon) in zip(ids, pts):
        try:
            keep.append((did, net.road.snap(lat, lon)))
        except SnapFailure:
            pass
    if not keep:
        return out
    t = transit_times_from_node(net, o, int(depart) * 1000, [k[1] for k in keep])
    for (did, _), v in zip(keep, t):
        if np.isfinite(v):
            out.times[did] = float(v) / 1000.0
    return out


# -- many-to-many -------------------------------------------------------------

_WORKER = {}


def _init_worker(net, dest_nodes, egress, depart_ms):
    _WORKER.update(net=net, dest=dest_nodes, egress=egress, depart=depart_ms)


def _transit_row(origin_node):
    w = _WORKER
    return transit_times_from_node(w["net"], origin_node, w["depart"], w["dest"], w["egress"])


def transit_matrix_ms(net, origin_nodes, dest_nodes, depart_s=DEFAULT_DEPART_S, workers=1):
    """Array ``(len(origins), len(dests))`` of transit times in ms.

    Origins are independent; with ``workers > 1`` they run in a process
    pool and rows are merged in origin order.
    """
    dest_nodes = np.asarray(dest_nodes, dtype=int)
    egress = egress_table_ms(net, dest_nodes)
    depart_ms = int(depart_s) * 1000
    origins = [int(o) for o in origin_nodes]
    if workers <= 1 or len(origins) < 2:
        rows = [transit_times_from_node(net, o, depart_ms, dest_nodes, egress) for o in origins]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(net, dest_nodes, egress, depart_ms)) as ex:
            rows = list(ex.map(_transit_row, origins, chunksize=max(1, len(origins) // (4 * workers))))
    if not rows:
        return np.zeros((0, len(dest_nodes)))
    return np.vstack(rows)


def node_matrix_ms(mode, road, transit, origin_nodes, dest_nodes, depart_s=DEFAULT_DEPART_S, workers=1):
    if mode == "car":
        return car_matrix_ms(road, origin_nodes, dest_nodes)
    if mode == "transit":
        return transit_matrix_ms(transit, origin_nodes, dest_nodes, depart_s, workers)
    raise ValueError(f"unknown routing mode {mode!r}")
