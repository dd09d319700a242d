import math

import numpy as np
import pytest
from conftest import DATE, line_road, two_stop_bundle, weekday_calendar

from leisurespa.errors import NoServiceOnDate, SnapFailure
from leisurespa.ingest import (
    GtfsBundle, RoadEdge, RoadGraphSource, RoadNode, Route, Stop, StopTime, Transfer, Trip,
)
from leisurespa.router import (
    RoadNetwork, build_transit, car_matrix_ms, car_travel_time, transit_matrix_ms, transit_travel_time,
)
from leisurespa.synth import OracleRouter

H17 = 17 * 3600
LAT = 48.85


def stop_times(trip_id, calls):
    return tuple(StopTime(trip_id, t, t, s, i + 1) for i, (s, t) in enumerate(calls))


def bundle(stops, trips, transfers=()):
    """``trips`` is a list of (trip_id, route_id, [(stop_id, seconds), ...])."""
    st = ()
    for tid, _, calls in trips:
        st += stop_times(tid, calls)
    routes = tuple(Route(r) for r in sorted({r for _, r, _ in trips}))
    return GtfsBundle(tuple(Stop(s, s, LAT, lon) for s, lon in stops), routes,
                      tuple(Trip(t, r, "WK") for t, r, _ in trips), st, (weekday_calendar(),), (), tuple(transfers))


@pytest.fixture(scope="module")
def long_road():
    # 2.29 .. 2.37 in 0.002 degree steps (~146 m)
    return line_road(n=41, lon0=2.29)


# -- road ----------------------------------------------------------------------


def test_single_edge_at_sixty_kmh():
    src = RoadGraphSource((RoadNode("a", LAT, 2.30), RoadNode("b", LAT, 2.3137)),
                          (RoadEdge("a", "b", 1000.0, 60.0, frozenset({"car"})),))
    net = RoadNetwork(src)
    m = car_travel_time(net, (LAT, 2.30), [(LAT, 2.3137)])
    assert m.times == {"0": 60.0}
    assert car_travel_time(net, (LAT, 2.3137), [(LAT, 2.30)]).times == {}


def test_car_matrix_rows_equal_single_source_runs(small_city):
    net = RoadNetwork(small_city.road)
    nodes = list(range(len(net)))
    full = car_matrix_ms(net, nodes, nodes)
    for o in nodes[:6]:
        assert np.array_equal(full[o], net.times_ms("car", [o])[0])
    assert np.all(np.diag(full) == 0)


def test_random_graph_matches_bellman_ford():
    rng = np.random.default_rng(8)
    n = 200
    nodes = tuple(RoadNode(f"n{i}", LAT + rng.uniform(0, 0.05), 2.30 + rng.uniform(0, 0.05)) for i in range(n))
    edges = []
    for _ in range(700):
        a, b = rng.integers(0, n, 2)
        if a != b:
            edges.append(RoadEdge(f"n{a}", f"n{b}", float(rng.uniform(20, 900)), float(rng.choice([20, 30, 50])),
                                  frozenset({"car"})))
    src = RoadGraphSource(nodes, tuple(edges))
    net, oracle = RoadNetwork(src), OracleRouter(src)
    full = car_matrix_ms(net, list(range(n)), list(range(n)))
    for o in range(0, n, 10):
        assert np.array_equal(full[o], oracle.car_from(o))
    assert np.isinf(full).any()


def test_snap_failure_outside_radius(long_road):
    net = RoadNetwork(long_road, snap_radius_m=200)
    with pytest.raises(SnapFailure):
        net.snap(LAT + 0.01, 2.30)
    assert net.snap(LAT + 0.001, 2.29) == 0


def test_snap_ties_go_to_lowest_node():
    src = RoadGraphSource((RoadNode("a", LAT, 2.30), RoadNode("b", LAT, 2.30)), ())
    assert RoadNetwork(src).snap(LAT, 2.30) == 0


# -- transit compilation ---------------------------------------------------------


def test_one_trip_one_route(long_road):
    net = build_transit(two_stop_bundle(), RoadNetwork(long_road), DATE)
    assert len(net.routes) == 1
    assert net.routes[0].trip_ids == ("T1",)


def test_overtaking_trips_split_routes(long_road):
    stops = [("A", 2.30), ("B", 2.33), ("C", 2.36)]
    trips = [("slow", "R", [("A", H17), ("B", H17 + 900), ("C", H17 + 1800)]),
             ("fast", "R", [("A", H17 + 300), ("B", H17 + 600), ("C", H17 + 900)])]
    net = build_transit(bundle(stops, trips), RoadNetwork(long_road), DATE)
    assert len(net.routes) == 2
    # the fast trip must win even though it leaves later
    t = transit_travel_time(net, (LAT, 2.30), [(LAT, 2.36)], depart=H17 - 60)
    assert t.times["0"] == 60 + 900


def test_no_service_on_date(long_road):
    import datetime as dt

    with pytest.raises(NoServiceOnDate):
        build_transit(two_stop_bundle(), RoadNetwork(long_road), dt.date(2024, 3, 16))


# -- transit queries ---------------------------------------------------------------


def test_two_stop_wait_and_ride(long_road):
    net = build_transit(two_stop_bundle(), RoadNetwork(long_road), DATE)
    # depart 16:50 at A, trip leaves 17:00 and arrives 17:10
    t = transit_travel_time(net, (LAT, 2.30), {"B": (LAT, 2.33)}, depart=16 * 3600 + 50 * 60)
    assert t.times == {"B": 20 * 60.0}
    # after the only trip, B is out of walking range
    assert transit_travel_time(net, (LAT, 2.30), {"B": (LAT, 2.33)}, depart=H17 + 1).times == {}


def test_origin_equals_destination(long_road):
    net = build_transit(two_stop_bundle(), RoadNetwork(long_road), DATE)
    assert transit_travel_time(net, (LAT, 2.31), [(LAT, 2.31)]).times == {"0": 0.0}


def test_depart_range(long_road):
    net = build_transit(two_stop_bundle(), RoadNetwork(long_road), DATE)
    with pytest.raises(ValueError):
        transit_travel_time(net, (LAT, 2.30), [(LAT, 2.33)], depart=48 * 3600)
    with pytest.raises(ValueError):
        transit_travel_time(net, (LAT, 2.30), [(LAT, 2.33)], depart=-1)


def transfer_fixture(transfers=()):
    stops = [("A", 2.30), ("B1", 2.33), ("B2", 2.331), ("C", 2.36)]
    trips = [("r1", "R1", [("A", H17), ("B1", H17 + 600)]),
             ("r2a", "R2", [("B2", H17 + 660), ("C", H17 + 1260)]),
             ("r2b", "R2", [("B2", H17 + 1260), ("C", H17 + 1860)])]
    return bundle(stops, trips, transfers)


@pytest.mark.parametrize("max_transfers", [0, 1])
def test_one_transfer_matches_oracle(long_road, max_transfers):
    b = transfer_fixture()
    net = build_transit(b, RoadNetwork(long_road), DATE, max_transfers=max_transfers)
    oracle = OracleRouter(long_road, b, DATE, max_transfers=max_transfers)
    o = net.road.snap(LAT, 2.30)
    dests = list(range(len(net.road)))
    got = transit_matrix_ms(net, [o], dests, depart_s=H17 - 120)[0]
    ref = oracle.transit_from(o, (H17 - 120) * 1000, dests)
    assert np.array_equal(got, np.array(ref, dtype=float))
    c = net.road.snap(LAT, 2.36)
    if max_transfers == 0:
        assert math.isinf(got[c])
    else:
        # 2 min wait, 10 min ride, ~55 s walk (73 m), 10 min ride
        assert got[c] == (120 + 1260) * 1000


def test_transfer_table_overrides_walking(long_road):
    slow = Transfer("B1", "B2", 2, 120)
    net = build_transit(transfer_fixture([slow]), RoadNetwork(long_road), DATE, max_transfers=1)
    t = transit_travel_time(net, (LAT, 2.30), {"C": (LAT, 2.36)}, depart=H17)
    assert t.times == {"C": 1860.0}  # the first connection is missed
    banned = Transfer("B1", "B2", 3, None)
    net = build_transit(transfer_fixture([banned]), RoadNetwork(long_road), DATE, max_transfers=1)
    assert transit_travel_time(net, (LAT, 2.30), {"C": (LAT, 2.36)}, depart=H17).times == {}


def test_post_midnight_service(long_road):
    b = two_stop_bundle(dep=25 * 3600, arr=25 * 3600 + 600)
    net = build_transit(b, RoadNetwork(long_road), DATE)
    t = transit_travel_time(net, (LAT, 2.30), [(LAT, 2.33)], depart=24 * 3600 + 55 * 60)
    assert t.times == {"0": 900.0}


def test_city_matrix_matches_oracle(small_city):
    road = RoadNetwork(small_city.road)
    net = build_transit(small_city.gtfs, road, DATE, max_transfers=2)
    oracle = OracleRouter(small_city.road, small_city.gtfs, DATE, max_transfers=2)
    nodes = list(range(len(road)))
    for depart in (H17, H17 + 137):
        got = transit_matrix_ms(net, nodes[::4], nodes, depart_s=depart)
        for row, o in zip(got, nodes[::4]):
            assert np.array_equal(row, np.array(oracle.transit_from(o, depart * 1000, nodes), dtype=float))


def test_workers_do_not_change_results(small_city):
    road = RoadNetwork(small_city.road)
    net = build_transit(small_city.gtfs, road, DATE)
    nodes = list(range(len(road)))
    a = transit_matrix_ms(net, nodes, nodes, workers=1)
    b = transit_matrix_ms(net, nodes, nodes, workers=2)
    assert np.array_equal(a, b)
    assert np.array_equal(a, transit_matrix_ms(net, nodes, nodes, workers=1))
