import datetime as dt
from pathlib import Path

import pytest

from leisurespa.ingest import (
    Calendar, GtfsBundle, RoadEdge, RoadGraphSource, RoadNode, Route, Stop, StopTime, Trip, write_gtfs,
)

DATE = dt.date(2024, 3, 12)  # Tuesday

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def weekday_calendar(service_id="WK"):
    return Calendar(service_id, (True,) * 5 + (False,) * 2, dt.date(2024, 1, 1), dt.date(2024, 12, 31))


def line_road(n=3, spacing_deg=0.002, lat=48.85, lon0=2.30, speed=30.0):
    """Straight east-west road of ``n`` nodes, both directions, car and walk."""
    from leisurespa.spatial import haversine_m

    nodes = [RoadNode(f"r{i}", lat, lon0 + i * spacing_deg) for i in range(n)]
    edges = []
    for a, b in zip(nodes, nodes[1:]):
        d = haversine_m((a.lat, a.lon), (b.lat, b.lon))
        edges.append(RoadEdge(a.node_id, b.node_id, d, speed, frozenset({"car", "walk"})))
        edges.append(RoadEdge(b.node_id, a.node_id, d, speed, frozenset({"car", "walk"})))
    return RoadGraphSource(tuple(nodes), tuple(edges))


def two_stop_bundle(lat=48.85, lon_a=2.30, lon_b=2.33, dep=17 * 3600, arr=17 * 3600 + 600):
    stops = (Stop("A", "A", lat, lon_a), Stop("B", "B", lat, lon_b))
    return GtfsBundle(
        stops, (Route("R1", "1", 3),), (Trip("T1", "R1", "WK"),),
        (StopTime("T1", dep, dep, "A", 1), StopTime("T1", arr, arr, "B", 2)),
        (weekday_calendar(),),
    )


@pytest.fixture
def minimal_gtfs_dir(tmp_path):
    return write_gtfs(two_stop_bundle(dep=8 * 3600, arr=8 * 3600 + 600), tmp_path / "gtfs")


@pytest.fixture(scope="session")
def small_city():
    from leisurespa.synth import SynthSpec, gen_city

    return gen_city(SynthSpec(rows=5, cols=5, n_lines=3, n_pois=40, n_persons=20, seed=3))


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    from leisurespa.synth import SynthSpec, write_input_dir

    out = tmp_path_factory.mktemp("synth")
    write_input_dir(SynthSpec(rows=6, cols=6, n_lines=3, n_pois=80, n_persons=80, seed=11), out)
    return Path(out)
