import dataclasses
import filecmp
import json
import math

import numpy as np
import pytest
from conftest import DATE

from leisurespa import ingest
from leisurespa.access import BudgetSpec
from leisurespa.behavior import selectivity_test
from leisurespa.pathmodel import fit_paths
from leisurespa.spatial import HexLatticeIndex
from leisurespa.synth import (
    OracleRouter, PathTruth, SynthSpec, exact_selectivity_p, gen_city, gen_null_sets, gen_roads, oracle_spa,
    simulate_path_data, spec_rng, write_input_dir,
)


def test_grid_size():
    spec = SynthSpec(rows=3, cols=3)
    road = gen_roads(spec, spec_rng(spec, "roads"))
    assert len(road.nodes) == 9
    assert len(road.edges) == 24
    assert all(e.modes == frozenset({"car", "walk"}) for e in road.edges)
    road.validate()


def test_city_feed_round_trips_and_headway(tmp_path):
    spec = SynthSpec(rows=5, cols=5, n_lines=2, express=False, weekend_service=False, seed=4)
    city = gen_city(spec)
    ingest.write_gtfs(city.gtfs, tmp_path / "g")
    assert ingest.parse_gtfs(tmp_path / "g") == city.gtfs
    by_trip = city.gtfs.stop_times_by_trip()
    firsts = sorted(by_trip[t.trip_id][0].departure for t in city.gtfs.trips if t.trip_id.startswith("L0_0_"))
    assert set(np.diff(firsts)) == {spec.headway_s}
    assert firsts[0] >= spec.service_start_s and firsts[-1] <= spec.service_end_s


def test_express_trips_overtake():
    city = gen_city(SynthSpec(rows=6, cols=6, seed=1))
    by_trip = city.gtfs.stop_times_by_trip()
    express = [t.trip_id for t in city.gtfs.trips if t.trip_id.endswith("x")]
    assert express
    overtakes = 0
    for x in express:
        ex = by_trip[x]
        for t in city.gtfs.trips:
            other = by_trip[t.trip_id]
            if t.trip_id != x and [s.stop_id for s in other] == [s.stop_id for s in ex]:
                if other[0].departure < ex[0].departure and other[-1].arrival > ex[-1].arrival:
                    overtakes += 1
    assert overtakes > 0


def test_input_dir_is_byte_identical(tmp_path):
    spec = SynthSpec(rows=4, cols=4, n_lines=2, n_pois=30, n_persons=15, seed=9)
    a, b = write_input_dir(spec, tmp_path / "a"), write_input_dir(spec, tmp_path / "b")
    cmp = filecmp.dircmp(a, b)
    assert not cmp.left_only and not cmp.right_only
    for name in cmp.common_files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    for name in cmp.subdirs["gtfs"].common_files:
        assert (a / "gtfs" / name).read_bytes() == (b / "gtfs" / name).read_bytes()
    truth = json.loads((a / "truth.json").read_text())
    assert truth["spec"]["seed"] == 9
    assert SynthSpec.from_dict(truth["spec"]) == spec
    other = write_input_dir(dataclasses.replace(spec, seed=10), tmp_path / "c")
    assert (other / "persons.csv").read_bytes() != (a / "persons.csv").read_bytes()


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(rows=0)
    with pytest.raises(ValueError):
        SynthSpec(n_pois=-1)


def test_oracle_spa_edge_cases(small_city):
    router = OracleRouter(small_city.road, small_city.gtfs, DATE)
    index = HexLatticeIndex(small_city.bbox)
    home = (small_city.pois[0].lat, small_city.pois[0].lon)
    work = (small_city.pois[1].lat, small_city.pois[1].lon)
    empty = oracle_spa("p", [], router, mode="car", t_hw_min=10, home=home, work=work, poi_cells={})
    assert empty.A == 0 and empty.entries == ()
    pois = small_city.leisure_pois
    cells = {p.poi_id: index.bin_point(p.lat, p.lon, "coarse") for p in pois}
    everything = oracle_spa("p", pois, router, BudgetSpec(1e6), mode="car", t_hw_min=10, home=home, work=work,
                            poi_cells=cells)
    assert everything.A == len(pois)
    assert everything.N == len(set(cells.values()))
    assert [e.rank for e in everything.entries] == list(range(1, everything.N + 1))


def test_exact_p_enumeration():
    assert exact_selectivity_p(4, [1, 2]) == pytest.approx(1 / 6)
    assert exact_selectivity_p(5, [5]) == 1.0
    assert exact_selectivity_p(6, [1, 2, 3]) == pytest.approx(1 / 20)


def test_selective_world_is_detected():
    pairs = gen_null_sets(300, seed=2, world="selective", bias=0.6)
    ds = [r.d for r in (selectivity_test(s, v, 500) for s, v in pairs) if r.d is not None]
    assert np.median(ds) < -1


def test_null_world_is_calibrated_roughly():
    pairs = gen_null_sets(400, seed=3)
    ds = [r.d for r in (selectivity_test(s, v, 500) for s, v in pairs) if r.d is not None]
    assert abs(np.median(ds)) < 0.2


def test_path_truth_json_round_trip():
    t = PathTruth()
    assert PathTruth.from_json(json.loads(json.dumps(t.to_json()))) == t


def test_population_covariance_matches_simulation():
    t = PathTruth()
    data, w = simulate_path_data(200000, 1, t)
    X = np.column_stack([data[v] for v in t.order])
    emp = np.cov(X.T)
    assert np.allclose(emp, t.population_cov(), atol=0.02)


def test_true_std_recovered_in_large_sample():
    t = PathTruth()
    data, w = simulate_path_data(100000, 5, t)
    fit = fit_paths(t.dag(), data, w)
    for k, v in t.true_std().items():
        assert fit.std_coefficients[k] == pytest.approx(v, abs=0.01), k
    assert all(math.isfinite(v) for v in t.true_std().values())
