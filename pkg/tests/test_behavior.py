import datetime as dt
import math
from collections import defaultdict

import numpy as np
import pytest
from scipy import stats

from leisurespa.access import FeasibleEntry, FeasibleSet
from leisurespa.behavior import (
    VisitSet, hill_diversity, null_rank_sums, selectivity_test, total_travel_time, visits_from_trips,
    weighted_median_bootstrap, weighted_stats,
)
from leisurespa.errors import EmptyFeasibleSet, EmptyVisits
from leisurespa.ingest import DayRecord, TripRecord
from leisurespa.synth import exact_selectivity_p


def feasible(N, pid="p", scores=None):
    scores = scores if scores is not None else [float(100 - i) for i in range(N)]
    return FeasibleSet(pid, "car", 20.0, tuple(FeasibleEntry(f"8:{i}:0", scores[i], 1, i + 1) for i in range(N)), N)


def visits(ranks, pid="p", extra=()):
    return VisitSet.from_cells(pid, [f"8:{r - 1}:0" for r in ranks] + list(extra))


# -- selectivity ---------------------------------------------------------------------


def test_visiting_every_cell_is_not_selective():
    r = selectivity_test(feasible(5), visits([1, 2, 3, 4, 5]))
    assert r.applicable and r.k == r.N == 5
    assert r.p_value == 1.0 and r.d is None and r.null_sd == 0.0
    assert r.T_act == r.null_mean == 3.0


def test_empirical_p_matches_exact_enumeration():
    N, ranks, B = 4, [1, 2], 1000
    exact = exact_selectivity_p(N, ranks)
    assert exact == pytest.approx(1 / 6)
    r = selectivity_test(feasible(N), visits(ranks), B=B, seed=3)
    count = round(r.p_value * (B + 1)) - 1
    lo, hi = stats.binom.interval(0.99, B, exact)
    assert lo <= count <= hi


def test_p_value_floor():
    r = selectivity_test(feasible(100), visits([1, 2, 3, 4, 5]), B=1000)
    assert r.p_value == pytest.approx(1 / 1001)
    assert r.d < -3


def test_outside_visits_only_change_share():
    a = selectivity_test(feasible(30), visits([2, 9]), seed=1)
    b = selectivity_test(feasible(30), visits([2, 9], extra=["8:99:0", "8:98:0"]), seed=1)
    assert b.share_outside == 0.5 and a.share_outside == 0.0
    assert (a.T_act, a.p_value, a.d) == (b.T_act, b.p_value, b.d)


def test_no_feasible_visits_is_not_applicable():
    r = selectivity_test(feasible(10), VisitSet.from_cells("p", ["8:50:0"]))
    assert not r.applicable and r.k == 0
    assert r.share_outside == 1.0 and r.p_value is None


def test_errors():
    with pytest.raises(EmptyFeasibleSet):
        selectivity_test(feasible(0), visits([1]))
    with pytest.raises(EmptyVisits):
        selectivity_test(feasible(3), VisitSet("p", ()))
    with pytest.raises(ValueError):
        selectivity_test(feasible(3), visits([1]), B=0)


def test_selectivity_is_deterministic_per_person():
    a = selectivity_test(feasible(40, "x"), visits([3, 10, 22], "x"), seed=5)
    b = selectivity_test(feasible(40, "x"), visits([3, 10, 22], "x"), seed=5)
    c = selectivity_test(feasible(40, "x"), visits([3, 10, 22], "x"), seed=6)
    assert a == b
    assert a.null_mean != c.null_mean


def test_only_ranks_matter():
    rng = np.random.default_rng(0)
    scores = sorted(rng.uniform(0, 90, 25), reverse=True)
    a = selectivity_test(feasible(25), visits([4, 7, 11]), seed=2)
    b = selectivity_test(feasible(25, scores=scores), visits([4, 7, 11]), seed=2)
    assert a == b


def test_null_moments():
    N, k = 30, 4
    sums = null_rank_sums(N, k, 20000, np.random.default_rng(1))
    means = sums / k
    # sampling without replacement from 1..N
    mu = (N + 1) / 2
    var = (N * N - 1) / 12 / k * (N - k) / (N - 1)
    assert means.mean() == pytest.approx(mu, abs=0.05)
    assert means.var() == pytest.approx(var, rel=0.03)
    assert np.all(sums >= k * (k + 1) // 2)


# -- diversity -------------------------------------------------------------------------


def test_hill_identities():
    assert hill_diversity(VisitSet.from_cells("p", ["a", "a", "a"])) == pytest.approx(1.0)
    assert hill_diversity([3, 3, 3, 3]) == pytest.approx(4.0)
    assert hill_diversity(VisitSet.from_cells("p", ["a", "a", "b", "c"])) == pytest.approx(2.8284, abs=1e-4)
    with pytest.raises(EmptyVisits):
        hill_diversity([])


def test_hill_bounded_by_distinct_places():
    rng = np.random.default_rng(3)
    for _ in range(50):
        counts = rng.integers(1, 6, rng.integers(1, 8))
        h = hill_diversity(counts)
        assert 1.0 - 1e-12 <= h <= len(counts) + 1e-12


def test_visits_from_trips_groups_by_coarse_cell():
    class Idx:
        def parent(self, cell):
            return cell.split("/")[0]

    trips = [TripRecord("a", dt.date(2024, 3, 12), "x", "c1/1", "car", "LEISURE", 5, 0),
             TripRecord("a", dt.date(2024, 3, 12), "x", "c1/2", "car", "LEISURE", 5, 0),
             TripRecord("a", dt.date(2024, 3, 12), "x", "c2/1", "car", "HOME", 5, 0)]
    v = visits_from_trips(trips, Idx())
    assert v["a"].counts == (("c1", 2),)
    assert visits_from_trips(trips, Idx(), "fine")["a"].K == 2


# -- travel time -------------------------------------------------------------------------


def trip(pid, day, minutes, w=1.0):
    return TripRecord(pid, dt.date(2024, 3, day), "o", "d", "car", "OTHER", minutes, 0, w)


def test_total_travel_time_examples():
    assert total_travel_time([trip("a", 12, 30), trip("a", 12, 40)]) == {"a": 70.0}
    days = [DayRecord("b", dt.date(2024, 3, 12))]
    assert total_travel_time([], days) == {"b": 0.0}
    days = [DayRecord("a", dt.date(2024, 3, 12)), DayRecord("a", dt.date(2024, 3, 13))]
    assert total_travel_time([trip("a", 12, 30), trip("a", 12, 40)], days) == {"a": 35.0}


def test_total_travel_time_groupby_oracle():
    rng = np.random.default_rng(4)
    trips = [trip(f"p{rng.integers(5)}", int(rng.integers(10, 14)), float(rng.integers(1, 60)))
             for _ in range(200)]
    dw = {(f"p{i}", d): float(rng.uniform(0.5, 2)) for i in range(5) for d in range(10, 15)}
    days = [DayRecord(p, dt.date(2024, 3, d), w) for (p, d), w in dw.items()]
    got = total_travel_time(trips, days)
    per_day = defaultdict(float)
    for t in trips:
        per_day[(t.person_id, t.date.day)] += t.duration_min
    for i in range(5):
        pid = f"p{i}"
        num = sum(w * per_day[(pid, d)] for (p, d), w in dw.items() if p == pid)
        den = sum(w for (p, d), w in dw.items() if p == pid)
        assert got[pid] == pytest.approx(num / den)


# -- weighted summaries ------------------------------------------------------------------


def test_weighted_stats():
    assert weighted_stats([1, 2, 3], [1, 1, 1]) == pytest.approx((2.0, 1.0))
    m, s = weighted_stats([0, 10], [3, 1])
    assert m == pytest.approx(2.5)
    # normalised weights 1.5 and 0.5: var = (1.5*6.25 + 0.5*56.25) / (2 - 1)
    assert s == pytest.approx(math.sqrt(1.5 * 6.25 + 0.5 * 56.25))
    a = weighted_stats([1, 5, 7], [1, 2, 3])
    b = weighted_stats([1, 5, 7], [10, 20, 30])
    assert a == pytest.approx(b)


def test_bootstrap_single_value():
    med, se = weighted_median_bootstrap([4.0] * 10, [1.0] * 10, R=50)
    assert med == 4.0 and se == 0.0


def test_bootstrap_against_resampling_oracle():
    rng = np.random.default_rng(9)
    x = rng.lognormal(3, 0.5, 400)
    w = rng.uniform(0.5, 2.0, 400)
    med, se = weighted_median_bootstrap(x, w, R=400, seed=1)
    ref = np.random.default_rng(2)
    reps = [np.median(x[ref.choice(400, 400, p=w / w.sum())]) for _ in range(400)]
    assert se == pytest.approx(np.std(reps, ddof=1), rel=0.2)
    assert weighted_median_bootstrap(x, w, R=400, seed=1) == (med, se)
