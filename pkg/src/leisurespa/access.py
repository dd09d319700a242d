"""Space-time accessibility: leisure POIs reachable on the way home.

A POI k is feasible for a person when the home->work time, the
work->k time and the k->home time together fit within the travel-time
budget.  Feasible POIs are grouped into coarse cells and ranked by the
largest remaining budget among the POIs of each cell.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .router import DEFAULT_DEPART_S, node_matrix_ms
from .wstats import weighted_median

log = logging.getLogger(__name__)

MODE_POLICIES = ("person_main_mode", "force_car", "force_transit")


@dataclass(frozen=True)
class BudgetSpec:
    tb_min: float = 90.0
    depart: int = DEFAULT_DEPART_S

    def __post_init__(self):
        if not self.tb_min > 0:
            raise ValueError(f"time budget must be positive, got {self.tb_min}")


@dataclass(frozen=True)
class FeasibleEntry:
    coarse_cell: str
    best_remaining_min: float
    poi_count: int
    rank: int


@dataclass(frozen=True)
class FeasibleSet:
    person_id: str
    mode: str
    t_hw_min: float
    entries: tuple = ()
    A: int = 0
    commute_fallback: bool = False

    @property
    def N(self):
        return len(self.entries)

    def rank_of(self):
        return {e.coarse_cell: e.rank for e in self.entries}

    @property
    def log1p_A(self):
        return math.log1p(self.A)


def estimate_commute_time(person, fallback_min=None):
    """Weighted median (minutes) of the person's observed commute durations.

    Returns ``fallback_min`` when the person has no commute samples.
    """
    if not person.commute_samples:
        return fallback_min
    durations = [d for d, _ in person.commute_samples]
    weights = [w for _, w in person.commute_samples]
    return weighted_median(durations, weights)


def rank_cells(best_by_cell, counts_by_cell):
    """Order cells by remaining budget (descending), then token."""
    order = sorted(best_by_cell, key=lambda c: (-best_by_cell[c], c))
    return tuple(
        FeasibleEntry(c, best_by_cell[c], counts_by_cell[c], r)
        for r, c in enumerate(order, start=1)
    )


def compute_spa(person, pois, t_wk, t_kh, budget=BudgetSpec(), *, poi_cells, t_hw_min=None,
                mode="car", commute_fallback=False):
    """Feasible set of one person.

    Parameters
    ----------
    person : PersonRecord or str
        The person (or just an id when ``t_hw_min`` is given).
    pois : iterable
        POI ids (or objects with ``poi_id``).
    t_wk, t_kh : mapping
        Travel seconds work -> POI and POI -> home, keyed by POI id.
        Missing keys mean unreachable.
    poi_cells : mapping
        POI id -> coarse cell token.
    t_hw_min : float, optional
        Commute minutes; defaults to ``estimate_commute_time(person)``.
    """
    pid = person if isinstance(person, str) else person.person_id
    if t_hw_min is None:
        t_hw_min = estimate_commute_time(person)
    if t_hw_min is None:
        raise ValueError(f"person {pid!r} has no commute time")
    tb = budget.tb_min
    best, counts = {}, {}
    if t_hw_min <= tb:
        for poi in pois:
            k = getattr(poi, "poi_id", poi)
            if k not in t_wk or k not in t_kh:
                continue
            remaining = tb - t_hw_min - t_wk[k] / 60.0 - t_kh[k] / 60.0
            if remaining >= 0:
                cell = poi_cells[k]
                counts[cell] = counts.get(cell, 0) + 1
                if cell not in best or remaining > best[cell]:
                    best[cell] = remaining
    entries = rank_cells(best, counts)
    return FeasibleSet(pid, mode, float(t_hw_min), entries, sum(counts.values()), commute_fallback)


def person_mode(person, mode_policy):
    if mode_policy == "force_car":
        return "car"
    if mode_policy == "force_transit":
        return "transit"
    if mode_policy == "person_main_mode":
        return "car" if person.attributes.get("main_mode") == "car" else "transit"
    raise ValueError(f"unknown mode policy {mode_policy!r}")


@dataclass
class SpaPopulation:
    sets: list
    share_nonzero: float  # weighted %, A > 0
    mean_log1p: float  # weighted mean of log(1 + A)
    sd_log1p: float
    matrices: dict = field(default_factory=dict, repr=False)


def spa_population(persons, pois, road, transit=None, budget=BudgetSpec(), mode_policy="person_main_mode",
                   poi_cells=None, index=None, workers=1, person_nodes=None):
    """Feasible sets for a whole population.

    Travel-time matrices are computed once per mode for the unique work,
    POI and home nodes: work -> {POIs, homes} and POI -> homes, all at
    ``budget.depart``.  Persons without commute samples fall back to the
    routed work -> home time and are flagged.

    ``person_nodes`` maps person id -> (home_node, work_node); by default
    anchors are the centroids of the persons' cells under ``index``.
    """
    from .wstats import weighted_mean_sd, weighted_share

    if mode_policy not in MODE_POLICIES:
        raise ValueError(f"unknown mode policy {mode_policy!r}")
    if poi_cells is None:
        poi_cells = {p.poi_id: index.bin_point(p.lat, p.lon, "coarse") for p in pois}
    poi_ids = [p.poi_id for p in pois]
    poi_nodes = [road.snap(p.lat, p.lon) for p in pois]
    if person_nodes is None:
        person_nodes = {}
        for p in persons:
            person_nodes[p.person_id] = (road.snap(*index.centroid(p.home_cell)),
                                         road.snap(*index.centroid(p.work_cell)))
    modes = {p.person_id: person_mode(p, mode_policy) for p in persons}
    matrices = {}
    for mode in sorted(set(modes.values())):
        who = [p for p in persons if modes[p.person_id] == mode]
        homes = sorted({person_nodes[p.person_id][0] for p in who})
        works = sorted({person_nodes[p.person_id][1] for p in who})
        upoi = sorted(set(poi_nodes))
        w_dest = upoi + homes
        wm = node_matrix_ms(mode, road, transit, works, w_dest, budget.depart, workers)
        pm = node_matrix_ms(mode, road, transit, upoi, homes, budget.depart, workers)
        matrices[mode] = (works, w_dest, wm, upoi, homes, pm)
    lookup = {
        mode: ({n: i for i, n in enumerate(m[0])}, {n: i for i, n in enumerate(m[1])},
               {n: i for i, n in enumerate(m[3])}, {n: i for i, n in enumerate(m[4])})
        for mode, m in matrices.items()
    }

    sets = []
    for p in persons:
        mode = modes[p.person_id]
        works, w_dest, wm, upoi, homes, pm = matrices[mode]
        work_pos, dest_pos, poi_pos, home_pos = lookup[mode]
        h, w = person_nodes[p.person_id]
        wrow = wm[work_pos[w]]
        hcol = home_pos[h]
        t_wk, t_kh = {}, {}
        for pid, node in zip(poi_ids, poi_nodes):
            a = wrow[dest_pos[node]]
            b = pm[poi_pos[node], hcol]
            if np.isfinite(a):
                t_wk[pid] = float(a) / 1000.0
            if np.isfinite(b):
                t_kh[pid] = float(b) / 1000.0
        t_hw = estimate_commute_time(p)
        fallback = False
        if t_hw is None:
            fallback = True
            wh = wrow[dest_pos[h]]
            t_hw = float(wh) / 1000.0 / 60.0 if np.isfinite(wh) else math.inf
        sets.append(compute_spa(p, poi_ids, t_wk, t_kh, budget, poi_cells=poi_cells, t_hw_min=t_hw,
                                mode=mode, commute_fallback=fallback))
    weights = [p.weight for p in persons]
    share = weighted_share([s.A > 0 for s in sets], weights) if sets else 0.0
    mean, sd = weighted_mean_sd([s.log1p_A for s in sets], weights) if sets else (0.0, 0.0)
    log.info("SPA: %d persons, weighted share A>0 = %.1f%%", len(sets), share)
    return SpaPopulation(sets, share, mean, sd, matrices)
