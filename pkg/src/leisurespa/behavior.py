"""Behavioural statistics on observed leisure visits.

* ``selectivity_test`` compares the mean rank of visited feasible cells with
  random draws from the feasible set.
* ``hill_diversity`` is the exponential of the Shannon entropy of visit
  counts over distinct locations.
* ``total_travel_time`` and the weighted summaries feed the descriptive
  tables and the path model.
"""
from __future__ import annotations

import hashlib
import math
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import EmptyFeasibleSet, EmptyVisits
from .wstats import normalize_weights, weighted_mean_sd, weighted_median, weighted_share  # noqa: F401

DEFAULT_DRAWS = 1000


@dataclass(frozen=True)
class VisitSet:
    """Leisure visits of one person, as (cell, count) pairs sorted by cell."""

    person_id: str
    counts: tuple

    @classmethod
    def from_cells(cls, person_id, cells):
        c = Counter(cells)
        return cls(person_id, tuple(sorted(c.items())))

    @property
    def cells(self):
        return [c for c, _ in self.counts]

    @property
    def n(self):
        return sum(k for _, k in self.counts)

    @property
    def K(self):
        return len(self.counts)


def visits_from_trips(trips, index, resolution="coarse", purpose="LEISURE"):
    """Group trips with the given purpose into per-person visit sets."""
    by_person = defaultdict(list)
    for t in trips:
        if t.purpose != purpose:
            continue
        cell = t.dest_cell
        if resolution == "coarse":
            cell = index.parent(cell)
        by_person[t.person_id].append(cell)
    return {pid: VisitSet.from_cells(pid, cells) for pid, cells in sorted(by_person.items())}


@dataclass(frozen=True)
class SelectivityResult:
    person_id: str
    applicable: bool
    k: int
    N: int
    share_outside: float
    T_act: float | None
    null_mean: float | None
    null_sd: float | None
    p_value: float | None
    d: float | None
    B: int


def person_rng(seed, person_id):
    """Counter-based generator keyed by (global seed, person id)."""
    digest = hashlib.sha256(f"{int(seed)}\x1f{person_id}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def null_rank_sums(N, k, B, rng):
    """Rank sums of ``B`` draws of ``k`` distinct ranks from ``1..N``."""
    if k == N:
        return np.full(B, N * (N + 1) // 2, dtype=np.int64)
    keys = rng.random((B, N))
    picks = np.argpartition(keys, k - 1, axis=1)[:, :k]
    return (picks + 1).sum(axis=1).astype(np.int64)


def selectivity_test(spa, visits, B=DEFAULT_DRAWS, seed=0):
    """Rank-based selectivity test of one person's visits against their feasible set.

    Visited cells are deduplicated.  Cells outside the feasible set only
    enter ``share_outside``.  The null distribution draws ``k`` distinct
    cells uniformly from the feasible set, ``B`` times; the empirical
    p-value counts draws whose mean rank is at most the observed one.
    """
    if spa.N == 0:
        raise EmptyFeasibleSet(f"person {spa.person_id!r} has an empty feasible set")
    if visits.K == 0:
        raise EmptyVisits(f"person {spa.person_id!r} has no visits")
    if B < 1:
        raise ValueError("B must be at least 1")
    ranks = spa.rank_of()
    inside = [ranks[c] for c in visits.cells if c in ranks]
    k, N = len(inside), spa.N
    share_outside = 1.0 - k / visits.K
    if k == 0:
        return SelectivityResult(spa.person_id, False, 0, N, share_outside, None, None, None, None, None, B)
    s_act = sum(inside)
    t_act = s_act / k
    sums = null_rank_sums(N, k, B, person_rng(seed, spa.person_id))
    means = sums / k
    mu = float(means.mean())
    sd = float(means.std(ddof=1)) if B > 1 else 0.0
    p = (1 + int(np.count_nonzero(sums <= s_act))) / (B + 1)
    if k == N:
        return SelectivityResult(spa.person_id, True, k, N, share_outside, t_act, mu, 0.0, 1.0, None, B)
    d = (t_act - mu) / sd if sd > 0 else None
    return SelectivityResult(spa.person_id, True, k, N, share_outside, t_act, mu, sd, p, d, B)


def hill_diversity(visits):
    """Hill number of order one over visit counts (``VisitSet`` or counts)."""
    counts = np.array([n for _, n in visits.counts] if isinstance(visits, VisitSet) else list(visits), dtype=float)
    counts = counts[counts > 0]
    if counts.size == 0:
        raise EmptyVisits("no visits to compute diversity from")
    p = counts / counts.sum()
    return float(math.exp(-np.sum(p * np.log(p))))


def daily_travel_time(trips):
    """Sum of trip durations per (person, date)."""
    out = defaultdict(float)
    for t in trips:
        out[(t.person_id, t.date)] += t.duration_min
    return dict(out)


def total_travel_time(trips, days=()):
    """Daily total travel time per person, averaged over days with day weights.

    ``days`` lists observed person-days (``DayRecord``); a listed day with no
    trips counts as zero minutes.  Days that only appear in ``trips`` use
    the trips' ``day_weight``.
    """
    daily = daily_travel_time(trips)
    weight = {}
    for t in trips:
        weight.setdefault((t.person_id, t.date), t.day_weight)
    for d in days:
        weight[(d.person_id, d.date)] = d.day_weight
    num, den = defaultdict(float), defaultdict(float)
    for (pid, date), w in sorted(weight.items()):
        num[pid] += w * daily.get((pid, date), 0.0)
        den[pid] += w
    return {pid: num[pid] / den[pid] for pid in sorted(num)}


def weighted_stats(values, weights):
    """Weighted mean and SD with weights normalised to mean one."""
    return weighted_mean_sd(values, weights)


def weighted_median_bootstrap(values, weights, R=200, seed=0):
    """Weighted median and its bootstrap standard error.

    Each replicate resamples ``n`` persons with probability proportional to
    weight and takes the plain median; the SE is the SD of replicate medians.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if R < 1:
        raise ValueError("R must be at least 1")
    med = weighted_median(x, w)
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    prob = w / w.sum()
    reps = np.array([np.median(x[rng.choice(x.size, size=x.size, p=prob)]) for _ in range(R)])
    se = float(reps.std(ddof=1)) if R > 1 else 0.0
    return med, se
