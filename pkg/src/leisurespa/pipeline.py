"""Run configuration and the end-to-end pipeline.

Stages run in order: ingest, networks, feasible sets, selectivity,
diversity and travel time, descriptive statistics, path model, map layers.
Each stage writes its own files into the output directory; a failed run
leaves a ``FAILED`` sentinel next to whatever was written.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import access, behavior, ingest, pathmodel
from .errors import BadValue
from .router import (
    DEFAULT_MAX_TRANSFERS, DEFAULT_MAX_WALK_M, DEFAULT_SNAP_M, DEFAULT_WALK_KMH, RoadNetwork, build_transit,
)
from .spatial import BBox, load_index
from .wstats import weighted_mean_sd, weighted_median, weighted_share

log = logging.getLogger(__name__)

SENTINEL = "FAILED"
PATH_KEYS = ("persons", "trips", "days", "pois", "roads_nodes", "roads_edges", "gtfs", "cells", "model")


def parse_clock(value):
    """Seconds since midnight from ``"HH:MM[:SS]"`` or a plain integer."""
    if isinstance(value, (int, float)):
        return int(value)
    s = str(value).strip()
    if ":" not in s:
        return int(s)
    parts = [int(x) for x in s.split(":")]
    if len(parts) == 2:
        parts.append(0)
    h, m, sec = parts
    return h * 3600 + m * 60 + sec


@dataclass
class RunConfig:
    """Every tunable of a run.  Paths are relative to ``base_dir``."""

    persons: str | None = None
    trips: str | None = None
    days: str | None = None
    pois: str | None = None
    roads_nodes: str | None = None
    roads_edges: str | None = None
    gtfs: str | None = None
    cells: str | None = None
    model: str | None = None
    date: str | None = None
    depart: int = 17 * 3600
    tb_min: float = 90.0
    B: int = 1000
    bootstrap_R: int = 200
    seed: int = 0
    mode_policy: str = "person_main_mode"
    poi_confidence: float = 0.7
    hex_mode: str = "lattice"
    bbox: str | None = None
    cells_from: str = "tokens"
    walk_kmh: float = DEFAULT_WALK_KMH
    snap_radius_m: float = DEFAULT_SNAP_M
    max_walk_m: float = DEFAULT_MAX_WALK_M
    max_transfers: int = DEFAULT_MAX_TRANSFERS
    diversity_resolution: str = "coarse"
    vif_threshold: float = 7.0
    vif_var_eps: float = 0.005
    workers: int = 1
    out: str = "out"
    base_dir: str = "."

    def __post_init__(self):
        self.depart = parse_clock(self.depart)
        if not self.tb_min > 0:
            raise BadValue("tb_min must be positive")
        if self.B < 1 or self.bootstrap_R < 1:
            raise BadValue("B and bootstrap_R must be at least 1")
        if self.mode_policy not in access.MODE_POLICIES:
            raise BadValue(f"unknown mode_policy {self.mode_policy!r}")
        if not 0 <= self.poi_confidence <= 1:
            raise BadValue("poi_confidence must lie in [0, 1]")
        if self.diversity_resolution not in ("fine", "coarse"):
            raise BadValue("diversity_resolution must be fine or coarse")

    def path(self, key):
        v = getattr(self, key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def analysis_date(self):
        if not self.date:
            raise BadValue("config needs an analysis date")
        return dt.date.fromisoformat(self.date)

    @property
    def budget(self):
        return access.BudgetSpec(self.tb_min, self.depart)

    def resolved(self):
        """Key/value pairs with absolute paths."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in PATH_KEYS and v is not None:
                v = str(self.path(f.name).resolve())
            elif f.name == "base_dir":
                v = str(Path(v).resolve())
            out[f.name] = v
        return out

    def to_text(self):
        return "".join(f"{k} = {'' if v is None else v}\n" for k, v in self.resolved().items())


def _coerce(name, raw):
    ftype = {f.name: f for f in fields(RunConfig)}[name]
    default = ftype.default
    raw = raw.strip()
    if raw == "" and default is None:
        return None
    if name == "depart":
        return parse_clock(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text, base_dir="."):
    values = {}
    known = {f.name for f in fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadValue(f"config line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in known:
            raise BadValue(f"config line {lineno}: unknown key {k!r}")
        values[k] = _coerce(k, v)
    values.setdefault("base_dir", str(base_dir))
    return values


def load_config(path=None, overrides=None):
    """Config from a key = value file with command-line overrides applied."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise BadValue(f"config file {p} not found")
        values = parse_config_text(p.read_text(encoding="utf-8"), base_dir=p.parent)
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, str(v)) if isinstance(v, str) else v
    return RunConfig(**values)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


@dataclass
class Inputs:
    config: RunConfig
    index: object
    road_source: object
    gtfs: object
    pois: list
    persons: list
    trips: list
    days: list

    def counts(self):
        c = {
            "persons": len(self.persons), "trips": len(self.trips), "days": len(self.days), "pois": len(self.pois),
            "road_nodes": len(self.road_source.nodes), "road_edges": len(self.road_source.edges),
        }
        if self.gtfs is not None:
            c.update({f"gtfs_{k}": v for k, v in self.gtfs.counts().items()})
        return c


def _index_for(cfg, road_source):
    bbox = None
    if cfg.hex_mode == "lattice":
        if cfg.bbox:
            bbox = BBox(*(float(x) for x in cfg.bbox.split(",")))
        else:
            bbox = BBox.around([n.lat for n in road_source.nodes], [n.lon for n in road_source.nodes], pad_m=1000.0)
    return load_index(cfg.hex_mode, bbox=bbox, cells_path=cfg.path("cells"))


def _need(cfg, key):
    p = cfg.path(key)
    if p is None:
        raise BadValue(f"config is missing the {key!r} input")
    return p


def load_inputs(cfg, need_transit=True, need_trips=True):
    road_source = ingest.parse_roads(_need(cfg, "roads_nodes"), _need(cfg, "roads_edges"))
    gtfs = ingest.parse_gtfs(_need(cfg, "gtfs")) if need_transit else None
    index = _index_for(cfg, road_source)
    pois = ingest.parse_pois(_need(cfg, "pois"), cfg.poi_confidence)
    persons = ingest.parse_persons(_need(cfg, "persons"), index, cfg.cells_from)
    trips = ingest.parse_trips(_need(cfg, "trips"), index) if need_trips else []
    days = ingest.parse_days(cfg.path("days")) if (need_trips and cfg.days) else []
    persons = ingest.attach_commutes(persons, trips)
    return Inputs(cfg, index, road_source, gtfs, pois, persons, trips, days)


def needs_transit(cfg, persons):
    if cfg.mode_policy == "force_transit":
        return True
    if cfg.mode_policy == "force_car":
        return False
    return any(access.person_mode(p, cfg.mode_policy) == "transit" for p in persons)


def compute_spa(inp):
    cfg = inp.config
    road = RoadNetwork(inp.road_source, walk_kmh=cfg.walk_kmh, snap_radius_m=cfg.snap_radius_m)
    transit = None
    if needs_transit(cfg, inp.persons):
        transit = build_transit(inp.gtfs, road, cfg.analysis_date, cfg.max_walk_m, cfg.max_transfers)
    return access.spa_population(inp.persons, inp.pois, road, transit, cfg.budget, cfg.mode_policy,
                                 index=inp.index, workers=cfg.workers)


def run_selectivity(sets, visits, cfg):
    out = []
    for s in sets:
        v = visits.get(s.person_id)
        if s.N == 0 or v is None:
            out.append((s.person_id, "empty_set" if s.N == 0 else "no_visits", None))
            continue
        r = behavior.selectivity_test(s, v, cfg.B, cfg.seed)
        out.append((s.person_id, "ok" if r.applicable else "not_applicable", r))
    return out


def person_metrics(inp):
    """Visits, diversity and total travel time per person."""
    visits = behavior.visits_from_trips(inp.trips, inp.index, "coarse")
    div_visits = visits if inp.config.diversity_resolution == "coarse" else \
        behavior.visits_from_trips(inp.trips, inp.index, "fine")
    diversity = {pid: behavior.hill_diversity(v) for pid, v in div_visits.items()}
    ttime = behavior.total_travel_time(inp.trips, inp.days)
    return visits, div_visits, diversity, ttime


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        if not math.isfinite(x):
            return ""
        return format(x, ".10g")
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(x) for x in r])


def write_spa(out, sets):
    write_csv(out / "spa.csv", ("person_id", "mode", "t_hw_min", "A_i", "log1p_A", "commute_fallback"),
              [(s.person_id, s.mode, s.t_hw_min, s.A, s.log1p_A, s.commute_fallback) for s in sets])
    write_csv(out / "spa_sets.csv", ("person_id", "coarse_cell", "rank", "best_remaining_min", "poi_count"),
              [(s.person_id, e.coarse_cell, e.rank, e.best_remaining_min, e.poi_count) for s in sets for e in s.entries])


def write_selectivity(out, results):
    rows = []
    for pid, status, r in results:
        if r is None:
            rows.append((pid, status) + (None,) * 9)
        else:
            rows.append((pid, status, r.k, r.N, r.share_outside, r.T_act, r.null_mean, r.null_sd, r.p_value, r.d, r.B))
    write_csv(out / "selectivity.csv", ("person_id", "status", "k", "N", "share_outside", "T_act", "null_mean",
                                        "null_sd", "p_value", "d", "B"), rows)


def write_diversity(out, div_visits, diversity, ttime):
    rows = []
    for pid in sorted(set(diversity) | set(ttime)):
        v = div_visits.get(pid)
        rows.append((pid, v.n if v else 0, v.K if v else 0, diversity.get(pid), ttime.get(pid)))
    write_csv(out / "diversity.csv", ("person_id", "n_visits", "K", "H1", "total_travel_time_min"), rows)


def summary_stats(persons, sets=None, diversity=None, ttime=None, R=200, seed=0):
    """Rows of (variable, level, statistic, value, se_or_sd) for the descriptive summary table."""
    w = np.array([p.weight for p in persons], dtype=float)
    rows = []
    for attr, levels in ingest.VOCABULARIES.items():
        vals = [p.attributes.get(attr) for p in persons]
        for lvl in levels:
            rows.append((attr, lvl, "weighted_pct", weighted_share([v == lvl for v in vals], w), None))
    for attr in ingest.NUMERIC_ATTRIBUTES:
        pairs = [(p.attributes.get(attr), p.weight) for p in persons if p.attributes.get(attr) is not None]
        if pairs:
            m, sd = weighted_mean_sd([a for a, _ in pairs], [b for _, b in pairs])
            rows.append((attr, "", "weighted_mean", m, sd))
    if sets is not None:
        la = [s.log1p_A for s in sets]
        rows.append(("spa", "nonzero", "weighted_pct", weighted_share([s.A > 0 for s in sets], w), None))
        m, sd = weighted_mean_sd(la, w)
        rows.append(("spa_log1p", "", "weighted_mean", m, sd))
        med, se = behavior.weighted_median_bootstrap(la, w, R, seed)
        rows.append(("spa_log1p", "", "weighted_median", med, se))
    for name, values in (("total_travel_time_min", ttime), ("diversity_H1", diversity)):
        if not values:
            continue
        pairs = [(values[p.person_id], p.weight) for p in persons if p.person_id in values]
        x, ww = [a for a, _ in pairs], [b for _, b in pairs]
        m, sd = weighted_mean_sd(x, ww)
        rows.append((name, "", "weighted_mean", m, sd))
        med, se = behavior.weighted_median_bootstrap(x, ww, R, seed)
        rows.append((name, "", "weighted_median", med, se))
    return rows


def write_stats(out, rows):
    write_csv(out / "stats.csv", ("variable", "level", "statistic", "value", "se_or_sd"), rows)


Z_CANDIDATES = ("hh_couple_kids", "hh_alone", "active_mode_yes", "woman", "higher_edu", "age", "poverty_rate")
M_VARS = ("car_main", "pt_sub")


def path_data(persons, sets, diversity, ttime):
    """Model variables for persons with a diversity value and a finite commute."""
    spa = {s.person_id: s for s in sets}
    rows = []
    for p in persons:
        s = spa.get(p.person_id)
        if s is None or p.person_id not in diversity or not math.isfinite(s.t_hw_min):
            continue
        a = p.attributes
        rows.append({
            "person_id": p.person_id,
            "weight": p.weight,
            "hh_couple_kids": float(a.get("household_type") == "couple_with_children"),
            "hh_alone": float(a.get("household_type") == "living_alone"),
            "active_mode_yes": float(a.get("active_mode") == "yes"),
            "woman": float(a.get("gender") == "woman"),
            "higher_edu": float(a.get("education") in ("higher_3_4y", "higher_5y_plus")),
            "age": a.get("age") if a.get("age") is not None else math.nan,
            "poverty_rate": a.get("poverty_rate") if a.get("poverty_rate") is not None else math.nan,
            "car_main": float(a.get("main_mode") == "car"),
            "pt_sub": float(a.get("pt_subscription") == "yes"),
            "log1p_A": s.log1p_A,
            "travel_time": ttime.get(p.person_id, 0.0),
            "diversity": diversity[p.person_id],
        })
    return [r for r in rows if all(not (isinstance(v, float) and math.isnan(v)) for v in r.values())]


PATH_COLUMNS = ("person_id", "weight") + Z_CANDIDATES + M_VARS + ("log1p_A", "travel_time", "diversity")


def read_data_csv(path):
    fields_, rows = ingest.read_table(path)
    cols = {}
    for f in fields_:
        vals = [r[f] for r in rows]
        try:
            cols[f] = np.array([float(v) for v in vals])
        except ValueError:
            cols[f] = np.array(vals, dtype=object)
    return cols


def fit_path_model(data, dag, weight_col=None, vif_threshold=7.0, var_eps=0.005):
    """Prune exogenous candidates by VIF, fit the DAG and decompose its exposure effect."""
    w = np.asarray(data[weight_col], dtype=float) if weight_col else None
    z = [v for v in dag.exogenous]
    vif = pathmodel.vif_prune(z, data, w, vif_threshold, var_eps) if len(z) >= 2 else \
        pathmodel.VifReport(z, [])
    keep = [v for v in dag.nodes if v not in {d[0] for d in vif.dropped}]
    dag = dag.restricted_to(keep)
    fit = pathmodel.fit_paths(dag, data, w)
    effects = []
    if dag.exposure and dag.outcome:
        effects.append(pathmodel.decompose_effects(fit, dag.exposure, dag.outcome))
    checks = pathmodel.check_dag(dag, data, w)
    return fit, effects, vif, checks


def write_pathfit(out, fit, effects, vif, checks):
    report = pathmodel.report_dict(fit, effects)
    report["vif_dropped"] = [{"variable": v, "reason": r, "value": x} for v, r, x in vif.dropped]
    report["implied_independencies"] = [dataclasses.asdict(c) for c in checks]
    with open(out / "pathfit.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "pathfit.txt", "w", encoding="utf-8") as fh:
        fh.write(pathmodel.format_report(fit, effects))
        if vif.dropped:
            fh.write("\nDropped before fitting: " + ", ".join(f"{v} ({r} {x:.3g})" for v, r, x in vif.dropped) + "\n")


def cell_layers(persons, sets, diversity, ttime, index):
    """Per home coarse cell: weighted share with A > 0, median travel time, median diversity."""
    spa = {s.person_id: s for s in sets}
    groups = {}
    for p in persons:
        groups.setdefault(index.parent(p.home_cell), []).append(p)
    features = []
    for cell in sorted(groups):
        ps = groups[cell]
        w = [p.weight for p in ps]
        props = {
            "cell": cell,
            "n_persons": len(ps),
            "weight_sum": float(sum(w)),
            "share_nonzero_A": weighted_share([spa[p.person_id].A > 0 for p in ps], w),
        }
        for key, values in (("median_travel_time_min", ttime), ("median_diversity_H1", diversity)):
            pairs = [(values[p.person_id], p.weight) for p in ps if p.person_id in values]
            props[key] = weighted_median([a for a, _ in pairs], [b for _, b in pairs]) if pairs else None
        lat, lon = index.centroid(cell)
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [round(lon, 7), round(lat, 7)]},
            "properties": {k: (round(v, 6) if isinstance(v, float) else v) for k, v in props.items()},
        })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(out, layer):
    with open(out / "cells.geojson", "w", encoding="utf-8") as fh:
        json.dump(layer, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def run_pipeline(cfg):
    """Run every stage and return the output directory.

    Inputs are parsed and validated before anything is written, so an input
    error leaves no outputs.  Errors after that point leave a ``FAILED``
    sentinel with the message and re-raise.
    """
    inp = load_inputs(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sentinel = out / SENTINEL
    if sentinel.exists():
        sentinel.unlink()
    try:
        (out / "resolved_config.txt").write_text(cfg.to_text(), encoding="utf-8")
        pop = compute_spa(inp)
        write_spa(out, pop.sets)
        visits, div_visits, diversity, ttime = person_metrics(inp)
        write_selectivity(out, run_selectivity(pop.sets, visits, cfg))
        write_diversity(out, div_visits, diversity, ttime)
        write_stats(out, summary_stats(inp.persons, pop.sets, diversity, ttime, cfg.bootstrap_R, cfg.seed))
        write_geojson(out, cell_layers(inp.persons, pop.sets, diversity, ttime, inp.index))
        rows = path_data(inp.persons, pop.sets, diversity, ttime)
        write_csv(out / "pathdata.csv", PATH_COLUMNS, [[r[c] for c in PATH_COLUMNS] for r in rows])
        data = {c: np.array([r[c] for r in rows], dtype=float) for c in PATH_COLUMNS[1:]}
        dag = pathmodel.load_model(cfg.path("model")) if cfg.model else \
            pathmodel.fig6_dag(list(Z_CANDIDATES), list(M_VARS), "log1p_A", "travel_time", "diversity")
        write_pathfit(out, *fit_path_model(data, dag, dag.weight or "weight", cfg.vif_threshold, cfg.vif_var_eps))
    except Exception as exc:
        sentinel.write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise
    return out
