"""Command-line entry point.

Every subcommand accepts ``--config FILE`` plus one flag per config key
(``--tb-min 60``, ``--mode-policy force_car`` ...); flags win over the
file.  Errors exit with the code of the raised toolkit error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import pathmodel, pipeline
from .errors import SpaError

log = logging.getLogger("leisurespa")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("-v", "--verbose", action="store_true")
    for f in fields(pipeline.RunConfig):
        if f.name == "base_dir":
            continue
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", default=None, metavar="VALUE")
    return p


def _config(args):
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    return pipeline.load_config(args.config, overrides)


def _out(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args):
    from .synth import SynthSpec, write_input_dir

    values = {}
    for item in args.spec or ():
        k, _, v = item.partition("=")
        values[k.strip()] = v.strip()
    base = SynthSpec()
    typed = {}
    for k, v in values.items():
        if not hasattr(base, k):
            raise SystemExit(f"unknown synth parameter {k!r}")
        cur = getattr(base, k)
        if isinstance(cur, bool):
            typed[k] = v.lower() in ("1", "true", "yes")
        elif isinstance(cur, int):
            typed[k] = int(v)
        elif isinstance(cur, float):
            typed[k] = float(v)
        elif isinstance(cur, tuple):
            typed[k] = tuple(float(x) for x in v.split(","))
        elif k == "date":
            typed[k] = dt.date.fromisoformat(v)
        else:
            typed[k] = v
    if args.cfg_seed is not None:
        typed["seed"] = int(args.cfg_seed)
    spec = dataclasses.replace(base, **typed)
    out = write_input_dir(spec, args.cfg_out or "synth_input", workers=int(args.cfg_workers or 1))
    print(f"wrote synthetic inputs to {out}")
    return 0


def cmd_ingest_check(args):
    cfg = _config(args)
    inp = pipeline.load_inputs(cfg)
    for k, v in inp.counts().items():
        print(f"{k}\t{v}")
    return 0


def _read_points(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return {r["id"]: (float(r["lat"]), float(r["lon"])) for r in csv.DictReader(fh)}


def cmd_matrix(args):
    from .router import RoadNetwork, build_transit, car_travel_time, transit_travel_time

    cfg = _config(args)
    road = RoadNetwork(pipeline.ingest.parse_roads(pipeline._need(cfg, "roads_nodes"), pipeline._need(cfg, "roads_edges")),
                       walk_kmh=cfg.walk_kmh, snap_radius_m=cfg.snap_radius_m)
    origins = _read_points(args.origins)
    dests = _read_points(args.dests or args.origins)
    rows = []
    if args.mode == "transit":
        net = build_transit(pipeline.ingest.parse_gtfs(pipeline._need(cfg, "gtfs")), road, cfg.analysis_date,
                            cfg.max_walk_m, cfg.max_transfers)
    for oid, pt in origins.items():
        if args.mode == "car":
            m = car_travel_time(road, pt, dests, cfg.depart, oid)
        else:
            m = transit_travel_time(net, pt, dests, cfg.depart, oid)
        rows += [(oid, did, args.mode, cfg.depart, t) for did, t in m.times.items()]
    out = _out(cfg)
    pipeline.write_csv(out / f"matrix_{args.mode}.csv", ("origin", "dest", "mode", "depart_s", "travel_s"), rows)
    print(f"{len(rows)} reachable pairs -> {out / f'matrix_{args.mode}.csv'}")
    return 0


def cmd_spa(args):
    cfg = _config(args)
    inp = pipeline.load_inputs(cfg)
    pop = pipeline.compute_spa(inp)
    pipeline.write_spa(_out(cfg), pop.sets)
    print(f"persons {len(pop.sets)}; weighted share A>0 = {pop.share_nonzero:.1f}%; "
          f"mean log1p(A) = {pop.mean_log1p:.3f} ({pop.sd_log1p:.3f})")
    return 0


def cmd_selectivity(args):
    cfg = _config(args)
    inp = pipeline.load_inputs(cfg)
    pop = pipeline.compute_spa(inp)
    visits = pipeline.behavior.visits_from_trips(inp.trips, inp.index, "coarse")
    res = pipeline.run_selectivity(pop.sets, visits, cfg)
    pipeline.write_selectivity(_out(cfg), res)
    ds = [r.d for _, st, r in res if r is not None and r.d is not None]
    med = float(np.median(ds)) if ds else float("nan")
    print(f"tested {sum(1 for _, st, _ in res if st == 'ok')} persons; median d = {med:.3f}")
    return 0


def cmd_diversity(args):
    cfg = _config(args)
    inp = pipeline.load_inputs(cfg, need_transit=False)
    _, div_visits, diversity, ttime = pipeline.person_metrics(inp)
    pipeline.write_diversity(_out(cfg), div_visits, diversity, ttime)
    print(f"diversity for {len(diversity)} persons")
    return 0


def cmd_stats(args):
    cfg = _config(args)
    inp = pipeline.load_inputs(cfg)
    pop = pipeline.compute_spa(inp)
    _, _, diversity, ttime = pipeline.person_metrics(inp)
    rows = pipeline.summary_stats(inp.persons, pop.sets, diversity, ttime, cfg.bootstrap_R, cfg.seed)
    pipeline.write_stats(_out(cfg), rows)
    for r in rows:
        print("\t".join(pipeline.fmt(x) for x in r))
    return 0


def cmd_pathfit(args):
    cfg = _config(args)
    dag = pathmodel.load_model(pipeline._need(cfg, "model"))
    data = pipeline.read_data_csv(args.data)
    weight = args.weight or dag.weight
    fit, effects, vif, checks = pipeline.fit_path_model(data, dag, weight, cfg.vif_threshold, cfg.vif_var_eps)
    out = _out(cfg)
    pipeline.write_pathfit(out, fit, effects, vif, checks)
    sys.stdout.write(pathmodel.format_report(fit, effects))
    return 0


def cmd_decompose(args):
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            report = json.load(fh)
        coefs, cov = pathmodel.coefficients_from_report(report)
        dag = pathmodel.parse_model(report["model"])
        exposure = args.exposure or dag.exposure
        outcome = args.outcome or dag.outcome
    else:
        coefs, cov = {}, None
        for item in args.coef or ():
            edge, _, value = item.partition("=")
            src, _, tgt = edge.partition("->")
            coefs[(src.strip(), tgt.strip())] = float(value)
        exposure, outcome = args.exposure, args.outcome
    eff = pathmodel.decompose_effects(coefs, exposure, outcome, cov)
    print(json.dumps(pathmodel.effect_dict(eff), indent=2, sort_keys=True))
    return 0


def cmd_run(args):
    cfg = _config(args)
    out = pipeline.run_pipeline(cfg)
    print(f"outputs written to {out}")
    return 0


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="leisurespa", description="Space-time accessibility to leisure toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic input directory")
    p.add_argument("--spec", nargs="*", metavar="KEY=VALUE", help="synthetic spec overrides, e.g. rows=6")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest-check", parents=[common], help="parse and validate all inputs")
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("matrix", parents=[common], help="one-to-many travel-time matrix")
    p.add_argument("--mode", choices=("car", "transit"), required=True)
    p.add_argument("--origins", required=True, help="CSV with id, lat, lon")
    p.add_argument("--dests", help="CSV with id, lat, lon (default: origins)")
    p.set_defaults(func=cmd_matrix)

    for name, func, text in (
        ("spa", cmd_spa, "feasible sets (spa.csv, spa_sets.csv)"),
        ("selectivity", cmd_selectivity, "selectivity test per person"),
        ("diversity", cmd_diversity, "visit diversity and total travel time"),
        ("stats", cmd_stats, "weighted descriptive statistics"),
        ("run", cmd_run, "full pipeline"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)

    p = sub.add_parser("pathfit", parents=[common], help="fit a path model to a data table")
    p.add_argument("--data", required=True, help="CSV with one column per model variable")
    p.add_argument("--weight", help="weight column (default: the model's weight line)")
    p.set_defaults(func=cmd_pathfit)

    p = sub.add_parser("decompose", parents=[common], help="direct/indirect/total effects")
    p.add_argument("--report", help="pathfit.json from a previous fit")
    p.add_argument("--coef", nargs="*", metavar="SRC->TGT=VALUE", help="coefficients given by hand")
    p.add_argument("--exposure")
    p.add_argument("--outcome")
    p.set_defaults(func=cmd_decompose)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SpaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
