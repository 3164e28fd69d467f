"""Command line entry point: place / run / sweep / compare."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import scenario as sc


def _load(args) -> sc.ScenarioConfig:
    cfg = sc.load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    errors, warnings = sc.validate(cfg)
    for wmsg in warnings:
        print(f"warning: {wmsg}", file=sys.stderr)
    if errors:
        for emsg in errors:
            print(f"error: {emsg}", file=sys.stderr)
        raise SystemExit(2)
    return cfg


def cmd_place(args) -> int:
    cfg = _load(args)
    rows = sc.place_stations(cfg, args.out)
    print(f"placed {len(rows)} stations ({cfg.stations.strategy}); roster in {args.out}/roster.csv")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    roster = None
    if args.roster:
        roster = sc.read_roster(args.roster)
    elif cfg.stations.strategy in ("mclp", "pmedian", "pmedian_constrained"):
        roster = sc.place_stations(cfg, os.path.join(args.out, "placement"))
    result = sc.run_scenario(cfg, roster, args.out)
    print(result.report.to_text())
    print(f"outputs in {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    roster = (
        sc.read_roster(args.roster)
        if args.roster
        else sc.place_stations(cfg, os.path.join(args.out, "placement"))
    )
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "sweep.csv")
    rows = sc.sweep(cfg, roster, args.grid, out_csv, jobs=args.jobs)
    print(f"{len(rows)} sweep points written to {out_csv}")
    return 0


def cmd_compare(args) -> int:
    rows = sc.compare_reports(args.reports, args.baseline, args.out)
    print(f"comparison of {len(rows)} reports written to {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="saevsim",
        description="Simulate SAEV fleet service under charging/battery-swap infrastructure",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("place", help="solve station placement from a base-case day")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("run", help="simulate the configured days and write the bundle")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--roster", default=None, help="station roster CSV (else placed on the fly)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one scenario per grid point and merge reports")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--roster", default=None)
    p.add_argument("--grid", default="outlets=40:120:10")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="relative-change table against a baseline report")
    p.add_argument("reports", nargs="+", help="report.csv files")
    p.add_argument("--baseline", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
