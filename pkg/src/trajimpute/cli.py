"""Command-line front end.

Settings resolve as defaults < ``--config`` file < ``TRAJIMPUTE_*`` env vars <
flags. Outputs go under ``--out``; every report records the master seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Sequence

from . import __version__, pipeline
from .config import RunConfig
from .geo import ParseError, write_trajectories
from .harness import GRID_FACTORS
from .impute import METHODS
from .synth import PersonaSpec

STORE = "trajectories.csv"
EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _methods(text: str) -> str:
    for m in text.split(","):
        if m.strip() and m.strip() not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {m.strip()!r}; choose from {', '.join(METHODS)}")
    return text


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


# flag dest -> config key
_FLAG_KEYS = {
    "out": "out",
    "jobs": "jobs",
    "seed": "seed",
    "format": "input_format",
    "tz": "timezone",
    "interval": "interval",
    "max_gap": "max_gap",
    "metric": "metric",
    "methods": "methods",
    "threshold": "travel_threshold",
}

_SCENARIO_KEYS = {"gaps": "gaps", "n": "n_affected", "strata": "strata"}


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", help="INI file with a [trajimpute] section")
    g.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    g.add_argument("--set", action="append", default=[], type=_key_value, metavar="KEY=VALUE", help="override any config key")
    g.add_argument("--out", help="output directory")
    g.add_argument("--jobs", type=int, help="worker processes")
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--format", choices=("csv", "jsonl"), help="input format")
    g.add_argument("--tz", help="dataset timezone (IANA name)")
    g.add_argument("--interval", help="series interval, e.g. 15min")
    g.add_argument("--max-gap", help="longest tolerated gap between fixes, e.g. 360s")
    g.add_argument("--metric", help="series metric")
    g.add_argument("--threshold", help="travel threshold (km per interval)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="trajimpute", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse trajectories, write the canonical store and coverage table")
    _common(p)
    p.add_argument("inputs", nargs="*")

    p = sub.add_parser("segment", help="stay points, tracks and per-set metric series")
    _common(p)
    p.add_argument("inputs", nargs="*")

    p = sub.add_parser("impute", help="fill naturally occurring gaps")
    _common(p)
    p.add_argument("inputs", nargs="*")
    p.add_argument("--method", required=True, choices=METHODS)

    p = sub.add_parser("simulate", help="induce gaps and compare methods")
    _common(p)
    p.add_argument("inputs", nargs="*")
    p.add_argument("--methods", type=_methods, help="comma-separated methods")
    p.add_argument("--scenario", help="e.g. 'gaps=1h,3h;n=100;strata=night,day'")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--grid", choices=("full", "appendix-a"), help="full 108-cell DTWBMI parameter grid")
    mode.add_argument("--own-sets", action="store_true", help="own reference sets experiment")

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    _common(p)
    p.add_argument("--persons", type=int, default=PersonaSpec.n_persons)
    p.add_argument("--days", type=int, default=PersonaSpec.n_days)
    p.add_argument("--mix", default=",".join(str(x) for x in PersonaSpec.mix), help="routine,variable,atypical weights")
    p.add_argument("--multi-set-fraction", type=float, default=PersonaSpec.multi_set_fraction)
    p.add_argument("--noise", type=float, default=PersonaSpec.noise_m, help="positional noise (m)")
    p.add_argument("--start", default=PersonaSpec.start)

    p = sub.add_parser("report", help="re-aggregate a records file into report tables")
    _common(p)
    p.add_argument("records")
    p.add_argument("--name", default="report", help="output file prefix")
    return ap


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_ini(Path(args.config).read_text(encoding="utf-8"), cfg)
    cfg = RunConfig.from_env(environ, cfg)
    flags: dict[str, str] = {}
    for dest, key in _FLAG_KEYS.items():
        v = getattr(args, dest, None)
        if v is not None:
            flags[key] = str(v)
    if getattr(args, "inputs", None):
        flags["input"] = ",".join(args.inputs)
    scenario = getattr(args, "scenario", None)
    if scenario:
        for part in scenario.split(";"):
            if not part.strip():
                continue
            k, v = _key_value(part)
            if k not in _SCENARIO_KEYS:
                raise UsageError(f"unknown scenario key {k!r}; choose from {', '.join(_SCENARIO_KEYS)}")
            flags[_SCENARIO_KEYS[k]] = v
    for k, v in args.set:
        flags[k] = v
    return RunConfig.from_strings(flags, cfg)


def _inputs(cfg: RunConfig) -> list[str]:
    if cfg.input:
        return list(cfg.input)
    store = Path(cfg.out) / STORE
    if store.exists():
        return [str(store)]
    raise UsageError(f"no input given and no store at {store}; run ingest first")


def _trajectories(cfg: RunConfig):
    fmt = cfg.input_format if cfg.input else "csv"
    return pipeline.load_trajectories(_inputs(cfg), fmt)


def _record_config(cfg: RunConfig, command: str) -> Path:
    path = pipeline.out_path(cfg, f"{command}_config.ini")
    pipeline.write_text(path, cfg.to_ini())
    return path


# -- commands -----------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, args) -> dict:
    trajs = pipeline.load_trajectories(_inputs(cfg), cfg.input_format)
    buf = io.StringIO()
    write_trajectories(trajs, buf)
    store = pipeline.out_path(cfg, STORE)
    pipeline.write_text(store, buf.getvalue())
    buf = io.StringIO()
    pipeline.write_coverage_csv(pipeline.coverage_table(trajs, cfg), buf)
    cov = pipeline.out_path(cfg, "coverage.csv")
    pipeline.write_text(cov, buf.getvalue())
    return {"persons": len(trajs), "outputs": [str(store), str(cov)]}


def cmd_segment(cfg: RunConfig, args) -> dict:
    trajs = _trajectories(cfg)
    seg_path = pipeline.out_path(cfg, "segments.jsonl")
    buf = io.StringIO()
    for tr in trajs:
        pipeline.segment(tr, cfg).to_jsonl(buf)
    pipeline.write_text(seg_path, buf.getvalue())
    sets = pipeline.prepare_sets(trajs, cfg)
    series_path = pipeline.out_path(cfg, "series.csv")
    pipeline.write_series_file([s.series for s in sets], series_path)
    return {"persons": len(trajs), "sets": len(sets), "outputs": [str(seg_path), str(series_path)]}


def cmd_impute(cfg: RunConfig, args) -> dict:
    out = pipeline.impute_gaps(_trajectories(cfg), args.method, cfg)
    paths = []
    for k, layer in enumerate(pipeline.completed_series(out)):
        p = pipeline.out_path(cfg, f"imputed_{args.method}_{k}.csv")
        pipeline.write_series_file(layer, p)
        paths.append(p)
    prov = pipeline.out_path(cfg, f"provenance_{args.method}.jsonl")
    pipeline.write_provenance_file(out, prov, cfg.seed)
    skipped = pipeline.out_path(cfg, f"skipped_{args.method}.csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("person_id", "gap_start", "gap_length", "reason"))
    w.writerows(out.skipped)
    pipeline.write_text(skipped, buf.getvalue())
    return {
        "gaps_imputed": len(out.results),
        "gaps_skipped": len(out.skipped),
        "outputs": [str(p) for p in (*paths, prov, skipped)],
    }


def cmd_simulate(cfg: RunConfig, args) -> dict:
    sets = pipeline.prepare_sets(_trajectories(cfg), cfg)
    if args.grid:
        res = pipeline.simulate_grid(sets, cfg)
        reports = [res.cell_report(), *res.marginals]
        paths = pipeline.report_files(reports, res.records, cfg.seed, "grid", cfg)
        return {"cells": len(res.cells), "factors": [f for f, _ in GRID_FACTORS], "outputs": [str(p) for p in paths]}
    if args.own_sets:
        res = pipeline.simulate_own_sets(sets, cfg)
        paths = pipeline.report_files([*res.by_level, *res.by_gap_and_level], res.records, cfg.seed, "own_sets", cfg)
        return {"records": len(res.records), "outputs": [str(p) for p in paths]}
    res = pipeline.simulate(sets, cfg)
    paths = pipeline.report_files(res.reports, res.records, cfg.seed, "simulate", cfg)
    return {"records": len(res.records), "outputs": [str(p) for p in paths]}


def cmd_synth(cfg: RunConfig, args) -> dict:
    try:
        mix = tuple(float(x) for x in args.mix.split(","))
    except ValueError:
        raise UsageError(f"bad --mix {args.mix!r}") from None
    spec = PersonaSpec(args.persons, args.days, mix, args.multi_set_fraction, args.noise, args.start, cfg.seed)
    ds, paths = pipeline.synthesize(spec, cfg)
    return {"persons": len(ds.trajectories), "outputs": [str(p) for p in paths]}


def cmd_report(cfg: RunConfig, args) -> dict:
    reports, records, seed = pipeline.reports_from_records(args.records)
    seed = cfg.seed if seed is None else seed
    paths = pipeline.report_files(reports, records, seed, args.name, cfg)
    return {"records": len(records), "outputs": [str(p) for p in paths]}


COMMANDS = {
    "ingest": cmd_ingest,
    "segment": cmd_segment,
    "impute": cmd_impute,
    "simulate": cmd_simulate,
    "synth": cmd_synth,
    "report": cmd_report,
}


def _error(command: str, exc: Exception, code: int) -> int:
    info = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ParseError):
        info["line"] = exc.line
        info["path"] = getattr(exc, "path", None)
    sys.stderr.write(json.dumps(info) + "\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except (UsageError, ValueError, OSError) as exc:
        return _error(args.command, exc, EXIT_USAGE)
    if args.print_config:
        sys.stdout.write(cfg.to_ini())
        return EXIT_OK
    try:
        summary = COMMANDS[args.command](cfg, args)
        summary["config"] = str(_record_config(cfg, args.command))
    except UsageError as exc:
        return _error(args.command, exc, EXIT_USAGE)
    except (ValueError, OSError) as exc:
        return _error(args.command, exc, EXIT_ERROR)
    sys.stdout.write(json.dumps({"status": "ok", "command": args.command, "master_seed": cfg.seed, **summary}) + "\n")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
