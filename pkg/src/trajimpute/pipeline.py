"""End-to-end steps shared by the command line and scripts.

Each function takes a :class:`RunConfig` and plain data so the CLI stays a
thin argument parser.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .dtw import Phi, ReferenceCollection, apply_phi
from .geo import (
    CoverageStats,
    ParseError,
    Trajectory,
    coverage_stats,
    drop_implausible,
    parse_trajectories,
    select_contiguous_sets,
    write_trajectories,
)
from .harness import (
    ComparisonResult,
    GapScore,
    GridResult,
    OwnSetsResult,
    PreparedSet,
    Scenario,
    comparison_reports,
    format_report_text,
    grid_reports,
    own_sets_reports,
    run_comparison,
    run_own_sets_experiment,
    run_parameter_grid,
    write_records_jsonl,
    write_report_csv,
)
from .impute import DtwbmiParams, ImputationResult, run_method, stream_rng, write_provenance
from .segmentation import SegmentedDay, detect_stay_points, travel_path
from .series import MetricSeries, UnimputableGapError, _floor_local, discretize, find_gaps, write_series_csv
from .synth import PersonaSpec, SynthDataset, generate


def load_trajectories(paths: Sequence[str], fmt: str = "csv") -> list[Trajectory]:
    trajs: list[Trajectory] = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            try:
                trajs.extend(parse_trajectories(fh, fmt))
            except ParseError as exc:
                exc.path = str(p)
                raise
    return trajs


def coverage_table(trajs: Sequence[Trajectory], cfg: RunConfig) -> list[tuple[str, CoverageStats, int]]:
    out = []
    for tr in trajs:
        stats = coverage_stats(tr, cfg.max_gap)
        n_sets = len(select_contiguous_sets([drop_implausible(tr, cfg.max_speed)], cfg.min_span, cfg.max_gap))
        out.append((tr.person_id, stats, n_sets))
    return out


def write_coverage_csv(rows, stream) -> None:
    stream.write("person_id,covered_time_s,coverage_fraction,gap_count,mean_gap_length_s,n_sets\n")
    for pid, s, n in rows:
        stream.write(f"{pid},{s.covered_time!r},{s.coverage_fraction!r},{s.gap_count},{s.mean_gap_length!r},{n}\n")


def segment(tr: Trajectory, cfg: RunConfig) -> SegmentedDay:
    return detect_stay_points(tr, cfg.stay_radius, cfg.stay_duration)


def _inner_grid(seg: SegmentedDay, cfg: RunConfig) -> tuple[float, float]:
    """Grid bounds lying inside the covered span (every element observed)."""
    start = _floor_local(seg.start, cfg.interval, cfg.timezone)
    if start < seg.start:
        start += cfg.interval
    end = _floor_local(seg.end, cfg.interval, cfg.timezone)
    return start, end


def prepare_sets(trajs: Sequence[Trajectory], cfg: RunConfig, metric: str | None = None) -> list[PreparedSet]:
    """Contiguous sets, segmented and discretized on an interior grid."""
    metric = metric or cfg.metric
    raw = []
    for tr in trajs:
        clean = drop_implausible(tr, cfg.max_speed)
        for k, s in enumerate(select_contiguous_sets([clean], cfg.min_span, cfg.max_gap)):
            raw.append((str(k), s))
    counts: dict[str, int] = {}
    for _, s in raw:
        counts[s.person_id] = counts.get(s.person_id, 0) + 1
    out = []
    for set_id, s in raw:
        seg = segment(s, cfg)
        start, end = _inner_grid(seg, cfg)
        if end - start < cfg.interval:
            continue
        series = discretize(
            seg,
            cfg.interval,
            metric,
            start=start,
            end=end,
            max_gap=cfg.max_gap,
            tolerance=cfg.tdtr_tolerance,
            tz=cfg.timezone,
            set_id=set_id,
        )
        out.append(PreparedSet(series, travel_path(seg, cfg.tdtr_tolerance), counts[s.person_id]))
    return out


def scenarios_from(cfg: RunConfig) -> list[Scenario]:
    return [Scenario(g, cfg.n_affected, cfg.seed, st) for st in cfg.strata for g in cfg.gaps]


def dtwbmi_params(cfg: RunConfig) -> DtwbmiParams:
    return DtwbmiParams(
        cfg.dtwbmi_buffer,
        cfg.dtwbmi_window,
        cfg.dtwbmi_specificity,
        cfg.dtwbmi_m,
        cfg.seed,
        kappa_levels=cfg.kappa_levels,
    )


def simulate(sets: Sequence[PreparedSet], cfg: RunConfig) -> ComparisonResult:
    return run_comparison(
        sets,
        cfg.methods,
        scenarios_from(cfg),
        threshold=cfg.travel_threshold,
        master_seed=cfg.seed,
        jobs=cfg.jobs,
        params=dtwbmi_params(cfg),
        kappa_levels=cfg.kappa_levels,
    )


def simulate_grid(sets: Sequence[PreparedSet], cfg: RunConfig) -> GridResult:
    return run_parameter_grid(
        sets,
        scenarios_from(cfg),
        threshold=cfg.travel_threshold,
        master_seed=cfg.seed,
        jobs=cfg.jobs,
        kappa_levels=cfg.kappa_levels,
    )


def simulate_own_sets(sets: Sequence[PreparedSet], cfg: RunConfig) -> OwnSetsResult:
    return run_own_sets_experiment(
        sets,
        base_pool=cfg.own_base_pool,
        seed=cfg.seed,
        repetitions=cfg.own_repetitions,
        threshold=cfg.travel_threshold,
        jobs=cfg.jobs,
        kappa_levels=cfg.kappa_levels,
    )


# -- imputation of naturally occurring gaps ---------------------------------


@dataclass
class ImputeOutput:
    series: list[MetricSeries]
    results: list[tuple[MetricSeries, ImputationResult]]
    skipped: list[tuple[str, int, int, str]]


def impute_gaps(trajs: Sequence[Trajectory], method: str, cfg: RunConfig) -> ImputeOutput:
    """Fill every interior gap of each person's full series with ``method``.

    Donors are the other persons' series; the RNG stream is keyed by person,
    gap and method.
    """
    built = []
    for tr in trajs:
        seg = segment(drop_implausible(tr, cfg.max_speed), cfg)
        s = discretize(seg, cfg.interval, cfg.metric, max_gap=cfg.max_gap, tolerance=cfg.tdtr_tolerance, tz=cfg.timezone)
        built.append((s, travel_path(seg, cfg.tdtr_tolerance)))
    pool = ReferenceCollection.from_series(s for s, _ in built)
    params = dtwbmi_params(cfg)
    results, skipped = [], []
    for s, path in built:
        refs = apply_phi(pool, s.key, Phi(exclude_person="self"))
        for gap in find_gaps(s):
            if not gap.interior:
                continue
            rng = stream_rng(cfg.seed, s.person_id, s.set_id, gap.start_index, method)
            try:
                res = run_method(method, s, gap, refs, path, rng, params=params, kappa_levels=cfg.kappa_levels)
            except UnimputableGapError as exc:
                skipped.append((s.person_id, gap.start_index, gap.length, str(exc)))
                continue
            results.append((s, res))
    return ImputeOutput([s for s, _ in built], results, skipped)


def completed_series(out: ImputeOutput) -> list[list[MetricSeries]]:
    """Per imputation index, every person's series with all its gaps filled."""
    m = max((r.m for _, r in out.results), default=1)
    layers = []
    for k in range(m):
        layer = []
        for s in out.series:
            cur = s
            for owner, r in out.results:
                if owner is s:
                    g = r.gap
                    cur = cur.fill(g.start_index, r.completed[k % r.m].values[g.start_index : g.end_index])
            layer.append(cur)
        layers.append(layer)
    return layers


# -- file outputs -------------------------------------------------------------


def out_path(cfg: RunConfig, name: str) -> Path:
    p = Path(cfg.out) / name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def report_files(reports, records, seed: int, prefix: str, cfg: RunConfig) -> list[Path]:
    buf = io.StringIO()
    write_report_csv(reports, buf, seed)
    paths = [out_path(cfg, f"{prefix}.csv"), out_path(cfg, f"{prefix}.txt"), out_path(cfg, f"{prefix}_records.jsonl")]
    write_text(paths[0], buf.getvalue())
    write_text(paths[1], format_report_text(reports, seed))
    buf = io.StringIO()
    write_records_jsonl(records, buf, seed)
    write_text(paths[2], buf.getvalue())
    return paths


_SCORE_FIELDS = tuple(f.name for f in fields(GapScore))


def reports_from_records(path: str) -> tuple[list, list[dict], int | None]:
    """Re-aggregate a raw records file into comparison tables."""
    seed = None
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            if set(obj) == {"master_seed"}:
                seed = obj["master_seed"]
                continue
            for k in _SCORE_FIELDS:
                if k in obj and obj[k] is None:
                    obj[k] = math.nan
            records.append(obj)
    if records and "cell" in records[0]:
        res = GridResult(*grid_reports(records), records, seed)
        return [res.cell_report(), *res.marginals], records, seed
    if records and "own_level" in records[0]:
        by_level, by_gap = own_sets_reports(records)
        return [*by_level, *by_gap], records, seed
    methods = list(dict.fromkeys(r["method"] for r in records))
    return comparison_reports(records, methods), records, seed


def synthesize(spec: PersonaSpec, cfg: RunConfig) -> tuple[SynthDataset, list[Path]]:
    ds = generate(spec)
    traj_path = out_path(cfg, "synth.csv")
    ledger_path = out_path(cfg, "synth_ledger.json")
    buf = io.StringIO()
    write_trajectories(ds.trajectories, buf)
    write_text(traj_path, buf.getvalue())
    buf = io.StringIO()
    ds.write_ledger(buf)
    write_text(ledger_path, buf.getvalue())
    return ds, [traj_path, ledger_path]


def write_series_file(series: Sequence[MetricSeries], path: Path) -> None:
    buf = io.StringIO()
    write_series_csv(series, buf)
    write_text(path, buf.getvalue())


def write_provenance_file(out: ImputeOutput, path: Path, seed: int) -> None:
    buf = io.StringIO()
    buf.write(json.dumps({"master_seed": seed}) + "\n")
    for s, r in out.results:
        write_provenance([r], buf, {"person_id": s.person_id, "set_id": s.set_id})
    write_text(path, buf.getvalue())


def env_jobs_default() -> int:
    return max(1, os.cpu_count() or 1)
