"""Missingness simulation, per-gap scoring and report tables."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from .dtw import Phi, ReferenceCollection, apply_phi
from .impute import (
    DEFAULT_TRAVEL_THRESHOLD_KM,
    HOUR,
    METHODS,
    DtwbmiParams,
    ImputationResult,
    candidates_for,
    impute_dtwbmi,
    run_method,
    stream_rng,
)
from .segmentation import TravelPath
from .series import GapSpec, MetricSeries, UnimputableGapError

NIGHT_START = 22 * HOUR
NIGHT_END = 5 * HOUR
STANDARD_GAP_HOURS = (1, 3, 6, 10, 12)
OWN_SET_GAP_HOURS = (1, 3, 6, 8, 12)

METHOD_LABELS = {
    "li": "LI",
    "mi": "MI",
    "twi": "TWI",
    "dtwbi": "DTWBI",
    "dtwbmi-hi": "DTWBMI-HI",
    "dtwbmi-lo": "DTWBMI-LO",
}

SPECIFICITY_LEVELS = (("Low", "low"), ("Medium", "medium"), ("High", "high"))
BUFFER_LEVELS = (("1 hour", 1 * HOUR), ("4 hours", 4 * HOUR), ("8 hours", 8 * HOUR))
WINDOW_LEVELS = (("< 1 hour", 1 * HOUR), ("< 3 hours", 3 * HOUR), ("No Window", None))
IMPUTATION_LEVELS = (("1", 1), ("3", 3), ("5", 5), ("10", 10))
GRID_FACTORS = (
    ("Candidate Specificity", SPECIFICITY_LEVELS),
    ("Match Buffer", BUFFER_LEVELS),
    ("Time Window", WINDOW_LEVELS),
    ("Imputations", IMPUTATION_LEVELS),
)


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class PreparedSet:
    """One contiguous set ready for simulation."""

    series: MetricSeries
    path: TravelPath | None = None
    n_person_sets: int = 1

    @property
    def key(self) -> tuple[str, str]:
        return self.series.key

    @property
    def person_id(self) -> str:
        return self.series.person_id


def own_bucket(n_person_sets: int) -> str:
    if n_person_sets <= 1:
        return "No extra data"
    return "2-3 sets" if n_person_sets <= 3 else "4+ sets"


def gap_label(seconds: float) -> str:
    h = seconds / HOUR
    txt = f"{h:g}"
    return f"{txt} hr" if h == 1 else f"{txt} hrs"


@dataclass(frozen=True)
class Scenario:
    """One missingness condition.

    ``stratum`` restricts gap starts: ``night`` keeps every masked element in
    22:00-05:00 local time, ``day`` requires at least one element outside it.
    """

    gap_length: float
    n_affected: int = 100
    seed: int = 0
    stratum: str = "any"

    def __post_init__(self):
        if self.gap_length <= 0:
            raise ValueError("gap_length must be positive")
        if self.n_affected < 0:
            raise ValueError("n_affected must be >= 0")
        if self.stratum not in ("any", "night", "day"):
            raise ValueError(f"unknown stratum {self.stratum!r}")

    @property
    def name(self) -> str:
        h = f"{self.gap_length / HOUR:g}h"
        return h if self.stratum == "any" else f"{h}-{self.stratum}"

    def n_elements(self, interval: float) -> int:
        return int(math.ceil(self.gap_length / interval - 1e-9))


def is_night(clock) -> np.ndarray:
    c = np.asarray(clock, dtype=float)
    return (c >= NIGHT_START) | (c < NIGHT_END)


@dataclass(frozen=True)
class InducedGap:
    set_index: int
    gap: GapSpec
    night_only: bool


@dataclass(frozen=True)
class Induction:
    scenario: Scenario
    gaps: tuple[InducedGap, ...]
    truth: tuple[MetricSeries, ...]
    masked: tuple[MetricSeries, ...]


def _feasible_starts(s: MetricSeries, T: int, stratum: str) -> np.ndarray:
    n = len(s)
    r = s.response
    starts = []
    night = is_night(s.clock)
    for a in range(1, n - T):
        if not (r[a - 1] and r[a + T] and r[a : a + T].all()):
            continue
        if stratum == "night" and not night[a : a + T].all():
            continue
        if stratum == "day" and night[a : a + T].all():
            continue
        starts.append(a)
    return np.array(starts, dtype=np.int64)


def induce_missingness(sets: Sequence[PreparedSet | MetricSeries], scenario: Scenario, rng=None) -> Induction:
    """Mask one contiguous gap in each of ``n_affected`` randomly chosen sets.

    Sets are drawn uniformly without replacement among those that can host the
    gap with an observed element on each side; the start is uniform over the
    feasible starts.
    """
    series = [x.series if isinstance(x, PreparedSet) else x for x in sets]
    rng = rng if rng is not None else stream_rng(scenario.seed, "induce", scenario.name)
    if scenario.n_affected == 0:
        return Induction(scenario, (), tuple(series), tuple(series))
    feasible = {}
    for i, s in enumerate(series):
        st = _feasible_starts(s, scenario.n_elements(s.interval), scenario.stratum)
        if len(st):
            feasible[i] = st
    eligible = sorted(feasible)
    if len(eligible) < scenario.n_affected:
        raise InsufficientDataError(
            f"scenario {scenario.name}: {len(eligible)} eligible sets, {scenario.n_affected} requested"
        )
    chosen = sorted(rng.choice(eligible, size=scenario.n_affected, replace=False).tolist())
    masked = list(series)
    gaps = []
    for i in chosen:
        s = series[i]
        T = scenario.n_elements(s.interval)
        a = int(rng.choice(feasible[i]))
        gap = GapSpec(a, a + T)
        masked[i] = s.mask(a, a + T)
        gaps.append(InducedGap(i, gap, bool(is_night(s.clock[a : a + T]).all())))
    return Induction(scenario, tuple(gaps), tuple(series), tuple(masked))


# -- scoring ------------------------------------------------------------------


@dataclass(frozen=True)
class GapScore:
    truth_total: float
    imputed_total: float
    imputed_var: float
    signed_bias: float
    tp_over: float
    tp_under: float
    tp_agree: float
    n_travel: int
    n_still: int
    length: int


def score(truth: MetricSeries, imputed: ImputationResult, threshold: float = DEFAULT_TRAVEL_THRESHOLD_KM) -> GapScore:
    """Per-gap bias and travel-period confusion counts.

    Counts are classified per imputation and averaged over the ``m``
    imputations.
    """
    g = imputed.gap
    tv = truth.values[g.start_index : g.end_index]
    iv = imputed.gap_values
    if iv.shape[1] != len(tv) or not np.all(np.isfinite(tv)):
        raise ValueError("truth must be fully observed over the gap")
    t_travel = tv >= threshold
    i_travel = iv >= threshold
    over = (i_travel & ~t_travel).sum(axis=1).mean()
    under = (~i_travel & t_travel).sum(axis=1).mean()
    agree = (i_travel == t_travel).sum(axis=1).mean()
    mean_total, var_total = imputed.pooled_total
    truth_total = float(tv.sum())
    return GapScore(
        truth_total,
        mean_total,
        var_total,
        mean_total - truth_total,
        float(over),
        float(under),
        float(agree),
        int(t_travel.sum()),
        int((~t_travel).sum()),
        len(tv),
    )


@dataclass(frozen=True)
class MetricRow:
    n: int
    skipped: int
    abs_bias: float
    med_bias: float
    dist_over: float
    dist_under: float
    rmse: float
    tp_acc: float
    tp_over: float
    tp_under: float
    mean_bias: float

    COLUMNS = ("abs_bias", "med_bias", "dist_over", "dist_under", "rmse", "tp_acc", "tp_over", "tp_under")


def _pct(num: float, den: float) -> float:
    return 100.0 * num / den if den > 0 else 0.0


def aggregate(records: Iterable[dict]) -> MetricRow:
    """Scenario-level metrics from per-gap records (skips counted, not scored)."""
    recs = list(records)
    ok = [r for r in recs if not r["skipped"]]
    skipped = len(recs) - len(ok)
    if not ok:
        nan = math.nan
        return MetricRow(0, skipped, nan, nan, nan, nan, nan, nan, nan, nan, nan)
    b = np.array([r["signed_bias"] for r in ok])
    over = sum(r["tp_over"] for r in ok)
    under = sum(r["tp_under"] for r in ok)
    agree = sum(r["tp_agree"] for r in ok)
    still = sum(r["n_still"] for r in ok)
    travel = sum(r["n_travel"] for r in ok)
    length = sum(r["length"] for r in ok)
    mean = float(b.mean())
    return MetricRow(
        n=len(ok),
        skipped=skipped,
        abs_bias=abs(mean),
        med_bias=float(np.median(b)),
        dist_over=float(np.maximum(b, 0).mean()),
        dist_under=float(np.maximum(-b, 0).mean()),
        rmse=float(np.sqrt(np.mean(b * b))),
        tp_acc=_pct(agree, length),
        tp_over=_pct(over, still),
        tp_under=_pct(under, travel),
        mean_bias=mean,
    )


@dataclass(frozen=True)
class ScenarioReport:
    """One block of a results table: labelled rows of metrics."""

    title: str
    stratum: str
    rows: tuple[tuple[str, MetricRow], ...]

    def row(self, label: str) -> MetricRow:
        return dict(self.rows)[label]


# -- parallel plumbing --------------------------------------------------------

_STATE: dict = {}


def _init_worker(state):
    global _STATE
    _STATE = state


def _map(fn: Callable, items: list, state: dict, jobs: int) -> list:
    """Ordered map; worker count never changes results."""
    if jobs <= 1 or len(items) <= 1:
        _init_worker(state)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(state,)) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _record_base(ps: PreparedSet, ig: InducedGap, scenario: str) -> dict:
    return {
        "scenario": scenario,
        "person_id": ps.person_id,
        "set_id": ps.series.set_id,
        "gap_start": ig.gap.start_index,
        "gap_length": ig.gap.length,
        "gap_hours": ig.gap.length * ps.series.interval / HOUR,
        "night_only": ig.night_only,
        "own_bucket": own_bucket(ps.n_person_sets),
    }


def _scored(base: dict, method: str, fn: Callable[[], ImputationResult], truth: MetricSeries, threshold) -> dict:
    rec = dict(base, method=method)
    try:
        res = fn()
    except UnimputableGapError as exc:
        rec.update(skipped=True, reason=str(exc))
        return rec
    rec.update(skipped=False, reason="")
    rec.update(asdict(score(truth, res, threshold)))
    return rec


def _refs_for(pool: ReferenceCollection, key) -> ReferenceCollection:
    return apply_phi(pool, key, Phi(exclude_set=key))


def _comparison_unit(item):
    si, gi = item
    st = _STATE
    ind: Induction = st["inductions"][si]
    ig = ind.gaps[gi]
    ps: PreparedSet = st["sets"][ig.set_index]
    masked = ind.masked[ig.set_index]
    truth = ind.truth[ig.set_index]
    refs = _refs_for(st["pools"][si], ps.key)
    base = _record_base(ps, ig, ind.scenario.name)
    out = []
    for method in st["methods"]:
        rng = stream_rng(st["seed"], ind.scenario.name, ps.key, ig.gap.start_index, method)
        fn = lambda m=method, r=rng: run_method(  # noqa: E731
            m, masked, ig.gap, refs, ps.path, r, params=st["params"], kappa_levels=st["kappa_levels"]
        )
        out.append(_scored(base, method, fn, truth, st["threshold"]))
    return out


@dataclass
class ComparisonResult:
    records: list[dict]
    reports: list[ScenarioReport]
    seed: int


def _simulate(sets, scenarios, master_seed):
    inductions, pools = [], []
    for sc in scenarios:
        ind = induce_missingness(sets, sc, stream_rng(master_seed, "induce", sc.seed, sc.name, sc.n_affected))
        inductions.append(ind)
        pools.append(ReferenceCollection.from_series(ind.masked))
    return inductions, pools


def run_comparison(
    sets: Sequence[PreparedSet],
    methods: Sequence[str],
    scenarios: Sequence[Scenario],
    *,
    threshold: float = DEFAULT_TRAVEL_THRESHOLD_KM,
    master_seed: int = 0,
    jobs: int = 1,
    params: DtwbmiParams | None = None,
    kappa_levels: tuple[tuple[str, float], ...] | None = None,
) -> ComparisonResult:
    """Apply every method to the same masked data in each scenario.

    ``params`` configures the generic ``"dtwbmi"`` method when listed.
    """
    if not methods or not scenarios:
        raise ValueError("need at least one method and one scenario")
    for m in methods:
        if m not in METHODS and m != "dtwbmi":
            raise ValueError(f"unknown method {m!r}")
    inductions, pools = _simulate(sets, scenarios, master_seed)
    state = {
        "sets": list(sets),
        "inductions": inductions,
        "pools": pools,
        "methods": list(methods),
        "seed": master_seed,
        "threshold": threshold,
        "params": params,
        "kappa_levels": kappa_levels,
    }
    items = [(si, gi) for si, ind in enumerate(inductions) for gi in range(len(ind.gaps))]
    records = [r for chunk in _map(_comparison_unit, items, state, jobs) for r in chunk]
    return ComparisonResult(records, comparison_reports(records, methods), master_seed)


def _rows(records, methods, pred) -> tuple[tuple[str, MetricRow], ...]:
    return tuple(
        (METHOD_LABELS.get(m, m), aggregate(r for r in records if r["method"] == m and pred(r))) for m in methods
    )


def comparison_reports(records: Sequence[dict], methods: Sequence[str]) -> list[ScenarioReport]:
    """Overall, by gap length, night-only vs daytime and by own-set count."""
    out = [ScenarioReport("Method comparison across all cases", "All cases", _rows(records, methods, lambda r: True))]
    hours = sorted({r["gap_hours"] for r in records})
    for h in hours:
        out.append(
            ScenarioReport(
                "Method comparison across gap length", gap_label(h * HOUR), _rows(records, methods, lambda r, h=h: r["gap_hours"] == h)
            )
        )
    for label, flag in (("Daytime Missing", False), ("Night Only", True)):
        if any(r["night_only"] == flag for r in records):
            out.append(
                ScenarioReport(
                    "Method comparison across night only vs day", label, _rows(records, methods, lambda r, f=flag: r["night_only"] == f)
                )
            )
    for label in ("No extra data", "2-3 sets", "4+ sets"):
        if any(r["own_bucket"] == label for r in records):
            out.append(
                ScenarioReport(
                    "Method comparison across number of reference sets",
                    label,
                    _rows(records, methods, lambda r, b=label: r["own_bucket"] == b),
                )
            )
    return out


# -- parameter grid -----------------------------------------------------------


@dataclass(frozen=True)
class GridCell:
    specificity: str
    buffer: str
    window: str
    imputations: str

    def params(self) -> DtwbmiParams:
        return DtwbmiParams(
            match_buffer=dict(BUFFER_LEVELS)[self.buffer],
            time_window=dict(WINDOW_LEVELS)[self.window],
            candidate_specificity=dict(SPECIFICITY_LEVELS)[self.specificity],
            n_imputations=dict(IMPUTATION_LEVELS)[self.imputations],
        )

    @property
    def cell_id(self) -> str:
        return "|".join((self.specificity, self.buffer, self.window, self.imputations))

    def level(self, factor: str) -> str:
        idx = [f for f, _ in GRID_FACTORS].index(factor)
        return (self.specificity, self.buffer, self.window, self.imputations)[idx]


def full_grid() -> list[GridCell]:
    return [
        GridCell(s, b, w, m)
        for s, b, w, m in itertools.product(*[[lab for lab, _ in levels] for _, levels in GRID_FACTORS])
    ]


def _grid_unit(item):
    si, gi = item
    st = _STATE
    ind: Induction = st["inductions"][si]
    ig = ind.gaps[gi]
    ps: PreparedSet = st["sets"][ig.set_index]
    masked = ind.masked[ig.set_index]
    truth = ind.truth[ig.set_index]
    refs = _refs_for(st["pools"][si], ps.key)
    base = _record_base(ps, ig, ind.scenario.name)
    cache: dict = {}
    out = []
    for cell in st["cells"]:
        p = cell.params()
        if st["kappa_levels"] is not None:
            p = replace(p, kappa_levels=tuple(st["kappa_levels"]))
        key = (p.match_buffer, p.time_window)

        def fn(p=p, key=key, cell=cell):
            if key not in cache:
                try:
                    cache[key] = candidates_for(masked, ig.gap, refs, p.match_buffer, p.time_window)
                except ValueError as exc:
                    cache[key] = exc
            cands = cache[key]
            if isinstance(cands, Exception):
                raise cands
            rng = stream_rng(st["seed"], ind.scenario.name, ps.key, ig.gap.start_index, cell.cell_id)
            return impute_dtwbmi(masked, ig.gap, refs, p, rng, cands, "dtwbmi")

        rec = _scored(base, "dtwbmi", fn, truth, st["threshold"])
        rec["cell"] = cell.cell_id
        out.append(rec)
    return out


@dataclass
class GridResult:
    cells: list[tuple[GridCell, MetricRow]]
    marginals: list[ScenarioReport]
    records: list[dict]
    seed: int

    def cell_report(self) -> ScenarioReport:
        return ScenarioReport("DTWBMI parameter grid cells", "All cells", tuple((c.cell_id, row) for c, row in self.cells))


def marginal_row(rows: Sequence[MetricRow]) -> MetricRow:
    """Mean of cell values sharing a level."""

    def mean(attr):
        vals = [getattr(r, attr) for r in rows if r.n > 0]
        return float(np.mean(vals)) if vals else math.nan

    return MetricRow(
        n=sum(r.n for r in rows),
        skipped=sum(r.skipped for r in rows),
        **{a: mean(a) for a in MetricRow.COLUMNS},
        mean_bias=mean("mean_bias"),
    )


def run_parameter_grid(
    sets: Sequence[PreparedSet],
    scenarios: Sequence[Scenario],
    cells: Sequence[GridCell] | None = None,
    *,
    threshold: float = DEFAULT_TRAVEL_THRESHOLD_KM,
    master_seed: int = 0,
    jobs: int = 1,
    kappa_levels: tuple[tuple[str, float], ...] | None = None,
) -> GridResult:
    """Score every DTWBMI parameter combination on shared masked data."""
    cells = list(cells) if cells is not None else full_grid()
    if not cells:
        raise ValueError("empty grid")
    inductions, pools = _simulate(sets, scenarios, master_seed)
    state = {
        "sets": list(sets),
        "inductions": inductions,
        "pools": pools,
        "cells": cells,
        "seed": master_seed,
        "threshold": threshold,
        "kappa_levels": kappa_levels,
    }
    items = [(si, gi) for si, ind in enumerate(inductions) for gi in range(len(ind.gaps))]
    records = [r for chunk in _map(_grid_unit, items, state, jobs) for r in chunk]
    rows, marginals = grid_reports(records, cells)
    return GridResult(rows, marginals, records, master_seed)


def grid_reports(records: Sequence[dict], cells: Sequence[GridCell] | None = None):
    """Per-cell rows and per-factor marginal blocks from grid records."""
    if cells is None:
        ids = list(dict.fromkeys(r["cell"] for r in records))
        cells = [GridCell(*cid.split("|")) for cid in ids]
    by_cell = {c.cell_id: [] for c in cells}
    for r in records:
        by_cell[r["cell"]].append(r)
    rows = [(c, aggregate(by_cell[c.cell_id])) for c in cells]
    marginals = []
    for factor, levels in GRID_FACTORS:
        present = [lab for lab, _ in levels if any(c.level(factor) == lab for c in cells)]
        marginals.append(
            ScenarioReport(
                "Comparison among possible DTWBMI parameter values",
                factor,
                tuple((lab, marginal_row([row for c, row in rows if c.level(factor) == lab])) for lab in present),
            )
        )
    return rows, marginals


# -- own-sets experiment ------------------------------------------------------

OWN_SET_METHODS = ("dtwbmi-hi", "dtwbmi-lo", "dtwbi")


def _own_unit(item):
    rep, person, hours = item
    st = _STATE
    sets: list[PreparedSet] = st["sets"]
    rng = stream_rng(st["seed"], "own-sets", rep, person, hours)
    mine = [i for i, s in enumerate(sets) if s.person_id == person]
    strangers = st["strangers"]
    q = int(rng.choice(mine))
    own = [i for i in mine if i != q]
    own = [own[k] for k in rng.permutation(len(own))]
    order = [strangers[k] for k in rng.permutation(len(strangers))]
    max_level = max(st["levels"])
    base, extra = order[: st["base_pool"]], order[st["base_pool"] : st["base_pool"] + max_level]
    truth = sets[q].series
    T = int(math.ceil(hours * HOUR / truth.interval - 1e-9))
    starts = _feasible_starts(truth, T, "any")
    if len(starts) == 0:
        return []
    a = int(rng.choice(starts))
    gap = GapSpec(a, a + T)
    masked = truth.mask(a, a + T)
    ig = InducedGap(q, gap, bool(is_night(truth.clock[a : a + T]).all()))
    out = []
    for level in st["levels"]:
        donors = base + own[:level] + extra[: max_level - level]
        refs = ReferenceCollection.from_series(sets[i].series for i in donors)
        base_rec = _record_base(sets[q], ig, f"own-{hours:g}h")
        base_rec.update(repetition=rep, own_level=level, pool_size=len(donors))
        for method in st["methods"]:
            mrng = stream_rng(st["seed"], "own-sets", rep, person, hours, level, method)
            fn = lambda m=method, r=mrng: run_method(  # noqa: E731
                m, masked, gap, refs, sets[q].path, r, kappa_levels=st["kappa_levels"]
            )
            out.append(_scored(base_rec, method, fn, truth, st["threshold"]))
    return out


@dataclass
class OwnSetsResult:
    records: list[dict]
    by_level: list[ScenarioReport]
    by_gap_and_level: list[ScenarioReport]
    seed: int


def run_own_sets_experiment(
    sets: Sequence[PreparedSet],
    levels: Sequence[int] = (0, 1, 2, 3),
    base_pool: int = 48,
    n_persons: int | None = None,
    seed: int = 0,
    *,
    gap_hours: Sequence[float] = OWN_SET_GAP_HOURS,
    repetitions: int = 10,
    methods: Sequence[str] = OWN_SET_METHODS,
    threshold: float = DEFAULT_TRAVEL_THRESHOLD_KM,
    jobs: int = 1,
    kappa_levels: tuple[tuple[str, float], ...] | None = None,
) -> OwnSetsResult:
    """Vary how many of a person's own other sets join a fixed-size donor pool."""
    counts: dict[str, int] = {}
    for s in sets:
        counts[s.person_id] = counts.get(s.person_id, 0) + 1
    max_level = max(levels)
    multi = sorted(p for p, c in counts.items() if c >= max_level + 1 and c >= 4)
    strangers = [i for i, s in enumerate(sets) if counts[s.person_id] < 4]
    if n_persons is not None:
        multi = multi[:n_persons]
    if not multi:
        raise InsufficientDataError("no person has enough sets for the own-sets experiment")
    if len(strangers) < base_pool + max_level:
        raise InsufficientDataError(
            f"own-sets experiment needs {base_pool + max_level} sets from persons with fewer than 4 sets, "
            f"found {len(strangers)}"
        )
    state = {
        "sets": list(sets),
        "strangers": strangers,
        "levels": list(levels),
        "base_pool": base_pool,
        "methods": list(methods),
        "seed": seed,
        "threshold": threshold,
        "kappa_levels": kappa_levels,
    }
    items = [(rep, p, h) for rep in range(repetitions) for p in multi for h in gap_hours]
    records = [r for chunk in _map(_own_unit, items, state, jobs) for r in chunk]
    by_level, by_gap = own_sets_reports(records, methods, levels, gap_hours)
    return OwnSetsResult(records, by_level, by_gap, seed)


def own_sets_reports(records: Sequence[dict], methods=None, levels=None, gap_hours=None):
    """Tables by own-set level and by gap length x level."""
    methods = methods or list(dict.fromkeys(r["method"] for r in records))
    levels = levels if levels is not None else sorted({r["own_level"] for r in records})
    gap_hours = gap_hours or sorted({r["gap_hours"] for r in records})
    by_level = [
        ScenarioReport(
            "Method comparison across number of own reference sets",
            str(lv),
            _rows(records, methods, lambda r, lv=lv: r["own_level"] == lv),
        )
        for lv in levels
    ]
    by_gap = []
    for h in gap_hours:
        rows = []
        for m in methods:
            for lv in levels:
                rows.append(
                    (
                        f"{METHOD_LABELS.get(m, m)} | {lv}",
                        aggregate(r for r in records if r["method"] == m and r["own_level"] == lv and r["gap_hours"] == h),
                    )
                )
        by_gap.append(ScenarioReport("Method comparison across gap length and own reference sets", f"{h:g}h", tuple(rows)))
    return by_level, by_gap


# -- output -------------------------------------------------------------------

REPORT_CSV_HEADER = ("table", "stratum", "row", "metric", "value")


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_report_csv(reports: Iterable[ScenarioReport], stream: TextIO, seed: int | None = None) -> None:
    """Long format: one row per table x stratum x row x metric."""
    if seed is not None:
        stream.write(f"# master_seed={seed}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(REPORT_CSV_HEADER)
    for rep in reports:
        for label, row in rep.rows:
            for metric in ("n", "skipped", *MetricRow.COLUMNS):
                w.writerow((rep.title, rep.stratum, label, metric, _fmt(getattr(row, metric))))


TEXT_COLUMNS = (
    ("Abs Bias", "abs_bias", "km"),
    ("Med Bias", "med_bias", "km"),
    ("Dist Over", "dist_over", "km"),
    ("Dist Under", "dist_under", "km"),
    ("RMSE", "rmse", "num"),
    ("TP Acc.", "tp_acc", "pct"),
    ("TP Over", "tp_over", "pct"),
    ("TP Under", "tp_under", "pct"),
    ("n", "n", "int"),
    ("Skipped", "skipped", "int"),
)


def _cell(v, kind) -> str:
    if kind == "int":
        return str(v)
    if isinstance(v, float) and math.isnan(v):
        return "-"
    if kind == "km":
        return f"{v:.1f} Km"
    if kind == "pct":
        return f"{v:.1f}%"
    return f"{v:.2f}"


def format_report_text(reports: Sequence[ScenarioReport], seed: int | None = None) -> str:
    """Aligned plain-text tables, one block per stratum."""
    out = io.StringIO()
    if seed is not None:
        out.write(f"master_seed: {seed}\n\n")
    titles = list(dict.fromkeys(r.title for r in reports))
    for title in titles:
        blocks = [r for r in reports if r.title == title]
        label_w = max([len(lab) for b in blocks for lab, _ in b.rows] + [len(b.stratum) for b in blocks] + [10])
        widths = [max(len(h), 10) for h, _, _ in TEXT_COLUMNS]
        header = " " * label_w + " | " + " ".join(h.rjust(w) for (h, _, _), w in zip(TEXT_COLUMNS, widths))
        out.write(title + "\n" + "=" * len(header) + "\n" + header + "\n")
        for b in blocks:
            out.write("-" * len(header) + "\n" + b.stratum + "\n")
            for label, row in b.rows:
                cells = " ".join(_cell(getattr(row, a), k).rjust(w) for (_, a, k), w in zip(TEXT_COLUMNS, widths))
                out.write(label.ljust(label_w) + " | " + cells + "\n")
        out.write("\n")
    return out.getvalue()


def write_records_jsonl(records: Iterable[dict], stream: TextIO, seed: int | None = None) -> None:
    if seed is not None:
        stream.write(json.dumps({"master_seed": seed}) + "\n")
    for r in records:
        stream.write(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}, sort_keys=True) + "\n")
