"""Gap-filling methods: LI, MI, TWI, DTWBI and DTWBMI, with pooling."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence, TextIO, Union

import numpy as np

from .dtw import (
    AlignmentConstraints,
    AlignmentResult,
    ReferenceCollection,
    feasible_placements,
    score_candidates,
)
from .geo import Trajectory, haversine_coords
from .segmentation import SegmentedDay, TravelPath, travel_path
from .series import GapSpec, MetricSeries, UnimputableGapError, split_query

HOUR = 3600.0
EPSILON = 1e-6
DEFAULT_TRAVEL_THRESHOLD_KM = 0.1
SPECIFICITY_KAPPA = {"low": 1.0, "medium": 3.0, "high": 8.0}


class NoFeasibleDonorError(UnimputableGapError):
    """Raised when no donor survives the restrictions for a gap."""


@dataclass(frozen=True)
class DtwbmiParams:
    """DTWBMI configuration.

    ``time_window`` is in seconds (``None`` means no window). ``deterministic``
    bypasses sampling and takes the best donor, which with ``m = 1`` is DTWBI.
    """

    match_buffer: float = 8 * HOUR
    time_window: float | None = 12 * HOUR
    candidate_specificity: str | float = "high"
    n_imputations: int = 3
    rng_seed: int = 0
    deterministic: bool = False
    kappa_levels: tuple[tuple[str, float], ...] = tuple(SPECIFICITY_KAPPA.items())
    collapsed_gap: bool = False

    def __post_init__(self):
        if self.n_imputations < 1:
            raise ValueError("n_imputations must be >= 1")
        if self.match_buffer < 0:
            raise ValueError("match_buffer must be non-negative")
        spec = self.candidate_specificity
        if isinstance(spec, str):
            if spec not in dict(self.kappa_levels):
                raise ValueError(f"unknown candidate specificity {spec!r}")
        elif not spec >= 0:
            raise ValueError("a numeric specificity must be >= 0")

    @property
    def kappa(self) -> float:
        """Selection exponent; a numeric specificity is used as is."""
        spec = self.candidate_specificity
        return float(dict(self.kappa_levels)[spec]) if isinstance(spec, str) else float(spec)


def preset_dtwbi() -> DtwbmiParams:
    return DtwbmiParams(8 * HOUR, 1 * HOUR, "high", 1, deterministic=True)


def preset_dtwbmi_hi() -> DtwbmiParams:
    # a 12 h circular window admits every time of day
    return DtwbmiParams(8 * HOUR, 12 * HOUR, "high", 3)


def preset_dtwbmi_lo() -> DtwbmiParams:
    return DtwbmiParams(1 * HOUR, 3 * HOUR, "medium", 10)


@dataclass(frozen=True)
class Pooled:
    mean: np.ndarray
    variance: np.ndarray


@dataclass(frozen=True)
class ImputationResult:
    method: str
    gap: GapSpec
    completed: tuple[MetricSeries, ...]
    donors: tuple[AlignmentResult | None, ...] = ()
    params: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.completed)

    @property
    def gap_values(self) -> np.ndarray:
        """``m x T`` matrix of imputed gap elements."""
        g = self.gap
        return np.stack([s.values[g.start_index : g.end_index] for s in self.completed])

    @property
    def totals(self) -> np.ndarray:
        return self.gap_values.sum(axis=1)

    @property
    def pooled(self) -> Pooled:
        return pool(self.completed)

    @property
    def pooled_total(self) -> tuple[float, float]:
        """Mean gap total across imputations and its between-imputation variance."""
        t = self.totals
        var = float(np.var(t, ddof=1)) if len(t) > 1 else 0.0
        return float(t.mean()), var


def pool(results: Sequence[Union[MetricSeries, np.ndarray]]) -> Pooled:
    """Element-wise mean and between-imputation (sample) variance."""
    if len(results) == 0:
        raise ValueError("nothing to pool")
    arr = np.stack([np.asarray(r.values if isinstance(r, MetricSeries) else r, dtype=float) for r in results])
    var = arr.var(axis=0, ddof=1) if len(arr) > 1 else np.zeros(arr.shape[1])
    return Pooled(arr.mean(axis=0), var)


def stream_rng(master_seed: int, *keys) -> np.random.Generator:
    """Independent generator for a (person, set, gap, method)-style key."""
    digest = hashlib.blake2b(repr(keys).encode(), digest_size=16).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, *words]))


def _check_gap(series: MetricSeries, gap: GapSpec) -> None:
    if series.response[gap.start_index : gap.end_index].any():
        raise ValueError("gap covers observed elements")


def _complete(series: MetricSeries, gap: GapSpec, values) -> MetricSeries:
    out = series.fill(gap.start_index, np.asarray(values, dtype=float))
    return out


# -- baselines ----------------------------------------------------------------


def impute_li(series: MetricSeries, gap: GapSpec, anchor: Union[TravelPath, SegmentedDay, Trajectory]) -> ImputationResult:
    """Straight-line distance between the gap's anchor positions, split equally.

    With a :class:`TravelPath` (or a segmentation, converted to one) the
    anchors are the path positions at the gap's first and last instants; with
    a raw trajectory they are the last fix before and the first fix after.
    """
    _check_gap(series, gap)
    if not gap.interior:
        raise UnimputableGapError("linear interpolation needs anchors on both sides of the gap")
    t0 = series.element_time(gap.start_index)
    t1 = series.element_time(gap.end_index)
    if isinstance(anchor, SegmentedDay):
        anchor = travel_path(anchor)
    if isinstance(anchor, TravelPath):
        if t0 < anchor.times[0] or t1 > anchor.times[-1]:
            raise UnimputableGapError("gap lies outside the travel path")
        a = anchor.position(t0)
        b = anchor.position(t1)
    else:
        t = anchor.times
        i = int(np.searchsorted(t, t0, side="right")) - 1
        k = int(np.searchsorted(t, t1, side="left"))
        if i < 0 or k >= len(t):
            raise UnimputableGapError("no fix on one side of the gap")
        a = (anchor.lats[i], anchor.lons[i])
        b = (anchor.lats[k], anchor.lons[k])
    total = haversine_coords(a[0], a[1], b[0], b[1]) / 1000.0
    vals = np.full(gap.length, total / gap.length)
    return ImputationResult("li", gap, (_complete(series, gap, vals),), (None,), {"anchor_km": total})


def impute_mean(series: MetricSeries, gap: GapSpec) -> ImputationResult:
    """Per-interval mean of the observed portion, constant across the gap."""
    _check_gap(series, gap)
    obs = series.values[series.response]
    if len(obs) == 0:
        raise UnimputableGapError("series has no observed elements")
    # observed total / observed duration, expressed per interval
    vals = np.full(gap.length, float(obs.sum()) / len(obs))
    return ImputationResult("mi", gap, (_complete(series, gap, vals),), (None,), {})


def impute_twi(
    series: MetricSeries,
    gap: GapSpec,
    refs: ReferenceCollection,
    window: float | None = HOUR,
    m: int = 10,
    seed: int | np.random.Generator = 0,
) -> ImputationResult:
    """Draw donors uniformly among all placements inside the time window."""
    _check_gap(series, gap)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    gap_clock = series.clock[gap.start_index : gap.end_index]
    placements = feasible_placements(
        refs, gap.length, gap_clock=gap_clock, gap_weekday=int(series.weekday[gap.start_index]), time_window=window
    )
    if not placements:
        raise NoFeasibleDonorError("no complete donor window inside the time window")
    idx = rng.choice(len(placements), size=m, replace=len(placements) < m)
    completed, donors = [], []
    for k in idx.tolist():
        di, pos = placements[k]
        d = refs.donors[di]
        vals = np.array(d.values[pos : pos + gap.length], dtype=float)
        completed.append(_complete(series, gap, vals))
        donors.append(AlignmentResult(d.key, pos, math.nan, vals, pos, gap.length))
    return ImputationResult("twi", gap, tuple(completed), tuple(donors), {"window": window, "m": m})


# -- DTWBMI -------------------------------------------------------------------


def selection_probabilities(dissimilarities: Sequence[float], kappa: float, eps: float = EPSILON) -> np.ndarray:
    """``p_v`` proportional to ``(1 / (d_v + eps)) ** kappa``.

    ``kappa = 0`` is uniform; ``kappa = inf`` puts all mass on the first
    minimum.
    """
    d = np.asarray(dissimilarities, dtype=float)
    if len(d) == 0:
        raise ValueError("no candidates")
    if math.isinf(kappa):
        p = np.zeros(len(d))
        p[int(np.argmin(d))] = 1.0
        return p
    logw = -kappa * np.log(d + eps)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def _sample(p: np.ndarray, m: int, rng: np.random.Generator) -> list[int]:
    """Weighted draws; without replacement whenever the pool allows."""
    if len(p) < m:
        return rng.choice(len(p), size=m, replace=True, p=p).tolist()
    remaining = list(range(len(p)))
    logp = np.log(np.maximum(p, np.finfo(float).tiny))
    chosen = []
    for _ in range(m):
        lw = logp[remaining]
        w = np.exp(lw - lw.max())
        k = int(rng.choice(len(remaining), p=w / w.sum()))
        chosen.append(remaining.pop(k))
    return chosen


def candidates_for(
    series: MetricSeries, gap: GapSpec, refs: ReferenceCollection, match_buffer: float, time_window, collapsed_gap=False
) -> list[AlignmentResult]:
    q_pre, q_post = split_query(series, gap, match_buffer)
    c = AlignmentConstraints(one_to_one=True, time_window=time_window)
    return score_candidates(
        q_pre,
        q_post,
        gap,
        refs,
        c,
        gap_clock=series.clock[gap.start_index : gap.end_index],
        gap_weekday=int(series.weekday[gap.start_index]),
        collapsed_gap=collapsed_gap,
    )


def impute_dtwbmi(
    series: MetricSeries,
    gap: GapSpec,
    refs: ReferenceCollection,
    params: DtwbmiParams,
    rng: np.random.Generator | None = None,
    candidates: list[AlignmentResult] | None = None,
    method: str = "dtwbmi",
) -> ImputationResult:
    """Match buffers around the gap against every donor and copy donor gap values.

    ``candidates`` may carry a precomputed :func:`score_candidates` result
    for the same buffer and window.
    """
    _check_gap(series, gap)
    if candidates is None:
        candidates = candidates_for(series, gap, refs, params.match_buffer, params.time_window, params.collapsed_gap)
    if not candidates:
        raise NoFeasibleDonorError(
            f"no donor has a complete window for buffer {params.match_buffer:g}s, "
            f"window {params.time_window}s and gap length {gap.length}"
        )
    m = params.n_imputations
    if params.deterministic:
        d = [c.dissimilarity for c in candidates]
        picks = [int(np.argmin(d))] * m
    else:
        rng = rng if rng is not None else np.random.default_rng(params.rng_seed)
        p = selection_probabilities([c.dissimilarity for c in candidates], params.kappa)
        picks = _sample(p, m, rng)
    chosen = tuple(candidates[k] for k in picks)
    completed = tuple(_complete(series, gap, c.donor_gap_values) for c in chosen)
    return ImputationResult(method, gap, completed, chosen, asdict(params))


# -- method registry ----------------------------------------------------------

METHODS = ("li", "mi", "twi", "dtwbi", "dtwbmi-hi", "dtwbmi-lo")
PRESETS = {"dtwbi": preset_dtwbi, "dtwbmi-hi": preset_dtwbmi_hi, "dtwbmi-lo": preset_dtwbmi_lo}
TWI_WINDOW = HOUR
TWI_M = 10


def run_method(
    method: str,
    series: MetricSeries,
    gap: GapSpec,
    refs: ReferenceCollection | None = None,
    path: TravelPath | None = None,
    rng: np.random.Generator | None = None,
    candidates: list[AlignmentResult] | None = None,
    *,
    params: DtwbmiParams | None = None,
    kappa_levels: tuple[tuple[str, float], ...] | None = None,
) -> ImputationResult:
    """Dispatch one of the named methods.

    ``"dtwbmi"`` uses ``params``; ``kappa_levels`` overrides the specificity
    exponents of the DTW-based presets.
    """
    if method == "li":
        if path is None:
            raise ValueError("li needs the travel path")
        return impute_li(series, gap, path)
    if method == "mi":
        return impute_mean(series, gap)
    rng = rng if rng is not None else np.random.default_rng(0)
    if refs is None:
        raise ValueError(f"{method} needs a reference collection")
    if method == "twi":
        return impute_twi(series, gap, refs, TWI_WINDOW, TWI_M, rng)
    if method in PRESETS or method == "dtwbmi":
        if method == "dtwbmi":
            if params is None:
                raise ValueError("dtwbmi needs explicit parameters")
            p = params
        else:
            p = PRESETS[method]()
        if kappa_levels is not None:
            p = replace(p, kappa_levels=tuple(kappa_levels))
        return impute_dtwbmi(series, gap, refs, p, rng, candidates, method)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def write_provenance(results: Iterable[ImputationResult], stream: TextIO, context: dict | None = None) -> None:
    for r in results:
        for k, d in enumerate(r.donors):
            rec = dict(context or {})
            rec.update(
                method=r.method,
                gap_start=r.gap.start_index,
                gap_length=r.gap.length,
                imputation=k,
                params={k2: v for k2, v in r.params.items() if k2 != "kappa_levels"},
            )
            if d is not None:
                rec.update(
                    donor=list(d.donor_id),
                    placement=d.gap_position,
                    dissimilarity=None if math.isnan(d.dissimilarity) else d.dissimilarity,
                )
            stream.write(json.dumps(rec, sort_keys=True) + "\n")
