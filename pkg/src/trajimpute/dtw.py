"""Constrained dynamic time warping and gap-aware donor alignment."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, TextIO

import numpy as np

from . import kernels
from .series import DAY_S, GapSpec, MetricSeries, QuerySlice, UnimputableGapError


class InfeasibleAlignmentError(UnimputableGapError):
    """No warping path satisfies the constraints."""


class EmptyReferenceError(UnimputableGapError):
    """The reference collection holds no donors at all."""


@dataclass(frozen=True)
class AlignmentConstraints:
    """Path restrictions.

    ``sakoe_chiba`` bounds ``|i - j|`` (anchored at the start column under
    ``open_begin_end``); ``one_to_one`` is the band-0 case. ``time_window``
    (seconds) bounds the circular time-of-day offset of matched elements.
    """

    sakoe_chiba: int | None = None
    one_to_one: bool = False
    open_begin_end: bool = False
    time_window: float | None = None

    def __post_init__(self):
        if self.sakoe_chiba is not None and self.sakoe_chiba < 0:
            raise ValueError("sakoe_chiba must be >= 0")
        if self.time_window is not None and self.time_window < 0:
            raise ValueError("time_window must be >= 0")

    @property
    def band(self) -> int | None:
        return 0 if self.one_to_one else self.sakoe_chiba

    @property
    def diagonal_only(self) -> bool:
        return self.band == 0


ONE_TO_ONE = AlignmentConstraints(one_to_one=True)


@dataclass(frozen=True)
class DtwResult:
    dissimilarity: float
    path: list[tuple[int, int]]


@dataclass(frozen=True)
class Donor:
    person_id: str
    set_id: str
    values: np.ndarray
    clock: np.ndarray | None = None
    weekday: np.ndarray | None = None

    @classmethod
    def from_series(cls, s: MetricSeries) -> "Donor":
        return cls(s.person_id, s.set_id, s.values, s.clock, s.weekday)

    @classmethod
    def from_values(cls, person_id: str, values: Sequence[float], set_id: str = "0") -> "Donor":
        return cls(person_id, set_id, np.asarray(values, dtype=float))

    @property
    def key(self) -> tuple[str, str]:
        return self.person_id, self.set_id


@dataclass(frozen=True)
class Phi:
    """Restriction parameters on persons and placement times."""

    exclude_person: str | None = None
    only_person: str | None = None
    exclude_set: tuple[str, str] | None = None
    time_window: float | None = None
    same_day_type: bool = False


@dataclass(frozen=True)
class ReferenceCollection:
    donors: tuple[Donor, ...]
    phi: Phi = field(default_factory=Phi)

    def __len__(self) -> int:
        return len(self.donors)

    @classmethod
    def from_series(cls, series: Iterable[MetricSeries], phi: Phi | None = None) -> "ReferenceCollection":
        return cls(tuple(Donor.from_series(s) for s in series), phi or Phi())


@dataclass(frozen=True)
class AlignmentResult:
    """Best placement of the artificial gap in one donor.

    ``offset`` is the donor index aligned with the first query buffer element
    and ``gap_position`` the donor index of the first gap element (both
    zero-based).
    """

    donor_id: tuple[str, str]
    gap_position: int
    dissimilarity: float
    donor_gap_values: np.ndarray
    offset: int
    window_length: int
    path: tuple[tuple[int, int], ...] = ()

    @property
    def window_indices(self) -> tuple[int, ...]:
        """One-based donor indices of the aligned window."""
        return tuple(range(self.offset + 1, self.offset + self.window_length + 1))


# -- core DTW -------------------------------------------------------------------


def _values(x) -> np.ndarray:
    return np.asarray(x.values if isinstance(x, (QuerySlice, MetricSeries)) else x, dtype=float)


def _clock(x) -> np.ndarray | None:
    return np.asarray(x.clock, dtype=float) if isinstance(x, (QuerySlice, MetricSeries)) else None


def clock_offset(a, b) -> np.ndarray:
    """Circular time-of-day distance in seconds."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % DAY_S
    return np.minimum(d, DAY_S - d)


def cost_matrix(q, rho) -> np.ndarray:
    """``D[t, j] = |q_t - rho_j|``."""
    qv, rv = _values(q), _values(rho)
    if len(qv) == 0 or len(rv) == 0:
        raise ValueError("cost matrix needs non-empty slices")
    if not (np.all(np.isfinite(qv)) and np.all(np.isfinite(rv))):
        raise ValueError("cost matrix needs fully observed slices")
    return np.abs(qv[:, None] - rv[None, :])


def _backtrack(acc: np.ndarray, i: int, j: int, j_start: int | None, diagonal_only: bool) -> list[tuple[int, int]]:
    """Walk back preferring diagonal, then vertical, then horizontal on ties."""
    path = [(i, j)]
    while i > 0 or (j_start is not None and j > j_start):
        if diagonal_only:
            i, j = i - 1, j - 1
        elif i == 0:
            j -= 1
        else:
            best = (acc[i - 1, j - 1], 0) if j > 0 else (np.inf, 0)
            if acc[i - 1, j] < best[0]:
                best = (acc[i - 1, j], 1)
            if j > 0 and acc[i, j - 1] < best[0]:
                best = (acc[i, j - 1], 2)
            step = best[1]
            if step == 0:
                i, j = i - 1, j - 1
            elif step == 1:
                i -= 1
            else:
                j -= 1
        path.append((i, j))
    path.reverse()
    return path


def dtw_distance(q, rho, c: AlignmentConstraints = AlignmentConstraints(), *, q_clock=None, rho_clock=None) -> DtwResult:
    """Minimum accumulated absolute-difference cost over monotone paths.

    Steps are diagonal, vertical or horizontal. Without ``open_begin_end``
    the path runs corner to corner; with it the path covers all of ``q`` and
    any contiguous stretch of ``rho`` (earliest end wins ties). Raises
    :class:`InfeasibleAlignmentError` when constraints leave no path.
    """
    cost = cost_matrix(q, rho)
    n, m = cost.shape
    if c.one_to_one and not c.open_begin_end and n != m:
        raise ValueError("one_to_one alignment needs equal-length slices")
    allowed = np.ones((n, m), dtype=bool)
    if c.time_window is not None:
        qc = _clock(q) if q_clock is None else np.asarray(q_clock, dtype=float)
        rc = _clock(rho) if rho_clock is None else np.asarray(rho_clock, dtype=float)
        if qc is None or rc is None:
            raise ValueError("time_window needs wall-clock labels for both slices")
        allowed &= clock_offset(qc[:, None], rc[None, :]) <= c.time_window
    band = c.band
    ii = np.arange(n)[:, None]
    jj = np.arange(m)[None, :]

    if not c.open_begin_end:
        if band is not None:
            allowed &= np.abs(ii - jj) <= band
        acc = kernels.dtw_accumulate(cost, allowed, False, c.diagonal_only)
        total = acc[n - 1, m - 1]
        if not np.isfinite(total):
            raise InfeasibleAlignmentError("no warping path satisfies the constraints")
        return DtwResult(float(total), _backtrack(acc, n - 1, m - 1, 0, c.diagonal_only))

    if band is None:
        acc = kernels.dtw_accumulate(cost, allowed, True, False)
        last = acc[n - 1]
        if not np.isfinite(last).any():
            raise InfeasibleAlignmentError("no warping path satisfies the constraints")
        j = int(np.argmin(last))
        return DtwResult(float(last[j]), _backtrack(acc, n - 1, j, None, False))

    # banded subsequence search: the band is anchored at each start column
    best: tuple[float, int, int, np.ndarray] | None = None
    for j0 in range(m):
        sub_allowed = allowed[:, j0:] & (np.abs(jj[:, : m - j0] - ii) <= band)
        acc = kernels.dtw_accumulate(cost[:, j0:], sub_allowed, False, c.diagonal_only)
        last = acc[n - 1]
        if not np.isfinite(last).any():
            continue
        j = int(np.argmin(last))
        if best is None or last[j] < best[0]:
            best = (float(last[j]), j0, j, acc)
    if best is None:
        raise InfeasibleAlignmentError("no warping path satisfies the constraints")
    total, j0, j, acc = best
    path = [(i, jj_ + j0) for i, jj_ in _backtrack(acc, n - 1, j, 0, c.diagonal_only)]
    return DtwResult(total, path)


# -- restriction function -----------------------------------------------------


def apply_phi(refs: ReferenceCollection, query_meta: tuple[str, str] | None = None, phi: Phi | None = None) -> ReferenceCollection:
    """Filter donors by person and attach placement-level restrictions.

    ``query_meta`` is the querying (person_id, set_id); ``exclude_person`` or
    ``only_person`` set to ``"self"`` refer to it. Time-window and day-type
    limits act on placements and are enforced in :func:`score_candidates`.
    """
    phi = phi or Phi()
    me = query_meta[0] if query_meta else None

    def resolve(x):
        return me if x == "self" else x

    excl, only = resolve(phi.exclude_person), resolve(phi.only_person)
    excl_set = phi.exclude_set
    donors = tuple(
        d
        for d in refs.donors
        if (excl is None or d.person_id != excl)
        and (only is None or d.person_id == only)
        and (excl_set is None or d.key != tuple(excl_set))
    )
    tw = phi.time_window
    if refs.phi.time_window is not None:
        tw = refs.phi.time_window if tw is None else min(tw, refs.phi.time_window)
    merged = Phi(
        exclude_person=excl,
        only_person=only,
        exclude_set=excl_set,
        time_window=tw,
        same_day_type=phi.same_day_type or refs.phi.same_day_type,
    )
    return ReferenceCollection(donors, merged)


# -- candidate scoring --------------------------------------------------------


def _window_clock(q_pre: QuerySlice, q_post: QuerySlice, gap_clock) -> np.ndarray | None:
    if gap_clock is None:
        return None
    return np.concatenate([np.asarray(q_pre.clock, float), np.asarray(gap_clock, float), np.asarray(q_post.clock, float)])


def _as_slice(x) -> QuerySlice:
    if isinstance(x, QuerySlice):
        return x
    v = np.asarray(x, dtype=float)
    return QuerySlice(v, np.full(len(v), np.nan), np.zeros(len(v), dtype=np.int64), -1)


def placement_table(
    q_pre,
    q_post,
    gap: GapSpec | int,
    refs: ReferenceCollection,
    c: AlignmentConstraints = ONE_TO_ONE,
    *,
    gap_clock=None,
    gap_weekday: int | None = None,
    collapsed_gap: bool = False,
) -> list[np.ndarray]:
    """Per-donor array of placement dissimilarities (+inf where infeasible)."""
    q_pre, q_post = _as_slice(q_pre), _as_slice(q_post)
    T = gap.length if isinstance(gap, GapSpec) else int(gap)
    n_pre, n_post = len(q_pre), len(q_post)
    window = c.time_window
    if refs.phi.time_window is not None:
        window = refs.phi.time_window if window is None else min(window, refs.phi.time_window)
    wclock = _window_clock(q_pre, q_post, gap_clock)
    if window is not None and wclock is None:
        raise ValueError("a time window needs the gap's wall-clock labels")
    qvals = np.concatenate([q_pre.values, np.zeros(T), q_post.values])
    length = n_pre + T + n_post
    out = []
    for d in refs.donors:
        if window is not None:
            if d.clock is None:
                raise ValueError(f"donor {d.key} lacks wall-clock labels")
            scores = kernels.placement_scores(d.values, d.clock, qvals, wclock, n_pre, T, float(window))
        else:
            dummy = np.zeros(len(d.values))
            scores = kernels.placement_scores(d.values, dummy, qvals, np.zeros(length), n_pre, T, -1.0)
        if refs.phi.same_day_type and gap_weekday is not None and len(scores):
            if d.weekday is None:
                raise ValueError(f"donor {d.key} lacks weekday labels")
            wk = np.asarray(d.weekday)[n_pre : n_pre + len(scores)] >= 5
            scores = np.where(wk == (gap_weekday >= 5), scores, np.inf)
        if not c.diagonal_only:
            scores = _warped_scores(scores, d, q_pre, q_post, T, c)
        if collapsed_gap and len(scores):
            scores = _collapsed_scores(scores, d, q_pre, q_post, T)
        out.append(scores)
    return out


def _warped_scores(scores, d: Donor, q_pre, q_post, T, c) -> np.ndarray:
    """Re-score feasible placements with free warping inside each buffer."""
    n_pre, n_post = len(q_pre), len(q_post)
    out = np.full(len(scores), np.inf)
    for p in np.nonzero(np.isfinite(scores))[0]:
        total = 0.0
        try:
            if n_pre:
                total += _buffer_dtw(q_pre, d, p, p + n_pre, c)
            if n_post:
                total += _buffer_dtw(q_post, d, p + n_pre + T, p + n_pre + T + n_post, c)
        except InfeasibleAlignmentError:
            continue
        out[p] = total
    return out


def _buffer_dtw(q: QuerySlice, d: Donor, a: int, b: int, c) -> float:
    rc = None if d.clock is None else d.clock[a:b]
    qc = None if np.isnan(q.clock).all() else q.clock
    cc = c if (qc is not None and rc is not None) else replace(c, time_window=None)
    return dtw_distance(q.values, d.values[a:b], replace(cc, open_begin_end=False), q_clock=qc, rho_clock=rc).dissimilarity


def _collapsed_scores(scores, d: Donor, q_pre, q_post, T) -> np.ndarray:
    """Add the mismatch between a single interpolated gap element and the donor's mean gap value."""
    if len(q_pre) and len(q_post):
        interp = 0.5 * (q_pre.values[-1] + q_post.values[0])
    else:
        interp = (q_pre.values[-1:] if len(q_pre) else q_post.values[:1])[0]
    n_pre = len(q_pre)
    out = scores.copy()
    for p in np.nonzero(np.isfinite(scores))[0]:
        out[p] = scores[p] + abs(interp - float(np.mean(d.values[p + n_pre : p + n_pre + T])))
    return out


def score_candidates(
    q_pre,
    q_post,
    gap: GapSpec | int,
    refs: ReferenceCollection,
    c: AlignmentConstraints = ONE_TO_ONE,
    *,
    gap_clock=None,
    gap_weekday: int | None = None,
    collapsed_gap: bool = False,
    trace: TextIO | None = None,
) -> list[AlignmentResult]:
    """Best artificial-gap placement per donor.

    Every donor window of length ``len(q_pre) + T + len(q_post)`` that is
    fully observed and passes the restrictions is scored as the buffer
    dissimilarity before plus after the gap. The earliest minimal placement
    represents each donor; donors without any feasible placement are left
    out and the rest keep input order.
    """
    if len(refs) == 0:
        raise EmptyReferenceError("reference collection is empty")
    q_pre, q_post = _as_slice(q_pre), _as_slice(q_post)
    T = gap.length if isinstance(gap, GapSpec) else int(gap)
    n_pre, n_post = len(q_pre), len(q_post)
    tables = placement_table(
        q_pre, q_post, T, refs, c, gap_clock=gap_clock, gap_weekday=gap_weekday, collapsed_gap=collapsed_gap
    )
    length = n_pre + T + n_post
    results = []
    for d, scores in zip(refs.donors, tables):
        if trace is not None:
            for p in np.nonzero(np.isfinite(scores))[0].tolist():
                trace.write(json.dumps({"donor": list(d.key), "placement": p, "dissimilarity": float(scores[p])}) + "\n")
        if len(scores) == 0 or not np.isfinite(scores).any():
            continue
        p = int(np.argmin(scores))
        path = tuple((k, p + k) for k in range(length) if k < n_pre or k >= n_pre + T)
        vals = np.array(d.values[p + n_pre : p + n_pre + T], dtype=float)
        results.append(AlignmentResult(d.key, p + n_pre, float(scores[p]), vals, p, length, path))
    return results


def feasible_placements(
    refs: ReferenceCollection,
    T: int,
    gap_clock=None,
    gap_weekday: int | None = None,
    time_window: float | None = None,
) -> list[tuple[int, int]]:
    """All (donor index, gap position) pairs with a fully observed gap window."""
    empty = QuerySlice(np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64), -1)
    c = AlignmentConstraints(one_to_one=True, time_window=time_window)
    tables = placement_table(empty, empty, T, refs, c, gap_clock=gap_clock, gap_weekday=gap_weekday)
    return [(i, int(p)) for i, s in enumerate(tables) for p in np.nonzero(np.isfinite(s))[0]]
