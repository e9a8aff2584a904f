"""Discretized metric time series with response masks and gap bookkeeping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from functools import cached_property
from typing import Iterable, Mapping, TextIO
from zoneinfo import ZoneInfo

import numpy as np

from .geo import DEFAULT_MAX_GAP_S, format_timestamp, haversine_array, parse_timestamp
from .segmentation import DEFAULT_TDTR_TOLERANCE_M, SegmentedDay, rog_arrays, travel_path


class UnimputableGapError(ValueError):
    """The data around a gap cannot support the requested imputation."""


DAY_S = 86400.0
DEFAULT_INTERVAL_S = 900.0

TRAVEL_DISTANCE = "travel_distance_km"
TRIP_COUNT = "trip_count"
RADIUS_OF_GYRATION = "radius_of_gyration_km"
METRICS = (TRAVEL_DISTANCE, TRIP_COUNT, RADIUS_OF_GYRATION)

SERIES_CSV_HEADER = ("person_id", "set_id", "metric", "interval_s", "start_iso", "index", "value", "observed")


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class MetricSeries:
    """A person's metric sampled on a regular grid.

    ``values[t]`` is NaN exactly where ``response[t]`` is False. Element ``t``
    covers ``[start + t*interval, start + (t+1)*interval)``.
    """

    person_id: str
    set_id: str
    metric: str
    interval: float
    start: float
    values: np.ndarray
    response: np.ndarray
    tz: str = "UTC"

    def __post_init__(self):
        vals = _frozen(self.values, float)
        resp = _frozen(self.response, bool)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "response", resp)
        if vals.ndim != 1 or vals.shape != resp.shape:
            raise ValueError("values and response must be 1-D and equally long")
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        obs = vals[resp]
        if not np.all(np.isfinite(obs)) or np.any(obs < 0):
            raise ValueError("observed values must be finite and non-negative")
        if not np.all(np.isnan(vals[~resp])):
            raise ValueError("missing elements must hold NaN")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def key(self) -> tuple[str, str]:
        return self.person_id, self.set_id

    def element_time(self, t: int) -> float:
        return self.start + t * self.interval

    @cached_property
    def _local(self) -> tuple[np.ndarray, np.ndarray]:
        n = len(self)
        epoch = self.start + self.interval * np.arange(n)
        if self.tz == "UTC":
            clock = np.mod(epoch, DAY_S)
            weekday = (np.floor_divide(epoch, DAY_S).astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday
        else:
            zone = ZoneInfo(self.tz)
            clock = np.empty(n)
            weekday = np.empty(n, dtype=np.int64)
            for i, ts in enumerate(epoch):
                dt = datetime.fromtimestamp(float(ts), tz=zone)
                clock[i] = dt.hour * 3600 + dt.minute * 60 + dt.second + dt.microsecond / 1e6
                weekday[i] = dt.weekday()
        clock.setflags(write=False)
        weekday.setflags(write=False)
        return clock, weekday

    @property
    def clock(self) -> np.ndarray:
        """Local time of day (seconds) at the start of each element."""
        return self._local[0]

    @property
    def weekday(self) -> np.ndarray:
        """Local weekday (Monday=0) of each element."""
        return self._local[1]

    def replace(self, values=None, response=None, **changes) -> "MetricSeries":
        v = self.values if values is None else values
        r = self.response if response is None else response
        kw = dict(
            person_id=self.person_id,
            set_id=self.set_id,
            metric=self.metric,
            interval=self.interval,
            start=self.start,
            tz=self.tz,
        )
        kw.update(changes)
        return MetricSeries(values=v, response=r, **kw)

    def mask(self, start_index: int, end_index: int) -> "MetricSeries":
        vals = self.values.copy()
        resp = self.response.copy()
        vals[start_index:end_index] = np.nan
        resp[start_index:end_index] = False
        return self.replace(vals, resp)

    def fill(self, start_index: int, values) -> "MetricSeries":
        vals = self.values.copy()
        resp = self.response.copy()
        vals[start_index : start_index + len(values)] = values
        resp[start_index : start_index + len(values)] = True
        return self.replace(vals, resp)


@dataclass(frozen=True)
class GapSpec:
    """Maximal run of missing elements ``[start_index, end_index)``.

    Indices are zero-based; ``one_based_start`` gives the 1-based convention.
    """

    start_index: int
    end_index: int
    leading: bool = False
    trailing: bool = False

    def __post_init__(self):
        if self.end_index - self.start_index < 1:
            raise ValueError("gap length must be >= 1")

    @property
    def length(self) -> int:
        return self.end_index - self.start_index

    @property
    def interior(self) -> bool:
        return not (self.leading or self.trailing)

    @property
    def one_based_start(self) -> int:
        return self.start_index + 1

    @property
    def one_based_end(self) -> int:
        return self.end_index + 1


@dataclass(frozen=True)
class QuerySlice:
    values: np.ndarray
    clock: np.ndarray
    weekday: np.ndarray
    start_index: int

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class SeriesBundle:
    """Per-person matrix: aligned series for several metrics sharing one mask."""

    series: Mapping[str, MetricSeries] = field(default_factory=dict)

    def __post_init__(self):
        items = list(self.series.values())
        if not items:
            return
        ref = items[0]
        for s in items[1:]:
            if (
                s.interval != ref.interval
                or s.start != ref.start
                or len(s) != len(ref)
                or not np.array_equal(s.response, ref.response)
            ):
                raise ValueError("bundle members must share interval, start, length and response")

    def __getitem__(self, metric: str) -> MetricSeries:
        return self.series[metric]

    @property
    def response(self) -> np.ndarray:
        return next(iter(self.series.values())).response

    @property
    def key(self) -> tuple[str, str]:
        return next(iter(self.series.values())).key

    def mask(self, start_index: int, end_index: int) -> "SeriesBundle":
        return SeriesBundle({m: s.mask(start_index, end_index) for m, s in self.series.items()})


# -- discretization -----------------------------------------------------------


def _floor_local(ts: float, interval: float, tz: str) -> float:
    off = 0.0
    if tz != "UTC":
        off = datetime.fromtimestamp(ts, tz=ZoneInfo(tz)).utcoffset().total_seconds()
    return math.floor((ts + off) / interval) * interval - off


def _response(fix_times: np.ndarray, start: float, interval: float, n: int, max_gap: float) -> np.ndarray:
    """Observed iff no uncovered stretch inside the element exceeds ``max_gap``."""
    end = start + n * interval
    pieces: list[tuple[float, float]] = []
    if len(fix_times) == 0:
        pieces.append((start, end))
    else:
        pieces.append((start, float(fix_times[0])))
        gi = np.nonzero(np.diff(fix_times) > max_gap)[0]
        pieces.extend((float(fix_times[k]), float(fix_times[k + 1])) for k in gi)
        pieces.append((float(fix_times[-1]), end))
    resp = np.ones(n, dtype=bool)
    for a, b in pieces:
        if b <= a:
            continue
        i0 = max(0, int(math.floor((a - start) / interval)))
        i1 = min(n - 1, int(math.floor((b - start) / interval)))
        for i in range(i0, i1 + 1):
            lo = max(a, start + i * interval)
            hi = min(b, start + (i + 1) * interval)
            if hi - lo > max_gap:
                resp[i] = False
    return resp


def _distance_per_element(seg: SegmentedDay, start: float, interval: float, n: int, tolerance) -> np.ndarray:
    path = travel_path(seg, tolerance)
    out = np.zeros(n)
    if len(path.times) < 2:
        return out
    bounds = start + interval * np.arange(n + 1)
    t = path.times
    # boundary positions on the path (great-circle interpolation, clamped)
    blat = np.empty(n + 1)
    blon = np.empty(n + 1)
    for k, b in enumerate(bounds):
        blat[k], blon[k] = path.position(float(b))
    inside = (t > bounds[0]) & (t < bounds[-1]) & ~np.isin(t, bounds)
    mt = np.concatenate([bounds, t[inside]])
    mla = np.concatenate([blat, path.lats[inside]])
    mlo = np.concatenate([blon, path.lons[inside]])
    order = np.argsort(mt, kind="stable")
    mt, mla, mlo = mt[order], mla[order], mlo[order]
    d = haversine_array(mla[:-1], mlo[:-1], mla[1:], mlo[1:])
    elem = np.floor((mt[:-1] - start) / interval).astype(np.int64)
    elem = np.clip(elem, 0, n - 1)
    for i, dist in zip(elem.tolist(), d.tolist()):
        out[i] += dist
    return out / 1000.0


def _trips_per_element(seg: SegmentedDay, start: float, interval: float, n: int) -> np.ndarray:
    out = np.zeros(n)
    for tr in seg.tracks:
        s, e = tr.start, tr.end
        for i in range(n):
            a = start + i * interval
            b = a + interval
            if (s < b and e > a) or (s == e and a <= s < b):
                out[i] += 1.0
    return out


def _rog_per_element(seg: SegmentedDay, start: float, interval: float, n: int) -> np.ndarray:
    t, la, lo = seg.snapped_fixes()
    out = np.zeros(n)
    idx = np.floor((t - start) / interval).astype(np.int64)
    for i in range(n):
        sel = idx == i
        if sel.sum() > 1:
            out[i] = rog_arrays(la[sel], lo[sel]) / 1000.0
    return out


def discretize(
    seg: SegmentedDay,
    interval: float = DEFAULT_INTERVAL_S,
    metric: str = TRAVEL_DISTANCE,
    *,
    start: float | None = None,
    end: float | None = None,
    max_gap: float = DEFAULT_MAX_GAP_S,
    tolerance: float | None = DEFAULT_TDTR_TOLERANCE_M,
    tz: str = "UTC",
    set_id: str = "0",
) -> MetricSeries:
    """Aggregate a segmented trajectory into a fixed-interval metric series.

    Travel distance splits every path segment at element boundaries by elapsed
    time and sums the pieces; trip count tallies tracks touching each element;
    radius of gyration is taken over the element's fixes. The grid defaults to
    local-time multiples of ``interval`` enclosing the data.
    """
    if DAY_S % interval != 0:
        raise ValueError("interval must divide 24 h evenly")
    if not seg.items:
        raise ValueError("cannot discretize an empty segmentation")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    if start is None:
        start = _floor_local(seg.start, interval, tz)
    if end is None:
        end = seg.end
    n = max(1, int(math.ceil((end - start) / interval)))

    if metric == TRAVEL_DISTANCE:
        vals = _distance_per_element(seg, start, interval, n, tolerance)
    elif metric == TRIP_COUNT:
        vals = _trips_per_element(seg, start, interval, n)
    else:
        vals = _rog_per_element(seg, start, interval, n)
    resp = _response(seg.fix_times, start, interval, n, max_gap)
    vals = np.where(resp, vals, np.nan)
    return MetricSeries(seg.person_id, set_id, metric, float(interval), float(start), vals, resp, tz)


def discretize_bundle(seg: SegmentedDay, metrics: Iterable[str] = METRICS, **kw) -> SeriesBundle:
    return SeriesBundle({m: discretize(seg, metric=m, **kw) for m in metrics})


# -- gaps ---------------------------------------------------------------------


def find_gaps(series: MetricSeries) -> list[GapSpec]:
    r = series.response
    n = len(r)
    gaps = []
    t = 0
    while t < n:
        if r[t]:
            t += 1
            continue
        s = t
        while s < n and not r[s]:
            s += 1
        gaps.append(GapSpec(t, s, leading=(t == 0), trailing=(s == n)))
        t = s
    return gaps


def split_query(series: MetricSeries, gap: GapSpec, match_buffer: float) -> tuple[QuerySlice, QuerySlice]:
    """Observed elements adjacent to the gap used for matching.

    Up to ``floor(match_buffer / interval)`` contiguous observed elements on
    each side; a slice is shorter when the series edge or another gap
    intrudes.
    """
    if match_buffer < 0:
        raise ValueError("match_buffer must be non-negative")
    r = series.response
    n = len(series)
    if not r[: gap.start_index].any() and not r[gap.end_index :].any():
        raise UnimputableGapError("gap has no observed data on either side")
    k = int(math.floor(match_buffer / series.interval + 1e-9))
    a = gap.start_index
    while a > 0 and gap.start_index - a < k and r[a - 1]:
        a -= 1
    b = gap.end_index
    while b < n and b - gap.end_index < k and r[b]:
        b += 1
    return _slice(series, a, gap.start_index), _slice(series, gap.end_index, b)


def _slice(series: MetricSeries, a: int, b: int) -> QuerySlice:
    return QuerySlice(series.values[a:b], series.clock[a:b], series.weekday[a:b], a)


# -- series-csv ---------------------------------------------------------------


def write_series_csv(series: Iterable[MetricSeries], stream: TextIO, header: bool = True) -> None:
    if header:
        stream.write(",".join(SERIES_CSV_HEADER) + "\n")
    for s in series:
        head = f"{s.person_id},{s.set_id},{s.metric},{s.interval:g},{format_timestamp(s.start)}"
        for i, (v, r) in enumerate(zip(s.values.tolist(), s.response.tolist())):
            stream.write(f"{head},{i},{repr(v) if r else ''},{int(r)}\n")


def read_series_csv(stream: TextIO, tz: str = "UTC") -> list[MetricSeries]:
    reader = csv.DictReader(stream)
    if tuple(reader.fieldnames or ()) != SERIES_CSV_HEADER:
        raise ValueError(f"expected header {','.join(SERIES_CSV_HEADER)}")
    groups: dict[tuple[str, str, str], dict] = {}
    for row in reader:
        key = (row["person_id"], row["set_id"], row["metric"])
        g = groups.setdefault(
            key, {"interval": float(row["interval_s"]), "start": parse_timestamp(row["start_iso"]), "rows": {}}
        )
        obs = row["observed"] == "1"
        g["rows"][int(row["index"])] = (float(row["value"]) if obs else math.nan, obs)
    out = []
    for (pid, sid, metric), g in groups.items():
        n = max(g["rows"]) + 1
        if sorted(g["rows"]) != list(range(n)):
            raise ValueError(f"series {pid}/{sid}/{metric} has missing indices")
        vals = [g["rows"][i][0] for i in range(n)]
        resp = [g["rows"][i][1] for i in range(n)]
        out.append(MetricSeries(pid, sid, metric, g["interval"], g["start"], np.array(vals), np.array(resp), tz))
    return out


def element_datetime(series: MetricSeries, t: int) -> datetime:
    return datetime.fromtimestamp(series.start, tz=timezone.utc) + timedelta(seconds=t * series.interval)
