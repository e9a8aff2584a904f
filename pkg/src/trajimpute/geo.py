"""Geolocation ingest: parsing, validation, great-circle distances and coverage."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from typing import Iterable, Iterator, TextIO

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_MAX_GAP_S = 360.0
DEFAULT_MAX_SPEED_MS = 70.0

CSV_HEADER = ("person_id", "timestamp", "lat", "lon")


class ParseError(ValueError):
    """Raised for malformed input rows. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, slots=True)
class GeoPoint:
    timestamp: float  # seconds since epoch, UTC
    lat: float
    lon: float

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class Trajectory:
    person_id: str
    points: tuple[GeoPoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        for a, b in zip(pts, pts[1:]):
            if b.timestamp <= a.timestamp:
                raise ValueError(
                    f"{self.person_id}: timestamps must be strictly increasing "
                    f"({a.timestamp} then {b.timestamp})"
                )

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.points], dtype=float)

    @cached_property
    def lats(self) -> np.ndarray:
        return np.array([p.lat for p in self.points], dtype=float)

    @cached_property
    def lons(self) -> np.ndarray:
        return np.array([p.lon for p in self.points], dtype=float)

    def between(self, start: float, end: float) -> "Trajectory":
        """Fixes with ``start <= t <= end``."""
        lo = int(np.searchsorted(self.times, start, side="left"))
        hi = int(np.searchsorted(self.times, end, side="right"))
        return Trajectory(self.person_id, self.points[lo:hi])


@dataclass(frozen=True)
class CoverageStats:
    covered_time: float
    coverage_fraction: float
    gap_count: int
    mean_gap_length: float
    gap_time: float = 0.0
    boundary_slack: float = 0.0
    window: tuple[float, float] = field(default=(0.0, 0.0))


# -- timestamps ---------------------------------------------------------------


def parse_timestamp(text: str) -> float:
    s = text.strip()
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp without UTC offset: {text!r}")
    return dt.timestamp()


def format_timestamp(ts: float) -> str:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


# -- parsing ------------------------------------------------------------------


def _build(rows: Iterable[tuple[int, str, float, float, float]]) -> list[Trajectory]:
    by_person: dict[str, list[tuple[float, int, GeoPoint]]] = {}
    for line, pid, ts, lat, lon in rows:
        try:
            pt = GeoPoint(ts, lat, lon)
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
        by_person.setdefault(pid, []).append((ts, line, pt))
    out = []
    for pid, items in by_person.items():
        items.sort(key=lambda it: it[0])
        for (ta, la, _), (tb, lb, _) in zip(items, items[1:]):
            if ta == tb:
                raise ParseError(f"duplicate timestamp for person {pid!r} (also line {la})", lb)
        out.append(Trajectory(pid, tuple(it[2] for it in items)))
    return out


def _csv_rows(stream: TextIO) -> Iterator[tuple[int, str, float, float, float]]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        return
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"expected header {','.join(CSV_HEADER)}", 1)
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line)
        yield _convert(line, *row)


def _jsonl_rows(stream: TextIO) -> Iterator[tuple[int, str, float, float, float]]:
    for line, text in enumerate(stream, start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line)
        missing = [k for k in CSV_HEADER if k not in obj]
        if missing:
            raise ParseError(f"missing keys: {', '.join(missing)}", line)
        yield _convert(line, obj["person_id"], obj["timestamp"], obj["lat"], obj["lon"])


def _convert(line, pid, ts, lat, lon):
    pid = str(pid).strip()
    if not pid:
        raise ParseError("empty person_id", line)
    try:
        t = parse_timestamp(str(ts))
    except ValueError as exc:
        raise ParseError(f"bad timestamp: {exc}", line) from None
    try:
        la, lo = float(lat), float(lon)
    except (TypeError, ValueError):
        raise ParseError("non-numeric coordinate", line) from None
    if not (math.isfinite(la) and math.isfinite(lo)):
        raise ParseError("non-finite coordinate", line)
    return line, pid, t, la, lo


def parse_trajectories(stream: TextIO, format: str = "csv") -> list[Trajectory]:
    """Parse a ``csv`` or ``jsonl`` stream into one trajectory per person.

    Persons appear in order of first occurrence; points are sorted by time.
    Raises :class:`ParseError` naming the offending line.
    """
    if format == "csv":
        rows = _csv_rows(stream)
    elif format == "jsonl":
        rows = _jsonl_rows(stream)
    else:
        raise ValueError(f"unknown input format {format!r}")
    return _build(rows)


def write_trajectories(trajs: Iterable[Trajectory], stream: TextIO, format: str = "csv") -> None:
    if format == "csv":
        stream.write(",".join(CSV_HEADER) + "\n")
        for tr in trajs:
            for p in tr.points:
                stream.write(f"{tr.person_id},{format_timestamp(p.timestamp)},{p.lat!r},{p.lon!r}\n")
    elif format == "jsonl":
        for tr in trajs:
            for p in tr.points:
                rec = {
                    "person_id": tr.person_id,
                    "timestamp": format_timestamp(p.timestamp),
                    "lat": p.lat,
                    "lon": p.lon,
                }
                stream.write(json.dumps(rec) + "\n")
    else:
        raise ValueError(f"unknown output format {format!r}")


def dumps_trajectories(trajs: Iterable[Trajectory], format: str = "csv") -> str:
    buf = io.StringIO()
    write_trajectories(trajs, buf, format)
    return buf.getvalue()


# -- distances ----------------------------------------------------------------


def haversine_coords(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = p2 - p1
    dlmb = math.radians(lon2) - math.radians(lon1)
    s1 = math.sin(dphi / 2.0)
    s2 = math.sin(dlmb / 2.0)
    h = s1 * s1 + math.cos(p1) * math.cos(p2) * s2 * s2
    return 2.0 * EARTH_RADIUS_M * math.asin(math.sqrt(min(1.0, h)))


def haversine(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    return haversine_coords(a.lat, a.lon, b.lat, b.lon)


def haversine_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised haversine (meters) over broadcastable coordinate arrays."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(1.0, h)))


def slerp(lat1, lon1, lat2, lon2, frac):
    """Point at fraction ``frac`` along the great circle from 1 to 2 (degrees).

    Works on scalars or broadcastable arrays.
    """
    lat1, lon1, lat2, lon2, frac = map(np.asarray, (lat1, lon1, lat2, lon2, frac))
    p1, l1, p2, l2 = np.radians(lat1), np.radians(lon1), np.radians(lat2), np.radians(lon2)
    v1 = np.stack([np.cos(p1) * np.cos(l1), np.cos(p1) * np.sin(l1), np.sin(p1)], axis=-1)
    v2 = np.stack([np.cos(p2) * np.cos(l2), np.cos(p2) * np.sin(l2), np.sin(p2)], axis=-1)
    # atan2 form stays accurate for the tiny angles of consecutive fixes
    omega = np.arctan2(np.linalg.norm(np.cross(v1, v2), axis=-1), (v1 * v2).sum(axis=-1))
    so = np.sin(omega)
    small = so < 1e-15
    safe = np.where(small, 1.0, so)
    wa = np.where(small, 1.0 - frac, np.sin((1.0 - frac) * omega) / safe)
    wb = np.where(small, frac, np.sin(frac * omega) / safe)
    v = wa[..., None] * v1 + wb[..., None] * v2
    lat = np.degrees(np.arctan2(v[..., 2], np.hypot(v[..., 0], v[..., 1])))
    lon = np.degrees(np.arctan2(v[..., 1], v[..., 0]))
    return lat, lon


# -- coverage -----------------------------------------------------------------


def _spans(times: np.ndarray, max_gap: float) -> list[tuple[int, int]]:
    """Index ranges [i, j] of maximal runs whose successive gaps are <= max_gap."""
    if len(times) == 0:
        return []
    breaks = np.nonzero(np.diff(times) > max_gap)[0]
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [len(times) - 1]])
    return list(zip(starts.tolist(), ends.tolist()))


def coverage_stats(
    traj: Trajectory,
    max_gap: float = DEFAULT_MAX_GAP_S,
    window: tuple[float, float] | None = None,
) -> CoverageStats:
    """Covered time and over-threshold gaps of ``traj`` clipped to ``window``.

    ``window`` defaults to the span from first to last fix. Over-threshold gaps
    are counted when they intersect the window; their clipped durations make up
    ``gap_time``. Time in the window before the first fix or after the last one
    is ``boundary_slack``.
    """
    if max_gap <= 0:
        raise ValueError("max_gap must be positive")
    times = traj.times
    if window is None:
        if len(times) == 0:
            return CoverageStats(0.0, 0.0, 0, 0.0)
        window = (float(times[0]), float(times[-1]))
    w0, w1 = window
    if w1 < w0:
        raise ValueError("window end precedes start")
    length = w1 - w0
    if len(times) == 0:
        return CoverageStats(0.0, 0.0, 0, 0.0, 0.0, length, (w0, w1))

    covered = 0.0
    for i, j in _spans(times, max_gap):
        lo, hi = max(times[i], w0), min(times[j], w1)
        if hi > lo:
            covered += hi - lo
    gaps = []
    gi = np.nonzero(np.diff(times) > max_gap)[0]
    for k in gi:
        lo, hi = max(times[k], w0), min(times[k + 1], w1)
        if hi > lo:
            gaps.append(hi - lo)
    slack = max(0.0, min(times[0], w1) - w0) + max(0.0, w1 - max(times[-1], w0))
    gap_time = float(sum(gaps))
    frac = covered / length if length > 0 else 0.0
    return CoverageStats(
        covered_time=float(covered),
        coverage_fraction=float(frac),
        gap_count=len(gaps),
        mean_gap_length=gap_time / len(gaps) if gaps else 0.0,
        gap_time=gap_time,
        boundary_slack=float(slack),
        window=(w0, w1),
    )


def select_contiguous_sets(
    trajs: Iterable[Trajectory],
    min_span: float = 24 * 3600.0,
    max_gap: float = DEFAULT_MAX_GAP_S,
) -> list[Trajectory]:
    """Maximal slices with no inter-fix gap above ``max_gap`` spanning >= ``min_span``."""
    if min_span <= 0:
        raise ValueError("min_span must be positive")
    out = []
    for tr in trajs:
        times = tr.times
        for i, j in _spans(times, max_gap):
            if times[j] - times[i] >= min_span:
                out.append(Trajectory(tr.person_id, tr.points[i : j + 1]))
    return out


def drop_implausible(traj: Trajectory, max_speed: float = DEFAULT_MAX_SPEED_MS) -> Trajectory:
    """Remove interior fixes whose implied speed to *both* neighbours exceeds ``max_speed``.

    Endpoints have a single neighbour and are always kept.
    """
    pts = traj.points
    if len(pts) < 3:
        return traj
    t, la, lo = traj.times, traj.lats, traj.lons
    d = haversine_array(la[:-1], lo[:-1], la[1:], lo[1:])
    v = d / np.diff(t)
    bad = np.zeros(len(pts), dtype=bool)
    bad[1:-1] = (v[:-1] > max_speed) & (v[1:] > max_speed)
    if not bad.any():
        return traj
    return Trajectory(traj.person_id, tuple(p for p, b in zip(pts, bad) if not b))
