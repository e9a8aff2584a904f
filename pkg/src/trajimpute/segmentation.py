"""Stay-point detection, TDTR simplification and per-trajectory travel metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, TextIO, Union

import numpy as np

from . import kernels
from .geo import GeoPoint, Trajectory, format_timestamp, haversine, haversine_array, slerp

DEFAULT_RADIUS_M = 200.0
DEFAULT_MIN_STAY_S = 600.0
DEFAULT_TDTR_TOLERANCE_M = 30.0


@dataclass(frozen=True)
class StayPoint:
    lat: float
    lon: float
    arrive: float
    depart: float
    members: tuple[GeoPoint, ...]

    @property
    def member_count(self) -> int:
        return len(self.members)

    @property
    def centroid(self) -> tuple[float, float]:
        return self.lat, self.lon


@dataclass(frozen=True)
class Track:
    """Fixes between two stays.

    ``start``/``end`` bound the movement: the preceding stay's departure and
    the next stay's arrival (or the first/last own fix at the trajectory
    ends). ``points`` is empty when one stay directly follows another.
    """

    points: tuple[GeoPoint, ...]
    start: float
    end: float


Item = Union[StayPoint, Track]


@dataclass(frozen=True)
class SegmentedDay:
    person_id: str
    items: tuple[Item, ...]

    @property
    def stays(self) -> list[StayPoint]:
        return [it for it in self.items if isinstance(it, StayPoint)]

    @property
    def tracks(self) -> list[Track]:
        return [it for it in self.items if isinstance(it, Track)]

    @property
    def start(self) -> float:
        first = self.items[0]
        return first.arrive if isinstance(first, StayPoint) else first.points[0].timestamp

    @property
    def end(self) -> float:
        last = self.items[-1]
        return last.depart if isinstance(last, StayPoint) else last.points[-1].timestamp

    def fixes(self) -> list[GeoPoint]:
        out: list[GeoPoint] = []
        for it in self.items:
            out.extend(it.members if isinstance(it, StayPoint) else it.points)
        return out

    @cached_property
    def fix_times(self) -> np.ndarray:
        return np.array([p.timestamp for p in self.fixes()], dtype=float)

    def snapped_fixes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Fix times and positions with stay members moved onto their centroid."""
        t, la, lo = [], [], []
        for it in self.items:
            if isinstance(it, StayPoint):
                for p in it.members:
                    t.append(p.timestamp)
                    la.append(it.lat)
                    lo.append(it.lon)
            else:
                for p in it.points:
                    t.append(p.timestamp)
                    la.append(p.lat)
                    lo.append(p.lon)
        return np.array(t, dtype=float), np.array(la, dtype=float), np.array(lo, dtype=float)

    def to_jsonl(self, stream: TextIO) -> None:
        for it in self.items:
            if isinstance(it, StayPoint):
                rec = {
                    "type": "stay",
                    "person_id": self.person_id,
                    "lat": it.lat,
                    "lon": it.lon,
                    "arrive": format_timestamp(it.arrive),
                    "depart": format_timestamp(it.depart),
                    "member_count": it.member_count,
                }
            else:
                rec = {
                    "type": "track",
                    "person_id": self.person_id,
                    "start": format_timestamp(it.start),
                    "end": format_timestamp(it.end),
                    "points": [[format_timestamp(p.timestamp), p.lat, p.lon] for p in it.points],
                }
            stream.write(json.dumps(rec) + "\n")


def detect_stay_points(
    traj: Trajectory,
    radius: float = DEFAULT_RADIUS_M,
    min_duration: float = DEFAULT_MIN_STAY_S,
) -> SegmentedDay:
    """Split a trajectory into stays and the tracks connecting them.

    Greedy forward scan: a cluster grows while each next fix lies within
    ``radius`` meters of the running centroid and is emitted as a stay once it
    spans at least ``min_duration`` seconds. Every fix ends up in exactly one
    stay or track.
    """
    if radius <= 0 or min_duration <= 0:
        raise ValueError("radius and min_duration must be positive")
    pts = traj.points
    if not pts:
        return SegmentedDay(traj.person_id, ())
    labels = kernels.stay_labels(traj.times, traj.lats, traj.lons, radius, min_duration)

    # runs of equal label; -1 runs are track fixes
    runs: list[tuple[int, int, int]] = []
    start = 0
    for i in range(1, len(pts) + 1):
        if i == len(pts) or labels[i] != labels[start]:
            runs.append((int(labels[start]), start, i))
            start = i

    raw: list[Item] = []
    for lab, a, b in runs:
        if lab < 0:
            raw.append(Track(pts[a:b], pts[a].timestamp, pts[b - 1].timestamp))
        else:
            members = pts[a:b]
            raw.append(
                StayPoint(
                    lat=float(np.mean(traj.lats[a:b])),
                    lon=float(np.mean(traj.lons[a:b])),
                    arrive=members[0].timestamp,
                    depart=members[-1].timestamp,
                    members=members,
                )
            )

    items: list[Item] = []
    for idx, it in enumerate(raw):
        if isinstance(it, StayPoint):
            if items and isinstance(items[-1], StayPoint):
                items.append(Track((), items[-1].depart, it.arrive))
            items.append(it)
        else:
            prev_stay = raw[idx - 1] if idx > 0 else None
            next_stay = raw[idx + 1] if idx + 1 < len(raw) else None
            s = prev_stay.depart if isinstance(prev_stay, StayPoint) else it.start
            e = next_stay.arrive if isinstance(next_stay, StayPoint) else it.end
            items.append(Track(it.points, s, e))
    return SegmentedDay(traj.person_id, tuple(items))


def _deviations(t, la, lo, s: int, e: int) -> np.ndarray:
    """Distance of fixes s+1..e-1 from the time-ratio position on chord s->e."""
    inner = slice(s + 1, e)
    span = t[e] - t[s]
    frac = (t[inner] - t[s]) / span if span > 0 else np.zeros(e - s - 1)
    plat, plon = slerp(la[s], lo[s], la[e], lo[e], frac)
    return haversine_array(la[inner], lo[inner], plat, plon)


def tdtr_simplify(track: Sequence[GeoPoint], tolerance: float = DEFAULT_TDTR_TOLERANCE_M) -> list[GeoPoint]:
    """Top-Down Time Ratio simplification.

    Recursively keeps the fix with the largest distance from its time-ratio
    position on the current chord until no fix deviates more than
    ``tolerance`` meters. First and last fixes are always kept.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    pts = list(track)
    if len(pts) <= 2:
        return pts
    t = np.array([p.timestamp for p in pts])
    la = np.array([p.lat for p in pts])
    lo = np.array([p.lon for p in pts])
    keep = np.zeros(len(pts), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        s, e = stack.pop()
        if e - s < 2:
            continue
        dev = _deviations(t, la, lo, s, e)
        k = int(np.argmax(dev))
        if dev[k] > tolerance:
            mid = s + 1 + k
            keep[mid] = True
            stack.append((s, mid))
            stack.append((mid, e))
    return [p for p, kp in zip(pts, keep) if kp]


def max_tdtr_deviation(original: Sequence[GeoPoint], simplified: Sequence[GeoPoint]) -> float:
    """Largest deviation of any original fix from the simplified chain."""
    t = np.array([p.timestamp for p in original])
    la = np.array([p.lat for p in original])
    lo = np.array([p.lon for p in original])
    idx = {p.timestamp: i for i, p in enumerate(original)}
    kept = [idx[p.timestamp] for p in simplified]
    worst = 0.0
    for s, e in zip(kept, kept[1:]):
        if e - s >= 2:
            worst = max(worst, float(_deviations(t, la, lo, s, e).max()))
    return worst


def track_distance(track: Sequence[GeoPoint]) -> float:
    """Summed haversine length (meters) over consecutive points."""
    total = 0.0
    for a, b in zip(track, track[1:]):
        total += haversine(a, b)
    return total


def radius_of_gyration(points: Sequence[GeoPoint]) -> float:
    """RMS haversine distance (meters) from the arithmetic-mean centroid."""
    if len(points) == 0:
        raise ValueError("radius of gyration of an empty point set")
    la = np.array([p.lat for p in points])
    lo = np.array([p.lon for p in points])
    return rog_arrays(la, lo)


def rog_arrays(la: np.ndarray, lo: np.ndarray) -> float:
    if len(la) == 0:
        raise ValueError("radius of gyration of an empty point set")
    d = haversine_array(la, lo, la.mean(), lo.mean())
    return float(np.sqrt(np.mean(d * d)))


@dataclass(frozen=True)
class TravelPath:
    """Time-stamped vertex chain used to measure travel.

    Stays contribute their centroid at arrival and departure (no distance);
    tracks contribute their simplified fixes.
    """

    times: np.ndarray
    lats: np.ndarray
    lons: np.ndarray

    def position(self, ts: float) -> tuple[float, float]:
        """Great-circle interpolated position at time ``ts`` (clamped to the ends)."""
        t = self.times
        if ts <= t[0]:
            return float(self.lats[0]), float(self.lons[0])
        if ts >= t[-1]:
            return float(self.lats[-1]), float(self.lons[-1])
        i = int(np.searchsorted(t, ts, side="right")) - 1
        if t[i] == ts or (self.lats[i] == self.lats[i + 1] and self.lons[i] == self.lons[i + 1]):
            return float(self.lats[i]), float(self.lons[i])
        frac = (ts - t[i]) / (t[i + 1] - t[i])
        la, lo = slerp(self.lats[i], self.lons[i], self.lats[i + 1], self.lons[i + 1], frac)
        return float(la), float(lo)

    def length(self) -> float:
        return float(haversine_array(self.lats[:-1], self.lons[:-1], self.lats[1:], self.lons[1:]).sum())


def travel_path(seg: SegmentedDay, tolerance: float | None = DEFAULT_TDTR_TOLERANCE_M) -> TravelPath:
    t: list[float] = []
    la: list[float] = []
    lo: list[float] = []

    def add(ts, a, b):
        if t and ts <= t[-1]:
            return
        t.append(ts)
        la.append(a)
        lo.append(b)

    for it in seg.items:
        if isinstance(it, StayPoint):
            add(it.arrive, it.lat, it.lon)
            add(it.depart, it.lat, it.lon)
        elif it.points:
            pts = tdtr_simplify(it.points, tolerance) if tolerance else list(it.points)
            for p in pts:
                add(p.timestamp, p.lat, p.lon)
    return TravelPath(np.array(t, dtype=float), np.array(la, dtype=float), np.array(lo, dtype=float))
