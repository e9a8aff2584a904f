"""Fixture builders and independent oracles shared by the tests."""

from __future__ import annotations

import functools
import itertools
import math

import numpy as np

from trajimpute.dtw import AlignmentConstraints, clock_offset
from trajimpute.geo import GeoPoint, Trajectory, parse_timestamp
from trajimpute.series import MetricSeries

R = 6_371_000.0
M_PER_DEG_LAT = R * math.pi / 180.0
T0 = parse_timestamp("2018-11-01T00:00:00Z")


def at(hhmm: str, day: str = "2018-11-01") -> float:
    return parse_timestamp(f"{day}T{hhmm}:00Z") if len(hhmm) == 5 else parse_timestamp(f"{day}T{hhmm}Z")


def series(values, start: float = T0, interval: float = 900.0, pid: str = "q", sid: str = "0") -> MetricSeries:
    v = np.asarray(values, dtype=float)
    return MetricSeries(pid, sid, "travel_distance_km", interval, start, v, ~np.isnan(v))


def dwell(lat: float, lon: float, t0: float, t1: float, step: float = 60.0) -> list[GeoPoint]:
    return [GeoPoint(t0 + float(k), lat, lon) for k in np.arange(0.0, t1 - t0 + 1e-6, step)]


def fig1_trajectory(silence: bool = False) -> Trajectory:
    """Stay, northbound track, stay. The track covers 2.5 km between 09:20
    and 09:32 and 4.3 km between 09:32 and 09:44. With ``silence`` no fix
    is recorded after 09:31 and before 09:48."""
    lat0, lon = 52.0, 5.0
    pts = dwell(lat0, lon, at("09:00"), at("09:20"))
    d1, d2 = 2500.0, 4300.0
    for k in range(1, 49):  # 30 s steps
        t = at("09:20") + 30.0 * k
        if t > at("09:32"):
            s = d1 + d2 * (t - at("09:32")) / 720.0
        else:
            s = d1 * (t - at("09:20")) / 720.0
        pts.append(GeoPoint(t, lat0 + s / M_PER_DEG_LAT, lon))
    lat1 = lat0 + (d1 + d2) / M_PER_DEG_LAT
    pts += dwell(lat1, lon, at("09:44") + 60.0, at("10:20"))
    if silence:
        pts = [p for p in pts if not (at("09:31") < p.timestamp < at("09:48"))]
    return Trajectory("p1", tuple(pts))


# -- brute-force DTW ------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def monotone_paths(n: int, m: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """Every path from any (0, j0) to any (n-1, j1) using (1,1), (1,0), (0,1) steps."""
    out = []

    def walk(path):
        i, j = path[-1]
        if i == n - 1:
            out.append(tuple(path))
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                path.append((a, b))
                walk(path)
                path.pop()

    for j0 in range(m):
        walk([(0, j0)])
    return tuple(out)


@functools.lru_cache(maxsize=None)
def path_table(n: int, m: int):
    """Paths grouped by length: (rows, cols, j0, j1, dev0, devj0) arrays."""
    groups = {}
    for p in monotone_paths(n, m):
        groups.setdefault(len(p), []).append(p)
    out = []
    for length, ps in groups.items():
        a = np.array(ps)  # (k, L, 2)
        i, j = a[..., 0], a[..., 1]
        j0 = j[:, 0]
        out.append((i, j, j0, j[:, -1], np.abs(i - j).max(1), np.abs(i - (j - j0[:, None])).max(1)))
    return out


def brute_dtw(q, rho, c: AlignmentConstraints, q_clock=None, rho_clock=None) -> float:
    """Minimum left-to-right cost over every admissible path; inf if none."""
    q = np.asarray(q, dtype=float)
    rho = np.asarray(rho, dtype=float)
    n, m = len(q), len(rho)
    cost = np.abs(q[:, None] - rho[None, :])
    ok = np.ones((n, m), dtype=bool)
    if c.time_window is not None:
        ok = clock_offset(np.asarray(q_clock)[:, None], np.asarray(rho_clock)[None, :]) <= c.time_window
    band = c.band
    best = math.inf
    for i, j, j0, j1, dev0, devj0 in path_table(n, m):
        keep = ok[i, j].all(axis=1)
        if not c.open_begin_end:
            keep &= (j0 == 0) & (j1 == m - 1)
            if band is not None:
                keep &= dev0 <= band
        elif band is not None:
            keep &= devj0 <= band
        if keep.any():
            totals = np.cumsum(cost[i[keep], j[keep]], axis=1)[:, -1]
            best = min(best, float(totals.min()))
    return best


def path_cost(q, rho, path) -> float:
    total = 0.0
    for i, j in path:
        total += abs(float(q[i]) - float(rho[j]))
    return total


# -- confusion oracle -----------------------------------------------------------


def confusion(truth_travel, imputed_travel) -> dict:
    tp = fp = fn = tn = 0
    for t, i in zip(truth_travel, imputed_travel):
        if t and i:
            tp += 1
        elif i and not t:
            fp += 1
        elif t and not i:
            fn += 1
        else:
            tn += 1
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn}


def bits(k: int, n: int = 8) -> list[bool]:
    return [bool((k >> b) & 1) for b in range(n)]


def all_patterns(n: int = 8):
    return itertools.product(range(2**n), repeat=2)
