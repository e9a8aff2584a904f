"""Seeded synthetic mobility traces for desk-scale experiments.

Each persona lives around a home and a work place and follows one of three
archetypes: ``routine`` (regular commute), ``variable`` (several trips at
changing times) or ``atypical`` (long irregular trips, some late). Dwell fixes
arrive every minute, moving fixes every 20-30 s, all with ``noise_m`` meters of
Gaussian noise.
Planned outages longer than the six-minute threshold split a person's week
into several contiguous sets.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import TextIO

import numpy as np

from .geo import GeoPoint, Trajectory, format_timestamp, haversine_coords, parse_timestamp

ARCHETYPES = ("routine", "variable", "atypical")
CENTER = (52.09, 5.12)
M_PER_DEG_LAT = 111_195.0
DAY = 86400.0
HOUR = 3600.0


@dataclass(frozen=True)
class PersonaSpec:
    n_persons: int = 50
    n_days: int = 7
    mix: tuple[float, float, float] = (0.5, 0.35, 0.15)
    multi_set_fraction: float = 0.4
    noise_m: float = 5.0
    start: str = "2018-11-05T00:00:00Z"
    seed: int = 0

    def __post_init__(self):
        if self.n_persons < 1 or self.n_days < 1:
            raise ValueError("need at least one person and one day")
        if len(self.mix) != 3 or any(x < 0 for x in self.mix) or sum(self.mix) <= 0:
            raise ValueError("mix must be three non-negative weights")
        if not 0 <= self.multi_set_fraction <= 1:
            raise ValueError("multi_set_fraction must lie in [0, 1]")
        if self.noise_m < 0:
            raise ValueError("noise_m must be >= 0")


@dataclass
class SynthDataset:
    trajectories: list[Trajectory]
    ledger: dict

    def write_ledger(self, stream: TextIO) -> None:
        json.dump(self.ledger, stream, indent=1, sort_keys=True)
        stream.write("\n")


def _offset(lat: float, lon: float, east_m: float, north_m: float) -> tuple[float, float]:
    return (
        lat + north_m / M_PER_DEG_LAT,
        lon + east_m / (M_PER_DEG_LAT * math.cos(math.radians(lat))),
    )


def _place(rng, origin, r_min, r_max):
    ang = rng.uniform(0, 2 * math.pi)
    r = rng.uniform(r_min, r_max)
    return _offset(origin[0], origin[1], r * math.cos(ang), r * math.sin(ang))


def _route(rng, a, b) -> list[tuple[float, float]]:
    """Zig-zag waypoints from a to b."""
    n_mid = int(rng.integers(2, 5))
    d = haversine_coords(a[0], a[1], b[0], b[1])
    pts = [a]
    for k in range(1, n_mid + 1):
        f = k / (n_mid + 1)
        base = (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]))
        side = (1 if k % 2 else -1) * rng.uniform(0.05, 0.2) * d
        pts.append(_offset(base[0], base[1], side * 0.7, side * 0.7))
    pts.append(b)
    return pts


def _route_length(route) -> float:
    return sum(haversine_coords(*p, *q) for p, q in zip(route, route[1:]))


def _day_plan(rng, archetype, day_start, weekday, home, work, places):
    """(depart offset, destination) list for one day, ending at home."""
    plan = []
    if archetype == "routine":
        if weekday < 5:
            plan.append((8 * HOUR + rng.normal(0, 600), work))
            plan.append((17 * HOUR + rng.normal(0, 600), home))
            if rng.random() < 0.3:
                plan.append((19.5 * HOUR + rng.normal(0, 900), places[int(rng.integers(len(places)))]))
                plan.append((21 * HOUR + rng.normal(0, 900), home))
        elif rng.random() < 0.8:
            t = 11 * HOUR + rng.normal(0, HOUR)
            plan.append((t, places[int(rng.integers(len(places)))]))
            plan.append((t + rng.uniform(2, 4) * HOUR, home))
    elif archetype == "variable":
        k = int(rng.integers(2, 6))
        times = np.sort(rng.uniform(7 * HOUR, 20 * HOUR, size=k))
        dests = [places[int(i)] for i in rng.integers(len(places), size=k - 1)] + [home]
        if weekday < 5 and rng.random() < 0.5:
            dests[0] = work
        plan.extend(zip(times.tolist(), dests))
    else:
        k = int(rng.integers(1, 4))
        times = np.sort(rng.uniform(6 * HOUR, 21.5 * HOUR, size=k))
        for t in times.tolist():
            dest = _place(rng, home, 15_000, 40_000)
            plan.append((t, dest))
            plan.append((t + rng.uniform(1, 2.5) * HOUR, home))
    return [(day_start + t, d) for t, d in plan]


def _persona(rng, idx: int, archetype: str):
    home = _place(rng, CENTER, 0, 6000)
    work = _place(rng, home, 4000, 15000)
    places = [_place(rng, home, 1500, 12000) for _ in range(5)]
    speed = float(rng.uniform(7, 14))
    return {"person_id": f"p{idx:03d}", "archetype": archetype, "home": home, "work": work, "places": places, "speed": speed}


def _simulate_person(rng, persona, t0: float, n_days: int):
    """Fix arrays plus trip ledger for one person."""
    home = persona["home"]
    events = []
    for d in range(n_days):
        day_start = t0 + d * DAY
        weekday = int((math.floor(day_start / DAY) + 3) % 7)
        events.extend(_day_plan(rng, persona["archetype"], day_start, weekday, home, persona["work"], persona["places"]))
    end = t0 + n_days * DAY

    times, lats, lons, trips = [], [], [], []
    cur, t = home, t0
    min_dwell = 30 * 60
    for depart, dest in events:
        if dest == cur:
            continue
        depart = max(depart, t + min_dwell)
        route = _route(rng, cur, dest)
        length = _route_length(route)
        dur = length / persona["speed"]
        if depart + dur + min_dwell > end:
            break
        # dwell fixes every minute
        dwell = np.arange(t, depart, 60.0)
        times.append(dwell)
        lats.append(np.full(len(dwell), cur[0]))
        lons.append(np.full(len(dwell), cur[1]))
        # moving fixes every 20-30 s along the route
        steps = [depart]
        while steps[-1] + 30 < depart + dur:
            steps.append(steps[-1] + float(rng.uniform(20, 30)))
        mt = np.array(steps[1:])
        cum = np.concatenate([[0.0], np.cumsum([haversine_coords(*p, *q) for p, q in zip(route, route[1:])])])
        s = (mt - depart) * persona["speed"]
        seg = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(route) - 2)
        f = (s - cum[seg]) / np.maximum(cum[seg + 1] - cum[seg], 1e-9)
        r = np.array(route)
        times.append(mt)
        lats.append(r[seg, 0] + f * (r[seg + 1, 0] - r[seg, 0]))
        lons.append(r[seg, 1] + f * (r[seg + 1, 1] - r[seg, 1]))
        trips.append(
            {
                "depart": format_timestamp(round(depart)),
                "arrive": format_timestamp(round(depart + dur)),
                "route_m": length,
            }
        )
        cur, t = dest, depart + dur
    dwell = np.arange(t, end, 60.0)
    times.append(dwell)
    lats.append(np.full(len(dwell), cur[0]))
    lons.append(np.full(len(dwell), cur[1]))
    return np.concatenate(times), np.concatenate(lats), np.concatenate(lons), trips


def _outages(rng, t0: float, n_days: int, n_sets: int):
    """Outage intervals splitting the span into ``n_sets`` pieces of >= 24 h."""
    total = n_days * DAY
    out = []
    if n_sets > 1:
        seg = total / n_sets
        slack = max(0.0, min(3 * HOUR, (seg - 24 * HOUR - 2.5 * HOUR) / 2))
        for k in range(1, n_sets):
            start = t0 + k * seg + rng.uniform(-slack, slack)
            out.append((start, start + rng.uniform(0.25, 2) * HOUR))
    # brief drop-outs that stay within the six-minute rule
    for _ in range(int(rng.integers(2, 6))):
        start = t0 + rng.uniform(0, total - HOUR)
        out.append((start, start + rng.uniform(120, 300)))
    return sorted(out)


def _fix_path_length(pts) -> float:
    return float(sum(haversine_coords(a.lat, a.lon, b.lat, b.lon) for a, b in zip(pts, pts[1:])))


def generate(spec: PersonaSpec = PersonaSpec()) -> SynthDataset:
    """Synthetic trajectories and a ledger of their planned structure."""
    rng = np.random.default_rng(spec.seed)
    t0 = parse_timestamp(spec.start)
    mix = np.asarray(spec.mix, dtype=float) / sum(spec.mix)
    max_sets = max(1, min(5, int(spec.n_days * DAY // (26.5 * HOUR))))
    n_multi = int(round(spec.multi_set_fraction * spec.n_persons)) if max_sets >= 4 else 0
    trajs, persons = [], []
    for idx in range(spec.n_persons):
        archetype = ARCHETYPES[int(rng.choice(3, p=mix))]
        persona = _persona(rng, idx, archetype)
        t, la, lo, trips = _simulate_person(rng, persona, t0, spec.n_days)
        if idx < n_multi:
            n_sets = int(rng.integers(4, max_sets + 1))
        else:
            n_sets = int(rng.integers(1, min(3, max_sets) + 1))
        outages = _outages(rng, t0, spec.n_days, n_sets)
        keep = np.ones(len(t), dtype=bool)
        for a, b in outages:
            keep &= ~((t >= a) & (t < b))
        # positional noise, integer-second timestamps
        noise = rng.normal(0, spec.noise_m, size=(len(t), 2))
        la = la + noise[:, 1] / M_PER_DEG_LAT
        lo = lo + noise[:, 0] / (M_PER_DEG_LAT * np.cos(np.radians(la)))
        ts = np.round(t[keep])
        la, lo = la[keep], lo[keep]
        uniq = np.concatenate([[True], np.diff(ts) > 0])
        pts = tuple(GeoPoint(float(a), float(b), float(c)) for a, b, c in zip(ts[uniq], la[uniq], lo[uniq]))
        trajs.append(Trajectory(persona["person_id"], pts))
        persons.append(
            {
                "person_id": persona["person_id"],
                "archetype": archetype,
                "home": list(persona["home"]),
                "work": list(persona["work"]),
                "speed_ms": persona["speed"],
                "n_fixes": len(pts),
                "travel_m": _fix_path_length(pts),
                "planned_sets": n_sets,
                "outages": [[format_timestamp(round(a)), format_timestamp(round(b))] for a, b in outages],
                "trips": trips,
            }
        )
    ledger = {"spec": asdict(spec), "persons": persons}
    return SynthDataset(trajs, ledger)
