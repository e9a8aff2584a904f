import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import T0, dwell
from trajimpute.geo import (
    GeoPoint,
    ParseError,
    Trajectory,
    coverage_stats,
    drop_implausible,
    dumps_trajectories,
    format_timestamp,
    haversine,
    haversine_coords,
    parse_timestamp,
    parse_trajectories,
    select_contiguous_sets,
    slerp,
)

HEADER = "person_id,timestamp,lat,lon\n"


def parse(text, fmt="csv"):
    return parse_trajectories(io.StringIO(text), fmt)


# -- parsing --------------------------------------------------------------------


def test_empty_stream():
    assert parse("") == []
    assert parse(HEADER) == []
    assert parse("", "jsonl") == []


def test_single_row():
    (tr,) = parse(HEADER + "p1,2018-11-01T09:30:00Z,52.0,5.1\n")
    assert tr.person_id == "p1"
    assert tr.points == (GeoPoint(parse_timestamp("2018-11-01T09:30:00Z"), 52.0, 5.1),)


@given(st.permutations(range(6)))
def test_out_of_order_rows_are_sorted(perm):
    rows = [f"p1,2018-11-01T09:3{k}:00Z,52.0,5.{k}" for k in range(6)]
    (tr,) = parse(HEADER + "\n".join(rows[k] for k in perm) + "\n")
    assert list(tr.times) == sorted(tr.times)
    assert [p.lon for p in tr.points] == [5.0, 5.1, 5.2, 5.3, 5.4, 5.5]


def test_offsets_normalized_to_utc():
    assert parse_timestamp("2018-11-01T10:30:00+01:00") == parse_timestamp("2018-11-01T09:30:00Z")
    with pytest.raises(ValueError):
        parse_timestamp("2018-11-01T09:30:00")


@pytest.mark.parametrize(
    "body, line",
    [
        ("p1,2018-11-01T09:30:00Z,52.0\n", 2),
        ("p1,2018-11-01T09:30:00Z,52.0,5.0\np1,yesterday,52.0,5.0\n", 3),
        ("p1,2018-11-01T09:30:00Z,95.0,5.0\n", 2),
        ("p1,2018-11-01T09:30:00Z,52.0,5.0\np1,2018-11-01T09:30:00Z,52.1,5.0\n", 3),
    ],
)
def test_bad_rows_cite_line(body, line):
    with pytest.raises(ParseError) as err:
        parse(HEADER + body)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_bad_header():
    with pytest.raises(ParseError):
        parse("id,time,lat,lon\n")


def test_jsonl_matches_csv():
    csv_text = HEADER + "a,2018-11-01T09:30:00Z,52.0,5.1\nb,2018-11-01T09:31:00Z,52.2,5.3\n"
    trajs = parse(csv_text)
    assert parse(dumps_trajectories(trajs, "jsonl"), "jsonl") == trajs


coord = st.tuples(st.floats(-89.9, 89.9), st.floats(-179.9, 179.9))


@settings(max_examples=50)
@given(st.lists(st.tuples(st.integers(0, 10**6), coord), min_size=1, max_size=20, unique_by=lambda x: x[0]), st.sampled_from(["csv", "jsonl"]))
def test_round_trip(rows, fmt):
    pts = sorted((GeoPoint(T0 + t, la, lo) for t, (la, lo) in rows), key=lambda p: p.timestamp)
    trajs = [Trajectory("p", tuple(pts))]
    text = dumps_trajectories(trajs, fmt)
    again = parse(text, fmt)
    assert again == trajs
    assert dumps_trajectories(again, fmt) == text


def test_format_timestamp_round_trip():
    for text in ("2018-11-01T09:30:00Z", "2020-02-29T23:59:59.500000Z"):
        assert format_timestamp(parse_timestamp(text)) == text


# -- haversine ------------------------------------------------------------------


def test_haversine_identical_points():
    p = GeoPoint(0.0, 52.0, 5.0)
    assert haversine(p, p) == 0.0


def test_haversine_small_offset():
    # spherical law of cosines at 50 significant digits
    assert haversine_coords(52.0, 5.0, 52.0, 5.0001) == pytest.approx(6.8458432586712, rel=1e-9)


def test_haversine_quarter_meridian():
    assert haversine_coords(0.0, 0.0, 90.0, 0.0) == pytest.approx(6_371_000.0 * math.pi / 2, rel=1e-12)


@settings(max_examples=100)
@given(coord, coord)
def test_haversine_symmetric(a, b):
    assert haversine_coords(*a, *b) == haversine_coords(*b, *a)


@settings(max_examples=200)
@given(coord, coord, coord)
def test_haversine_triangle(a, b, c):
    ab, bc, ac = haversine_coords(*a, *b), haversine_coords(*b, *c), haversine_coords(*a, *c)
    assert ac <= (ab + bc) * (1 + 1e-6) + 1e-6


@settings(max_examples=100)
@given(coord, coord, st.floats(0, 1))
def test_slerp_splits_distance(a, b, f):
    d = haversine_coords(*a, *b)
    if d > 19_000_000:  # near-antipodal pairs have no unique great circle
        return
    la, lo = slerp(*a, *b, f)
    assert haversine_coords(*a, float(la), float(lo)) == pytest.approx(f * d, abs=1e-6 + 1e-9 * d)


# -- coverage -------------------------------------------------------------------


def test_fully_covered_hour():
    tr = Trajectory("p", tuple(dwell(52.0, 5.0, T0, T0 + 3600)))
    s = coverage_stats(tr, 360)
    assert s.covered_time == 3600 and s.gap_count == 0 and s.coverage_fraction == 1.0


def test_sixteen_minute_silence_is_one_gap():
    pts = dwell(52.0, 5.0, T0, T0 + 1860) + dwell(52.0, 5.0, T0 + 1860 + 960, T0 + 3600)
    s = coverage_stats(Trajectory("p", tuple(pts)), 360)
    assert s.gap_count == 1
    assert s.mean_gap_length == 960


def test_alternating_half_hours():
    pts = []
    for k in range(24):
        pts += dwell(52.0, 5.0, T0 + k * 3600, T0 + k * 3600 + 1800)
    s = coverage_stats(Trajectory("p", tuple(pts)), 360, (T0, T0 + 86400))
    assert s.covered_time == 24 * 1800  # hand count
    assert s.coverage_fraction == 0.5


def test_max_gap_threshold_is_inclusive():
    pts = [GeoPoint(T0, 52, 5), GeoPoint(T0 + 360, 52, 5), GeoPoint(T0 + 721, 52, 5)]
    s = coverage_stats(Trajectory("p", tuple(pts)), 360)
    assert s.gap_count == 1 and s.covered_time == 360


@settings(max_examples=100)
@given(
    st.lists(st.integers(1, 1500), min_size=1, max_size=40),
    st.integers(-2000, 2000),
    st.integers(-2000, 2000),
    st.sampled_from([120, 360, 600]),
)
def test_coverage_conservation(steps, pad0, pad1, max_gap):
    t = T0 + np.cumsum([0] + steps).astype(float)
    tr = Trajectory("p", tuple(GeoPoint(float(x), 52, 5) for x in t))
    w0, w1 = t[0] + pad0, t[-1] - pad1
    if w1 <= w0:
        return
    s = coverage_stats(tr, max_gap, (w0, w1))
    assert s.covered_time + s.gap_time + s.boundary_slack == pytest.approx(w1 - w0, abs=1e-6)


# -- contiguous sets ------------------------------------------------------------


def hours_trace(total_h, hole_at_h=None, hole_s=600):
    t = np.arange(0, total_h * 3600 + 1, 60.0)
    if hole_at_h is not None:
        a = hole_at_h * 3600
        t = t[(t <= a) | (t >= a + hole_s)]
    return Trajectory("p", tuple(GeoPoint(T0 + x, 52, 5) for x in t))


def test_full_48h_one_set():
    (s,) = select_contiguous_sets([hours_trace(48)], 86400, 360)
    assert s.times[-1] - s.times[0] == 48 * 3600


def test_short_trace_no_set():
    assert select_contiguous_sets([hours_trace(12)], 86400, 360) == []


@pytest.mark.parametrize("hole_at", [6, 18, 23.9, 24, 30])
@pytest.mark.parametrize("min_span", [12 * 3600, 24 * 3600])
def test_hole_splits(hole_at, min_span):
    tr = hours_trace(48, hole_at)
    got = [(s.times[0], s.times[-1]) for s in select_contiguous_sets([tr], min_span, 360)]
    # span-enumeration oracle: maximal runs without a >6 min step, kept iff long enough
    runs, start = [], tr.times[0]
    for a, b in zip(tr.times, tr.times[1:]):
        if b - a > 360:
            runs.append((start, a))
            start = b
    runs.append((start, tr.times[-1]))
    assert got == [r for r in runs if r[1] - r[0] >= min_span]


@settings(max_examples=50)
@given(st.lists(st.integers(10, 900), min_size=2, max_size=300), st.sampled_from([120, 360]))
def test_sets_have_no_long_gaps(steps, max_gap):
    t = T0 + np.cumsum([0] + steps).astype(float)
    tr = Trajectory("p", tuple(GeoPoint(float(x), 52, 5) for x in t))
    for s in select_contiguous_sets([tr], 1800, max_gap):
        assert np.diff(s.times).max(initial=0) <= max_gap
        assert s.times[-1] - s.times[0] >= 1800


def test_drop_implausible_speed():
    pts = [GeoPoint(T0 + 60 * k, 52.0, 5.0 + 0.0001 * k) for k in range(10)]
    spike = GeoPoint(T0 + 60 * 4 + 30, 53.0, 5.0)  # ~111 km away for 30 s
    tr = Trajectory("p", tuple(sorted(pts + [spike], key=lambda p: p.timestamp)))
    assert drop_implausible(tr, 70).points == tuple(pts)
    assert drop_implausible(Trajectory("p", tuple(pts)), 70).points == tuple(pts)
