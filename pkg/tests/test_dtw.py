import io
import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from helpers import brute_dtw, path_cost, series
from trajimpute.dtw import (
    ONE_TO_ONE,
    AlignmentConstraints,
    Donor,
    EmptyReferenceError,
    InfeasibleAlignmentError,
    Phi,
    ReferenceCollection,
    apply_phi,
    clock_offset,
    cost_matrix,
    dtw_distance,
    feasible_placements,
    placement_table,
    score_candidates,
)
from trajimpute.series import GapSpec, find_gaps, split_query

RHO = {"r1": [2, 5, 0, 2, 5], "r2": [0, 0, 0, 1], "r3": [1, 0, 2]}


def worked_refs(names=("r1", "r2", "r3")):
    return ReferenceCollection(tuple(Donor.from_values(n, RHO[n]) for n in names))


# -- cost matrix and dtw_distance ---------------------------------------------


def test_cost_matrix_examples():
    assert cost_matrix([1.0], [1.0]).tolist() == [[0.0]]
    assert cost_matrix([2.5], [2, 5]).tolist() == [[0.5, 2.5]]
    with pytest.raises(ValueError):
        cost_matrix([1.0, np.nan], [1.0])


@given(st.lists(st.floats(0, 100), min_size=1, max_size=8), st.lists(st.floats(0, 100), min_size=1, max_size=8))
def test_cost_matrix_non_negative(q, r):
    assert (cost_matrix(q, r) >= 0).all()


@pytest.mark.parametrize(
    "c",
    [
        AlignmentConstraints(),
        ONE_TO_ONE,
        AlignmentConstraints(sakoe_chiba=1),
        AlignmentConstraints(open_begin_end=True),
        AlignmentConstraints(sakoe_chiba=1, open_begin_end=True),
    ],
)
def test_identical_series(backend, c):
    q = [0.3, 1.0, 0.0, 2.2]
    res = dtw_distance(q, q, c)
    assert res.dissimilarity == 0.0
    assert res.path == [(i, i) for i in range(4)]


def test_worked_window_distance(backend):
    res = dtw_distance([2.5, 0.001, 0.0014], [2, 0, 2], ONE_TO_ONE)
    assert abs(res.dissimilarity - 2.4996) < 1e-12
    assert res.path == [(0, 0), (1, 1), (2, 2)]


values = st.lists(st.integers(0, 6).map(lambda x: x / 2), min_size=1, max_size=6)


def constraint_sets():
    out = []
    for band in (None, 0, 1, 2):
        for open_ in (False, True):
            for tw in (None, 3600.0):
                out.append(AlignmentConstraints(sakoe_chiba=band, open_begin_end=open_, time_window=tw))
    out.append(AlignmentConstraints(one_to_one=True, open_begin_end=True))
    return out


@settings(max_examples=150, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(values, values, st.lists(st.integers(0, 95), min_size=12, max_size=12))
def test_dtw_matches_enumeration(backend, q, r, clocks):
    qc = np.array(clocks[: len(q)]) * 900.0
    rc = np.array(clocks[6 : 6 + len(r)]) * 900.0
    for c in constraint_sets():
        want = brute_dtw(q, r, c, qc, rc)
        if c.diagonal_only and not c.open_begin_end and len(q) != len(r):
            with pytest.raises(ValueError):
                dtw_distance(q, r, c, q_clock=qc, rho_clock=rc)
            continue
        if math.isinf(want):
            with pytest.raises(InfeasibleAlignmentError):
                dtw_distance(q, r, c, q_clock=qc, rho_clock=rc)
            continue
        got = dtw_distance(q, r, c, q_clock=qc, rho_clock=rc)
        assert got.dissimilarity == want
        assert path_cost(q, r, got.path) == want
        if c.time_window is not None:  # path audit
            assert all(clock_offset(qc[i], rc[j]) <= c.time_window for i, j in got.path)


@settings(max_examples=100)
@given(st.integers(1, 40).flatmap(lambda n: st.tuples(st.lists(st.floats(0, 50), min_size=n, max_size=n), st.lists(st.floats(0, 50), min_size=n, max_size=n))))
def test_one_to_one_is_l1(pair):
    q, r = pair
    got = dtw_distance(q, r, AlignmentConstraints(sakoe_chiba=0))
    assert got.dissimilarity == sum(abs(a - b) for a, b in zip(q, r))
    assert got.path == [(i, i) for i in range(len(q))]


@settings(max_examples=100)
@given(values, values)
def test_symmetry_and_tightening(q, r):
    free = dtw_distance(q, r).dissimilarity
    if len(q) == len(r):
        assert free == dtw_distance(r, q).dissimilarity
    for band in (0, 1, 2):
        try:
            banded = dtw_distance(q, r, AlignmentConstraints(sakoe_chiba=band)).dissimilarity
        except (InfeasibleAlignmentError, ValueError):
            continue
        assert banded >= free


def test_clock_offset_is_circular():
    assert clock_offset(23 * 3600, 3600).tolist() == 7200.0
    assert clock_offset(0, 12 * 3600).tolist() == 43200.0


# -- score_candidates -----------------------------------------------------------


def test_worked_example(backend):
    res = score_candidates([2.5], [0.001, 0.0014], 1, worked_refs())
    assert [r.donor_id[0] for r in res] == ["r1", "r2"]
    r1, r2 = res
    assert abs(r1.dissimilarity - 2.4996) < 1e-12
    assert r1.window_indices == (1, 2, 3, 4)
    assert r1.gap_position == 1 and r1.donor_gap_values.tolist() == [5.0]
    assert abs(r2.dissimilarity - 3.4996) < 1e-12
    assert r2.window_indices == (1, 2, 3, 4) and r2.donor_gap_values.tolist() == [0.0]


def test_worked_example_from_series(backend):
    s = series([2.5, np.nan, 0.001, 0.0014])
    (gap,) = find_gaps(s)
    pre, post = split_query(s, gap, 1800)
    res = score_candidates(pre, post, gap, worked_refs())
    assert [round(r.dissimilarity, 12) for r in res] == [2.4996, 3.4996]


def test_trace_lists_every_placement():
    buf = io.StringIO()
    score_candidates([2.5], [0.001, 0.0014], 1, worked_refs(), trace=buf)
    recs = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert [(r["donor"][0], r["placement"]) for r in recs] == [("r1", 0), ("r1", 1), ("r2", 0)]


def test_empty_reference_collection():
    with pytest.raises(EmptyReferenceError):
        score_candidates([1.0], [1.0], 1, ReferenceCollection(()))


def test_ties_take_earliest_placement():
    refs = ReferenceCollection((Donor.from_values("a", [1, 9, 1, 1, 9, 1]),))
    (r,) = score_candidates([1.0], [1.0], 1, refs)
    assert r.gap_position == 1 and r.offset == 0


def brute_placements(q_pre, q_post, T, donor, qclock=None, dclock=None, window=None):
    n_pre = len(q_pre)
    L = n_pre + T + len(q_post)
    best = (math.inf, None)
    for p in range(len(donor) - L + 1):
        w = donor[p : p + L]
        if not np.all(np.isfinite(w)):
            continue
        if window is not None and any(clock_offset(qclock[k], dclock[p + k]) > window for k in range(L)):
            continue
        pre = sum(abs(q_pre[k] - w[k]) for k in range(n_pre))
        post = sum(abs(q_post[k] - w[n_pre + T + k]) for k in range(len(q_post)))
        if pre + post < best[0]:
            best = (pre + post, p)
    return best


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    st.integers(0, 2**32 - 1),
    st.integers(0, 5),
    st.integers(0, 5),
    st.integers(1, 6),
    st.sampled_from([None, 3600.0, 3 * 3600.0]),
)
def test_score_candidates_matches_loop(backend, seed, n_pre, n_post, T, window):
    rng = np.random.default_rng(seed)
    n_donors = int(rng.integers(1, 11))
    donors = []
    for k in range(n_donors):
        n = int(rng.integers(1, 49))
        v = np.round(rng.exponential(1.0, n), 3)
        v[rng.random(n) < 0.1] = np.nan
        clock = ((int(rng.integers(0, 96)) + np.arange(n)) % 96) * 900.0
        donors.append(Donor(f"d{k}", "0", v, clock, np.zeros(n, dtype=np.int64)))
    refs = ReferenceCollection(tuple(donors))
    q_pre = np.round(rng.exponential(1.0, n_pre), 3).tolist()
    q_post = np.round(rng.exponential(1.0, n_post), 3).tolist()
    q0 = int(rng.integers(0, 96))
    qclock = ((q0 + np.arange(n_pre + T + n_post)) % 96) * 900.0
    from trajimpute.series import QuerySlice

    pre_s = QuerySlice(np.array(q_pre), qclock[:n_pre], np.zeros(n_pre, dtype=np.int64), 0)
    post_s = QuerySlice(np.array(q_post), qclock[n_pre + T :], np.zeros(n_post, dtype=np.int64), 0)
    c = AlignmentConstraints(one_to_one=True, time_window=window)
    got = {r.donor_id: r for r in score_candidates(pre_s, post_s, T, refs, c, gap_clock=qclock[n_pre : n_pre + T])}
    for d in donors:
        want, p = brute_placements(q_pre, q_post, T, d.values, qclock, d.clock, window)
        if p is None:
            assert d.key not in got
        else:
            r = got[d.key]
            assert r.dissimilarity == want and r.offset == p
            assert r.donor_gap_values.tolist() == d.values[p + n_pre : p + n_pre + T].tolist()


def test_warped_buffers_never_worse_than_one_to_one():
    refs = ReferenceCollection((Donor.from_values("a", [0, 1, 2, 5, 3, 3, 1, 0]),))
    strict = score_candidates([0.0, 2.0], [3.0, 1.0], 1, refs)[0].dissimilarity
    free = score_candidates([0.0, 2.0], [3.0, 1.0], 1, refs, AlignmentConstraints())[0].dissimilarity
    assert free <= strict


# -- restrictions ---------------------------------------------------------------


def pool():
    mk = lambda pid, sid: Donor.from_series(series([1.0] * 8, pid=pid, sid=sid))  # noqa: E731
    return ReferenceCollection((mk("me", "0"), mk("me", "1"), mk("you", "0"), mk("them", "0")))


def test_phi_identity_and_self_exclusion():
    refs = pool()
    assert apply_phi(refs, ("me", "0")).donors == refs.donors
    only_me = ReferenceCollection(refs.donors[:1])
    assert len(apply_phi(only_me, ("me", "0"), Phi(exclude_person="self"))) == 0
    assert [d.key for d in apply_phi(refs, ("me", "0"), Phi(exclude_set=("me", "0"))).donors] == [
        ("me", "1"),
        ("you", "0"),
        ("them", "0"),
    ]
    assert [d.person_id for d in apply_phi(refs, ("me", "0"), Phi(only_person="self")).donors] == ["me", "me"]


def test_time_window_filters_placements():
    d = series(np.ones(96), pid="d")  # one day at 15 min, starting midnight
    refs = apply_phi(ReferenceCollection.from_series([d]), None, Phi(time_window=3 * 3600))
    gap_clock = np.array([12 * 3600.0, 12 * 3600 + 900])
    got = feasible_placements(refs, 2, gap_clock)
    # offset-filter oracle: placements whose start lies within 3 h of noon
    want = [(0, p) for p in range(95) if abs(p * 900 - 12 * 3600) <= 3 * 3600]
    assert got == want
    everything = feasible_placements(ReferenceCollection.from_series([d]), 2, gap_clock)
    assert set(got) < set(everything)


def test_same_day_type():
    week = series(np.ones(7 * 4), interval=6 * 3600, pid="d")  # starts Thursday
    refs = apply_phi(ReferenceCollection.from_series([week]), None, Phi(same_day_type=True))
    weekend = [p for _, p in feasible_placements(refs, 1, gap_weekday=5)]
    assert weekend and all(week.weekday[p] >= 5 for p in weekend)
    weekday = [p for _, p in feasible_placements(refs, 1, gap_weekday=2)]
    assert set(weekday) | set(weekend) == set(range(28))


def test_placement_table_shapes():
    tables = placement_table([2.5], [0.001, 0.0014], GapSpec(1, 2), worked_refs())
    assert [len(t) for t in tables] == [2, 1, 0]
