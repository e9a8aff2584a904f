import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import M_PER_DEG_LAT, T0, series
from trajimpute.dtw import Donor, ReferenceCollection
from trajimpute.geo import GeoPoint, Trajectory
from trajimpute.impute import (
    METHODS,
    DtwbmiParams,
    NoFeasibleDonorError,
    impute_dtwbmi,
    impute_li,
    impute_mean,
    impute_twi,
    pool,
    preset_dtwbi,
    preset_dtwbmi_hi,
    preset_dtwbmi_lo,
    run_method,
    selection_probabilities,
    stream_rng,
)
from trajimpute.segmentation import TravelPath
from trajimpute.series import GapSpec, UnimputableGapError, find_gaps

HOUR = 3600.0


def north_path(km: float, t0: float, t1: float) -> TravelPath:
    return TravelPath(np.array([t0, t1]), np.array([52.0, 52.0 + km * 1000 / M_PER_DEG_LAT]), np.array([5.0, 5.0]))


# -- LI -------------------------------------------------------------------------


def test_li_splits_straight_line_equally():
    s = series([0.2, np.nan, np.nan, np.nan, 0.1])
    (gap,) = find_gaps(s)
    res = impute_li(s, gap, north_path(3.0, T0 + 900, T0 + 4 * 900))
    np.testing.assert_allclose(res.gap_values[0], [1.0, 1.0, 1.0], rtol=1e-9)
    assert res.m == 1


def test_li_identical_anchors_give_zero():
    s = series([0.0, np.nan, np.nan, 0.0])
    (gap,) = find_gaps(s)
    res = impute_li(s, gap, north_path(0.0, T0, T0 + 4 * 900))
    assert res.gap_values[0].tolist() == [0.0, 0.0]


def test_li_from_raw_trajectory_uses_bracketing_fixes():
    tr = Trajectory("q", (GeoPoint(T0 + 850, 52.0, 5.0), GeoPoint(T0 + 3700, 52.0 + 2000 / M_PER_DEG_LAT, 5.0)))
    s = series([0.2, np.nan, np.nan, 0.1])
    (gap,) = find_gaps(s)
    np.testing.assert_allclose(impute_li(s, gap, tr).gap_values[0], [1.0, 1.0], rtol=1e-9)


@given(st.floats(0, 50), st.integers(1, 12))
def test_li_conserves_anchor_distance(km, T):
    s = series([0.0] + [np.nan] * T + [0.0])
    (gap,) = find_gaps(s)
    res = impute_li(s, gap, north_path(km, T0 + 900, T0 + (T + 1) * 900))
    assert math.isclose(res.gap_values[0].sum(), res.params["anchor_km"], rel_tol=1e-12, abs_tol=1e-12)
    assert math.isclose(res.params["anchor_km"], km, rel_tol=1e-9, abs_tol=1e-9)


def test_li_refuses_edge_gaps():
    s = series([np.nan, 1.0])
    (gap,) = find_gaps(s)
    with pytest.raises(UnimputableGapError):
        impute_li(s, gap, north_path(1.0, T0, T0 + 900))


# -- MI -------------------------------------------------------------------------


def test_mi_constant_series():
    s = series([1.5, 1.5, np.nan, 1.5])
    assert impute_mean(s, find_gaps(s)[0]).gap_values[0].tolist() == [1.5]


def test_mi_zero_mean():
    s = series([0.0, np.nan, np.nan, 0.0])
    assert impute_mean(s, find_gaps(s)[0]).gap_values[0].tolist() == [0.0, 0.0]


def test_mi_observed_rate():
    # 20 km over 10 observed hours at 15 min is 0.5 km per element
    obs = np.zeros(40)
    obs[[3, 17, 30]] = [8.0, 7.0, 5.0]
    s = series(np.concatenate([obs[:20], [np.nan] * 4, obs[20:]]))
    np.testing.assert_allclose(impute_mean(s, find_gaps(s)[0]).gap_values[0], [0.5] * 4, rtol=1e-12)


def test_gap_must_be_missing():
    s = series([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        impute_mean(s, GapSpec(1, 2))


# -- TWI ------------------------------------------------------------------------


def one_day(pid, values=None):
    v = np.arange(96, dtype=float) / 10 if values is None else values
    return series(v, pid=pid)


def test_twi_single_placement_gives_identical_draws():
    donor = one_day("d")
    q = one_day("q").mask(40, 42)
    gap = GapSpec(40, 42)
    # only the aligned placement lies within a zero window
    res = impute_twi(q, gap, ReferenceCollection.from_series([donor]), window=0.0, m=5, seed=1)
    assert res.m == 5
    assert all(row.tolist() == [4.0, 4.1] for row in res.gap_values)


def test_twi_window_bounds_draw_positions():
    q = one_day("q").mask(40, 44)
    res = impute_twi(q, GapSpec(40, 44), ReferenceCollection.from_series([one_day("d")]), window=HOUR, m=10, seed=3)
    assert all(abs(d.offset - 40) <= 4 for d in res.donors)


def test_twi_is_seeded():
    q = one_day("q").mask(40, 44)
    refs = ReferenceCollection.from_series([one_day("d"), one_day("e", np.ones(96))])
    a = impute_twi(q, GapSpec(40, 44), refs, m=10, seed=stream_rng(5, "x"))
    b = impute_twi(q, GapSpec(40, 44), refs, m=10, seed=stream_rng(5, "x"))
    assert np.array_equal(a.gap_values, b.gap_values)


def test_twi_without_placements():
    q = one_day("q").mask(40, 44)
    with pytest.raises(NoFeasibleDonorError):
        impute_twi(q, GapSpec(40, 44), ReferenceCollection.from_series([series([1.0, 1.0], pid="d")]))


# -- DTWBMI ---------------------------------------------------------------------

WORKED = [("r1", [2, 5, 0, 2, 5]), ("r2", [0, 0, 0, 1]), ("r3", [1, 0, 2])]


def worked(names=("r1", "r2", "r3")):
    q = series([2.5, np.nan, 0.001, 0.0014])
    refs = ReferenceCollection(tuple(Donor.from_values(n, v) for n, v in WORKED if n in names))
    return q, find_gaps(q)[0], refs


def params(kappa, m=1, **kw):
    return DtwbmiParams(1800.0, None, kappa, m, **kw)


def test_single_donor_gives_m_copies():
    q, gap, refs = worked(("r1",))
    res = impute_dtwbmi(q, gap, refs, params(3.0, m=4), np.random.default_rng(0))
    assert res.gap_values.tolist() == [[5.0]] * 4


def test_deterministic_selects_best_donor():
    q, gap, refs = worked()
    res = impute_dtwbmi(q, gap, refs, params("high", deterministic=True))
    assert res.donors[0].donor_id == ("r1", "0") and res.gap_values.tolist() == [[5.0]]


def test_selection_probabilities_closed_form():
    d = [2.4996, 3.4996]
    w = [(1 / (x + 1e-6)) ** 3 for x in d]
    np.testing.assert_allclose(selection_probabilities(d, 3.0), [w[0] / sum(w), w[1] / sum(w)], rtol=1e-12)
    assert selection_probabilities(d, 0.0).tolist() == [0.5, 0.5]
    assert selection_probabilities(d, math.inf).tolist() == [1.0, 0.0]
    p = selection_probabilities([0.0, 1.0], 8.0)
    assert p[1] < 1e-40


@pytest.mark.parametrize("kappa", [1.0, 3.0, 8.0])
def test_draw_frequencies(kappa):
    q, gap, refs = worked()
    p = selection_probabilities([2.4996, 3.4996], kappa)[0]
    rng = np.random.default_rng(11)
    n = 10_000
    hits = sum(impute_dtwbmi(q, gap, refs, params(kappa), rng).gap_values[0, 0] == 5.0 for _ in range(n))
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(hits - n * p) <= 3 * sigma


def test_draws_without_replacement_when_pool_allows():
    q, gap, refs = worked()
    res = impute_dtwbmi(q, gap, refs, params(1.0, m=2), np.random.default_rng(0))
    assert sorted(d.donor_id[0] for d in res.donors) == ["r1", "r2"]


def test_no_feasible_donor():
    q, gap, refs = worked(("r3",))
    with pytest.raises(NoFeasibleDonorError):
        impute_dtwbmi(q, gap, refs, params(1.0))


def test_presets():
    assert preset_dtwbi() == DtwbmiParams(8 * HOUR, HOUR, "high", 1, deterministic=True)
    assert preset_dtwbmi_hi() == DtwbmiParams(8 * HOUR, 12 * HOUR, "high", 3)
    assert preset_dtwbmi_lo() == DtwbmiParams(HOUR, 3 * HOUR, "medium", 10)
    assert [DtwbmiParams(candidate_specificity=s).kappa for s in ("low", "medium", "high")] == [1.0, 3.0, 8.0]
    with pytest.raises(ValueError):
        DtwbmiParams(candidate_specificity="extreme")
    with pytest.raises(ValueError):
        DtwbmiParams(n_imputations=0)


# -- pooling --------------------------------------------------------------------


def test_pool_two_imputations():
    p = pool([np.array([1.0, 4.0]), np.array([3.0, 4.0])])
    assert p.mean.tolist() == [2.0, 4.0] and p.variance.tolist() == [2.0, 0.0]
    assert pool([np.array([7.0])]).variance.tolist() == [0.0]


@given(st.lists(st.lists(st.floats(0, 100), min_size=3, max_size=3), min_size=2, max_size=6), st.randoms())
def test_pool_permutation_invariant(rows, rnd):
    arr = [np.array(r) for r in rows]
    shuffled = arr[:]
    rnd.shuffle(shuffled)
    a, b = pool(arr), pool(shuffled)
    np.testing.assert_allclose(a.mean, b.mean, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.variance, b.variance, rtol=1e-9, atol=1e-9)


# -- all methods ----------------------------------------------------------------


@pytest.mark.parametrize("seed", range(8))
def test_observed_elements_unchanged(synthetic_sets, seed):
    rng = np.random.default_rng(seed)
    i = int(rng.integers(len(synthetic_sets)))
    ps = synthetic_sets[i]
    n = len(ps.series)
    a = int(rng.integers(1, n - 5))
    gap = GapSpec(a, a + 4)
    q = ps.series.mask(a, a + 4)
    refs = ReferenceCollection.from_series(x.series for j, x in enumerate(synthetic_sets) if j != i)
    for method in METHODS:
        try:
            res = run_method(method, q, gap, refs, ps.path, np.random.default_rng(seed))
        except UnimputableGapError:
            continue
        for c in res.completed:
            keep = np.ones(n, bool)
            keep[a : a + 4] = False
            assert np.array_equal(c.values[keep], ps.series.values[keep], equal_nan=True)
            assert np.isfinite(c.values[a : a + 4]).all()


def test_unknown_method():
    s = series([1.0, np.nan, 1.0])
    with pytest.raises(ValueError):
        run_method("spline", s, GapSpec(1, 2), ReferenceCollection(()))
