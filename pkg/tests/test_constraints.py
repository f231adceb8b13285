import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _util import random_admissible, sample_feasible, sample_on_face
from spdir.constraints import (build_constraints, check_feasible, check_regularity, dropped_rows,
                               is_physically_meaningful, max_over_set, redundancy_check)
from spdir.rc_model import tustin_plant_params

C = build_constraints()
REPORTED_THETA = np.array([1.98, -9.76e-1, -4.35e-3, 5.21e-5, 4.40e-3, 1.86e-5, 3.72e-5, 1.86e-5,
                    -3.05e-2, 3.65e-4, 3.08e-2])


def test_fifteen_rows_and_blocks():
    assert C.A.shape == (15, 11) and C.b.shape == (15,)
    assert C.blocks.count("g1") == 4 and C.blocks.count("g2") == 4
    assert C.blocks.count("g3") == 3 and C.blocks.count("g4") == 4
    np.testing.assert_array_equal(C.b, [0, 0, 1, 1] + [0] * 11)
    assert not C.A.flags.writeable


def test_dropped_rows_implied_by_lp():
    for rep in redundancy_check(C):
        assert rep["implied"], rep
    Ad, bd = dropped_rows()
    # the maxima are attained: theta2 - theta1 reaches 0 at the origin, not 1
    assert max_over_set(C, Ad[0]) == pytest.approx(0.0, abs=1e-9)
    assert max_over_set(C, Ad[1]) == pytest.approx(0.0, abs=1e-9)


def test_dropped_rows_hold_on_random_points():
    rng = np.random.default_rng(0)
    th = sample_feasible(rng, 100_000)
    assert np.all(C.A @ th.T <= C.b[:, None] + 1e-12)
    Ad, bd = dropped_rows()
    assert np.all(Ad @ th.T <= bd[:, None])


def test_origin_feasible_on_boundary():
    rep = check_feasible(np.zeros(11), tol=0)
    assert rep.feasible
    assert set(rep.boundary) == set(range(15)) - {2, 3}


def test_reported_estimate():
    rep = check_feasible(REPORTED_THETA, tol=0)
    assert [v.row for v in rep.violations] == [3]
    assert rep.violations[0].slack == pytest.approx(-4e-3, rel=1e-9)
    assert check_feasible(REPORTED_THETA, tol=5e-3).feasible
    assert is_physically_meaningful(REPORTED_THETA)
    assert json.loads(rep.to_json()) == [{"row": 3, "block": "g1", "slack": rep.violations[0].slack}]


def test_sign_flip_violation():
    th = tustin_plant_params(*random_admissible(np.random.default_rng(1))).theta.copy()
    th[0], th[1] = 0.5, 0.1
    rep = check_feasible(th, tol=0)
    assert [v.row for v in rep.violations] == [1]
    assert rep.violations[0].slack == pytest.approx(-0.1)
    with pytest.raises(ValueError):
        check_feasible(th, tol=-1)


def test_physically_meaningful():
    th = REPORTED_THETA.copy()
    th[2:5] = 0
    assert not is_physically_meaningful(th)
    assert not is_physically_meaningful(np.zeros(11))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tustin_points_feasible(seed):
    th = tustin_plant_params(*random_admissible(np.random.default_rng(seed))).theta
    assert check_feasible(th, tol=0).feasible
    assert check_regularity(th, tol=0).active == ()


def test_regularity_interior_and_face():
    th = tustin_plant_params(*random_admissible(np.random.default_rng(2))).theta.copy()
    r = check_regularity(th)
    assert r.regular and r.active == ()
    th[1] = -0.4
    th[0] = 1.4
    r = check_regularity(th)
    assert r.regular and r.active == (3,) and r.rank == 1


def test_regularity_rejects_infeasible():
    with pytest.raises(ValueError):
        check_regularity(REPORTED_THETA, tol=0)


def test_degenerate_point_is_irregular():
    # a whole channel at zero activates four dependent rows of g2
    th = REPORTED_THETA.copy()
    th[0], th[1] = 1.5, -0.6
    th[2:5] = 0
    r = check_regularity(th)
    assert not r.regular and r.rank == 3


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_regular_on_random_faces(seed):
    th, active = sample_on_face(np.random.default_rng(seed))
    assert is_physically_meaningful(th)
    r = check_regularity(th)
    assert list(r.active) == active
    assert r.regular


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_feasible_roots_in_closed_disc(seed):
    th = sample_feasible(np.random.default_rng(seed), 1)[0]
    assert np.all(np.abs(np.roots([1, -th[0], -th[1]])) <= 1 + 1e-7)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_convex(seed, t):
    a, b = sample_feasible(np.random.default_rng(seed), 2)
    assert check_feasible(t * a + (1 - t) * b, tol=1e-12).feasible
