import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shapectl.geometry import (
    GOAL_FIELDS, PivotSet, ShapeGoal, ShapeValidationError, mean_pivot_distance,
    pivot_array, pivot_points, xpoint_distance,
)

from conftest import (
    GOLDEN_GOAL_A, GOLDEN_GOAL_B, GOLDEN_PIVOTS_A, GOLDEN_PIVOTS_B, random_goal_vector,
)


def _as_float(pts):
    return np.array([[float(r), float(z)] for r, z in pts])


@pytest.mark.parametrize("goal,golden", [(GOLDEN_GOAL_A, GOLDEN_PIVOTS_A), (GOLDEN_GOAL_B, GOLDEN_PIVOTS_B)])
def test_pivot_golden(goal, golden):
    p = pivot_points(ShapeGoal(**goal))
    np.testing.assert_allclose(p.points, _as_float(golden), rtol=0, atol=1e-12)


def test_midplane_points():
    g = dict(GOLDEN_GOAL_A)
    p = pivot_points(ShapeGoal(**g))
    assert tuple(p[2]) == pytest.approx((1.1, 0.0), abs=1e-15)
    assert tuple(p[6]) == pytest.approx((2.3, 0.0), abs=1e-15)


def test_xpoint_and_midplane_exact(rng):
    g = random_goal_vector(rng, 200)
    p = pivot_array(g)
    assert np.array_equal(p[:, 0, 0], g[:, 5])
    assert np.array_equal(p[:, 0, 1], g[:, 6])
    assert np.array_equal(p[:, 2, 1], g[:, 1])
    assert np.array_equal(p[:, 6, 1], g[:, 1])


def test_xi_zero_midpoints(rng):
    g = random_goal_vector(rng, 1000)
    g[:, 7:] = 0.0
    p = pivot_array(g)
    for idx, (i, j) in {1: (0, 2), 3: (4, 2), 5: (4, 6), 7: (0, 6)}.items():
        mid = (p[:, i] + p[:, j]) / 2
        np.testing.assert_allclose(p[:, idx], mid, rtol=1e-12, atol=0)


def test_xi_one_hits_corners(rng):
    g = random_goal_vector(rng, 50)
    g[:, 7:] = 1.0
    p = pivot_array(g)
    r_min, r_max = g[:, 0] - g[:, 2], g[:, 0] + g[:, 2]
    np.testing.assert_allclose(p[:, 1], np.stack([r_min, g[:, 6]], -1), atol=1e-12)
    np.testing.assert_allclose(p[:, 3], np.stack([r_min, g[:, 3]], -1), atol=1e-12)
    np.testing.assert_allclose(p[:, 5], np.stack([r_max, g[:, 3]], -1), atol=1e-12)
    np.testing.assert_allclose(p[:, 7], np.stack([r_max, g[:, 6]], -1), atol=1e-12)


def test_translation_equivariance(rng):
    g = random_goal_vector(rng, 1000)
    shift = rng.uniform(-0.2, 0.2, (1000, 2))
    h = g.copy()
    h[:, [0, 5]] += shift[:, :1]
    h[:, [1, 3, 6]] += shift[:, 1:]
    np.testing.assert_allclose(pivot_array(h), pivot_array(g) + shift[:, None, :], rtol=0, atol=1e-10)


@pytest.mark.parametrize("field,value,msg", [
    ("a", -0.1, "a > 0"),
    ("a", 1.8, "R_c - a > 0"),
    ("z_max", -0.5, "z_max > Z_c"),
    ("Z_x", 0.0, "Z_c - Z_x >= 1 mm"),
    ("Z_x", -0.0005, "Z_c - Z_x >= 1 mm"),
    ("xi_BO", 1.2, "xi_BO in [-1, 1]"),
])
def test_invalid_goals_rejected(field, value, msg):
    g = dict(GOLDEN_GOAL_A)
    g[field] = value
    with pytest.raises(ShapeValidationError, match=msg.replace("[", r"\[").replace("]", r"\]")):
        ShapeGoal(**g)


def test_pivot_points_validates_arrays():
    g = ShapeGoal(**GOLDEN_GOAL_A).to_array()
    g[9] = -3.0
    with pytest.raises(ShapeValidationError):
        pivot_points(g)


def test_goal_json_roundtrip():
    g = ShapeGoal(**GOLDEN_GOAL_B)
    text = json.dumps(g.to_dict())
    assert ShapeGoal.from_dict(json.loads(text)) == g
    assert list(json.loads(text)) == list(GOAL_FIELDS)


def test_mean_pivot_distance_basic():
    p = pivot_points(ShapeGoal(**GOLDEN_GOAL_A))
    assert mean_pivot_distance(p, p) == 0.0
    q = PivotSet(p.points + np.array([0.03, 0.04]))
    assert mean_pivot_distance(p, q) == pytest.approx(0.05, abs=1e-15)


def test_mean_pivot_distance_golden_pair():
    # brute-force scalar oracle on the exact golden points
    a = [(float(r), float(z)) for r, z in GOLDEN_PIVOTS_A]
    b = [(float(r), float(z)) for r, z in GOLDEN_PIVOTS_B]
    expected = sum(math.hypot(x[0] - y[0], x[1] - y[1]) for x, y in zip(a, b)) / 8
    got = mean_pivot_distance(pivot_points(ShapeGoal(**GOLDEN_GOAL_A)), pivot_points(ShapeGoal(**GOLDEN_GOAL_B)))
    assert got == pytest.approx(expected, rel=1e-12)


def test_xpoint_distance():
    p = np.zeros((8, 2))
    q = np.zeros((8, 2))
    p[0] = (1.36, -1.1)
    q[0] = (1.31, -1.1)
    assert xpoint_distance(p, q) == pytest.approx(0.05, rel=1e-12)
    assert xpoint_distance(p, p) == 0.0


def test_xpoint_distance_random(rng):
    for _ in range(20):
        p, q = rng.normal(size=(2, 8, 2))
        assert xpoint_distance(p, q) == pytest.approx(math.hypot(*(p[0] - q[0])), rel=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_mean_pivot_distance_is_metric(seed):
    rng = np.random.default_rng(seed)
    p, q, r = pivot_array(random_goal_vector(rng, 3))
    d = mean_pivot_distance
    assert d(p, q) == pytest.approx(d(q, p), abs=1e-15)
    assert d(p, r) <= d(p, q) + d(q, r) + 1e-12
    assert d(p, q) >= 0
