import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from mfknots.clusterset import (Branch, IntervalPoly, Kind, certified_bound, cluster_report, coefficients,
                                critical_point, generic_poly_lower_bound, merge_intervals, nonpositive_set,
                                poly_roots)
from mfknots.data import Dataset, make_intervals
from mfknots.errors import LambdaZero, PointInsideOmega, PointNotPositive, PositiveSetTooSmall, ValidationError

coef = st.floats(-20, 20, allow_nan=False)


@st.composite
def residual_problems(draw, max_m=8):
    m = draw(st.integers(1, max_m))
    xs = sorted(draw(st.lists(st.floats(-5, 5), min_size=m, max_size=m, unique=True)))
    assume(np.all(np.diff(xs) > 1e-3))
    r = np.array(draw(st.lists(st.floats(-2, 2), min_size=m, max_size=m)))
    lam = draw(st.floats(0.05, 2.0))
    return Dataset.from_points(zip(xs, np.zeros(m))), r, lam


def test_single_point_hand_example():
    # r = 0.2 at x = 0, lam = 0.1: f = 1 - 3x^2 on the side the residual faces
    ds = Dataset((0.0,), (1.0,))
    rep = cluster_report([0.2], ds, make_intervals(ds), 0.1)
    c = 1 / math.sqrt(3)
    left, right = rep.intervals
    assert (left.upper.A, left.upper.B) == (2.0, 0.0)
    assert (left.lower.A, left.lower.B) == (0.0, 0.0)
    assert left.omega_bar == [(-1.0, pytest.approx(-c))]
    assert right.omega_bar == [(pytest.approx(c), 1.0)]
    assert rep.total_measure == pytest.approx(2 * (1 - c))


def test_coefficients_match_direct_sums():
    ds = Dataset((-1.0, 0.5, 2.0), (0.0, 0.0, 0.0))
    r = np.array([0.3, -0.1, 0.2])
    got = coefficients(r, ds, 0.5)
    assert len(got) == 4
    # interval 1 = [x_1, x_2]: residuals 2, 3 to the right, residual 1 to the left
    Au, Bu, Al, Bl = got[1]
    assert Au == pytest.approx((-0.1 + 0.2) / 0.5)
    assert Bu == pytest.approx((-0.1 * 0.5 + 0.2 * 2.0) / 0.5)
    assert Al == pytest.approx(0.3 / 0.5)
    assert Bl == pytest.approx(-0.3 / 0.5)
    assert got[0][2:] == (0.0, 0.0) and got[3][:2] == (0.0, 0.0)


def test_zero_residuals_give_empty_cluster_set():
    ds = Dataset((-1.0, 1.0), (0.0, 0.0))
    rep = cluster_report(np.zeros(2), ds, make_intervals(ds), 1.0)
    assert rep.omega() == []
    assert np.all(np.isinf(rep.distance([0.0, 3.0])))


def test_lambda_zero_rejected():
    ds = Dataset((0.0,), (0.0,))
    with pytest.raises(LambdaZero):
        coefficients([0.1], ds, 0.0)
    with pytest.raises(ValidationError):
        coefficients([0.1], ds, -1.0)
    with pytest.raises(ValidationError):
        coefficients([0.1, 0.2], ds, 1.0)


@given(coef, coef, coef)
def test_poly_roots_are_roots(c2, c1, c0):
    assume(abs(c2) > 1e-3)
    roots = poly_roots(c2, c1, c0)
    ref = np.roots([c2, c1, c0])
    real = np.sort(ref[np.abs(ref.imag) < 1e-9].real)
    if roots:
        assert len(roots) == 2
        scale = 1 + max(abs(c2), abs(c1), abs(c0))
        for t in roots:
            assert abs(c2 * t * t + c1 * t + c0) <= 1e-9 * scale * (1 + t * t)
    else:
        assert real.size == 0 or np.ptp(real) < 1e-6


@given(coef, coef)
def test_cluster_roots_use_exact_discriminant(A, B):
    p = IntervalPoly(0, Kind.UPPER, A, B)
    roots = p.roots()
    if p.coeffs[0] != 0.0:
        assert (len(roots) == 2) == (A * A + B * B >= 1.0)
    for t in roots:
        assert abs(float(p(t))) <= 1e-8 * (1 + t * t + (abs(A * t) + abs(B)) ** 2)


@given(coef, coef, st.floats(-10, 10), st.floats(0.01, 10))
def test_nonpositive_set_matches_grid(A, B, lo, width):
    p = IntervalPoly(0, Kind.LOWER, A, B)
    I = (lo, lo + width)
    pieces = nonpositive_set(p, I)
    assert len(pieces) <= 2
    xs = np.linspace(*I, 2001)
    vals = p(xs)
    inside = np.array([any(a - 1e-4 <= x <= b + 1e-4 for a, b in pieces) for x in xs])
    strict = np.array([any(a + 1e-4 <= x <= b - 1e-4 for a, b in pieces) for x in xs])
    scale = 1e-9 * (1 + xs ** 2 + (abs(A) * np.abs(xs) + abs(B)) ** 2)
    assert np.all(inside[vals < -scale])
    assert not np.any(strict & (vals > scale))


def test_merge_intervals():
    assert merge_intervals([(3, 4), (0, 1), (1, 2), (0.5, 0.7)]) == [(0, 2), (3, 4)]
    assert merge_intervals([]) == []


@given(residual_problems())
def test_report_pieces_and_distance(problem):
    ds, r, lam = problem
    iv = make_intervals(ds)
    rep = cluster_report(r, ds, iv, lam)
    assert len(rep.intervals) == ds.M + 1
    for c in rep.intervals:
        assert len(c.omega_bar) <= 3
        for a, b in c.omega_bar:
            assert c.interval[0] <= a <= b <= c.interval[1]
    pts = np.linspace(-iv.L, iv.L, 301)
    d = rep.distance(pts)
    assert np.all(d >= 0)
    for a, b in rep.omega():
        assert rep.contains([a, b, 0.5 * (a + b)]).all()


@given(coef, coef, st.floats(-5, 5), st.floats(0.1, 5))
def test_certified_bound_below_polynomial(A, B, lo, width):
    p = IntervalPoly(0, Kind.UPPER, A, B)
    I = (lo, lo + width)
    xs = np.linspace(*I, 501)
    lb = certified_bound(p, I, xs)
    pos = np.isfinite(lb)
    assert np.all(p(xs)[pos] > 0)
    assert np.all(lb[pos] <= p(xs)[pos])
    assert np.all(lb[pos] >= 0)


def test_critical_point_branches():
    # no real roots: A = B = 0.5, f convex and positive everywhere
    p = IntervalPoly(0, Kind.UPPER, 0.5, 0.5)
    info = critical_point(p, 1.0, [], (-2.0, 2.0))
    assert info.branch is Branch.NO_ROOTS
    assert float(info.bound(1.0)) <= float(p(1.0))
    q = IntervalPoly(0, Kind.UPPER, 2.0, 0.0)  # 1 - 3x^2
    info = critical_point(q, 0.0, nonpositive_set(q, (-1.0, 1.0)), (-1.0, 1.0))
    assert info.branch is Branch.NEAREST_ROOT
    assert abs(info.x_c) == pytest.approx(1 / math.sqrt(3))
    with pytest.raises(PointInsideOmega):
        critical_point(q, 0.9, nonpositive_set(q, (-1.0, 1.0)), (-1.0, 1.0))
    with pytest.raises(ValidationError):
        critical_point(q, 3.0, [], (-1.0, 1.0))


def test_generic_bound_errors_and_value():
    a2, a1, a0, xc = generic_poly_lower_bound(2.0, 0.0, (-1.0, 1.0), 0.0)
    x = 0.0
    assert a2 * (x - xc) ** 2 + a1 * abs(x - xc) + a0 <= 1.0
    with pytest.raises(PointNotPositive):
        generic_poly_lower_bound(2.0, 0.0, (-1.0, 1.0), 0.9)
    with pytest.raises(PositiveSetTooSmall):
        generic_poly_lower_bound(2.0, 0.0, (-1.0, 1.0), 0.0, c_omega=1.5)


def test_report_serialisation(tmp_path):
    ds = Dataset((0.0,), (1.0,))
    rep = cluster_report([0.2], ds, make_intervals(ds), 0.1)
    obj = rep.to_json()
    assert obj["intervals"][0]["A_sup"] == 2.0
    rep.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "j,set,lo,hi"
    assert any(line.startswith("0,bar,") for line in lines)
