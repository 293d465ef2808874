"""Cluster-set polynomials and the knot-location predictor.

On each prediction interval ``I_j`` the two quadratics

    f^j(x) = 1 + x^2 - (A^j x - B^j)^2,   f_j(x) = 1 + x^2 - (A_j x - B_j)^2

are built from the residuals to the right (``A^j``, ``B^j``) and to the left
(``A_j``, ``B_j``) of the interval.  Their non-positive sets are where the
predictor may bend; away from them a quadratic lower bound certifies that
they stay positive.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import Dataset, PredictionIntervals
from .errors import LambdaZero, PointInsideOmega, PointNotPositive, PositiveSetTooSmall, ValidationError

# relative deflation applied to certified coefficients to absorb rounding
_CERT_SLACK = 1e-12


class Kind(str, Enum):
    UPPER = "upper"  # f^j, residuals with i > j
    LOWER = "lower"  # f_j, residuals with i <= j


class Branch(str, Enum):
    NO_ROOTS = "no-real-roots-minimizer"
    DEGENERATE = "degenerate-(1,0)-convention"
    NEAREST_ROOT = "nearest-root-clamped"


@dataclass(frozen=True)
class IntervalPoly:
    j: int
    kind: Kind
    A: float
    B: float

    @property
    def coeffs(self) -> tuple:
        A, B = self.A, self.B
        return (1.0 - A * A, 2.0 * A * B, 1.0 - B * B)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return 1.0 + x * x - (self.A * x - self.B) ** 2

    def derivative(self, x):
        c2, c1, _ = self.coeffs
        return 2.0 * c2 * x + c1

    def roots(self) -> tuple:
        return poly_roots(*self.coeffs, A=self.A, B=self.B)


def poly_roots(c2, c1, c0, A=None, B=None) -> tuple:
    """Real roots of ``c2 x^2 + c1 x + c0`` in increasing order (numerically stable)."""
    if c2 == 0.0:
        if c1 == 0.0:
            return ()
        return (-c0 / c1,)
    # for the cluster polynomials disc / 4 = A^2 + B^2 - 1 exactly
    q4 = (A * A + B * B - 1.0) if A is not None else 0.25 * c1 * c1 - c2 * c0
    if q4 < 0.0:
        return ()
    s = math.sqrt(q4)
    half = 0.5 * c1
    q = -(half + math.copysign(s, half)) if half != 0.0 else s
    if q == 0.0:
        return (0.0, 0.0) if c0 == 0.0 else ()
    r1, r2 = q / c2, c0 / q
    return tuple(sorted((r1, r2)))


def coefficients(r, ds: Dataset, lam: float) -> list:
    """``(A^j, B^j, A_j, B_j)`` for ``j = 0..M``."""
    if lam == 0:
        raise LambdaZero("cluster-set coefficients need lambda > 0")
    if lam < 0:
        raise ValidationError("lambda must be positive")
    r = np.asarray(getattr(r, "r", r), dtype=np.float64)
    if r.size != ds.M:
        raise ValidationError("residual length must equal the dataset size")
    rx = r * ds.xs
    out = []
    for j in range(ds.M + 1):
        # direct sums keep the empty-sum cases exactly zero
        out.append((float(np.sum(r[j:])) / lam, float(np.sum(rx[j:])) / lam,
                    float(np.sum(r[:j])) / lam, float(np.sum(rx[:j])) / lam))
    return out


def nonpositive_set(poly: IntervalPoly, interval) -> list:
    """``{x in I : f(x) <= 0}`` as at most two closed intervals."""
    lo, hi = float(interval[0]), float(interval[1])
    c2, c1, c0 = poly.coeffs
    roots = poly.roots()
    pieces = []
    if c2 == 0.0 and c1 == 0.0:
        pieces = [(lo, hi)] if c0 <= 0.0 else []
    elif c2 == 0.0:
        (x0,) = roots
        pieces = [(lo, min(x0, hi))] if c1 > 0 else [(max(x0, lo), hi)]
    elif not roots:
        pieces = [(lo, hi)] if c2 < 0 else []
    else:
        r1, r2 = roots
        if c2 > 0:
            pieces = [(max(r1, lo), min(r2, hi))]
        else:
            pieces = [(lo, min(r1, hi)), (max(r2, lo), hi)]
    return merge_intervals([(a, b) for a, b in pieces if a <= b])


def merge_intervals(pieces) -> list:
    """Coalesce overlapping or touching closed intervals."""
    out = []
    for a, b in sorted(pieces):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _measure(pieces) -> float:
    return float(sum(b - a for a, b in pieces))


def _in(pieces, x) -> bool:
    return any(a <= x <= b for a, b in pieces)


@dataclass
class CriticalPointInfo:
    x_c: float
    branch: Branch
    lb_coeffs: tuple  # (gamma_q, gamma_c)
    alphas: tuple = ()  # (alpha_2, alpha_1, alpha_0)

    def bound(self, x):
        gq, gc = self.lb_coeffs
        return gq * (np.asarray(x) - self.x_c) ** 2 + gc


def _critical(c2, c1, c0, roots, x, lo, hi):
    if not roots:
        if c2 == 0.0 and c1 == 0.0:
            return hi, Branch.DEGENERATE
        # convex without real roots (a concave quadratic always has them)
        return min(max(-c1 / (2.0 * c2), lo), hi), Branch.NO_ROOTS
    xr = min(roots, key=lambda t: abs(t - x))
    return min(max(xr, lo), hi), Branch.NEAREST_ROOT


def _alphas(c2, c1, c0, xc):
    d1 = 2.0 * c2 * xc + c1
    p0 = max(c2 * xc * xc + c1 * xc + c0, 0.0)
    if c2 >= 0.0:
        # Taylor form: f(x) = c2 (x - xc)^2 + f'(xc)(x - xc) + f(xc), sign-definite middle term
        return c2, abs(d1), p0
    # concave: chord to the vertex has half the tangent slope
    return 0.0, 0.5 * abs(d1), p0


def _round_margin(A, B, lo, hi) -> float:
    # bound on the absolute rounding error of evaluating f on [lo, hi]
    xm = max(abs(lo), abs(hi))
    return 16.0 * np.finfo(float).eps * (1.0 + xm * xm + (abs(A) * xm + abs(B)) ** 2)


def _fold(alphas, length, margin=0.0):
    a2, a1, a0 = alphas
    gq = a2 if a2 >= a1 else a1 / length
    return (gq * (1.0 - _CERT_SLACK), max(a0 - margin, 0.0))


def critical_point(poly: IntervalPoly, x: float, omega, interval) -> CriticalPointInfo:
    """Critical point of ``x`` and the certified lower bound ``gq (x - xc)^2 + gc``."""
    lo, hi = float(interval[0]), float(interval[1])
    if not lo <= x <= hi:
        raise ValidationError(f"x={x} outside the interval [{lo}, {hi}]")
    if _in(omega, x) or float(poly(x)) <= 0.0:
        raise PointInsideOmega(f"x={x} lies in the non-positive set")
    c2, c1, c0 = poly.coeffs
    xc, branch = _critical(c2, c1, c0, poly.roots(), x, lo, hi)
    al = _alphas(c2, c1, c0, xc)
    return CriticalPointInfo(xc, branch, _fold(al, hi - lo, _round_margin(poly.A, poly.B, lo, hi)), al)


def certified_bound(poly: IntervalPoly, interval, xs) -> np.ndarray:
    """Vectorised :func:`critical_point` bound at each ``x``; NaN where ``f(x) <= 0``."""
    lo, hi = float(interval[0]), float(interval[1])
    xs = np.asarray(xs, dtype=np.float64)
    c2, c1, c0 = poly.coeffs
    roots = poly.roots()
    margin = _round_margin(poly.A, poly.B, lo, hi)

    def curve(xc):
        gq, gc = _fold(_alphas(c2, c1, c0, xc), hi - lo, margin)
        return gq * (xs - xc) ** 2 + gc

    if not roots:
        out = curve(_critical(c2, c1, c0, roots, lo, lo, hi)[0])
    elif len(roots) == 1:
        out = curve(min(max(roots[0], lo), hi))
    else:
        r1, r2 = roots
        near_left = np.abs(xs - r1) <= np.abs(xs - r2)
        out = np.where(near_left, curve(min(max(r1, lo), hi)), curve(min(max(r2, lo), hi)))
    return np.where(poly(xs) > 0.0, out, np.nan)


def generic_poly_lower_bound(a: float, b: float, interval, x: float, c_omega: float | None = None):
    """Coefficients with ``P(x) >= alpha2 (x - xc)^2 + alpha1 |x - xc| + alpha0``.

    ``P(x) = (1 - a^2) x^2 + 2 a b x + (1 - b^2)`` on ``I``; ``x`` must be in
    the positive set, which must have measure at least ``c_omega``
    (default ``0.05 |I|``).  Returns ``(alpha2, alpha1, alpha0, xc)``.
    """
    lo, hi = float(interval[0]), float(interval[1])
    poly = IntervalPoly(-1, Kind.UPPER, a, b)
    if not lo <= x <= hi or float(poly(x)) <= 0.0:
        raise PointNotPositive(f"P({x}) is not positive on I")
    c_omega = 0.05 * (hi - lo) if c_omega is None else c_omega
    pos = (hi - lo) - _measure(nonpositive_set(poly, (lo, hi)))
    if pos < c_omega:
        raise PositiveSetTooSmall(f"|positive set| = {pos:.3g} < C_Omega = {c_omega:.3g}")
    c2, c1, c0 = poly.coeffs
    xc, _ = _critical(c2, c1, c0, poly.roots(), x, lo, hi)
    a2, a1, a0 = _alphas(c2, c1, c0, xc)
    k = 1.0 - _CERT_SLACK
    return a2 * k, a1 * k, max(a0 - _round_margin(a, b, lo, hi), 0.0), xc


@dataclass
class IntervalCluster:
    j: int
    interval: tuple
    upper: IntervalPoly
    lower: IntervalPoly
    omega_upper: list
    omega_lower: list
    omega_bar: list

    @property
    def measure(self) -> float:
        return _measure(self.omega_bar)


@dataclass
class ClusterReport:
    intervals: list = field(default_factory=list)

    @property
    def total_measure(self) -> float:
        return float(sum(c.measure for c in self.intervals))

    def omega(self) -> list:
        return merge_intervals([p for c in self.intervals for p in c.omega_bar])

    def distance(self, x) -> np.ndarray:
        """Distance from each ``x`` to the cluster set (``inf`` if it is empty)."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        pieces = self.omega()
        if not pieces:
            return np.full(x.shape, np.inf)
        d = np.stack([np.maximum(np.maximum(a - x, x - b), 0.0) for a, b in pieces])
        return d.min(axis=0)

    def contains(self, x, delta: float = 0.0) -> np.ndarray:
        return self.distance(x) <= delta

    def to_json(self) -> dict:
        return {"total_measure": self.total_measure, "intervals": [
            {"j": c.j, "interval": list(c.interval), "A_sup": c.upper.A, "B_sup": c.upper.B,
             "A_sub": c.lower.A, "B_sub": c.lower.B,
             "omega_upper": [list(p) for p in c.omega_upper],
             "omega_lower": [list(p) for p in c.omega_lower],
             "omega": [list(p) for p in c.omega_bar]} for c in self.intervals]}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "set", "lo", "hi"])
            for c in self.intervals:
                for name, pieces in (("upper", c.omega_upper), ("lower", c.omega_lower), ("bar", c.omega_bar)):
                    for a, b in pieces:
                        w.writerow([c.j, name, repr(a), repr(b)])


def cluster_report(r, ds: Dataset, intervals: PredictionIntervals, lam: float) -> ClusterReport:
    coefs = coefficients(r, ds, lam)
    out = []
    for j, (I, (Au, Bu, Al, Bl)) in enumerate(zip(intervals.intervals, coefs)):
        up = IntervalPoly(j, Kind.UPPER, Au, Bu)
        lw = IntervalPoly(j, Kind.LOWER, Al, Bl)
        ou, ol = nonpositive_set(up, I), nonpositive_set(lw, I)
        bar = merge_intervals(ou + ol)
        if len(bar) > 3:
            raise AssertionError(f"interval {j}: cluster set has {len(bar)} pieces")
        out.append(IntervalCluster(j, I, up, lw, ou, ol, bar))
    return ClusterReport(out)
