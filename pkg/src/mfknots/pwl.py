"""Knot extraction from a 1-D predictor and the admissibility check.

A knot is a location where the predictor changes tangent.  Extraction works on
slopes sampled on a uniform grid: consecutive cells whose slope changes share a
sign are chained into runs, a run whose total change exceeds ``slope_tol`` is
kept, and kept runs closer than ``merge_radius`` become one knot.  The knot
position is the intersection of the lines fitted on either
side of the group (which is exact for sampled piecewise-linear inputs) and
falls back to the jump-weighted centroid when that intersection is
ill-conditioned.  The final segments come from a continuous hinge least-squares
fit, so continuity at the knots holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PredictionIntervals
from .errors import TooManyKnots, ValidationError

DEFAULT_GRID_N = 4001
DEFAULT_TOL_FRACTION = 0.02
DEFAULT_MERGE_STEPS = 3
DEFAULT_ENDPOINT_STEPS = 2
RUN_FLOOR_FRACTION = 0.01  # cells below this share of slope_tol break a run


@dataclass(frozen=True)
class PiecewiseLinear:
    knots: tuple
    segments: tuple  # (slope u, intercept v) per piece, len(knots) + 1
    domain: tuple
    resolution: float | None = None  # grid step used for extraction

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        segs = tuple((float(u), float(v)) for u, v in self.segments)
        if len(segs) != len(knots) + 1:
            raise ValidationError("need exactly one more segment than knots")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValidationError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "domain", (float(self.domain[0]), float(self.domain[1])))

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        idx = np.searchsorted(np.asarray(self.knots), x, side="right")
        u = np.array([s[0] for s in self.segments])[idx]
        v = np.array([s[1] for s in self.segments])[idx]
        out = u * x + v
        return float(out) if out.ndim == 0 else out

    @property
    def slopes(self) -> np.ndarray:
        return np.array([s[0] for s in self.segments])

    def continuity_gap(self) -> float:
        gaps = [abs((u0 - u1) * k + v0 - v1)
                for k, (u0, v0), (u1, v1) in zip(self.knots, self.segments, self.segments[1:])]
        return max(gaps, default=0.0)

    def to_json(self) -> dict:
        return {"knots": list(self.knots), "segments": [list(s) for s in self.segments],
                "domain": list(self.domain), "resolution": self.resolution}

    @classmethod
    def from_json(cls, obj: dict) -> "PiecewiseLinear":
        return cls(obj["knots"], obj["segments"], obj.get("domain", (-np.inf, np.inf)), obj.get("resolution"))

    @classmethod
    def from_knots_values(cls, knots, values, domain, slope_left=None, slope_right=None):
        """Continuous PWL through ``(knots[k], values[k])`` with given outer slopes."""
        knots = np.asarray(knots, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        inner = np.diff(values) / np.diff(knots) if knots.size > 1 else np.array([])
        sl = slope_left if slope_left is not None else (inner[0] if inner.size else 0.0)
        sr = slope_right if slope_right is not None else (inner[-1] if inner.size else 0.0)
        slopes = np.concatenate([[sl], inner, [sr]])
        anchors = np.concatenate([[knots[0]], knots[:-1], [knots[-1]]])
        anchor_vals = np.concatenate([[values[0]], values[:-1], [values[-1]]])
        segs = [(u, fv - u * a) for u, a, fv in zip(slopes, anchors, anchor_vals)]
        return cls(tuple(knots), tuple(segs), domain)


@dataclass
class IntervalCount:
    j: int
    count: int
    config: str  # "ok", "endpoint-endpoint-interior", "too-many", "bad-3-config"


@dataclass
class AdmissibilityVerdict:
    admissible: bool
    per_interval: list = field(default_factory=list)
    violation: str | None = None

    def to_json(self) -> dict:
        return {"admissible": self.admissible, "violation": self.violation,
                "per_interval": [{"j": c.j, "count": c.count, "config": c.config} for c in self.per_interval]}


def _hinge_fit(xs, ys, knots):
    cols = [np.ones_like(xs), xs] + [np.maximum(xs - k, 0.0) for k in knots]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), ys, rcond=None)
    slopes = coef[1] + np.concatenate([[0.0], np.cumsum(coef[2:])])
    segs = [(slopes[0], coef[0])]
    for k, u in zip(knots, slopes[1:]):
        u0, v0 = segs[-1]
        segs.append((u, (u0 - u) * k + v0))
    return segs


def _line(xs, ys):
    if xs.size < 2:
        return None
    A = np.column_stack([xs, np.ones_like(xs)])
    (u, v), *_ = np.linalg.lstsq(A, ys, rcond=None)
    return u, v


def extract_pwl(predict, slope=None, domain=(-1.0, 1.0), grid_n: int = DEFAULT_GRID_N,
                slope_tol: float | None = None, merge_radius: float | None = None) -> PiecewiseLinear:
    """Fit a piecewise-linear function to ``predict`` on ``domain``.

    ``slope`` should return exact derivatives; if omitted, central differences
    of ``predict`` on the grid are used.  ``slope_tol`` defaults to 2% of the
    largest absolute slope, ``merge_radius`` to three grid steps.
    """
    if grid_n < 100:
        raise ValidationError("grid_n must be >= 100")
    lo, hi = float(domain[0]), float(domain[1])
    xs = np.linspace(lo, hi, int(grid_n))
    h = xs[1] - xs[0]
    ys = np.asarray(predict(xs), dtype=np.float64)
    s = np.asarray(slope(xs), dtype=np.float64) if slope is not None else np.gradient(ys, h)
    if slope_tol is None:
        slope_tol = DEFAULT_TOL_FRACTION * float(np.max(np.abs(s)))
    radius = int(round((merge_radius if merge_radius is not None else DEFAULT_MERGE_STEPS * h) / h))
    jumps = np.diff(s)

    # a smooth corner spreads its slope change over many cells, so cells are
    # first chained into same-sign runs and a run is kept if its total change
    # exceeds the tolerance; an exact kink is a run of one cell
    floor = RUN_FLOOR_FRACTION * slope_tol
    runs: list[list[int]] = []
    prev_sign = 0
    for k in np.flatnonzero(np.abs(jumps) > floor):
        sign = 1 if jumps[k] > 0 else -1
        if runs and k == runs[-1][-1] + 1 and sign == prev_sign:
            runs[-1].append(int(k))
        else:
            runs.append([int(k)])
        prev_sign = sign
    kept = [run for run in runs if abs(float(np.sum(jumps[run]))) > slope_tol]

    groups: list[list[int]] = []
    for run in kept:
        if groups and run[0] - groups[-1][-1] <= max(radius, 1):
            groups[-1].extend(run)
        else:
            groups.append(list(run))
    if len(groups) > grid_n / 10:
        raise TooManyKnots(f"{len(groups)} knots exceed grid_n/10; predictor is not piecewise linear at this tolerance")

    # segment boundaries in grid-point indices: group g spans cells [c0, c1], i.e. points c0 .. c1 + 1
    spans = [(g[0], g[-1] + 1) for g in groups]
    lines = []
    for i in range(len(spans) + 1):
        left = spans[i - 1][1] if i > 0 else 0
        right = spans[i][0] if i < len(spans) else grid_n - 1
        seg = None
        for margin in (radius, 1, 0):
            a, b = left + (margin if i > 0 else 0), right - (margin if i < len(spans) else 0)
            if b - a >= 1:
                seg = _line(xs[a:b + 1], ys[a:b + 1])
                break
        lines.append(seg)

    knots = []
    for i, (g, (p0, p1)) in enumerate(zip(groups, spans)):
        w = np.abs(jumps[g])
        centroid = float(np.sum(w * (xs[g] + 0.5 * h)) / np.sum(w))
        knot = centroid
        l0, l1 = lines[i], lines[i + 1]
        if l0 is not None and l1 is not None and abs(l0[0] - l1[0]) > 0.5 * slope_tol:
            cross = (l1[1] - l0[1]) / (l0[0] - l1[0])
            if xs[p0] - radius * h <= cross <= xs[p1] + radius * h:
                knot = float(cross)
        knots.append(knot)
    knots = sorted(set(knots))

    # refit continuously and drop knots that do not change the slope
    while True:
        segs = _hinge_fit(xs, ys, knots)
        du = np.abs(np.diff([u for u, _ in segs]))
        if du.size == 0 or du.min() > 0.5 * slope_tol:
            break
        knots.pop(int(np.argmin(du)))
    return PiecewiseLinear(tuple(knots), tuple(segs), (lo, hi), h)


def _classify(knots, lo, hi, tol):
    left = [k for k in knots if abs(k - lo) <= tol]
    right = [k for k in knots if abs(k - hi) <= tol]
    interior = [k for k in knots if lo + tol < k < hi - tol]
    return left, right, interior


def check_admissible(pwl: PiecewiseLinear, intervals: PredictionIntervals,
                     endpoint_tol: float | None = None) -> AdmissibilityVerdict:
    """Definition-style verdict: at most three knots per interval, and a
    three-knot interval must have one knot at each end plus one strictly inside.

    A knot within ``endpoint_tol`` of a shared endpoint counts for both
    neighbouring intervals.
    """
    if endpoint_tol is None:
        step = pwl.resolution if pwl.resolution else 2.0 * intervals.L / (DEFAULT_GRID_N - 1)
        endpoint_tol = DEFAULT_ENDPOINT_STEPS * step
    out, violation = [], None
    for j, (lo, hi) in enumerate(intervals.intervals):
        left, right, interior = _classify(pwl.knots, lo, hi, endpoint_tol)
        n = len(left) + len(right) + len(interior)
        if n > 3:
            cfg = "too-many"
        elif n == 3:
            cfg = "endpoint-endpoint-interior" if (len(left), len(right), len(interior)) == (1, 1, 1) else "bad-3-config"
        else:
            cfg = "ok"
        out.append(IntervalCount(j, n, cfg))
        if violation is None and cfg in ("too-many", "bad-3-config"):
            violation = f"interval {j} [{lo}, {hi}]: {n} knots ({cfg})"
    return AdmissibilityVerdict(violation is None, out, violation)


def pwl_distance(pwl: PiecewiseLinear, predict, domain=None, grid_n: int = DEFAULT_GRID_N) -> float:
    lo, hi = domain if domain is not None else pwl.domain
    xs = np.linspace(lo, hi, int(grid_n))
    return float(np.max(np.abs(pwl(xs) - np.asarray(predict(xs), dtype=np.float64))))


def sample_admissible(rng, intervals: PredictionIntervals, min_jump: float = 0.25, max_slope: float = 2.0,
                      min_gap_fraction: float = 0.1) -> PiecewiseLinear:
    """Random admissible piecewise-linear function on ``[-L, L]``.

    Inner data points are knots with probability 1/2; each interval then gets
    interior knots without breaking the admissible configurations.  Knots are
    at least ``min_gap_fraction`` of the shortest interval apart and adjacent
    slopes differ by at least ``min_jump``.
    """
    edges = intervals.edges
    gap = min_gap_fraction * min(b - a for a, b in intervals.intervals)
    endpoint = [bool(rng.random() < 0.5) for _ in edges[1:-1]]
    knots = []
    for j, (lo, hi) in enumerate(intervals.intervals):
        at_lo = j > 0 and endpoint[j - 1]
        at_hi = j < len(endpoint) and endpoint[j]
        n_end = int(at_lo) + int(at_hi)
        n_in = int(rng.integers(0, 2 if n_end else 3))
        if at_lo:
            knots.append(lo)
        if n_in:
            # evenly spread slots keep interior knots apart and away from the ends
            slots = np.linspace(lo, hi, n_in + 2)[1:-1]
            room = min(0.25 * (hi - lo) / (n_in + 1), 0.5 * (hi - lo) / (n_in + 1) - gap)
            knots.extend(float(s + rng.uniform(-room, room)) if room > 0 else float(s) for s in slots)
    if endpoint and endpoint[-1]:
        knots.append(edges[-2])
    knots = sorted(set(knots))
    slopes = [float(rng.uniform(-max_slope, max_slope))]
    for _ in knots:
        while True:
            u = float(rng.uniform(-max_slope, max_slope))
            if abs(u - slopes[-1]) >= min_jump:
                break
        slopes.append(u)
    segs = [(slopes[0], float(rng.uniform(-1.0, 1.0)))]
    for k, u in zip(knots, slopes[1:]):
        u0, v0 = segs[-1]
        segs.append((u, (u0 - u) * k + v0))
    return PiecewiseLinear(tuple(knots), tuple(segs), (-intervals.L, intervals.L))
