"""Truncated / smoothed ReLU activation family.

A neuron with parameters ``theta = (a, w, b)`` outputs

    sigma(x, theta) = trunc(a) * act(trunc(w) * x + b)

where ``act`` is the ReLU (``tau = inf``) or the soft-plus
``log(1 + exp(tau u)) / tau``, optionally capped by a C^4 saturating tail that
starts where the base activation reaches ``m**2`` and tends to ``2 m**2``, and
``trunc`` is the identity (``m = inf``), the hard clip to ``[-m, m]``
(``tau = inf``) or a C^4 odd blend that equals the identity on
``|v| < m - 1/tau`` and saturates at ``m``.

Both saturating pieces share one profile ``G`` on ``[0, inf)``:

    G(t) = 1 - exp(-4t) (4 + 12 t + 16 t^2 + 32 t^3 / 3) / 4

with ``G(0) = 0``, ``G'(0) = 1``, ``G''(0) = G'''(0) = G''''(0) = 0``,
``0 <= G' <= 1``, ``G(inf) = 1`` and ``max |G''| = 0.896 < 1``.  Its
derivative is ``S(4t)`` with ``S(s) = exp(-s)(1 + s + s^2/2 + s^3/6)``, the
survival function of a Gamma(4) variable.

All kernels are scalar numba functions; the public wrappers broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numba
import numpy as np

from .errors import CurvatureUndefined, ValidationError

INF = math.inf

# max_t |G''(t)| = 4 * max_s s^3 e^{-s} / 6, attained at s = 3
PROFILE_CURVATURE_BOUND = 4.0 * 27.0 * math.exp(-3.0) / 6.0


class Mode(str, Enum):
    RELU_EXACT = "ReluExact"
    RELU_TRUNCATED = "ReluTruncated"
    SMOOTH_TRUNCATED = "SmoothTruncated"


@dataclass(frozen=True)
class ActivationSpec:
    """Truncation parameters ``(tau, m)``; ``math.inf`` switches a piece off."""

    tau: float = INF
    m: float = INF

    def __post_init__(self):
        tau, m = float(self.tau), float(self.m)
        if math.isnan(tau) or math.isnan(m):
            raise ValidationError("tau and m must not be NaN")
        if tau < 1.0:
            raise ValidationError(f"tau must be >= 1, got {tau}")
        if m <= 1.0:
            raise ValidationError(f"m must be > 1, got {m}")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "m", m)

    @classmethod
    def relu(cls) -> "ActivationSpec":
        return cls(INF, INF)

    @property
    def mode(self) -> Mode:
        if math.isinf(self.tau):
            return Mode.RELU_EXACT if math.isinf(self.m) else Mode.RELU_TRUNCATED
        return Mode.SMOOTH_TRUNCATED

    @property
    def smooth(self) -> bool:
        return self.mode is Mode.SMOOTH_TRUNCATED

    @property
    def x_m(self) -> float:
        """Input at which the base activation reaches ``m**2`` (tail start)."""
        if math.isinf(self.m):
            return INF
        m2 = self.m * self.m
        if math.isinf(self.tau):
            return m2
        # inverse soft-plus: log(expm1(tau m^2)) / tau, written overflow-free
        z = self.tau * m2
        return (z + math.log(-math.expm1(-z))) / self.tau

    def to_json(self) -> dict:
        enc = lambda v: "inf" if math.isinf(v) else v  # noqa: E731
        return {"tau": enc(self.tau), "m": enc(self.m)}

    @classmethod
    def from_json(cls, obj: dict) -> "ActivationSpec":
        dec = lambda v: INF if v in ("inf", None) else float(v)  # noqa: E731
        return cls(dec(obj.get("tau", "inf")), dec(obj.get("m", "inf")))


# ---------------------------------------------------------------------------
# scalar kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _profile(t):
    """G(t), G'(t), G''(t) for t >= 0."""
    y = 4.0 * t
    e = math.exp(-y)
    g = 1.0 - e * (4.0 + 3.0 * y + y * y + y * y * y / 6.0) / 4.0
    g1 = e * (1.0 + y + 0.5 * y * y + y * y * y / 6.0)
    g2 = -4.0 * e * y * y * y / 6.0
    return g, g1, g2


@numba.njit(cache=True)
def _trunc(v, tau, m):
    """Parameter truncation and its derivative."""
    if m == INF:
        return v, 1.0
    av = abs(v)
    sgn = 1.0 if v >= 0.0 else -1.0
    if tau == INF:
        if av < m:
            return v, 1.0
        return sgn * m, 0.0
    delta = 1.0 / tau
    v0 = m - delta
    if av <= v0:
        return v, 1.0
    g, g1, _ = _profile((av - v0) / delta)
    return sgn * (v0 + delta * g), g1


@numba.njit(cache=True)
def _act(u, tau, m):
    """Activation value and first two derivatives in its argument."""
    if tau == INF:
        if u > 0.0:
            base, d1, d2 = u, 1.0, 0.0
        else:
            base, d1, d2 = 0.0, 0.0, 0.0
    else:
        z = tau * u
        base = (max(z, 0.0) + math.log1p(math.exp(-abs(z)))) / tau
        if z >= 0.0:
            s = 1.0 / (1.0 + math.exp(-z))
        else:
            ez = math.exp(z)
            s = ez / (1.0 + ez)
        d1 = s
        d2 = tau * s * (1.0 - s)
    if m == INF:
        return base, d1, d2
    m2 = m * m
    if base <= m2:
        return base, d1, d2
    g, g1, g2 = _profile((base - m2) / m2)
    return m2 * (1.0 + g), g1 * d1, (g2 / m2) * d1 * d1 + g1 * d2


@numba.njit(cache=True)
def _neuron(x, a, w, b, tau, m):
    """Value, (d/da, d/dw, d/db), d/dx and d2/dx2 of one neuron."""
    at, dat = _trunc(a, tau, m)
    wt, dwt = _trunc(w, tau, m)
    u = wt * x + b
    f, f1, f2 = _act(u, tau, m)
    val = at * f
    ga = dat * f
    gw = at * f1 * x * dwt
    gb = at * f1
    dx = at * wt * f1
    dxx = at * wt * wt * f2
    return val, ga, gw, gb, dx, dxx


@numba.njit(cache=True)
def _neuron_value(x, a, w, b, tau, m):
    at, _ = _trunc(a, tau, m)
    wt, _ = _trunc(w, tau, m)
    f, _, _ = _act(wt * x + b, tau, m)
    return at * f


# ---------------------------------------------------------------------------
# array loops
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _trunc_loop(v, tau, m, out, dout):
    for k in range(v.size):
        out[k], dout[k] = _trunc(v[k], tau, m)


@numba.njit(cache=True)
def _act_loop(u, tau, m, f0, f1, f2):
    for k in range(u.size):
        f0[k], f1[k], f2[k] = _act(u[k], tau, m)


@numba.njit(cache=True)
def _neuron_loop(x, a, w, b, tau, m, out):
    for k in range(x.size):
        v = _neuron(x[k], a[k], w[k], b[k], tau, m)
        for c in range(6):
            out[c, k] = v[c]


@numba.njit(cache=True)
def _value_matrix(xs, thetas, tau, m, out):
    """out[k, i] = sigma(xs[i], thetas[k])."""
    n = thetas.shape[0]
    for k in range(n):
        a, w, b = thetas[k, 0], thetas[k, 1], thetas[k, 2]
        for i in range(xs.size):
            out[k, i] = _neuron_value(xs[i], a, w, b, tau, m)


def _flat(*arrays):
    arrs = np.broadcast_arrays(*[np.asarray(a, dtype=np.float64) for a in arrays])
    shape = arrs[0].shape
    return shape, [np.ascontiguousarray(a).ravel() for a in arrs]


def _unwrap(arr, shape):
    arr = arr.reshape(shape)
    return float(arr) if arr.ndim == 0 else arr


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def truncate_param(v, spec: ActivationSpec, derivative: bool = False):
    """Apply the parameter truncation ``v -> v^{tau,m}`` (or ``v^m``)."""
    shape, (vf,) = _flat(v)
    out, dout = np.empty_like(vf), np.empty_like(vf)
    _trunc_loop(vf, spec.tau, spec.m, out, dout)
    if derivative:
        return _unwrap(out, shape), _unwrap(dout, shape)
    return _unwrap(out, shape)


def softplus_trunc(u, spec: ActivationSpec, order: int = 0):
    """The capped activation ``(u)_tau^m``; ``order`` 1 or 2 for derivatives."""
    shape, (uf,) = _flat(u)
    f = [np.empty_like(uf) for _ in range(3)]
    _act_loop(uf, spec.tau, spec.m, *f)
    return _unwrap(f[order], shape)


def neuron_output(x, theta, spec: ActivationSpec):
    a, w, b = theta
    shape, (xf, af, wf, bf) = _flat(x, a, w, b)
    out = np.empty((6, xf.size))
    _neuron_loop(xf, af, wf, bf, spec.tau, spec.m, out)
    return _unwrap(out[0], shape)


def neuron_grad_theta(x, theta, spec: ActivationSpec):
    """(d sigma/da, d sigma/dw, d sigma/db); ReLU kinks use the 1{u > 0} rule."""
    a, w, b = theta
    shape, (xf, af, wf, bf) = _flat(x, a, w, b)
    out = np.empty((6, xf.size))
    _neuron_loop(xf, af, wf, bf, spec.tau, spec.m, out)
    return tuple(_unwrap(out[c], shape) for c in (1, 2, 3))


def neuron_slope(x, theta, spec: ActivationSpec):
    a, w, b = theta
    shape, (xf, af, wf, bf) = _flat(x, a, w, b)
    out = np.empty((6, xf.size))
    _neuron_loop(xf, af, wf, bf, spec.tau, spec.m, out)
    return _unwrap(out[4], shape)


def predictor_curvature(x, theta, spec: ActivationSpec):
    """Second derivative of one neuron in ``x``; smooth mode only."""
    if not spec.smooth:
        raise CurvatureUndefined(f"curvature is distributional in {spec.mode.value} mode")
    a, w, b = theta
    shape, (xf, af, wf, bf) = _flat(x, a, w, b)
    out = np.empty((6, xf.size))
    _neuron_loop(xf, af, wf, bf, spec.tau, spec.m, out)
    return _unwrap(out[5], shape)


def value_matrix(xs, thetas, spec: ActivationSpec) -> np.ndarray:
    """Matrix ``V[k, i] = sigma(xs[i], thetas[k])`` of shape ``(n, len(xs))``."""
    xs = np.ascontiguousarray(np.atleast_1d(np.asarray(xs, dtype=np.float64)))
    thetas = np.ascontiguousarray(np.asarray(thetas, dtype=np.float64).reshape(-1, 3))
    out = np.empty((thetas.shape[0], xs.size))
    _value_matrix(xs, thetas, spec.tau, spec.m, out)
    return out
