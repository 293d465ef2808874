"""Gibbs minimiser of the free energy as a self-consistent fixed point.

For a residual vector ``r`` the density is

    rho_r(theta) = exp(-beta Psi(theta)) / Z(r),
    Psi(theta) = sum_i r_i sigma(x_i, theta) + lam / 2 |theta|^2,

and the minimiser is the ``r`` for which ``r_i = -(y_i - E_r[sigma(x_i, .)]) / M``.
That ``r`` is also the unique minimiser of the strictly convex dual

    J(r) = log Z(r) / beta + <y, r> + M / 2 |r|^2,

whose gradient is ``M (r - r_new)`` and Hessian ``beta Cov_r(sigma) + M I``.

Two integration backends are provided.  ``TensorQuadrature`` uses
Gauss-Legendre nodes on a box and exploits ``sigma = a~ * phi(w~ x + b)``, so
the activation matrix lives on the 2-D ``(w, b)`` grid only.  ``MALA`` runs
Metropolis-adjusted Langevin chains on a ladder ``Psi_t = lam/2 |theta|^2 +
t * sum r sigma`` and estimates ``log Z`` by stepping stones from the Gaussian
``t = 0`` rung; the second moment uses the Stein identity
``E[theta . grad Psi] = 3 / beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from .activation import ActivationSpec, _act, _neuron, softplus_trunc, truncate_param
from .data import Dataset
from .errors import (
    ChainNotMixed,
    NotConverged,
    QuadratureNotConverged,
    ValidationError,
)
from .particle import ParticleEnsemble, empirical_risk


class Backend(str, Enum):
    QUADRATURE = "TensorQuadrature"
    MALA = "MALA"


@dataclass(frozen=True)
class ResidualVector:
    r: tuple

    def __post_init__(self):
        object.__setattr__(self, "r", tuple(float(v) for v in np.ravel(self.r)))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.r)

    @property
    def risk(self) -> float:
        return len(self.r) * float(np.sum(self.array**2))

    def __len__(self):
        return len(self.r)


@dataclass
class GibbsExpectations:
    predictions: np.ndarray
    second_moment: float
    mean_potential: float
    log_z: float
    errors: dict = field(default_factory=dict)
    cov: np.ndarray | None = None

    def __iter__(self):
        return iter((self.predictions, self.second_moment, self.mean_potential, self.log_z))


@dataclass
class FreeEnergyReport:
    risk: float
    second_moment: float
    entropy: float | None = None
    free_energy: float | None = None

    def to_json(self) -> dict:
        return {"risk": self.risk, "second_moment": self.second_moment,
                "entropy": self.entropy, "free_energy": self.free_energy}


def _check_regime(lam, beta):
    if not (lam > 0 and math.isfinite(lam)):
        raise ValidationError("the Gibbs form needs 0 < lambda < inf")
    if not (beta > 0 and math.isfinite(beta)):
        raise ValidationError("the Gibbs form needs 0 < beta < inf")


def _as_r(r) -> np.ndarray:
    return np.asarray(r.r if isinstance(r, ResidualVector) else r, dtype=np.float64)


def potential(theta, r, ds: Dataset, spec: ActivationSpec, lam: float) -> float:
    a, w, b = (float(v) for v in theta)
    rr = _as_r(r)
    if rr.size != ds.M:
        raise ValidationError("residual length must equal the dataset size")
    s = 0.0
    for xi, ri in zip(ds.x, rr):
        s += ri * _neuron(xi, a, w, b, spec.tau, spec.m)[0]
    return s + 0.5 * lam * (a * a + w * w + b * b)


# ---------------------------------------------------------------------------
# tensor quadrature
# ---------------------------------------------------------------------------

FACE_LOG_RATIO = -34.0  # density on the box faces relative to its peak


@numba.njit(cache=True)
def _phi_table(wt, bs, xs, tau, m, order, out):
    """out[p * nb + q, i] = d^order/du^order act(wt[p] x_i + bs[p, q])."""
    nb = bs.shape[1]
    for p in range(wt.size):
        for q in range(nb):
            for i in range(xs.size):
                out[p * nb + q, i] = _act(wt[p] * xs[i] + bs[p, q], tau, m)[order]


def _panels(lo, hi, breaks, n):
    """Composite Gauss-Legendre nodes on [lo, hi] split at ``breaks`` (clamped).

    The number of panels is ``len(breaks) + 1`` regardless of where the breaks
    fall, so rows built from different break sets have equal length; panels
    of zero length carry zero weight.
    """
    t, wq = leggauss(n)
    pts = np.sort(np.clip(np.concatenate([[lo], np.asarray(breaks, dtype=np.float64), [hi]]), lo, hi))
    half = 0.5 * np.diff(pts)
    mid = 0.5 * (pts[1:] + pts[:-1])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * wq[None, :]).ravel()
    return nodes, weights


def _knee_breaks(spec: ActivationSpec, lo, hi):
    """Breakpoints where the parameter truncation bends."""
    if math.isinf(spec.m):
        return []
    knees = [spec.m] if math.isinf(spec.tau) else [spec.m - 1.0 / spec.tau, spec.m]
    return [s * k for k in knees for s in (-1.0, 1.0) if lo < s * k < hi]


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


class TensorQuadrature:
    """Composite Gauss-Legendre product rule on a box, ``n`` nodes per panel.

    ``a`` and ``w`` panels break at the truncation knees (and ``w = 0``, where
    all activation kinks meet); for each ``w`` node the ``b`` axis breaks
    around every kink ``b = -w x_i`` so the soft-plus transition of width
    ``1/tau`` sits inside its own panel.
    """

    def __init__(self, ds: Dataset, spec: ActivationSpec, lam: float, beta: float, n: int, box):
        self.ds, self.spec, self.lam, self.beta, self.n = ds, spec, lam, beta, int(n)
        self.box = tuple((float(lo), float(hi)) for lo, hi in box)
        (alo, ahi), (wlo, whi), (blo, bhi) = self.box
        self.a, wa = _panels(alo, ahi, _knee_breaks(spec, alo, ahi), self.n)
        wbreaks = _knee_breaks(spec, wlo, whi) + ([0.0] if wlo < 0.0 < whi else [])
        self.w, ww = _panels(wlo, whi, wbreaks, self.n)
        self.wt = np.asarray(truncate_param(self.w, spec))
        width = 0.0 if math.isinf(spec.tau) else 3.0 / spec.tau
        rows, rw = [], []
        for wt in self.wt:
            kinks = -wt * ds.xs
            brk = np.concatenate([kinks - width, kinks + width]) if width else kinks
            nb, wb = _panels(blo, bhi, brk, self.n)
            rows.append(nb)
            rw.append(wb)
        self.b = np.array(rows)  # (n_w, n_b)
        self.A = np.asarray(truncate_param(self.a, spec))
        self.log_wa = _log(wa)
        self.log_wwb = (_log(ww)[:, None] + _log(np.array(rw))).ravel()
        self.qa = self.a**2
        self.qwb = (self.w[:, None] ** 2 + self.b**2).ravel()
        self.shape = (self.a.size, self.w.size, self.b.shape[1])
        self.Phi = self.phi(ds.xs)

    def phi(self, xs, order: int = 0) -> np.ndarray:
        xs = np.ascontiguousarray(np.atleast_1d(np.asarray(xs, dtype=np.float64)))
        out = np.empty((self.b.size, xs.size))
        _phi_table(self.wt, self.b, xs, self.spec.tau, self.spec.m, order, out)
        return out

    CHUNK = 1 << 22  # entries of the (a, wb) block processed at once

    def reduce(self, r):
        """Integrate out ``a`` chunk by chunk.

        Returns ``log Z``, the normalised ``(w, b)`` marginal weights of 1, A
        and A^2, the ``a`` marginal, and the face excesses.
        """
        g = self.Phi @ r
        n_a, n_wb = self.a.size, g.size
        ca = -self.beta * 0.5 * self.lam * self.qa + self.log_wa
        lse = np.empty(n_wb)
        m1 = np.empty(n_wb)
        m2 = np.empty(n_wb)
        amarg = np.full(n_a, -np.inf)
        rowmax = np.empty(n_wb)
        afaces = np.full(2, -np.inf)
        step = max(1, self.CHUNK // n_a)
        for s0 in range(0, n_wb, step):
            sl = slice(s0, min(n_wb, s0 + step))
            logp = -self.beta * (np.outer(self.A, g[sl]) + 0.5 * self.lam * (self.qa[:, None] + self.qwb[None, sl]))
            rowmax[sl] = logp.max(axis=0)
            afaces = np.maximum(afaces, [logp[0].max(), logp[-1].max()])
            E = logp + self.log_wa[:, None]
            top = E.max(axis=0)
            top = np.where(np.isfinite(top), top, 0.0)
            p = np.exp(E - top)
            tot = p.sum(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                lse[sl] = top + np.log(tot)
                m1[sl] = (self.A @ p) / tot
                m2[sl] = (self.A**2 @ p) / tot
            lw = lse[sl] + self.log_wwb[sl]
            amarg = np.logaddexp(amarg, logsumexp(E - lse[sl] + lw, axis=1))
        logw = lse + self.log_wwb
        log_z = float(logsumexp(logw))
        pw = np.exp(logw - log_z)
        m1 = np.where(pw > 0, m1, 0.0)
        m2 = np.where(pw > 0, m2, 0.0)
        pa = np.exp(amarg - log_z)
        top = rowmax.max()
        cube = rowmax.reshape(self.shape[1:])
        faces = np.array([[afaces[0] - top, afaces[1] - top],
                          [cube[0].max() - top, cube[-1].max() - top],
                          [cube[:, 0].max() - top, cube[:, -1].max() - top]])
        return log_z, pw, m1, m2, pa, faces

    def log_density_grid(self, r) -> np.ndarray:
        """Unnormalised ``-beta Psi`` at all nodes, shape ``(n_a, n_w * n_b)``; small rules only."""
        g = self.Phi @ r
        return -self.beta * (np.outer(self.A, g) + 0.5 * self.lam * (self.qa[:, None] + self.qwb[None, :]))

    def face_excess(self, logp: np.ndarray) -> np.ndarray:
        """Peak log-density on each of the six faces relative to the global peak."""
        cube = logp.reshape(self.shape)
        top = cube.max()
        out = np.empty((3, 2))
        for ax in range(3):
            sl = np.moveaxis(cube, ax, 0)
            out[ax, 0] = sl[0].max() - top
            out[ax, 1] = sl[-1].max() - top
        return out

    def expectations(self, r, cov: bool = False) -> GibbsExpectations:
        r = _as_r(r)
        log_z, pw, m1, m2, pa, faces = self.reduce(r)
        pred = (pw * m1) @ self.Phi
        sm = float(self.qa @ pa + pw @ self.qwb)
        ex = GibbsExpectations(pred, sm, float(r @ pred + 0.5 * self.lam * sm), log_z)
        ex.errors["face_excess"] = float(faces.max())
        if cov:
            ex.cov = self.Phi.T @ ((pw * m2)[:, None] * self.Phi) - np.outer(pred, pred)
        return ex

    def predict(self, r, xs, order: int = 0) -> np.ndarray:
        """``E[d^order/dx^order sigma(x, .)]`` on ``xs``.

        The ``b`` panels follow the data kinks only, so accuracy away from the
        training inputs relies on the soft-plus width being resolved by ``n``.
        """
        _, pw, m1, _, _, _ = self.reduce(_as_r(r))
        weights = pw * m1 * np.repeat(self.wt**order, self.b.shape[1])
        return weights @ self.phi(xs, order)

    def log_density(self, r, thetas, log_z) -> np.ndarray:
        """Normalised log-density at arbitrary points ``thetas`` of shape (k, 3)."""
        r = _as_r(r)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        out = np.empty(len(thetas))
        for k, th in enumerate(thetas):
            out[k] = -self.beta * potential(th, r, self.ds, self.spec, self.lam) - log_z
        return out

    def delta_curvature(self, r, xs, log_z=None) -> np.ndarray:
        """ReLU-limit curvature ``int a^m (w^m)^2 rho(a, w, -w^m x) da dw`` by 2-D quadrature."""
        r = _as_r(r)
        if log_z is None:
            log_z = self.reduce(r)[0]
        xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
        (alo, ahi), (wlo, whi) = self.box[0], self.box[1]
        a, wa = _panels(alo, ahi, _knee_breaks(self.spec, alo, ahi), self.n)
        w, ww = _panels(wlo, whi, _knee_breaks(self.spec, wlo, whi) + [0.0], self.n)
        At = np.asarray(truncate_param(a, self.spec))
        Wt = np.asarray(truncate_param(w, self.spec))
        out = np.empty(xs.size)
        for k, x in enumerate(xs):
            b = -Wt * x
            Phi = np.asarray([softplus_trunc(Wt * xi + b, self.spec) for xi in self.ds.x]).T
            g = Phi @ r
            logp = -self.beta * (np.outer(At, g) + 0.5 * self.lam * (a[:, None] ** 2 + w[None, :] ** 2 + b[None, :] ** 2))
            dens = np.exp(logp - log_z)
            out[k] = float((wa * At) @ dens @ (ww * Wt**2))
        return out


def _initial_box(lam, beta, scale=9.0):
    R = scale / math.sqrt(beta * lam)
    return ((-R, R), (-R, R), (-R, R))


def find_box(ds: Dataset, spec: ActivationSpec, lam: float, beta: float, r, box=None,
             max_half_width: float = 1e3):
    """Grow ``box`` until the density on every face is below ``exp(-34)`` of its peak."""
    r = _as_r(r)
    box = [list(s) for s in (box or _initial_box(lam, beta))]
    for _ in range(60):
        q = TensorQuadrature(ds, spec, lam, beta, 12, box)
        faces = q.reduce(r)[5]
        if faces.max() <= FACE_LOG_RATIO:
            return tuple(tuple(s) for s in box)
        for ax in range(3):
            for side in range(2):
                if faces[ax, side] > FACE_LOG_RATIO:
                    width = box[ax][1] - box[ax][0]
                    box[ax][side] += (-1 if side == 0 else 1) * 0.5 * width
        if max(abs(v) for s in box for v in s) > max_half_width:
            raise QuadratureNotConverged("Gibbs density does not decay inside the admissible box")
    raise QuadratureNotConverged("box search did not terminate")


def build_quadrature(ds: Dataset, spec: ActivationSpec, lam: float, beta: float, r,
                     tol: float = 1e-9, n0: int = 16, n_max: int = 128, box=None,
                     max_half_width: float = 1e3):
    """Adaptive box + resolution doubling; returns ``(quadrature, error)``.

    After :func:`find_box`, the nodes per panel double until the relative
    change of log Z, the predictions and the second moment drops below ``tol``.
    """
    _check_regime(lam, beta)
    r = _as_r(r)
    box = find_box(ds, spec, lam, beta, r, box, max_half_width)

    def summary(ex):
        return np.concatenate([[ex.log_z, ex.second_moment], ex.predictions])

    n = n0
    q = TensorQuadrature(ds, spec, lam, beta, n, box)
    prev = summary(q.expectations(r))
    while n < n_max:
        n = min(2 * n, n_max)
        q2 = TensorQuadrature(ds, spec, lam, beta, n, box)
        cur = summary(q2.expectations(r))
        err = float(np.max(np.abs(cur - prev) / np.maximum(1.0, np.abs(cur))))
        if err <= tol:
            return q2, err
        q, prev = q2, cur
    raise QuadratureNotConverged(f"quadrature change {err:.3e} > tol {tol:.1e} at {n}^3 nodes")


# ---------------------------------------------------------------------------
# MALA
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _psi_all(th, ts, xs, rs, lam, tau, m, val, grad, uval, sig, tgu):
    for k in range(th.shape[0]):
        a, w, b = th[k, 0], th[k, 1], th[k, 2]
        u = 0.0
        ga = 0.0
        gw = 0.0
        gb = 0.0
        for i in range(xs.size):
            v = _neuron(xs[i], a, w, b, tau, m)
            u += rs[i] * v[0]
            ga += rs[i] * v[1]
            gw += rs[i] * v[2]
            gb += rs[i] * v[3]
            sig[k, i] = v[0]
        t = ts[k]
        uval[k] = u
        tgu[k] = a * ga + w * gw + b * gb
        val[k] = t * u + 0.5 * lam * (a * a + w * w + b * b)
        grad[k, 0] = t * ga + lam * a
        grad[k, 1] = t * gw + lam * w
        grad[k, 2] = t * gb + lam * b


@numba.njit(cache=True)
def _mala(th, ts, rung, n_rungs, logh, xs, rs, lam, beta, tau, m, n_steps, n_burn, seed,
          target, out_u, out_sig, out_tgu, out_th, acc_out):
    """Run all (rung, chain) states jointly; records post-burn-in draws."""
    np.random.seed(seed)
    K = th.shape[0]
    M = xs.size
    val = np.empty(K)
    grad = np.empty((K, 3))
    uval = np.empty(K)
    sig = np.empty((K, M))
    tgu = np.empty(K)
    pval = np.empty(1)
    pgrad = np.empty((1, 3))
    pu = np.empty(1)
    psig = np.empty((1, M))
    ptgu = np.empty(1)
    prop = np.empty((1, 3))
    pt = np.empty(1)
    _psi_all(th, ts, xs, rs, lam, tau, m, val, grad, uval, sig, tgu)
    acc_win = np.zeros(n_rungs)
    cnt_win = np.zeros(n_rungs)
    acc_tot = np.zeros(n_rungs)
    cnt_tot = np.zeros(n_rungs)
    for step in range(n_steps):
        for k in range(K):
            h = math.exp(logh[rung[k]])
            s2 = math.sqrt(2.0 * h)
            for d in range(3):
                prop[0, d] = th[k, d] - h * beta * grad[k, d] + s2 * np.random.standard_normal()
            pt[0] = ts[k]
            _psi_all(prop, pt, xs, rs, lam, tau, m, pval, pgrad, pu, psig, ptgu)
            fwd = 0.0
            bwd = 0.0
            for d in range(3):
                e1 = prop[0, d] - th[k, d] + h * beta * grad[k, d]
                e2 = th[k, d] - prop[0, d] + h * beta * pgrad[0, d]
                fwd += e1 * e1
                bwd += e2 * e2
            loga = -beta * (pval[0] - val[k]) - (bwd - fwd) / (4.0 * h)
            ok = math.log(np.random.random() + 1e-300) < loga
            if ok:
                for d in range(3):
                    th[k, d] = prop[0, d]
                    grad[k, d] = pgrad[0, d]
                val[k] = pval[0]
                uval[k] = pu[0]
                tgu[k] = ptgu[0]
                for i in range(M):
                    sig[k, i] = psig[0, i]
            j = rung[k]
            acc_win[j] += 1.0 if ok else 0.0
            cnt_win[j] += 1.0
            if step >= n_burn:
                acc_tot[j] += 1.0 if ok else 0.0
                cnt_tot[j] += 1.0
        if step < n_burn and (step + 1) % 25 == 0:
            gain = 2.0 / math.sqrt(1.0 + (step + 1) / 25.0)
            for j in range(n_rungs):
                logh[j] += gain * (acc_win[j] / cnt_win[j] - target)
                acc_win[j] = 0.0
                cnt_win[j] = 0.0
        if step >= n_burn:
            s = step - n_burn
            for k in range(K):
                out_u[k, s] = uval[k]
                out_tgu[k, s] = tgu[k]
                for i in range(M):
                    out_sig[k, s, i] = sig[k, i]
                for d in range(3):
                    out_th[k, s, d] = th[k, d]
    for j in range(n_rungs):
        acc_out[j] = acc_tot[j] / max(cnt_tot[j], 1.0)


def _batch_se(x: np.ndarray, n_batches: int = 8) -> float:
    """Batch-means standard error of the pooled mean; ``x`` has shape (chains, draws)."""
    C, n = x.shape
    nb = max(1, min(n_batches, n))
    L = n // nb
    means = x[:, : nb * L].reshape(C, nb, L).mean(axis=2).ravel()
    if means.size < 2:
        return 0.0
    return float(np.std(means, ddof=1) / math.sqrt(means.size))


def split_rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction for draws of shape (chains, n)."""
    C, n = x.shape
    h = n // 2
    if h < 2:
        return math.inf
    seqs = np.concatenate([x[:, :h], x[:, h: 2 * h]], axis=0)
    W = seqs.var(axis=1, ddof=1).mean()
    B = h * seqs.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else math.inf
    var = (h - 1) / h * W + B / h
    return float(math.sqrt(var / W))


@dataclass
class MalaConfig:
    chains: int = 8
    steps: int = 20000
    rungs: int = 24
    seed: int = 0
    target_accept: float = 0.55
    rhat_max: float = 1.05


class MalaSampler:
    def __init__(self, ds: Dataset, spec: ActivationSpec, lam: float, beta: float, cfg: MalaConfig | None = None):
        _check_regime(lam, beta)
        self.ds, self.spec, self.lam, self.beta = ds, spec, lam, beta
        self.cfg = cfg or MalaConfig()
        self.samples = None  # (chains * draws, 3) at t = 1

    def expectations(self, r, cov: bool = False) -> GibbsExpectations:
        cfg, lam, beta = self.cfg, self.lam, self.beta
        r = _as_r(r)
        K, C, M = cfg.rungs, cfg.chains, self.ds.M
        ladder = np.linspace(0.0, 1.0, K + 1)  # rung k samples at t_k; t_K = 1 is the target
        n_r = K + 1
        rung = np.repeat(np.arange(n_r), C)
        ts = ladder[rung]
        rng = np.random.default_rng(cfg.seed)
        th = rng.standard_normal((n_r * C, 3)) / math.sqrt(beta * lam)
        logh = np.full(n_r, math.log(0.5 / (beta * lam)))
        n_burn = cfg.steps // 2
        n_keep = cfg.steps - n_burn
        out_u = np.empty((n_r * C, n_keep))
        out_sig = np.empty((n_r * C, n_keep, M))
        out_tgu = np.empty((n_r * C, n_keep))
        out_th = np.empty((n_r * C, n_keep, 3))
        acc = np.empty(n_r)
        _mala(th, ts, rung, n_r, logh, self.ds.xs, r, lam, beta, self.spec.tau, self.spec.m,
              cfg.steps, n_burn, cfg.seed % (2**32), cfg.target_accept, out_u, out_sig, out_tgu, out_th, acc)

        top = slice(K * C, (K + 1) * C)
        u_top = out_u[top]
        m2_draws = (3.0 / beta - out_tgu[top]) / lam
        psi_top = u_top + 0.5 * lam * np.sum(out_th[top] ** 2, axis=2)
        rhat = split_rhat(psi_top)
        if rhat > cfg.rhat_max:
            raise ChainNotMixed(f"split R-hat {rhat:.3f} > {cfg.rhat_max}")

        log_z = 1.5 * math.log(2.0 * math.pi / (beta * lam))
        var_lz = 0.0
        for k in range(K):
            dt = ladder[k + 1] - ladder[k]
            ex = -beta * dt * out_u[k * C:(k + 1) * C]
            shift = ex.max()
            wgt = np.exp(ex - shift)
            mw = wgt.mean()
            log_z += shift + math.log(mw)
            var_lz += (_batch_se(wgt) / mw) ** 2

        sig = out_sig[top]
        pred = sig.reshape(-1, M).mean(axis=0)
        pred_se = np.array([_batch_se(sig[:, :, i]) for i in range(M)])
        m2 = float(m2_draws.mean())
        mean_pot = float(r @ pred + 0.5 * lam * m2)
        pot_draws = u_top + 0.5 * lam * m2_draws
        ex = GibbsExpectations(pred, m2, mean_pot, float(log_z), errors={
            "predictions": pred_se, "second_moment": _batch_se(m2_draws),
            "mean_potential": _batch_se(pot_draws), "log_z": math.sqrt(var_lz),
            "rhat": rhat, "acceptance": acc.tolist()})
        if cov:
            flat = sig.reshape(-1, M)
            ex.cov = np.atleast_2d(np.cov(flat, rowvar=False))
        self.samples = out_th[top].reshape(-1, 3)
        return ex

    def predict(self, r, xs, order: int = 0) -> np.ndarray:
        if self.samples is None:
            self.expectations(r)
        xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
        s = self.samples
        at = np.asarray(truncate_param(s[:, 0], self.spec))
        wt = np.asarray(truncate_param(s[:, 1], self.spec))
        u = wt[None, :] * xs[:, None] + s[None, :, 2]
        return (softplus_trunc(u, self.spec, order=order) * (at * wt**order)[None, :]).mean(axis=1)


# ---------------------------------------------------------------------------
# state and solver
# ---------------------------------------------------------------------------


@dataclass
class GibbsState:
    residuals: ResidualVector
    spec: ActivationSpec
    lam: float
    beta: float
    log_z: float
    backend: Backend = Backend.QUADRATURE
    gap: float = 0.0
    iterations: int = 0
    quad_error: float = 0.0
    trace: list = field(default_factory=list)
    engine: object = field(default=None, repr=False, compare=False)

    @property
    def r(self) -> np.ndarray:
        return self.residuals.array

    def predict(self, xs, order: int = 0) -> np.ndarray:
        return self.engine.predict(self.r, xs, order)

    def to_json(self) -> dict:
        return {"r": list(self.residuals.r), "lambda": self.lam, "beta": self.beta,
                "spec": self.spec.to_json(), "log_z": self.log_z, "backend": self.backend.value,
                "gap": self.gap, "iterations": self.iterations}

    @classmethod
    def from_json(cls, obj: dict, ds: Dataset) -> "GibbsState":
        spec = ActivationSpec.from_json(obj["spec"])
        r = np.array(obj["r"])
        eng, err = build_quadrature(ds, spec, obj["lambda"], obj["beta"], r)
        return cls(ResidualVector(r), spec, obj["lambda"], obj["beta"], obj["log_z"],
                   Backend(obj.get("backend", Backend.QUADRATURE.value)), obj.get("gap", 0.0),
                   obj.get("iterations", 0), err, engine=eng)

    def trace_csv(self, path) -> None:
        rows = np.array(self.trace, dtype=np.float64).reshape(-1, 3)
        np.savetxt(path, rows, delimiter=",", header="iter,residual_gap,risk", comments="", fmt="%.17g")


def make_state(ds: Dataset, spec: ActivationSpec, lam: float, beta: float, r,
               backend: Backend = Backend.QUADRATURE, mala: MalaConfig | None = None,
               quad_tol: float = 1e-9) -> GibbsState:
    """A Gibbs state at a given (not necessarily self-consistent) residual vector."""
    _check_regime(lam, beta)
    r = _as_r(r)
    if r.size != ds.M:
        raise ValidationError("residual length must equal the dataset size")
    if Backend(backend) is Backend.MALA:
        eng = MalaSampler(ds, spec, lam, beta, mala)
        ex = eng.expectations(r)
        return GibbsState(ResidualVector(r), spec, lam, beta, ex.log_z, Backend.MALA, engine=eng)
    eng, err = build_quadrature(ds, spec, lam, beta, r, tol=quad_tol)
    ex = eng.expectations(r)
    return GibbsState(ResidualVector(r), spec, lam, beta, ex.log_z, Backend.QUADRATURE,
                      quad_error=err, engine=eng)


def gibbs_expectations(state: GibbsState, ds: Dataset, cov: bool = False) -> GibbsExpectations:
    """Predictions at the data, E|theta|^2, E Psi and log Z under ``state``."""
    ex = state.engine.expectations(state.r, cov=cov)
    if state.backend is Backend.QUADRATURE:
        e = max(state.quad_error, 1e-15)
        ex.errors.update({"predictions": np.full(ds.M, e * max(1.0, float(np.max(np.abs(ex.predictions))))),
                          "second_moment": e * max(1.0, ex.second_moment),
                          "mean_potential": e * max(1.0, abs(ex.mean_potential)),
                          "log_z": e * max(1.0, abs(ex.log_z))})
    return ex


def dual_objective(r, ex: GibbsExpectations, ds: Dataset, beta: float) -> float:
    r = _as_r(r)
    return ex.log_z / beta + float(ds.ys @ r) + 0.5 * ds.M * float(r @ r)


def solve_fixed_point(ds: Dataset, spec: ActivationSpec, lam: float, beta: float, eta: float = 0.5,
                      tol: float = 1e-6, max_iters: int = 500, method: str = "newton", r0=None,
                      quad_tol: float = 1e-8, n_work: int = 32, n_max: int = 128) -> GibbsState:
    """Damped iteration on ``r -> r_new(r)`` until ``|r_new - r|_inf <= tol``.

    ``method="picard"`` is the plain update ``r <- (1 - eta) r + eta r_new``.
    ``method="newton"`` (default) preconditions the same step with
    ``(I + beta/M Cov)^-1`` and backtracks on the convex dual, which keeps the
    iteration stable at low temperature where the plain update oscillates.
    Both have the same fixed points.

    Iterations first run on a working rule with ``n_work`` nodes per panel;
    once converged there the rule is refined to ``quad_tol`` and iteration
    continues until the refined rule is also self-consistent.
    """
    _check_regime(lam, beta)
    if not 0 < eta <= 1:
        raise ValidationError("damping eta must lie in (0, 1]")
    if method not in ("newton", "picard"):
        raise ValidationError(f"unknown method {method!r}")
    M = ds.M
    y = ds.ys
    r = np.zeros(M) if r0 is None else _as_r(r0).copy()
    if r.size != M:
        raise ValidationError("r0 length must equal the dataset size")
    q = TensorQuadrature(ds, spec, lam, beta, n_work, find_box(ds, spec, lam, beta, r))
    qerr, refined = math.nan, False
    use_cov = method == "newton"

    def evaluate(q, r, cov):
        ex = q.expectations(r, cov=cov)
        if ex.errors["face_excess"] > FACE_LOG_RATIO + 4.0:
            q = TensorQuadrature(ds, spec, lam, beta, q.n, find_box(ds, spec, lam, beta, r, q.box))
            ex = q.expectations(r, cov=cov)
        return q, ex

    trace = []
    for it in range(max_iters):
        q, ex = evaluate(q, r, use_cov)
        r_new = -(y - ex.predictions) / M
        gap = float(np.max(np.abs(r_new - r)))
        trace.append((it, gap, M * float(r @ r)))
        if gap <= tol:
            if refined:
                return GibbsState(ResidualVector(r), spec, lam, beta, ex.log_z, Backend.QUADRATURE,
                                  gap, it, qerr, trace, engine=q)
            box = find_box(ds, spec, lam, beta, r)
            q, qerr = build_quadrature(ds, spec, lam, beta, r, tol=quad_tol, n0=n_work, n_max=n_max, box=box)
            refined = True
            continue
        if method == "picard":
            r = (1.0 - eta) * r + eta * r_new
            continue
        d = np.linalg.solve(np.eye(M) + (beta / M) * ex.cov, r_new - r)
        J0 = dual_objective(r, ex, ds, beta)
        slope = -M * float((r_new - r) @ d)
        step = eta
        while True:
            rt = r + step * d
            qt, ext = evaluate(q, rt, False)
            if dual_objective(rt, ext, ds, beta) <= J0 + 1e-4 * step * slope or step < 1e-8:
                break
            step *= 0.5
        if qt.box != q.box:
            # a trial needed a larger box; refit the box to the accepted point
            qt = TensorQuadrature(ds, spec, lam, beta, n_work, find_box(ds, spec, lam, beta, rt))
        r, q = rt, qt
    raise NotConverged(f"no fixed point within {max_iters} iterations (last gap {trace[-1][1]:.3e})", trace)


def free_energy_of_gibbs(state: GibbsState, ds: Dataset) -> FreeEnergyReport:
    ex = gibbs_expectations(state, ds)
    risk = state.residuals.risk
    H = state.beta * ex.mean_potential + ex.log_z
    F = 0.5 * risk + 0.5 * state.lam * ex.second_moment - H / state.beta
    return FreeEnergyReport(risk, ex.second_moment, H, F)


def free_energy_of_density(state: GibbsState, ds: Dataset) -> FreeEnergyReport:
    """Free energy of the density ``rho_r`` itself, with the risk of its own predictions.

    Unlike :func:`free_energy_of_gibbs` this does not assume ``state`` is
    self-consistent, so it is the right functional for comparing candidates.
    """
    ex = gibbs_expectations(state, ds)
    risk = float(np.mean((ds.ys - ex.predictions) ** 2))
    H = state.beta * ex.mean_potential + ex.log_z
    F = 0.5 * risk + 0.5 * state.lam * ex.second_moment - H / state.beta
    return FreeEnergyReport(risk, ex.second_moment, H, F)


def free_energy_of_ensemble(ens: ParticleEnsemble, ds: Dataset, lam: float) -> FreeEnergyReport:
    return FreeEnergyReport(empirical_risk(ens, ds), ens.second_moment())


def free_energy_lower_bound(lam: float, beta: float) -> float:
    return -(1.0 + 3.0 * math.log(8.0 * math.pi / (beta * lam))) / beta
