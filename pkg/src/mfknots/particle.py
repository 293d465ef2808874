"""Finite-width mean-field network: particle ensemble, noisy SGD, fixtures.

The network output is the plain average of ``N`` neurons.  Training applies

    theta_i <- (1 - 2 lam s_k) theta_i + 2 s_k (y - yhat(x)) grad sigma(x, theta_i)
               + sqrt(2 s_k / beta) g_i

with one sample ``(x, y)`` drawn uniformly from the dataset per step and
``yhat`` evaluated before the update (all particles move simultaneously).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from .activation import ActivationSpec, _neuron, _neuron_value
from .data import Dataset
from .errors import (
    CurvatureUndefined,
    NonFinite,
    StepTooLarge,
    ValidationError,
    WidthTooLarge,
)

_NOISE_BLOCK = 1 << 21  # floats of Gaussian noise generated per block


@dataclass
class ParticleEnsemble:
    thetas: np.ndarray
    spec: ActivationSpec = field(default_factory=ActivationSpec.relu)

    def __post_init__(self):
        self.thetas = np.ascontiguousarray(np.asarray(self.thetas, dtype=np.float64).reshape(-1, 3))
        if self.thetas.shape[0] < 1:
            raise ValidationError("ensemble needs at least one particle")
        if not np.all(np.isfinite(self.thetas)):
            raise NonFinite("ensemble contains non-finite weights")

    @property
    def N(self) -> int:
        return self.thetas.shape[0]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.thetas.copy(), self.spec)

    def second_moment(self) -> float:
        return float(np.mean(np.sum(self.thetas**2, axis=1)))

    def to_json(self) -> dict:
        return {"spec": self.spec.to_json(), "thetas": self.thetas.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "ParticleEnsemble":
        return cls(np.array(obj["thetas"], dtype=np.float64), ActivationSpec.from_json(obj["spec"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "ParticleEnsemble":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class TrainConfig:
    """Noisy-SGD hyper-parameters.

    ``xi`` and ``init`` are JSON-able descriptors.  Step profiles:
    ``{"name": "constant"}`` and ``{"name": "power", "t0": t0, "p": p}`` for
    ``xi(t) = (1 + t / t0) ** -p``.  Initialisations: ``{"name": "gaussian",
    "std": s}`` where ``s`` is a scalar or an ``[a, w, b]`` triple.
    """

    lam: float = 0.0
    beta_inv: float = 0.0
    eps: float = 1e-3
    steps: int = 10_000
    seed: int = 0
    xi: dict = field(default_factory=lambda: {"name": "constant"})
    init: dict = field(default_factory=lambda: {"name": "gaussian", "std": 1.0})
    record_every: int = 1000

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lambda must be >= 0")
        if self.beta_inv < 0:
            raise ValidationError("beta_inv must be >= 0")
        if self.eps <= 0:
            raise ValidationError("eps must be > 0")
        if self.steps < 0:
            raise ValidationError("steps must be >= 0")

    def step_sizes(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.float64)
        t = self.eps * k
        name = self.xi.get("name", "constant")
        if name == "constant":
            prof = np.ones_like(t)
        elif name == "power":
            prof = (1.0 + t / float(self.xi["t0"])) ** (-float(self.xi["p"]))
        else:
            raise ValidationError(f"unknown step profile {name!r}")
        return self.eps * prof

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


@dataclass
class TrainingTrace:
    epoch: np.ndarray
    risk: np.ndarray
    second_moment: np.ndarray
    time_average: np.ndarray | None = None
    average_grid: np.ndarray | None = None

    def to_csv(self, path) -> None:
        rows = np.column_stack([self.epoch, self.risk, self.second_moment])
        np.savetxt(path, rows, delimiter=",", header="epoch,risk,second_moment", comments="", fmt="%.17g")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _predict_grid(xs, thetas, tau, m, out):
    n = thetas.shape[0]
    for i in range(xs.size):
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for k in range(n):
            v = _neuron(xs[i], thetas[k, 0], thetas[k, 1], thetas[k, 2], tau, m)
            acc0 += v[0]
            acc1 += v[4]
            acc2 += v[5]
        out[0, i] = acc0 / n
        out[1, i] = acc1 / n
        out[2, i] = acc2 / n


@numba.njit(cache=True)
def _predict_values(xs, thetas, tau, m, out):
    n = thetas.shape[0]
    for i in range(xs.size):
        acc = 0.0
        for k in range(n):
            acc += _neuron_value(xs[i], thetas[k, 0], thetas[k, 1], thetas[k, 2], tau, m)
        out[i] = acc / n


@numba.njit(cache=True)
def _step(thetas, grads, x, y, s, lam, noise_scale, noise, tau, m):
    """One simultaneous update; ``noise`` is an (N, 3) standard normal draw or empty."""
    n = thetas.shape[0]
    acc = 0.0
    for k in range(n):
        v = _neuron(x, thetas[k, 0], thetas[k, 1], thetas[k, 2], tau, m)
        acc += v[0]
        grads[k, 0] = v[1]
        grads[k, 1] = v[2]
        grads[k, 2] = v[3]
    resid = y - acc / n
    c = 1.0 - 2.0 * lam * s
    for k in range(n):
        for d in range(3):
            val = c * thetas[k, d] + 2.0 * s * resid * grads[k, d]
            if noise_scale > 0.0:
                val += noise_scale * noise[k, d]
            thetas[k, d] = val


@numba.njit(cache=True)
def _risk_moment(thetas, xs, ys, tau, m, buf):
    _predict_values(xs, thetas, tau, m, buf)
    r = 0.0
    for i in range(xs.size):
        r += (buf[i] - ys[i]) ** 2
    mom = 0.0
    for k in range(thetas.shape[0]):
        mom += thetas[k, 0] ** 2 + thetas[k, 1] ** 2 + thetas[k, 2] ** 2
    return r / xs.size, mom / thetas.shape[0]


@numba.njit(cache=True)
def _train_core(thetas, xs, ys, svals, lam, beta_inv, idx, noise_block, k0, k1, tau, m,
                record_every, rec, n_rec, avg_grid, avg_start, avg_every, avg_out, n_avg):
    """Steps ``k0 .. k1 - 1``; ``idx`` and ``noise_block`` hold the draws for this block."""
    n = thetas.shape[0]
    M = xs.size
    steps = svals.size
    grads = np.empty((n, 3))
    buf = np.empty(M)
    gbuf = np.empty(avg_grid.size)
    for k in range(k0, k1):
        if record_every > 0 and k % record_every == 0:
            risk, mom = _risk_moment(thetas, xs, ys, tau, m, buf)
            rec[n_rec, 0] = k
            rec[n_rec, 1] = risk
            rec[n_rec, 2] = mom
            n_rec += 1
            if not (math.isfinite(risk) and math.isfinite(mom)):
                return n_rec, n_avg, False
        j = idx[k - k0]
        s = svals[k]
        scale = math.sqrt(2.0 * s * beta_inv) if beta_inv > 0.0 else 0.0
        _step(thetas, grads, xs[j], ys[j], s, lam, scale, noise_block[k - k0], tau, m)
        if avg_grid.size > 0 and k >= avg_start and (k - avg_start) % avg_every == 0:
            _predict_values(avg_grid, thetas, tau, m, gbuf)
            for i in range(avg_grid.size):
                avg_out[i] += gbuf[i]
            n_avg += 1
    if k1 < steps:
        return n_rec, n_avg, True
    risk, mom = _risk_moment(thetas, xs, ys, tau, m, buf)
    rec[n_rec, 0] = steps
    rec[n_rec, 1] = risk
    rec[n_rec, 2] = mom
    n_rec += 1
    ok = math.isfinite(risk) and math.isfinite(mom)
    for i in range(n):
        for d in range(3):
            if not math.isfinite(thetas[i, d]):
                ok = False
    return n_rec, n_avg, ok


# ---------------------------------------------------------------------------
# predictor
# ---------------------------------------------------------------------------


def predict(ens: ParticleEnsemble, x):
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty(xs.size)
    _predict_values(np.ascontiguousarray(xs.ravel()), ens.thetas, ens.spec.tau, ens.spec.m, out)
    return float(out[0]) if np.ndim(x) == 0 else out.reshape(np.shape(x))


def predict_derivatives(ens: ParticleEnsemble, x, curvature: bool = True):
    """``(value, slope, curvature)`` of the predictor; curvature needs smooth mode.

    With ``curvature=False`` the third entry is ``None`` and any mode is allowed.
    """
    if curvature and not ens.spec.smooth:
        raise CurvatureUndefined(f"predictor curvature undefined in {ens.spec.mode.value} mode")
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    out = np.empty((3, xs.size))
    _predict_grid(np.ascontiguousarray(xs.ravel()), ens.thetas, ens.spec.tau, ens.spec.m, out)
    shape = np.shape(x)
    parts = [float(o[0]) if np.ndim(x) == 0 else o.reshape(shape) for o in out]
    return parts[0], parts[1], (parts[2] if curvature else None)


def empirical_risk(ens: ParticleEnsemble, ds: Dataset) -> float:
    return float(np.mean((predict(ens, ds.xs) - ds.ys) ** 2))


def residuals(ens: ParticleEnsemble, ds: Dataset) -> np.ndarray:
    """``r_i = -(y_i - yhat(x_i)) / M``."""
    return -(ds.ys - predict(ens, ds.xs)) / ds.M


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def _check_steps(cfg: TrainConfig, svals) -> None:
    if np.size(svals) == 0:
        return
    smax = float(np.max(svals))
    if np.min(svals) <= 0:
        raise ValidationError("step sizes must be positive")
    if 1.0 - 2.0 * cfg.lam * smax <= 0.0:
        raise StepTooLarge(f"1 - 2 lambda s = {1.0 - 2.0 * cfg.lam * smax} <= 0")


def sgd_step(ens: ParticleEnsemble, sample, cfg: TrainConfig, k: int, rng=None) -> ParticleEnsemble:
    """Apply one noisy-SGD step to a copy of ``ens`` using the given sample."""
    s = float(cfg.step_sizes(k))
    _check_steps(cfg, [s])
    out = ens.copy()
    noise = np.zeros((ens.N, 3))
    scale = 0.0
    if cfg.beta_inv > 0:
        rng = rng if rng is not None else np.random.default_rng()
        noise = rng.standard_normal((ens.N, 3))
        scale = math.sqrt(2.0 * s * cfg.beta_inv)
    grads = np.empty((ens.N, 3))
    _step(out.thetas, grads, float(sample[0]), float(sample[1]), s, cfg.lam, scale, noise,
          ens.spec.tau, ens.spec.m)
    return out


def init_ensemble(cfg: TrainConfig, N: int, spec: ActivationSpec) -> ParticleEnsemble:
    init = cfg.init
    rng = np.random.default_rng(cfg.seed)
    if init.get("name", "gaussian") != "gaussian":
        raise ValidationError(f"unknown initialisation {init.get('name')!r}")
    std = np.broadcast_to(np.asarray(init.get("std", 1.0), dtype=np.float64), (3,))
    mean = np.broadcast_to(np.asarray(init.get("mean", 0.0), dtype=np.float64), (3,))
    return ParticleEnsemble(mean + std * rng.standard_normal((N, 3)), spec)


def train(ds: Dataset, cfg: TrainConfig, N: int, spec: ActivationSpec | None = None,
          ens: ParticleEnsemble | None = None, average_grid=None, average_from: float = 0.5,
          average_every: int = 10):
    """Run ``cfg.steps`` noisy-SGD steps from ``rho0`` (or from ``ens``).

    If ``average_grid`` is given the predictor on that grid is also averaged
    over the steps after fraction ``average_from`` of the run.
    """
    spec = spec if spec is not None else (ens.spec if ens is not None else ActivationSpec.relu())
    ens = ens.copy() if ens is not None else init_ensemble(cfg, N, spec)
    svals = np.ascontiguousarray(cfg.step_sizes(np.arange(cfg.steps)))
    _check_steps(cfg, svals)
    record_every = max(1, int(cfg.record_every) * ds.M)
    rec = np.zeros((cfg.steps // record_every + 2, 3))
    grid = np.ascontiguousarray(np.asarray(average_grid if average_grid is not None else [], dtype=np.float64))
    avg = np.zeros(grid.size)
    avg_start = int(average_from * cfg.steps)
    rng = np.random.default_rng(cfg.seed)
    noisy = cfg.beta_inv > 0
    block = max(1, min(cfg.steps, _NOISE_BLOCK // (3 * ens.N))) if noisy else max(cfg.steps, 1)
    empty = np.zeros((block if not noisy else 0, ens.N if noisy else 0, 3))
    n_rec, n_avg, ok = 0, 0, True
    for k0 in range(0, cfg.steps + 1, block):
        k1 = min(k0 + block, cfg.steps)
        idx = rng.integers(ds.M, size=k1 - k0)
        noise = rng.standard_normal((k1 - k0, ens.N, 3)) if noisy else empty
        n_rec, n_avg, ok = _train_core(ens.thetas, ds.xs, ds.ys, svals, cfg.lam, cfg.beta_inv, idx, noise,
                                       k0, k1, spec.tau, spec.m, record_every, rec, n_rec,
                                       grid, avg_start, max(1, int(average_every)), avg, n_avg)
        if not ok or k1 == cfg.steps:
            break
    rec = rec[:n_rec]
    if not ok:
        raise NonFinite("weights diverged during training; reduce the step size")
    trace = TrainingTrace(rec[:, 0] / ds.M, rec[:, 1], rec[:, 2])
    if grid.size:
        trace.average_grid = grid
        trace.time_average = avg / max(n_avg, 1)
    return ens, trace


# ---------------------------------------------------------------------------
# analytic ensembles
# ---------------------------------------------------------------------------


def build_two_atom(ds: Dataset, spec: ActivationSpec | None = None) -> ParticleEnsemble:
    """Two particles realising ``(ybar / xbar) |x|`` on ``{(-xbar, ybar), (xbar, ybar)}``."""
    if ds.M != 2 or ds.x[0] != -ds.x[1] or ds.y[0] != ds.y[1] or ds.x[1] <= 0 or ds.y[0] <= 0:
        raise ValidationError("two-atom construction needs {(-xbar, ybar), (xbar, ybar)}, xbar, ybar > 0")
    c = math.sqrt(2.0 * ds.y[0] / ds.x[1])
    return ParticleEnsemble(np.array([[c, -c, 0.0], [c, c, 0.0]]), spec or ActivationSpec.relu())


def build_sawtooth(ds: Dataset, eps: float, spec: ActivationSpec | None = None) -> ParticleEnsemble:
    """``3M`` particles whose average is a sum of disjoint tents through the data."""
    gaps = np.diff(ds.xs)
    if eps <= 0 or (gaps.size and eps >= gaps.min() / 2.0):
        raise WidthTooLarge(f"eps={eps} must be in (0, min gap / 2)")
    M = ds.M
    rows = []
    for xi, yi in zip(ds.x, ds.y):
        h = 3.0 * M * yi / eps
        rows += [[h, 1.0, eps - xi], [-2.0 * h, 1.0, -xi], [h, 1.0, -eps - xi]]
    return ParticleEnsemble(np.array(rows), spec or ActivationSpec.relu())


def build_gaussian_mixture(centers, var: float, n_per: int, rng=None,
                           spec: ActivationSpec | None = None) -> ParticleEnsemble:
    """Equal-weight isotropic Gaussian mixture realised with ``n_per`` draws per centre."""
    if var < 0:
        raise ValidationError("variance must be >= 0")
    rng = rng if rng is not None else np.random.default_rng(0)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    blocks = [c + math.sqrt(var) * rng.standard_normal((int(n_per), 3)) for c in centers]
    return ParticleEnsemble(np.vstack(blocks), spec or ActivationSpec.relu())
