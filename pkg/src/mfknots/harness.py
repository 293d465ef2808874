"""Experiment configs, the figure registry and the two-point counterexample checks.

An experiment trains an ensemble, optionally solves the Gibbs fixed point,
builds the cluster set from the residuals, extracts knots and writes
``report.json``, ``predictor.csv``, ``cluster.json``, ``pwl.json``,
``trace.csv``, ``ensemble.json`` and ``plot.svg`` into its output directory.
All outputs depend only on the config (including its seed).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .activation import ActivationSpec
from .clusterset import ClusterReport, cluster_report
from .data import Dataset, PredictionIntervals, load_dataset, make_intervals
from .errors import CurvatureUndefined, LambdaOutOfRange, UnknownFigure, ValidationError
from .gibbs import (Backend, GibbsState, free_energy_of_ensemble, free_energy_of_gibbs,
                    free_energy_lower_bound, solve_fixed_point)
from .particle import (ParticleEnsemble, TrainConfig, build_gaussian_mixture, build_two_atom, empirical_risk,
                       predict, predict_derivatives, residuals, train)
from .pwl import DEFAULT_GRID_N, check_admissible, extract_pwl, pwl_distance
from .svg import Figure

STANDIN_LABEL = "qualitative reproduction"

# the two-point dataset {(-xbar, ybar), (xbar, ybar)} and its V-shaped interpolant
COUNTEREXAMPLE_POINTS = ((-10.0, 2.0), (10.0, 2.0))
COUNTEREXAMPLE_SLOPE = 0.2
STATED_SECOND_MOMENT = 0.4  # value quoted for the two-atom measure; direct summation gives 0.8


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------


@dataclass
class GibbsOptions:
    """Optional fixed-point solve alongside training.

    ``beta`` defaults to ``2 / beta_inv`` of the training run, the inverse
    temperature of the noisy-SGD stationary law.
    """

    enabled: bool = False
    beta: float | None = None
    eta: float = 0.5
    tol: float = 1e-6
    max_iters: int = 500


@dataclass
class ExtractionConfig:
    grid_n: int = DEFAULT_GRID_N
    slope_tol: float | None = None
    merge_radius: float | None = None
    merge_gap_fraction: float = 0.1  # merge radius as a share of the smallest data gap
    endpoint_tol: float | None = None

    def radius(self, ds: Dataset) -> float | None:
        if self.merge_radius is not None:
            return self.merge_radius
        if ds.M < 2 or not self.merge_gap_fraction:
            return None
        return self.merge_gap_fraction * float(np.min(np.diff(ds.xs)))


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict  # {"points": [[x, y], ...]} or {"file": path, "format": "csv" | "json"}
    train: TrainConfig = field(default_factory=TrainConfig)
    activation: ActivationSpec = field(default_factory=ActivationSpec.relu)
    N: int = 500
    L: float | None = None
    average_from: float | None = None  # time-average residuals over this tail of the run
    average_every: int = 10
    gibbs: GibbsOptions = field(default_factory=GibbsOptions)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    label: str = ""
    out: str | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValidationError("N must be >= 1")
        if "points" not in self.dataset and "file" not in self.dataset:
            raise ValidationError("dataset needs 'points' or 'file'")
        if self.average_from is not None and not 0.0 <= self.average_from < 1.0:
            raise ValidationError("average_from must lie in [0, 1)")

    def load_dataset(self, base: Path | None = None) -> Dataset:
        if "points" in self.dataset:
            return Dataset.from_points(self.dataset["points"])
        path = Path(self.dataset["file"])
        if base is not None and not path.is_absolute():
            path = base / path
        return load_dataset(path, self.dataset.get("format"))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        cfg.train.seed = int(seed)
        return cfg

    def to_json(self) -> dict:
        return {"name": self.name, "dataset": self.dataset, "train": self.train.to_json(),
                "activation": self.activation.to_json(), "N": self.N, "L": self.L,
                "average_from": self.average_from, "average_every": self.average_every,
                "gibbs": asdict(self.gibbs), "extraction": asdict(self.extraction),
                "label": self.label, "out": self.out}

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        known = {"name", "dataset", "train", "activation", "N", "L", "average_from", "average_every",
                 "gibbs", "extraction", "label", "out"}
        extra = set(obj) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        if "name" not in obj or "dataset" not in obj:
            raise ValidationError("config needs 'name' and 'dataset'")
        try:
            return cls(name=str(obj["name"]), dataset=dict(obj["dataset"]),
                       train=TrainConfig.from_json(obj.get("train", {})),
                       activation=ActivationSpec.from_json(obj.get("activation", {})),
                       N=int(obj.get("N", 500)), L=obj.get("L"),
                       average_from=obj.get("average_from"), average_every=int(obj.get("average_every", 10)),
                       gibbs=GibbsOptions(**obj.get("gibbs", {})),
                       extraction=ExtractionConfig(**obj.get("extraction", {})),
                       label=str(obj.get("label", "")), out=obj.get("out"))
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_json(obj)


# ---------------------------------------------------------------------------
# running an experiment
# ---------------------------------------------------------------------------


@dataclass
class ExperimentReport:
    config: dict
    risk: float
    residuals: list
    averaged_residuals: list | None
    cluster: dict | None
    pwl: dict
    verdict: dict
    pwl_gap: float
    free_energy: dict
    gibbs: dict | None = None
    files: dict = field(default_factory=dict)  # name -> sha256

    @property
    def knots(self) -> list:
        return list(self.pwl["knots"])

    def to_json(self) -> dict:
        return asdict(self)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_predictor(path: Path, xs, ys, slope, curv) -> None:
    cols, header = [xs, ys, slope], "x,y,slope"
    if curv is not None:
        cols.append(curv)
        header += ",curvature"
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")


def _plot(path: Path, title: str, ds: Dataset, xs, ys, cluster: ClusterReport | None, knots, note="",
          extra=None) -> None:
    fig = Figure(title=title, note=note)
    if cluster is not None:
        for lo, hi in cluster.omega():
            fig.band(lo, hi)
    for k in knots:
        fig.vline(k)
    fig.curve(xs, ys, "predictor")
    for label, (ex, ey) in (extra or {}).items():
        fig.curve(ex, ey, label, dashed=True)
    fig.scatter(ds.xs, ds.ys, "data")
    fig.save(path)


def run_experiment(cfg: ExperimentConfig, out=None, base: Path | None = None) -> ExperimentReport:
    """Train, analyse and write every artifact to ``out`` (or ``cfg.out``).

    Files are written as soon as they exist, so a failure part-way through
    leaves the earlier artifacts in place before the error propagates.
    """
    out = Path(out if out is not None else (cfg.out or cfg.name))
    out.mkdir(parents=True, exist_ok=True)
    ds = cfg.load_dataset(base)
    iv = make_intervals(ds, cfg.L)
    spec = cfg.activation
    files: list[str] = []
    _write_json(out / "config.json", cfg.to_json())
    files.append("config.json")
    try:
        avg_kw = {}
        if cfg.average_from is not None:
            avg_kw = {"average_grid": ds.xs, "average_from": cfg.average_from,
                      "average_every": cfg.average_every}
        ens, trace = train(ds, cfg.train, cfg.N, spec, **avg_kw)
        ens.save(out / "ensemble.json")
        trace.to_csv(out / "trace.csv")
        files += ["ensemble.json", "trace.csv"]

        r = residuals(ens, ds)
        r_avg = None
        if trace.time_average is not None:
            r_avg = -(ds.ys - trace.time_average) / ds.M
        r_cluster = r_avg if r_avg is not None else r

        xs = np.linspace(-iv.L, iv.L, cfg.extraction.grid_n)
        ys, slope, curv = predict_derivatives(ens, xs, curvature=spec.smooth)
        _write_predictor(out / "predictor.csv", xs, ys, slope, curv)
        files.append("predictor.csv")

        cluster = None
        if cfg.train.lam > 0:
            cluster = cluster_report(r_cluster, ds, iv, cfg.train.lam)
            _write_json(out / "cluster.json", cluster.to_json())
            files.append("cluster.json")

        ex = cfg.extraction
        pw = extract_pwl(lambda x: predict(ens, x), lambda x: predict_derivatives(ens, x, False)[1],
                         (-iv.L, iv.L), ex.grid_n, ex.slope_tol, ex.radius(ds))
        verdict = check_admissible(pw, iv, ex.endpoint_tol)
        _write_json(out / "pwl.json", {"pwl": pw.to_json(), "verdict": verdict.to_json()})
        files.append("pwl.json")

        gibbs_json = None
        if cfg.gibbs.enabled:
            state = _solve_gibbs(cfg, ds)
            fe = free_energy_of_gibbs(state, ds)
            gibbs_json = {"state": state.to_json(), "free_energy": fe.to_json(),
                          "lower_bound": free_energy_lower_bound(state.lam, state.beta),
                          "sup_gap": float(np.max(np.abs(state.predict(xs) - ys)))}
            _write_json(out / "gibbs.json", gibbs_json)
            state.trace_csv(out / "gibbs_trace.csv")
            files += ["gibbs.json", "gibbs_trace.csv"]

        note = STANDIN_LABEL if cfg.label == STANDIN_LABEL else cfg.label
        _plot(out / "plot.svg", cfg.name, ds, xs, ys, cluster, pw.knots, note)
        files.append("plot.svg")

        report = ExperimentReport(
            config=cfg.to_json(), risk=empirical_risk(ens, ds), residuals=r.tolist(),
            averaged_residuals=None if r_avg is None else r_avg.tolist(),
            cluster=None if cluster is None else cluster.to_json(), pwl=pw.to_json(),
            verdict=verdict.to_json(), pwl_gap=pwl_distance(pw, lambda x: predict(ens, x)),
            free_energy=free_energy_of_ensemble(ens, ds, cfg.train.lam).to_json(), gibbs=gibbs_json)
    except Exception as exc:
        _write_json(out / "report.json", {"config": cfg.to_json(), "error": f"{type(exc).__name__}: {exc}",
                                          "files": {f: _sha(out / f) for f in files}})
        raise
    report.files = {f: _sha(out / f) for f in files}
    _write_json(out / "report.json", report.to_json())
    return report


def _solve_gibbs(cfg: ExperimentConfig, ds: Dataset) -> GibbsState:
    g = cfg.gibbs
    beta = g.beta
    if beta is None:
        if cfg.train.beta_inv <= 0:
            raise ValidationError("gibbs.beta is required when training is noiseless")
        beta = 2.0 / cfg.train.beta_inv
    return solve_fixed_point(ds, cfg.activation, cfg.train.lam, beta, eta=g.eta, tol=g.tol,
                             max_iters=g.max_iters)


# ---------------------------------------------------------------------------
# two-point counterexample
# ---------------------------------------------------------------------------


def counterexample_dataset() -> Dataset:
    return Dataset.from_points(COUNTEREXAMPLE_POINTS)


def counterexample_target(x):
    return COUNTEREXAMPLE_SLOPE * np.abs(np.asarray(x, dtype=np.float64))


@dataclass
class NoiselessReport:
    lam: float
    risk: float  # of the two-atom ensemble
    second_moment: float  # oracle value, by direct summation
    stated_second_moment: float  # the value used in the original argument
    argmin: float
    minimum: float
    argmin_ok: bool
    minimum_ok: bool
    free_energy_two_atom: float
    zero_case_bound: float  # lower bound when the linear candidate passes through the origin
    noiseless_chain: tuple  # (2 lam - lam^2 / 2, 3 lam / 2, F(two-atom))
    noiseless_ok: bool
    lowtemp_chain: tuple  # (lam - lam^2 / 8, 7 lam / 8, F(two-atom))
    lowtemp_ok: bool

    @property
    def passed(self) -> bool:
        return self.risk == 0.0 and self.argmin_ok and self.minimum_ok and self.noiseless_ok and self.lowtemp_ok

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def verify_counterexample_noiseless(lam: float, grid_step: float = 1e-4) -> NoiselessReport:
    """Analytic checks on the two-point dataset for the noiseless free energy."""
    lam = float(lam)
    if not 0.0 < lam <= 1.0:
        raise LambdaOutOfRange(f"lambda={lam} must lie in (0, 1]")
    ds = counterexample_dataset()
    ens = build_two_atom(ds)
    risk = empirical_risk(ens, ds)
    M = ens.second_moment()
    ybar = ds.y[1]

    n = int(round(4.0 / grid_step))
    eps = -3.0 + grid_step * np.arange(n + 1)
    g = 0.5 * eps**2 + lam * np.abs(2.0 + eps)
    k = int(np.argmin(g))
    argmin, minimum = float(eps[k]), float(g[k])

    F_star = 0.5 * lam * M
    zero_case = ybar**2 / 2.0
    lo1, mid1 = 2.0 * lam - lam**2 / 2.0, 1.5 * lam
    lo2, mid2 = lam - lam**2 / 8.0, 7.0 * lam / 8.0
    return NoiselessReport(
        lam=lam, risk=risk, second_moment=M, stated_second_moment=STATED_SECOND_MOMENT,
        argmin=argmin, minimum=minimum,
        argmin_ok=abs(argmin + lam) <= grid_step, minimum_ok=abs(minimum - lo1) <= 1e-6,
        free_energy_two_atom=F_star, zero_case_bound=zero_case,
        noiseless_chain=(lo1, mid1, F_star),
        noiseless_ok=bool(zero_case > F_star and lo1 >= mid1 > F_star),
        lowtemp_chain=(lo2, mid2, F_star), lowtemp_ok=bool(lo2 >= mid2 > F_star))


@dataclass
class LowTempReport:
    betas: list
    sup_gap: list
    abs_residual: list  # |R| of each mixture, R the empirical risk
    second_moment: list
    second_moment_se: list
    oracle_second_moment: float
    gap_decreasing: bool
    residual_decreasing: bool
    moment_ok: bool

    @property
    def passed(self) -> bool:
        return self.gap_decreasing and self.residual_decreasing and self.moment_ok

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def verify_counterexample_lowtemp(betas, n_per: int = 20_000, seed: int = 0,
                                  grid_n: int = 2001) -> LowTempReport:
    """Gaussian mixtures of variance ``1/beta`` around the two atoms.

    Every beta reuses the same standard-normal draws, so the trend across the
    list is not masked by Monte-Carlo noise.
    """
    betas = [float(b) for b in betas]
    if not betas or any(b <= 0 for b in betas):
        raise ValidationError("betas must be positive")
    if any(b1 <= b0 for b0, b1 in zip(betas, betas[1:])):
        raise ValidationError("betas must be increasing")
    ds = counterexample_dataset()
    atoms = build_two_atom(ds)
    oracle_M = atoms.second_moment()
    xs = np.linspace(-10.0, 10.0, grid_n)
    target = counterexample_target(xs)
    gaps, res, moms, ses = [], [], [], []
    for beta in betas:
        ens = build_gaussian_mixture(atoms.thetas, 1.0 / beta, n_per, np.random.default_rng(seed))
        gaps.append(float(np.max(np.abs(predict(ens, xs) - target))))
        res.append(abs(empirical_risk(ens, ds)))
        sq = np.sum(ens.thetas**2, axis=1)
        moms.append(float(sq.mean()))
        ses.append(float(sq.std(ddof=1) / math.sqrt(sq.size)))
    # M of the mixture is oracle_M + 3 / beta exactly; the last entry must agree within 4 SE
    moment_ok = abs(moms[-1] - oracle_M - 3.0 / betas[-1]) <= 4.0 * ses[-1] and \
        abs(moms[-1] - oracle_M) <= 3.0 / betas[-1] + 4.0 * ses[-1]
    dec = lambda v: all(b < a for a, b in zip(v, v[1:]))  # noqa: E731
    return LowTempReport(betas, gaps, res, moms, ses, oracle_M, dec(gaps), dec(res), bool(moment_ok))


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------


@dataclass
class CurvatureProfile:
    x: np.ndarray
    curvature: np.ndarray
    inside: np.ndarray  # grid points within delta of the cluster set
    delta: float
    omega: list
    delta_estimate: np.ndarray | None = None  # ReLU-limit delta integral, gibbs states only

    @property
    def max_outside(self) -> float:
        m = ~self.inside
        return float(np.max(np.abs(self.curvature[m]))) if m.any() else 0.0

    @property
    def max_inside(self) -> float:
        return float(np.max(np.abs(self.curvature[self.inside]))) if self.inside.any() else 0.0

    def summary(self) -> dict:
        return {"delta": self.delta, "max_outside": self.max_outside, "max_inside": self.max_inside,
                "omega": [list(p) for p in self.omega]}

    def to_csv(self, path) -> None:
        cols, header = [self.x, self.curvature, self.inside.astype(float)], "x,curvature,inside"
        if self.delta_estimate is not None:
            cols.append(self.delta_estimate)
            header += ",delta_estimate"
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt="%.17g")


def curvature_profile(source, intervals: PredictionIntervals, grid_n: int = DEFAULT_GRID_N,
                      cluster: ClusterReport | None = None, delta: float = 0.1,
                      ds: Dataset | None = None, delta_points=None) -> CurvatureProfile:
    """|d^2 yhat / dx^2| on ``[-L, L]`` with the (delta-dilated) cluster set marked.

    ``source`` is a smooth-mode :class:`ParticleEnsemble` or a
    :class:`GibbsState`.  For a Gibbs state the cluster set defaults to the
    one built from its residuals (``ds`` is then required), and
    ``delta_points`` (grid indices or ``"all"``) selects where the ReLU-limit
    delta integral is evaluated for comparison.
    """
    xs = np.linspace(-intervals.L, intervals.L, int(grid_n))
    est = None
    if isinstance(source, ParticleEnsemble):
        if not source.spec.smooth:
            raise CurvatureUndefined(f"curvature undefined in {source.spec.mode.value} mode")
        curv = predict_derivatives(source, xs)[2]
    elif isinstance(source, GibbsState):
        if not source.spec.smooth:
            raise CurvatureUndefined(f"curvature undefined in {source.spec.mode.value} mode")
        curv = source.predict(xs, order=2)
        if cluster is None and ds is not None:
            cluster = cluster_report(source.r, ds, intervals, source.lam)
        if delta_points is not None and source.backend is Backend.QUADRATURE:
            idx = np.arange(xs.size) if isinstance(delta_points, str) else np.asarray(delta_points, dtype=int)
            est = np.full(xs.size, np.nan)
            est[idx] = source.engine.delta_curvature(source.r, xs[idx], source.log_z)
    else:
        raise ValidationError("source must be a ParticleEnsemble or a GibbsState")
    inside = cluster.contains(xs, delta) if cluster is not None else np.zeros(xs.size, dtype=bool)
    omega = cluster.omega() if cluster is not None else []
    return CurvatureProfile(xs, np.asarray(curv), inside, float(delta), omega, est)


# ---------------------------------------------------------------------------
# figure registry
# ---------------------------------------------------------------------------

# The figure datasets are plotted but not tabulated, so Figures 1, 6 and 7 use
# fixed stand-ins with mixed curvature.
STANDIN_DATASETS = {
    "fig1a": [(-3.0, 3.0), (-2.0, 2.0), (2.0, 2.0), (3.0, 3.0)],
    "fig1b": [(-4.0, 0.5), (-2.5, 1.5), (-1.0, 0.2), (0.5, 0.8), (2.0, -0.5), (3.5, 0.6)],
    "fig1c": [(-3.5, 1.2), (-2.0, -0.3), (-1.0, 0.9), (0.5, 0.1), (1.5, 1.3), (3.0, 0.4)],
    "fig6": [(-4.0, 1.0), (-3.0, 0.2), (-1.5, 0.6), (0.0, -0.4), (1.0, 0.3), (2.5, 1.2), (4.0, 0.8), (5.0, 1.5)],
    "fig7": [(-4.0, -1.0), (-3.0, 0.5), (-2.0, 0.8), (-1.0, 0.1), (0.0, -0.6), (1.0, -0.2), (2.0, 0.9),
             (3.0, 1.1), (4.0, 0.4)],
}

# noiseless protocol shared by the stand-in figures: small symmetric init,
# constant step, long run
_NOISELESS_INIT = {"name": "gaussian", "std": [0.1, 0.1, 0.1]}
_EPOCHS = 200_000
_EPS = 1e-3

# (dataset key, beta_inv, lambda, N)
_FIGURES = {
    "fig1a": ("fig1a", 0.0, 0.0, 1000),
    "fig1b": ("fig1b", 0.0, 0.0, 1000),
    "fig1c": ("fig1c", 0.0, 0.05, 1000),
    "fig6a": ("fig6", 5e-3, 0.0, 500),
    "fig6b": ("fig6", 1e-4, 0.0, 500),
    "fig6c": ("fig6", 0.0, 0.0, 500),
    "fig7a": ("fig7", 1e-2, 3e-3, 500),
    "fig7b": ("fig7", 1e-3, 0.0, 500),
    "fig7c": ("fig7", 0.0, 3e-3, 500),
    "fig7d": ("fig7", 0.0, 0.0, 500),
}
FIGURE_IDS = tuple(sorted(list(_FIGURES) + ["fig5b"]))


def figure_config(figure_id: str, seed: int = 0, scale: float = 1.0) -> ExperimentConfig:
    """Training config for a registry figure; ``scale`` shrinks the run length."""
    if figure_id == "fig5b":
        ds = counterexample_dataset()
        steps = max(1, int(round(100_000 * scale)))
        train_cfg = TrainConfig(lam=0.0, beta_inv=0.0, eps=_EPS, steps=steps, seed=seed,
                                init={"name": "gaussian", "std": [0.1, 1.0, 0.01]}, record_every=1000)
        return ExperimentConfig("fig5b", {"points": ds.points}, train_cfg, ActivationSpec.relu(), N=500,
                                label="two-point counterexample")
    if figure_id not in _FIGURES:
        raise UnknownFigure(f"unknown figure {figure_id!r}; choose from {', '.join(FIGURE_IDS)}")
    key, beta_inv, lam, N = _FIGURES[figure_id]
    pts = STANDIN_DATASETS[key]
    steps = max(1, int(round(_EPOCHS * len(pts) * scale)))
    init = _NOISELESS_INIT if beta_inv == 0 else {"name": "gaussian", "std": 0.5}
    train_cfg = TrainConfig(lam=lam, beta_inv=beta_inv, eps=_EPS, steps=steps, seed=seed, init=init,
                            record_every=1000)
    return ExperimentConfig(figure_id, {"points": [list(p) for p in pts]}, train_cfg, ActivationSpec.relu(),
                            N=N, label=STANDIN_LABEL)


def noiseless_figures() -> list:
    """Registry entries trained at zero temperature."""
    return [f for f in FIGURE_IDS if f == "fig5b" or _FIGURES[f][1] == 0.0]


def reproduce(figure_id: str, out, seed: int = 0, scale: float = 1.0) -> ExperimentReport:
    """Run a registry figure and write its plot, data and report into ``out``."""
    cfg = figure_config(figure_id, seed, scale)
    report = run_experiment(cfg, out)
    if figure_id == "fig5b":
        # overlay the V-shaped target
        out = Path(out)
        ds = counterexample_dataset()
        data = np.loadtxt(out / "predictor.csv", delimiter=",", skiprows=1)
        xs = np.linspace(-10.0, 10.0, 2001)
        _plot(out / "plot.svg", "fig5b", ds, data[:, 0], data[:, 1], None, report.knots,
              "two-point counterexample", {"0.2|x|": (xs, counterexample_target(xs))})
        report.files["plot.svg"] = _sha(out / "plot.svg")
        _write_json(out / "report.json", report.to_json())
    return report


# ---------------------------------------------------------------------------
# curvature trend on the smooth fig6 stand-in
# ---------------------------------------------------------------------------

TREND_BETA_INVS = (5e-3, 1e-4, 2e-5)
TREND_SPEC = ActivationSpec(8.0, 10.0)
TREND_LAMBDA = 1e-3  # the cluster set needs lambda > 0


def trend_config(beta_inv: float, seed: int = 0, scale: float = 1.0) -> ExperimentConfig:
    """Smooth-activation run on the fig6 stand-in used for the curvature trend.

    A decaying step ``xi(t) = (1 + t / 100) ** -0.5`` and residuals averaged
    over the second half of the run keep the cluster set from tracking
    single-step noise.
    """
    steps = max(1, int(round(4_000_000 * scale)))
    train_cfg = TrainConfig(lam=TREND_LAMBDA, beta_inv=float(beta_inv), eps=3e-3, steps=steps, seed=seed,
                            xi={"name": "power", "t0": 100.0, "p": 0.5}, init={"name": "gaussian", "std": 0.5},
                            record_every=10_000)
    return ExperimentConfig(f"trend-{beta_inv:g}", {"points": [list(p) for p in STANDIN_DATASETS["fig6"]]},
                            train_cfg, TREND_SPEC, N=500, average_from=0.5, average_every=10,
                            extraction=ExtractionConfig(merge_gap_fraction=0.0), label=STANDIN_LABEL)


@dataclass
class TrendReport:
    beta_invs: list
    delta: float
    max_outside: list  # max |curvature| outside the delta-dilated cluster set, per beta_inv
    omega: list  # cluster set of the coldest noisy run
    knots: list  # extracted from the beta_inv = 0 run
    knot_distance_steps: list  # distance of each knot to omega, in grid steps
    grid_step: float
    decreasing: bool
    knots_ok: bool

    @property
    def passed(self) -> bool:
        return self.decreasing and self.knots_ok

    def to_json(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def curvature_trend(beta_invs=TREND_BETA_INVS, seed: int = 0, scale: float = 1.0, delta: float = 0.05,
                    out=None, max_steps: float = 5.0) -> TrendReport:
    """Curvature away from the cluster set across decreasing noise levels.

    Runs every ``beta_inv`` plus a noiseless run; knots of the noiseless run
    are compared with the cluster set of the coldest noisy run.
    """
    import tempfile

    beta_invs = [float(b) for b in beta_invs]
    if any(b <= 0 for b in beta_invs) or any(b1 >= b0 for b0, b1 in zip(beta_invs, beta_invs[1:])):
        raise ValidationError("beta_invs must be positive and strictly decreasing")
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(out) if out is not None else Path(tmp)
        maxes, cluster, grid_step = [], None, None
        for b in beta_invs + [0.0]:
            cfg = trend_config(b, seed, scale)
            d = root / cfg.name
            rep = run_experiment(cfg, d)
            ds = cfg.load_dataset()
            iv = make_intervals(ds, cfg.L)
            grid_step = 2.0 * iv.L / (cfg.extraction.grid_n - 1)
            if b == 0.0:
                knots = rep.knots
                break
            cluster = cluster_report(rep.averaged_residuals, ds, iv, cfg.train.lam)
            prof = curvature_profile(ParticleEnsemble.load(d / "ensemble.json"), iv, cfg.extraction.grid_n,
                                     cluster, delta)
            prof.to_csv(d / "curvature.csv")
            maxes.append(prof.max_outside)
    dist = (cluster.distance(knots) / grid_step).tolist() if knots else []
    report = TrendReport(beta_invs, float(delta), maxes, [list(p) for p in cluster.omega()], list(knots), dist,
                         grid_step, all(b < a for a, b in zip(maxes, maxes[1:])),
                         all(v <= max_steps for v in dist))
    if out is not None:
        _write_json(Path(out) / "trend.json", report.to_json())
    return report
