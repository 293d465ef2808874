import json

import numpy as np
import pytest

from mfknots import cli
from mfknots.activation import ActivationSpec
from mfknots.clusterset import cluster_report
from mfknots.data import Dataset, make_intervals
from mfknots.errors import CurvatureUndefined, LambdaOutOfRange, UnknownFigure, ValidationError
from mfknots.gibbs import solve_fixed_point
from mfknots.harness import (FIGURE_IDS, STANDIN_LABEL, ExperimentConfig, ExtractionConfig, GibbsOptions,
                             curvature_profile, figure_config, load_config, noiseless_figures, reproduce,
                             run_experiment, trend_config, verify_counterexample_lowtemp,
                             verify_counterexample_noiseless)
from mfknots.particle import ParticleEnsemble, TrainConfig, build_two_atom

POINTS = [[-1.0, 0.5], [0.5, -0.2], [1.5, 0.8]]


def small_config(**train_kw):
    kw = dict(lam=0.01, beta_inv=1e-4, eps=1e-3, steps=3000, seed=3, record_every=500)
    kw.update(train_kw)
    return ExperimentConfig("small", {"points": POINTS}, TrainConfig(**kw), ActivationSpec(4.0, 10.0), N=50,
                            extraction=ExtractionConfig(grid_n=801))


def write_config(path, cfg):
    path.write_text(json.dumps(cfg.to_json()))
    return str(path)


def test_config_round_trip():
    cfg = small_config()
    assert ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg


def test_config_rejects_unknown_and_missing_keys(tmp_path):
    obj = small_config().to_json()
    with pytest.raises(ValidationError):
        ExperimentConfig.from_json({**obj, "typo": 1})
    with pytest.raises(ValidationError):
        ExperimentConfig.from_json({"name": "x"})
    with pytest.raises(ValidationError):
        ExperimentConfig.from_json({**obj, "train": {"lr": 1}})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ValidationError):
        load_config(p)


def test_with_seed_copies():
    cfg = small_config()
    other = cfg.with_seed(11)
    assert other.train.seed == 11 and cfg.train.seed == 3


def test_dataset_from_file(tmp_path):
    (tmp_path / "d.csv").write_text("x,y\n" + "\n".join(f"{x},{y}" for x, y in POINTS))
    cfg = ExperimentConfig("f", {"file": "d.csv"})
    assert cfg.load_dataset(tmp_path).M == 3


def test_run_experiment_writes_artifacts(tmp_path):
    rep = run_experiment(small_config(), tmp_path / "a")
    expected = {"config.json", "ensemble.json", "trace.csv", "predictor.csv", "cluster.json", "pwl.json",
                "plot.svg"}
    assert set(rep.files) == expected
    for name in expected:
        assert (tmp_path / "a" / name).exists()
    saved = json.loads((tmp_path / "a" / "report.json").read_text())
    assert saved["files"] == rep.files
    header = (tmp_path / "a" / "predictor.csv").read_text().splitlines()[0]
    assert header == "x,y,slope,curvature"
    assert (tmp_path / "a" / "plot.svg").read_text().startswith("<svg")


def test_run_is_deterministic(tmp_path):
    a = run_experiment(small_config(), tmp_path / "a")
    b = run_experiment(small_config(), tmp_path / "b")
    assert a.files == b.files
    assert (tmp_path / "a" / "predictor.csv").read_bytes() == (tmp_path / "b" / "predictor.csv").read_bytes()
    c = run_experiment(small_config(seed=4), tmp_path / "c")
    assert c.files["ensemble.json"] != a.files["ensemble.json"]


def test_no_cluster_without_ridge(tmp_path):
    rep = run_experiment(small_config(lam=0.0, beta_inv=0.0), tmp_path)
    assert rep.cluster is None
    assert not (tmp_path / "cluster.json").exists()
    assert "curvature" in (tmp_path / "predictor.csv").read_text().splitlines()[0]


def test_failure_keeps_partial_artifacts(tmp_path):
    cfg = small_config(beta_inv=0.0)
    cfg.gibbs = GibbsOptions(enabled=True)  # no beta and noiseless training
    with pytest.raises(ValidationError):
        run_experiment(cfg, tmp_path)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert "error" in rep
    assert "ensemble.json" in rep["files"] and "plot.svg" not in rep["files"]


def test_time_averaged_residuals_reported(tmp_path):
    cfg = small_config()
    cfg.average_from = 0.5
    rep = run_experiment(cfg, tmp_path)
    assert rep.averaged_residuals is not None and len(rep.averaged_residuals) == 3


# ---------------------------------------------------------------------------
# counterexample


def test_noiseless_counterexample_values():
    rep = verify_counterexample_noiseless(0.5)
    assert rep.passed
    assert rep.risk == 0.0
    assert rep.second_moment == pytest.approx(0.8)
    assert rep.argmin == pytest.approx(-0.5, abs=1e-4)
    assert rep.minimum == pytest.approx(2 * 0.5 - 0.125, abs=1e-6)
    assert rep.zero_case_bound == 2.0
    assert rep.free_energy_two_atom == pytest.approx(0.2)


@pytest.mark.parametrize("lam", [0.0, -0.1, 1.5])
def test_noiseless_counterexample_lambda_range(lam):
    with pytest.raises(LambdaOutOfRange):
        verify_counterexample_noiseless(lam)


def test_lowtemp_trend():
    rep = verify_counterexample_lowtemp([1e2, 1e3, 1e4], n_per=4000)
    assert rep.passed
    assert rep.oracle_second_moment == pytest.approx(0.8)
    with pytest.raises(ValidationError):
        verify_counterexample_lowtemp([1e3, 1e2])


# ---------------------------------------------------------------------------
# curvature


def test_curvature_undefined_for_relu():
    ds = Dataset((-10.0, 10.0), (2.0, 2.0))
    with pytest.raises(CurvatureUndefined):
        curvature_profile(build_two_atom(ds), make_intervals(ds))
    with pytest.raises(ValidationError):
        curvature_profile("nope", make_intervals(ds))


def test_curvature_profile_of_smooth_ensemble(tmp_path):
    ds = Dataset.from_points(POINTS)
    iv = make_intervals(ds)
    ens = ParticleEnsemble(np.random.default_rng(0).normal(size=(40, 3)), ActivationSpec(4.0, 10.0))
    cluster = cluster_report([0.05, -0.1, 0.08], ds, iv, 0.01)
    prof = curvature_profile(ens, iv, 501, cluster, delta=0.1)
    assert prof.inside.any()
    assert prof.max_outside >= 0 and prof.max_inside >= 0
    assert max(prof.max_inside, prof.max_outside) == pytest.approx(np.max(np.abs(prof.curvature)))
    prof.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().startswith("x,curvature,inside")


@pytest.fixture(scope="module")
def gibbs_state():
    ds = Dataset.from_points(POINTS)
    return ds, solve_fixed_point(ds, ActivationSpec(4.0, 10.0), 0.5, 4.0)


def test_zero_residual_gibbs_state_has_flat_curvature():
    ds = Dataset.from_points(POINTS)
    state = solve_fixed_point(Dataset(ds.x, (0.0, 0.0, 0.0)), ActivationSpec(4.0, 10.0), 0.5, 4.0)
    prof = curvature_profile(state, make_intervals(ds), 201, ds=ds)
    assert np.max(np.abs(prof.curvature)) < 1e-8


def test_delta_integral_matches_curvature(gibbs_state):
    ds, state = gibbs_state
    iv = make_intervals(ds)
    idx = np.arange(0, 401, 20)
    prof = curvature_profile(state, iv, 401, ds=ds, delta_points=idx)
    est = prof.delta_estimate[idx]
    slack = 1.0 / (state.spec.m * state.lam)
    assert np.all(np.abs(prof.curvature[idx] - est) <= 0.1 * np.abs(est) + slack)
    assert np.all(np.isnan(np.delete(prof.delta_estimate, idx)))


# ---------------------------------------------------------------------------
# registry


def test_registry_ids():
    assert set(FIGURE_IDS) == {"fig1a", "fig1b", "fig1c", "fig5b", "fig6a", "fig6b", "fig6c",
                               "fig7a", "fig7b", "fig7c", "fig7d"}
    assert set(noiseless_figures()) == {"fig1a", "fig1b", "fig1c", "fig5b", "fig6c", "fig7c", "fig7d"}
    with pytest.raises(UnknownFigure):
        figure_config("fig2")


def test_standin_figures_are_labelled():
    for fid in FIGURE_IDS:
        cfg = figure_config(fid, scale=1e-3)
        assert not cfg.activation.smooth
        if fid != "fig5b":
            assert cfg.label == STANDIN_LABEL


def test_reproduce_small_scale(tmp_path):
    rep = reproduce("fig5b", tmp_path, scale=0.01)
    svg = (tmp_path / "plot.svg").read_text()
    assert "0.2|x|" in svg
    assert json.loads((tmp_path / "report.json").read_text())["files"]["plot.svg"] == rep.files["plot.svg"]


def test_trend_config():
    cfg = trend_config(1e-4, scale=0.5)
    assert cfg.activation.smooth and cfg.train.lam > 0
    assert cfg.train.steps == 2_000_000 and cfg.average_from == 0.5


# ---------------------------------------------------------------------------
# command line


def test_cli_run_and_knots(tmp_path, capsys):
    cfg_path = write_config(tmp_path / "cfg.json", small_config())
    assert cli.main(["run", "--config", cfg_path, "--out", str(tmp_path / "run")]) == 0
    ens = str(tmp_path / "run" / "ensemble.json")
    assert cli.main(["knots", "--config", cfg_path, "--ensemble", ens, "--out", str(tmp_path / "k")]) == 0
    assert "knots [" in capsys.readouterr().out
    assert cli.main(["cluster", "--config", cfg_path, "--ensemble", ens, "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "cluster.csv").exists()
    assert cli.main(["free-energy", "--config", cfg_path, "--ensemble", ens, "--out", str(tmp_path / "f")]) == 0


def test_cli_train_seed_override(tmp_path):
    cfg_path = write_config(tmp_path / "cfg.json", small_config())
    assert cli.main(["train", "--config", cfg_path, "--out", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert cli.main(["train", "--config", cfg_path, "--out", str(tmp_path / "b"), "--seed", "1"]) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert json.loads((tmp_path / "a" / "train.json").read_text())["config"]["train"]["seed"] == 1


def test_cli_exit_codes(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x"}')
    assert cli.main(["run", "--config", str(bad)]) == 2
    # lambda = 0 has no cluster set
    cfg_path = write_config(tmp_path / "cfg.json", small_config(lam=0.0))
    assert cli.main(["cluster", "--config", cfg_path, "--out", str(tmp_path / "c")]) == 2
    # an unreachable tolerance is a numerical failure
    cfg = small_config()
    cfg.gibbs = GibbsOptions(enabled=True, beta=4.0, max_iters=1, tol=1e-14)
    cfg_path = write_config(tmp_path / "g.json", cfg)
    assert cli.main(["gibbs", "--config", cfg_path, "--out", str(tmp_path / "g")]) == 3
    with pytest.raises(SystemExit):
        cli.main(["reproduce", "--figure", "fig9"])


def test_cli_gibbs_then_cluster(tmp_path):
    cfg = small_config(lam=0.5)
    cfg.gibbs = GibbsOptions(enabled=True, beta=4.0)
    cfg_path = write_config(tmp_path / "cfg.json", cfg)
    assert cli.main(["gibbs", "--config", cfg_path, "--out", str(tmp_path)]) == 0
    state = str(tmp_path / "gibbs.json")
    assert cli.main(["cluster", "--config", cfg_path, "--gibbs-state", state, "--out", str(tmp_path)]) == 0
    assert cli.main(["free-energy", "--config", cfg_path, "--gibbs-state", state, "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "free_energy.json").read_text())
    assert rep["gibbs"]["free_energy"] >= rep["lower_bound"]


def test_cli_verify_counterexample(tmp_path, capsys):
    assert cli.main(["verify-counterexample", "--out", str(tmp_path), "--n-per", "2000"]) == 0
    assert json.loads((tmp_path / "counterexample.json").read_text())["passed"] is True
    assert cli.main(["verify-counterexample", "--out", str(tmp_path), "--lambdas", "2.0"]) == 2
