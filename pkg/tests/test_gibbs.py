import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfknots.activation import ActivationSpec, neuron_output
from mfknots.data import Dataset
from mfknots.errors import ChainNotMixed, NotConverged, ValidationError
from mfknots.gibbs import (Backend, GibbsState, MalaConfig, MalaSampler, ResidualVector, build_quadrature,
                           free_energy_lower_bound, free_energy_of_density, free_energy_of_ensemble,
                           free_energy_of_gibbs, gibbs_expectations, make_state, potential,
                           solve_fixed_point, split_rhat)
from mfknots.particle import ParticleEnsemble, build_sawtooth, build_two_atom

SPEC = ActivationSpec(4.0, 10.0)
DS = Dataset.from_points([(-1.0, 0.5), (0.5, -0.2), (1.5, 0.8)])
LAM, BETA = 0.5, 4.0


def test_potential_examples(rng):
    th = rng.normal(size=3)
    assert potential(th, np.zeros(3), DS, SPEC, LAM) == pytest.approx(0.5 * LAM * th @ th, rel=1e-15)
    assert potential(np.zeros(3), rng.normal(size=3), DS, SPEC, LAM) == 0.0
    with pytest.raises(ValidationError):
        potential(th, np.zeros(2), DS, SPEC, LAM)


@given(st.integers(0, 2**32 - 1))
def test_potential_direct_sum(seed):
    rng = np.random.default_rng(seed)
    th, r = rng.normal(size=3) * 2, rng.normal(size=3)
    expect = sum(ri * neuron_output(x, th, SPEC) for x, ri in zip(DS.x, r)) + 0.5 * LAM * th @ th
    assert potential(th, r, DS, SPEC, LAM) == pytest.approx(expect, rel=1e-13, abs=1e-14)


def test_residual_vector_risk():
    rv = ResidualVector([0.1, -0.2, 0.3])
    assert rv.risk == pytest.approx(3 * (0.01 + 0.04 + 0.09), rel=1e-15)
    assert len(rv) == 3


@pytest.mark.parametrize("lam,beta", [(0.0, 1.0), (0.1, math.inf), (-1.0, 2.0)])
def test_regime_rejected(lam, beta):
    with pytest.raises(ValidationError):
        make_state(DS, SPEC, lam, beta, np.zeros(3))


# --- r = 0 closed forms ---------------------------------------------------


@pytest.mark.parametrize("backend", [Backend.QUADRATURE, Backend.MALA])
def test_gaussian_closed_forms(backend):
    st_ = make_state(DS, SPEC, LAM, BETA, np.zeros(3), backend=backend, mala=MalaConfig(steps=2000))
    ex = gibbs_expectations(st_, DS)
    bl = BETA * LAM
    assert ex.log_z == pytest.approx(1.5 * math.log(2 * math.pi / bl), abs=1e-6)
    assert ex.second_moment == pytest.approx(3 / bl, abs=1e-6)
    fe = free_energy_of_gibbs(st_, DS)
    assert fe.entropy == pytest.approx(1.5 * math.log(2 * math.pi * math.e / bl), abs=1e-6)


def test_gaussian_predictions_monte_carlo(rng):
    st_ = make_state(DS, SPEC, LAM, BETA, np.zeros(3))
    th = rng.normal(size=(200_000, 3)) / math.sqrt(BETA * LAM)
    for x, p in zip(DS.x, gibbs_expectations(st_, DS).predictions):
        draws = neuron_output(x, th.T, SPEC)
        assert abs(p - draws.mean()) <= 4 * draws.std() / math.sqrt(draws.size)


def test_second_moment_vanishes_at_large_beta_lambda():
    ms = [gibbs_expectations(make_state(DS, SPEC, 1.0, b, np.zeros(3)), DS).second_moment for b in (10, 100, 1000)]
    assert ms[0] > ms[1] > ms[2]
    assert ms[2] == pytest.approx(3e-3, rel=1e-6)


def test_log_z_jensen_lower_bound(rng):
    # log Z >= log Z_gauss - beta E_gauss[sum r_i sigma(x_i, .)]
    r = np.array([0.05, -0.1, 0.08])
    for beta in (2.0, 8.0, 32.0):
        st_ = make_state(DS, SPEC, LAM, beta, r)
        th = rng.normal(size=(200_000, 3)) / math.sqrt(beta * LAM)
        U = sum(ri * neuron_output(x, th.T, SPEC) for x, ri in zip(DS.x, r))
        bound = 1.5 * math.log(2 * math.pi / (beta * LAM)) - beta * U.mean()
        slack = 4 * beta * U.std() / math.sqrt(U.size)
        assert st_.log_z >= bound - slack


def test_log_z_upper_bound_with_sup_constant():
    r = np.array([0.05, -0.1, 0.08])
    C = float(np.sum(np.abs(r))) * 2 * SPEC.m**3  # |sum r_i sigma| <= C in truncated modes
    for beta in (1.0, 4.0, 16.0):
        lz = make_state(DS, SPEC, LAM, beta, r).log_z
        assert lz - (beta * C + 1 + 3 * math.log(8 * math.pi / (beta * LAM))) <= 0


# --- fixed point ----------------------------------------------------------


def test_zero_labels_give_zero_fixed_point():
    ds = Dataset.from_points([(-1.0, 0.0), (1.0, 0.0)])
    st_ = solve_fixed_point(ds, SPEC, LAM, BETA)
    assert np.max(np.abs(st_.r)) <= 1e-6
    assert st_.gap <= 1e-6


@pytest.fixture(scope="module")
def solved():
    return solve_fixed_point(DS, SPEC, LAM, BETA, tol=1e-8)


def test_fixed_point_self_consistent(solved):
    ex = gibbs_expectations(solved, DS)
    r_new = -(DS.ys - ex.predictions) / DS.M
    assert np.max(np.abs(r_new - solved.r)) <= 1e-8
    assert solved.residuals.risk <= float(np.mean(DS.ys**2))


@pytest.mark.parametrize("eta,method", [(1.0, "newton"), (0.3, "newton"), (0.5, "picard")])
def test_fixed_point_unique_across_damping(solved, eta, method):
    other = solve_fixed_point(DS, SPEC, LAM, BETA, eta=eta, method=method, tol=1e-8)
    assert np.max(np.abs(other.r - solved.r)) <= 2e-8


def test_fixed_point_multistart(solved):
    other = solve_fixed_point(DS, SPEC, LAM, BETA, tol=1e-8, r0=[0.3, -0.3, 0.2])
    assert np.max(np.abs(other.r - solved.r)) <= 2e-8


def test_not_converged_carries_trajectory():
    with pytest.raises(NotConverged) as err:
        solve_fixed_point(DS, SPEC, LAM, BETA, max_iters=1, method="picard", eta=0.1)
    assert len(err.value.trajectory) == 1


def test_bad_damping():
    with pytest.raises(ValidationError):
        solve_fixed_point(DS, SPEC, LAM, BETA, eta=0.0)


def test_trace_csv(solved, tmp_path):
    solved.trace_csv(tmp_path / "t.csv")
    text = (tmp_path / "t.csv").read_text()
    assert text.startswith("iter,residual_gap,risk")


def test_state_json_round_trip(solved):
    back = GibbsState.from_json(solved.to_json(), DS)
    np.testing.assert_array_equal(back.r, solved.r)
    xs = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(back.predict(xs), solved.predict(xs), rtol=1e-8, atol=1e-10)


# --- free energy ----------------------------------------------------------


def test_free_energy_combination(solved):
    fe = free_energy_of_gibbs(solved, DS)
    assert fe.free_energy == pytest.approx(
        0.5 * fe.risk + 0.5 * LAM * fe.second_moment - fe.entropy / BETA, abs=1e-10)
    assert fe.free_energy >= free_energy_lower_bound(LAM, BETA)


def test_fixed_point_beats_gaussian_reference(solved):
    ref = make_state(DS, SPEC, LAM, BETA, np.zeros(3))
    assert free_energy_of_density(solved, DS).free_energy <= free_energy_of_density(ref, DS).free_energy


def test_free_energy_of_ensembles():
    counter = Dataset((-10.0, 10.0), (2.0, 2.0))
    fe = free_energy_of_ensemble(build_two_atom(counter), counter, 0.1)
    assert fe.risk == 0.0 and fe.second_moment == pytest.approx(0.8)
    assert fe.entropy is None and fe.free_energy is None
    assert free_energy_of_ensemble(build_sawtooth(DS, 0.2), DS, 0.1).risk <= 1e-10
    zero = free_energy_of_ensemble(ParticleEnsemble(np.zeros((4, 3))), DS, 0.1)
    assert zero.risk == pytest.approx(float(np.mean(DS.ys**2)))
    assert zero.second_moment == 0.0


# --- backends -------------------------------------------------------------


def test_backends_agree():
    r = np.array([0.06, -0.04, 0.1])
    q = make_state(DS, SPEC, LAM, BETA, r)
    m = make_state(DS, SPEC, LAM, BETA, r, backend=Backend.MALA, mala=MalaConfig(steps=6000, seed=3))
    eq, em = gibbs_expectations(q, DS), gibbs_expectations(m, DS)
    err = 3 * (eq.errors["predictions"] + em.errors["predictions"])
    assert np.all(np.abs(eq.predictions - em.predictions) <= err)
    assert abs(eq.log_z - em.log_z) <= 3 * (eq.errors["log_z"] + em.errors["log_z"])
    assert abs(eq.second_moment - em.second_moment) <= 3 * (eq.errors["second_moment"] + em.errors["second_moment"])


def test_quadrature_refinement_reports_small_error():
    q, err = build_quadrature(DS, SPEC, LAM, BETA, np.array([0.06, -0.04, 0.1]), tol=1e-9)
    assert err <= 1e-9


def test_split_rhat(rng):
    iid = rng.normal(size=(4, 4000))
    assert split_rhat(iid) < 1.01
    stuck = iid + np.arange(4)[:, None] * 3.0
    assert split_rhat(stuck) > 1.05


def test_unmixed_chain_detected(monkeypatch):
    # the gate must fire whenever the diagnostic exceeds the threshold
    import mfknots.gibbs as gibbs_mod
    monkeypatch.setattr(gibbs_mod, "split_rhat", lambda draws: 1.5)
    with pytest.raises(ChainNotMixed):
        MalaSampler(DS, SPEC, LAM, BETA, MalaConfig(chains=2, steps=40, rungs=2)).expectations(
            np.array([0.3, -0.3, 0.3]))
