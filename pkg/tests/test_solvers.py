import json
import math

import numpy as np
import pytest

from conftest import exact_instance
from idgp.core import IdgpInstance
from idgp.errors import IdgpError, UnsupportedCombinationError
from idgp.formulations import PenaltyMerit, SquareFactoringMerit, build_stress_merit
from idgp.gen import backbone_pairs, random_feasible_instance
from idgp.measures import phi
from idgp.solvers import (
    SUPPORTED,
    Budget,
    LocalSolveConfig,
    MwuState,
    check_combination,
    local_descent,
    multistart,
    mwu,
    restart_rng,
    scaled_errors,
    solve,
    theta_sample,
    vns,
    weight_update,
)

TOY = IdgpInstance(2, 1, [(1, 2, 1, 1)])
COUNTED = Budget(time_limit=None, max_local=4)


# -- local descent ---------------------------------------------------------------


def test_two_point_toy_converges():
    res = local_descent(PenaltyMerit(TOY), np.array([[0.0], [2.0]]), LocalSolveConfig(time_limit=None))
    d = abs(res.x[1, 0] - res.x[0, 0])
    assert d == pytest.approx(1.0, abs=1e-6)
    assert res.converged


def test_valid_start_is_returned_unchanged(small_feasible):
    x = small_feasible.reference
    res = local_descent(PenaltyMerit(small_feasible), x)
    assert np.allclose(res.x, x - x.mean(axis=0), atol=1e-12)
    assert res.value <= 1e-20 and res.iterations == 0


def test_descent_contract(small_feasible, rng):
    x0 = rng.normal(scale=2.0, size=small_feasible.reference.shape)
    for merit, rounds in ((PenaltyMerit(small_feasible), 1), (SquareFactoringMerit(small_feasible), 5)):
        res = local_descent(merit, x0, LocalSolveConfig(time_limit=None))
        assert len(res.trace) == rounds
        for rnd in res.trace:
            assert all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(rnd, rnd[1:]))
        final = merit.with_mu(1e4) if merit.penalized else merit
        assert res.value <= final.value(merit.lift(x0))
    assert np.allclose(res.x.mean(axis=0), 0.0, atol=1e-12)


def test_non_finite_start_rejected(small_feasible):
    x = small_feasible.reference.copy()
    x[0, 0] = np.nan
    with pytest.raises(IdgpError):
        local_descent(PenaltyMerit(small_feasible), x)


def test_config_validation():
    with pytest.raises(IdgpError):
        LocalSolveConfig(max_iterations=0)
    with pytest.raises(IdgpError):
        Budget(time_limit=None, max_local=None)


# -- multistart and VNS -------------------------------------------------------------


def test_restart_streams_are_independent():
    a = restart_rng(1, 0).random(3)
    assert np.array_equal(a, restart_rng(1, 0).random(3))
    assert not np.array_equal(a, restart_rng(1, 1).random(3))


@pytest.mark.parametrize("heuristic", [multistart, vns])
def test_deterministic_under_seed(small_feasible, heuristic):
    a = heuristic(small_feasible, "idgp1", COUNTED, seed=3)
    b = heuristic(small_feasible, "idgp1", COUNTED, seed=3)
    da, db = a.to_dict(), b.to_dict()
    for key in ("cpu_seconds", "local_seconds", "heuristic_seconds"):
        da.pop(key), db.pop(key)
    assert da == db


@pytest.mark.parametrize("heuristic", [multistart, vns])
def test_incumbent_trace_monotone(heuristic):
    inst = random_feasible_instance(20, 3, 0.1, seed=4)
    report = heuristic(inst, "idgp3", Budget(time_limit=None, max_local=6), seed=0)
    assert all(b <= a for a, b in zip(report.trace, report.trace[1:]))
    assert report.phi <= report.psi
    assert report.phi == pytest.approx(phi(inst, report.realization))


def test_multistart_early_exit():
    report = multistart(TOY, "idgp1", Budget(time_limit=None, max_local=10), seed=0)
    assert report.local_solves == 1 and report.phi < 1e-6


def test_vns_toy():
    report = vns(TOY, "idgp1", Budget(time_limit=None, max_local=10), seed=0)
    assert report.phi <= 1e-6
    assert report.iterations <= 1


def test_time_budget_respected():
    report = multistart(random_feasible_instance(30, 3, 0.1, seed=9), "idgp1", Budget(time_limit=0.5), seed=0)
    assert report.cpu_seconds < 5.0
    assert report.local_seconds <= report.cpu_seconds
    assert report.heuristic_seconds >= 0.0


def test_stress_zero_iff_phi_zero():
    rng = np.random.default_rng(2)
    x = np.cumsum(rng.normal(size=(8, 3)), axis=0)
    inst = exact_instance(x, backbone_pairs(8, 3))
    merit = build_stress_merit(inst)
    for budget in (Budget(time_limit=None, max_local=1), Budget(time_limit=None, max_local=20)):
        report = multistart(inst, "stress", budget, seed=1)
        value = merit.value(report.realization.ravel())
        assert (value == 0.0) == (report.phi == 0.0)
        assert value <= 1e-8 or report.phi > 0


# -- reports -----------------------------------------------------------------------


def test_report_serialization(small_feasible):
    report = multistart(small_feasible, "idgp1", COUNTED, seed=0)
    data = json.loads(report.to_json())
    assert data["solver"] == "ms" and len(data["realization"]) == small_feasible.n
    row = report.to_csv("inst").strip().split(",")
    assert row[:4] == ["inst", "ms", "idgp1", "0"]
    assert float(row[4]) == report.phi


# -- combination matrix ------------------------------------------------------------


def test_supported_matrix():
    assert SUPPORTED["mwu"] == {"imwu"}
    check_combination("ms", "idgp3")
    with pytest.raises(UnsupportedCombinationError):
        check_combination("mwu", "idgp3")
    with pytest.raises(UnsupportedCombinationError):
        check_combination("ms", "imwu")
    with pytest.raises(UnsupportedCombinationError):
        check_combination("bb", "idgp1")


@pytest.mark.parametrize("formulation", sorted(SUPPORTED["ms"]))
def test_every_formulation_runs(formulation, small_feasible):
    report = solve(small_feasible, "ms", formulation, budget=Budget(time_limit=None, max_local=1))
    assert np.isfinite(report.phi) and report.phi <= report.psi


# -- MWU pieces ----------------------------------------------------------------------


def test_weight_update():
    w = np.ones(3)
    assert np.allclose(weight_update(w, np.array([1.0, 0.0, 0.5]), 0.5), [0.5, 1.0, 0.75])
    for _ in range(6):
        w = weight_update(w, np.ones(3), 0.5)
    assert np.allclose(w, 2.0**-6)


def test_scaled_errors(small_feasible, rng):
    assert np.all(scaled_errors(small_feasible, small_feasible.reference) == 0.0)
    x = rng.normal(size=small_feasible.reference.shape)
    psi = scaled_errors(small_feasible, x)
    assert psi.max() == 1.0 and psi.min() >= 0.0


@pytest.mark.parametrize("rule", ["figure", "text"])
def test_theta_sample_monte_carlo(rule):
    inst = IdgpInstance(2, 2, [(1, 2, 1, 1)])
    x = np.array([[0.0, 0.0], [2.0, -1.0]])
    omega, psi = np.array([0.8]), np.array([0.5])
    a = (omega * (psi if rule == "figure" else 1.0))[:, None] * (x[0] - x[1])
    rng = np.random.default_rng(0)
    draws = np.array([theta_sample(inst, x, omega, psi, rule, rng) for _ in range(20000)])[:, 0, :]
    lo, hi = np.minimum(0, a[0]), np.maximum(0, a[0])
    assert np.all(draws >= lo) and np.all(draws <= hi)
    sigma = np.abs(a[0]) / math.sqrt(12) / math.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - a[0] / 2) <= 3 * sigma + 1e-15)
    zero = theta_sample(inst, x, omega, np.zeros(1), "figure", rng)
    assert np.all(zero == 0)
    with pytest.raises(IdgpError):
        theta_sample(inst, x, omega, psi, "other", rng)


def test_mwu_state_bound():
    state = MwuState(omega=np.ones(2), eta=0.5, T=1)
    state.psi_trace = [np.array([1.0, 0.0])]
    state.Omega_trace = [0.5]
    assert state.regret_bound() == pytest.approx(math.log(2) / 0.5)
    assert state.bound_holds()


def test_mwu_contract():
    inst = random_feasible_instance(16, 3, 0.1, seed=5)
    report, state = mwu(inst, eta=0.5, T=8, seed=2)
    assert state.bound_holds()
    for psi, rho in zip(state.psi_trace, state.rho_trace):
        assert np.all((0 <= psi) & (psi <= 1))
        assert np.all(rho >= 0) and rho.sum() == pytest.approx(1.0, abs=1e-12)
        if not state.solved:
            assert psi.max() == 1.0
    assert np.all(state.omega > 0)
    assert all(b <= a for a, b in zip(report.trace, report.trace[1:]))
    assert report.formulation == "imwu" and report.phi <= report.psi


def test_mwu_deterministic():
    inst = random_feasible_instance(14, 2, 0.1, seed=6)
    budget = Budget(time_limit=None, max_local=10**6)
    a, _ = mwu(inst, T=4, seed=1, budget=budget)
    b, _ = mwu(inst, T=4, seed=1, budget=budget)
    assert a.phi == b.phi and np.array_equal(a.realization, b.realization)


def test_mwu_solved_by_initial_descent():
    report, state = mwu(TOY, T=5)
    assert report.phi < 1e-6 and report.iterations == 0 and state.solved


def test_mwu_parameter_checks():
    with pytest.raises(IdgpError):
        mwu(TOY, eta=0.7)
    with pytest.raises(IdgpError):
        mwu(TOY, T=0)
