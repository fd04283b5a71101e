import math

import numpy as np
import pytest

from src.estimation import (CohortIntervals, EstimationConfig, MisspecOption, NuisanceSet, NuisanceSpec,
                            backward_solve, eic_value, estimate_alpha_fixed, fit_nuisances, target)
from src.estimation.tmle import eic_terms, solve_fluctuation
from src.models import InterventionSpec, Mark, Propensity, ScenarioConfig, SubjectPath, build_scenario
from src.simulation import forward_psi, sample_cohort
from src.utils import ConfigError


def test_fluctuation_solver_cases():
    eps, status = solve_fluctuation(2.0, 1.0)
    assert status == "closed_form" and eps == pytest.approx(math.log(2.0))
    assert solve_fluctuation(0.0, 0.0) == (None, "inert")
    assert solve_fluctuation(1.0, -1.0) == (None, "skipped")
    eps, status = solve_fluctuation(-1.0, -4.0)
    assert status == "closed_form" and eps == pytest.approx(math.log(0.25))


@pytest.fixture(scope="module")
def true_nuisances():
    scenario = build_scenario(ScenarioConfig(tau=3.0, models={
        "outcome_1": {"eta": 0.3, "beta_z": 0.5}, "ell": {"eta": 0.1}, "z": {"eta": 0.2, "beta_ell": 1.0},
        "censor": {"eta": 0.0}}))
    return NuisanceSet(models=scenario.models, propensity=Propensity.trivial())


@pytest.mark.parametrize("x", ["outcome_1", "z"])
@pytest.mark.parametrize("jumps", [
    [],
    [(0.7, Mark.ELL), (1.2, Mark.Z), (2.0, "outcome_1")],
    [(0.4, Mark.Z), (2.9, Mark.ELL)],
])
def test_uncensored_influence_curve_telescopes(true_nuisances, x, jumps):
    # without censoring at alpha = 1 the martingale terms sum to N^x(tau) - g_x(0)
    path = SubjectPath(id=0, l0=0.5, jumps=jumps, tau=3.0)
    components = eic_value(path, true_nuisances, InterventionSpec(), x, psi_ref=0.0, grid_size=2000)
    assert components.total == pytest.approx(path.count(x), abs=1e-5)
    assert components.total == pytest.approx(
        components.outcome + components.ell + components.z + components.baseline, abs=1e-12)


def test_influence_curve_has_mean_zero_at_the_truth(example2):
    intervention = InterventionSpec(arm=1, alpha=0.5)
    cohort = sample_cohort(example2, None, 2000, seed=41)
    data = CohortIntervals.from_cohort(cohort)
    truth = NuisanceSet(models=example2.models, propensity=example2.propensity)
    # no L0 effects in this scenario, so one table row serves every subject
    table = backward_solve(truth.models, intervention, example2.tau, 400, [1.0], [0.5])
    psi = forward_psi(example2, intervention)["outcome_1"]
    terms = eic_terms(data, truth, intervention, "outcome_1", psi, table, np.zeros(data.n, dtype=int))
    phi = terms.total
    assert abs(phi.mean()) <= 3 * phi.std(ddof=1) / math.sqrt(phi.size)
    assert np.any(terms.outcome != 0) and np.any(terms.z != 0)


def test_other_arm_keeps_only_the_baseline_term(example2):
    truth = NuisanceSet(models=example2.models, propensity=example2.propensity)
    path = SubjectPath(id=0, l0=0.4, a0=0, jumps=[(0.6, Mark.ELL), (1.1, Mark.Z), (2.0, "outcome_1")], tau=3.0)
    components = eic_value(path, truth, InterventionSpec(arm=1, alpha=0.5), "outcome_1", psi_ref=0.3,
                           grid_size=200)
    assert (components.outcome, components.ell, components.z) == (0.0, 0.0, 0.0)
    assert components.total == components.baseline
    assert components.baseline != 0.0


@pytest.mark.parametrize("x", ["outcome_1", "z"])
def test_alpha_zero_has_no_z_component(true_nuisances, x):
    path = SubjectPath(id=0, l0=0.5, jumps=[(0.7, Mark.ELL), (1.2, Mark.Z), (2.0, "outcome_1")], tau=3.0)
    components = eic_value(path, true_nuisances, InterventionSpec(alpha=0.0), x, psi_ref=0.1, grid_size=200)
    assert components.z == 0.0
    if x == "outcome_1":
        # the part of the path before z still carries weight
        assert components.outcome != 0.0


def test_special_case_reduces_to_empirical_mean(uncensored_cohort):
    for x in ("outcome_1", "z"):
        result = target(uncensored_cohort, fit_nuisances(uncensored_cohort), InterventionSpec(), x)
        report = result.report
        empirical = uncensored_cohort.counts(x).mean()
        assert report.psi_hat + float(np.mean(result.eic)) == pytest.approx(empirical, abs=1e-3)
        assert abs(report.psi_hat - empirical) <= report.threshold + 1e-3
        assert report.eic_residual <= report.threshold
        assert report.iterations <= 50


@pytest.fixture(scope="module")
def saturated_cohort():
    # one baseline value, so the targeting tables hold a single request and a fine grid stays cheap
    scenario = build_scenario(ScenarioConfig(tau=3.0, l0=[0.5], models={
        "outcome_1": {"eta": 0.3}, "ell": {"eta": 0.1}, "z": {"eta": 0.2}, "censor": {"eta": 0.0}}))
    return sample_cohort(scenario, None, 100, seed=21)


@pytest.mark.parametrize("x", ["outcome_1", "z"])
def test_special_case_matches_empirical_mean_exactly(saturated_cohort, x):
    config = EstimationConfig(grid_size=20_000, stop_tol=1e-10, quad_tol=1e-10, max_iter=200)
    result = target(saturated_cohort, fit_nuisances(saturated_cohort), InterventionSpec(), x, config=config)
    assert result.report.threshold == 1e-10
    assert result.report.eic_residual <= 1e-10
    assert abs(result.report.psi_hat - saturated_cohort.counts(x).mean()) <= 1e-8


def test_estimate_solves_the_influence_curve_equation(example2_cohort):
    report = estimate_alpha_fixed(example2_cohort, InterventionSpec(arm=1, alpha=0.5), "outcome_1")
    assert report.eic_residual <= report.threshold
    assert report.iterations <= 50
    assert report.se > 0
    assert report.ci95[0] < report.psi_hat < report.ci95[1]
    assert 0.0 <= report.psi_hat <= 1.0
    assert len(report.eic) == example2_cohort.n
    assert "eic" not in report.summary()


def test_frozen_tables_and_truncation(example2_cohort):
    config = EstimationConfig(refresh_tables=False, truncate=5.0)
    report = estimate_alpha_fixed(example2_cohort, InterventionSpec(arm=0, alpha=2.0), "z", config)
    assert report.weight_diagnostics.truncation == 5.0
    assert 0.0 <= report.psi_hat <= 1.0


def test_target_input_checks(uncensored_cohort, example2_cohort):
    nuisances = fit_nuisances(uncensored_cohort)
    with pytest.raises(ConfigError):
        target(uncensored_cohort, nuisances, InterventionSpec(arm=1), "outcome_1")
    with pytest.raises(ConfigError):
        target(uncensored_cohort, nuisances, InterventionSpec(), "ell")


def _replicates(scenario, spec, n, reps, intervention, seed):
    estimates, covered = [], []
    truth = forward_psi(scenario, intervention)["outcome_1"]
    for r in range(reps):
        cohort = sample_cohort(scenario, None, n, seed=seed + 1 + r, threads=8)
        report = estimate_alpha_fixed(cohort, intervention, "outcome_1", EstimationConfig(nuisance=spec, threads=8))
        estimates.append(report.psi_hat)
        covered.append(report.ci95[0] <= truth <= report.ci95[1])
    return truth, np.array(estimates), np.array(covered)


@pytest.mark.slow
def test_consistency_and_coverage(example2):
    truth, estimates, covered = _replicates(example2, NuisanceSpec(), 500, 200,
                                            InterventionSpec(arm=1, alpha=0.5), seed=1000)
    assert abs(estimates.mean() - truth) <= 0.02
    assert 0.90 <= covered.mean() <= 0.99


@pytest.mark.slow
@pytest.mark.parametrize("spec", [
    NuisanceSpec(intensities={"outcome_1": MisspecOption(drop=("z", "a0"), fix_nu=True),
                              Mark.ELL: MisspecOption(drop=("a0", "z"))}),
    NuisanceSpec(propensity_fixed=0.3, intensities={Mark.CENSOR: MisspecOption(scale=2.0)}),
])
def test_double_robustness(example3, spec):
    intervention = InterventionSpec(arm=1, alpha=0.5)
    biases = []
    for n in (500, 2000, 8000):
        truth, estimates, _ = _replicates(example3, spec, n, 20, intervention, seed=5000 + n)
        biases.append(abs(estimates.mean() - truth))
    truth, correct, _ = _replicates(example3, NuisanceSpec(), 8000, 20, intervention, seed=13000)
    envelope = abs(correct.mean() - truth) + 2.0 * correct.std(ddof=1) / math.sqrt(correct.size)
    assert biases[2] <= min(biases[:2])
    assert biases[2] <= 1.5 * envelope
