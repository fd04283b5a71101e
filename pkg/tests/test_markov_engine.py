import math

import numpy as np
import pytest
from scipy.integrate import quad

from src.estimation import backward_solve, clever_covariate, plugin_psi, table_frame
from src.models import IntensityModel, InterventionSpec, Mark, ScenarioConfig, build_scenario
from src.utils import ConfigError, GridResolutionError

from .conftest import RATE_OUTCOME, TAU, closed_form_psi_1, closed_form_psi_z


@pytest.fixture(scope="module")
def table(exponential_scenario):
    return backward_solve(exponential_scenario.models, InterventionSpec(alpha=1.5), TAU, grid_size=600, l0=[0.5])


def test_initial_values_match_closed_form(table):
    assert table.initial("z")[0] == pytest.approx(closed_form_psi_z(1.5), abs=1e-10)
    assert table.initial("outcome_1")[0] == pytest.approx(closed_form_psi_1(), abs=1e-10)


def test_terminal_and_absorbed_values(table):
    np.testing.assert_allclose(table.g1[0, -1], 0.0)
    np.testing.assert_allclose(table.gz[0, -1], [0.0, 1.0, 0.0, 1.0])
    # once z has happened its count stays one whatever follows
    np.testing.assert_allclose(table.gz[0, :, 1], 1.0, atol=1e-12)


def test_values_at_interior_times(table):
    t = table.grid[200]
    assert table.values("z", t, 0, 0) == pytest.approx(closed_form_psi_z(1.5, tau=TAU - t), abs=1e-10)


def test_clever_covariates(table):
    t = table.grid[300]
    remaining = TAU - t
    h_outcome = clever_covariate(table, t, (0, 0), "outcome_1", 1.5)
    assert h_outcome == pytest.approx(math.exp(-RATE_OUTCOME * remaining), abs=1e-10)
    h_z = clever_covariate(table, t, (0, 0), Mark.Z, 1.5, x="z")
    assert h_z == pytest.approx(1.5 * (1.0 - closed_form_psi_z(1.5, tau=remaining)), abs=1e-10)
    # ell changes no hazard here, so an ell jump carries no information about outcome_1
    assert clever_covariate(table, t, (0, 1), Mark.ELL, 1.5) == pytest.approx(0.0, abs=1e-12)


def test_clever_covariate_rejects_bad_requests(table):
    with pytest.raises(ConfigError):
        clever_covariate(table, 1.0, (0, 1), Mark.Z, 1.5)
    with pytest.raises(ConfigError):
        clever_covariate(table, 1.0, (1, 0), Mark.ELL, 1.5)
    with pytest.raises(ConfigError):
        clever_covariate(table, TAU + 1.0, (0, 0), "outcome_1", 1.5)
    with pytest.raises(ConfigError):
        clever_covariate(table, 1.0, (0, 0), Mark.CENSOR, 1.5)


def test_coarse_grid_is_rejected():
    models = {
        "outcome_1": IntensityModel(mark="outcome_1", eta=5.0, nu=0.3),
        Mark.ELL: IntensityModel(mark=Mark.ELL, eta=0.1),
        Mark.Z: IntensityModel(mark=Mark.Z, eta=0.1),
    }
    with pytest.raises(GridResolutionError):
        backward_solve(models, InterventionSpec(), 3.0, grid_size=4)


def test_singular_hazard_passes_the_default_grid():
    models = {
        "outcome_1": IntensityModel(mark="outcome_1", eta=3.0, nu=0.5),
        Mark.ELL: IntensityModel(mark=Mark.ELL, eta=0.1),
        Mark.Z: IntensityModel(mark=Mark.Z, eta=0.1),
    }
    table = backward_solve(models, InterventionSpec(), 3.0, l0=[0.0])
    assert table.grid.size == 2001
    # competing risks with Lambda_1 = 3 sqrt(t); substitute u = sqrt(t)
    expected, _ = quad(lambda u: 3.0 * math.exp(-3.0 * u - 0.1 * u * u), 0.0, math.sqrt(3.0))
    assert table.initial("outcome_1")[0] == pytest.approx(expected, abs=1e-4)


def test_grid_refinement_is_second_order():
    scenario = build_scenario(ScenarioConfig(tau=3.0, models={
        "outcome_1": {"eta": 0.05, "nu": 2.0, "beta_z": 0.5}, "ell": {"eta": 0.1, "nu": 2.0},
        "z": {"eta": 0.2, "beta_ell": 1.0}, "censor": {"eta": 0.0}}))
    tables = [backward_solve(scenario.models, InterventionSpec(alpha=1.5), 3.0, grid_size=m, l0=[0.5])
              for m in (25, 50, 100, 200)]
    for name in ("g1", "gz"):
        starts = [getattr(t, name)[0, 0] for t in tables]
        changes = [np.abs(coarse - fine).max() for coarse, fine in zip(starts, starts[1:])]
        orders = [math.log2(a / b) for a, b in zip(changes, changes[1:])]
        assert all(order >= 1.8 for order in orders), (name, orders)


def test_competing_outcomes():
    scenario = build_scenario(ScenarioConfig(tau=2.0, J=2, models={
        "outcome_1": {"eta": 0.2}, "outcome_2": {"eta": 0.3}, "ell": {"eta": 0.1},
        "z": {"eta": 0.1}, "censor": {"eta": 0.05}}))
    value = plugin_psi(scenario.models, InterventionSpec(), "outcome_1", 2.0, [0.1], grid_size=500)
    assert value == pytest.approx(0.2 / 0.5 * (1.0 - math.exp(-0.5 * 2.0)), abs=1e-10)


def test_plugin_averages_over_propensity(example2):
    models, tau = example2.models, example2.tau
    treated = plugin_psi(models, InterventionSpec(arm=1), "z", tau, [0.5], grid_size=400)
    control = plugin_psi(models, InterventionSpec(arm=0), "z", tau, [0.5], grid_size=400)
    mixed = plugin_psi(models, InterventionSpec(), "z", tau, [0.5], propensity=example2.propensity, grid_size=400)
    assert mixed == pytest.approx(0.5 * (treated + control), abs=1e-12)
    assert control > treated


def test_plugin_input_checks(exponential_scenario):
    with pytest.raises(ConfigError):
        plugin_psi(exponential_scenario.models, InterventionSpec(), "z", TAU, [])
    assert plugin_psi(exponential_scenario.models, InterventionSpec(alpha=0.0), "z", TAU, [0.2]) == 0.0


def test_table_frame_layout(table):
    frame = table_frame(table)
    assert list(frame.columns) == ["t", "state", "g1", "gz"]
    assert len(frame) == 4 * table.grid.size
    assert set(frame["state"]) == {"00", "01", "10", "11"}
