import json
import math

import numpy as np
import pytest

from src.models import (IntensityModel, Mark, ScenarioConfig, build_scenario, cumulative_hazard, hazard_at,
                        load_scenario_file, preset_scenario, rate_factor)
from src.utils import ConfigError


def test_presets_fill_documented_defaults(example1, example2):
    z = example1.model(Mark.Z)
    assert (z.eta, z.nu, z.beta_ell) == (0.1, 1.0, 3.0)
    assert example1.model(Mark.CENSOR).eta == 0.05
    assert example1.tau == 3.0
    assert not example1.has_treatment
    assert example2.has_treatment
    assert example2.propensity.value == 0.5
    assert example2.model("outcome_1").beta_z == 1.5


def test_hazard_is_zero_for_inadmissible_marks():
    model = IntensityModel(mark=Mark.Z, eta=0.2, beta_ell=1.0)
    assert hazard_at(model, 1.0, (1, 1), None, 0.3) == 0.0
    assert hazard_at(model, 1.0, (1, 0), None, 0.3) == pytest.approx(0.2 * math.e)
    ell = IntensityModel(mark=Mark.ELL, eta=0.2)
    assert cumulative_hazard(ell, 0.0, 2.0, (1, 0), None, 0.0) == 0.0


def test_weibull_cumulative_hazard_closed_form():
    model = IntensityModel(mark="outcome_1", eta=0.1, nu=1.5, beta_a0=-0.5, beta_l0=0.4, beta_z=1.0)
    expected = 0.1 * math.exp(-0.5 + 0.4 * 0.25 + 1.0) * (2.0 ** 1.5 - 0.5 ** 1.5)
    assert cumulative_hazard(model, 0.5, 2.0, (0, 1), 1, 0.25) == pytest.approx(expected, rel=1e-14)


def test_hazard_rejects_bad_times():
    model = IntensityModel(mark="outcome_1", eta=0.1)
    with pytest.raises(ConfigError):
        hazard_at(model, 0.0, (0, 0), None, 0.0)
    with pytest.raises(ConfigError):
        cumulative_hazard(model, 2.0, 1.0, (0, 0), None, 0.0)


def test_rate_factor_is_vectorised():
    model = IntensityModel(mark=Mark.ELL, eta=0.5, beta_z=-1.0)
    factors = rate_factor(model, np.array([0, 0, 1]), np.array([0, 1, 0]), None, np.zeros(3))
    np.testing.assert_allclose(factors, [0.5, 0.5 * math.exp(-1.0), 0.0])


def test_zero_eta_gives_structurally_zero_model(uncensored_example1):
    censor = uncensored_example1.model(Mark.CENSOR)
    assert not censor.active
    assert hazard_at(censor, 1.0, (0, 0), None, 0.0) == 0.0


def test_invalid_scenarios_raise_config_error():
    with pytest.raises(ConfigError):
        preset_scenario("example9")
    with pytest.raises(ConfigError):
        build_scenario(ScenarioConfig(tau=1.0, models={"outcome_1": {"eta": 0.1}}))
    with pytest.raises(ConfigError):
        preset_scenario("example1", tau=-1.0)
    with pytest.raises(ConfigError):
        preset_scenario("example1", models={"outcome_1": {"nu": -2.0}})
    with pytest.raises(ConfigError):
        preset_scenario("example1", models={"outcome_7": {"eta": 1.0}})


def test_competing_outcomes_extend_the_mark_space():
    scenario = build_scenario(ScenarioConfig(tau=2.0, J=2, models={
        "outcome_1": {"eta": 0.1}, "outcome_2": {"eta": 0.2}, "ell": {"eta": 0.1},
        "z": {"eta": 0.1}, "censor": {"eta": 0.0}}))
    assert scenario.event_marks == ["outcome_1", "outcome_2", "ell", "z"]
    assert not scenario.model(Mark.CENSOR).active


def test_scenario_file_json_and_toml(tmp_path):
    payload = {"preset": "example2", "tau": 2.0, "propensity": {"intercept": 0.0, "slope": 1.0}}
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(payload))
    scenario = load_scenario_file(path)
    assert scenario.tau == 2.0
    assert scenario.propensity.kind == "logistic"

    toml = tmp_path / "scenario.toml"
    toml.write_text('preset = "example1"\ntau = 4.0\n\n[models.z]\neta = 0.3\n')
    scenario = load_scenario_file(toml)
    assert scenario.tau == 4.0
    assert scenario.model(Mark.Z).eta == 0.3
    assert scenario.model(Mark.Z).beta_ell == 3.0

    with pytest.raises(ConfigError):
        load_scenario_file(tmp_path / "missing.json")


def test_mark_parsing():
    assert Mark.parse("outcome1") == "outcome_1"
    assert Mark.parse("2") == "outcome_2"
    assert Mark.parse("Z") == "z"
    with pytest.raises(ValueError):
        Mark.parse("death")


@pytest.mark.parametrize("state", [(0, 0), (1, 0), (0, 1)])
def test_exponential_baseline_hazard(state):
    model = IntensityModel(mark="outcome_1", eta=1.0, nu=1.0)
    assert hazard_at(model, 0.7, state, None, 0.4) == 1.0
    assert hazard_at(IntensityModel(mark="outcome_1", eta=1.0, nu=2.0), 3.0, state, None, 0.0) == pytest.approx(6.0)


def test_ell_switch_multiplies_z_hazard_by_e_cubed(example1):
    z = example1.model(Mark.Z)
    ratio = hazard_at(z, 1.3, (1, 0), None, 0.0) / hazard_at(z, 1.3, (0, 0), None, 0.0)
    assert ratio == pytest.approx(math.exp(3.0), rel=1e-12)
    assert ratio == pytest.approx(20.0855, abs=1e-4)


def test_cumulative_hazard_worked_values():
    assert cumulative_hazard(IntensityModel(mark="outcome_1", eta=2.0), 0.0, 1.5, (0, 0), None, 0.0) \
        == pytest.approx(3.0, rel=1e-14)
    square = IntensityModel(mark="outcome_1", eta=1.0, nu=2.0)
    assert cumulative_hazard(square, 1.0, 2.0, (0, 0), None, 0.0) == pytest.approx(3.0, rel=1e-14)
    assert cumulative_hazard(square, 1.2, 1.2, (0, 0), None, 0.0) == 0.0


@pytest.mark.parametrize("nu", [0.4, 1.0, 2.5])
def test_cumulative_hazard_is_additive_and_monotone(nu):
    model = IntensityModel(mark=Mark.Z, eta=0.3, nu=nu, beta_ell=1.2, beta_l0=-0.7)
    args = ((1, 0), None, 0.35)
    for s, u, t in [(0.0, 0.4, 2.0), (0.3, 1.1, 2.9), (1.0, 1.0, 1.5)]:
        whole = cumulative_hazard(model, s, t, *args)
        split = cumulative_hazard(model, s, u, *args) + cumulative_hazard(model, u, t, *args)
        assert split == pytest.approx(whole, rel=1e-12)
    values = [cumulative_hazard(model, 0.0, t, *args) for t in np.linspace(0.0, 3.0, 31)]
    assert np.all(np.diff(values) >= 0.0)


def test_example3_preset_coefficients(example3):
    ell, outcome, z = example3.model(Mark.ELL), example3.model("outcome_1"), example3.model(Mark.Z)
    assert (ell.beta_a0, ell.beta_z) == (-2.5, -2.0)
    assert (outcome.beta_a0, outcome.beta_ell, outcome.beta_z) == (-0.5, 0.5, -3.0)
    assert z.beta_ell == 3.0
    assert example3.has_treatment


@pytest.mark.parametrize("value", [1.5, 0.0, 1.0, {"value": -0.2}])
def test_propensity_outside_unit_interval_is_rejected(value):
    with pytest.raises(ConfigError):
        preset_scenario("example2", propensity=value)


def test_scenario_file_overrides(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"preset": "example1", "tau": 2.0}))
    assert load_scenario_file(path, tau=1.5).tau == 1.5
    with pytest.raises(ConfigError):
        load_scenario_file(path, tau=0.0)
