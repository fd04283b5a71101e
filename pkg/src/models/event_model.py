"""
Scenario construction and exact Weibull-Cox hazard evaluation.

Hazards depend on the history only through (N^ell(t-), N^z(t-)), so every
cumulative hazard over a frozen-state interval is available in closed form.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..config.settings import PRESET_DEFAULTS
from ..utils.errors import ConfigError
from .schema import IntensityModel, Mark, Propensity, Scenario, ScenarioConfig

logger = logging.getLogger(__name__)

# Nonzero coefficients of the three example scenarios; everything else is 0
PRESETS: Dict[str, Dict[str, Any]] = {
    "example1": {
        "treatment": False,
        "betas": {
            Mark.Z: {"beta_ell": 3.0},
            "outcome_1": {"beta_ell": 2.5, "beta_z": -0.5},
            Mark.ELL: {"beta_z": -2.5},
        },
    },
    "example2": {
        "treatment": True,
        "betas": {
            "outcome_1": {"beta_a0": -0.1, "beta_z": 1.5},
            Mark.Z: {"beta_a0": -2.5},
        },
    },
    "example3": {
        "treatment": True,
        "betas": {
            Mark.ELL: {"beta_a0": -2.5, "beta_z": -2.0},
            "outcome_1": {"beta_a0": -0.5, "beta_ell": 0.5, "beta_z": -3.0},
            Mark.Z: {"beta_ell": 3.0},
        },
    },
}


def _propensity_from(value: Any) -> Optional[Propensity]:
    if value is None or (isinstance(value, str) and value.lower() == "none"):
        return None
    if isinstance(value, (int, float)):
        return Propensity(kind="constant", value=float(value))
    if isinstance(value, dict):
        if "value" in value:
            return Propensity(kind="constant", value=float(value["value"]))
        return Propensity(kind="logistic", intercept=float(value.get("intercept", 0.0)),
                          slope=float(value.get("slope", 0.0)))
    raise ConfigError(f"cannot read propensity from {value!r}", module="event_model")


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Validate a scenario description, filling preset coefficients and defaults."""
    preset = None
    if config.preset is not None:
        if config.preset not in PRESETS:
            raise ConfigError(f"unknown preset '{config.preset}'; choose from {sorted(PRESETS)}",
                              module="event_model")
        preset = PRESETS[config.preset]
        if config.J != 1:
            raise ConfigError("presets are defined for J = 1", module="event_model")

    tau = config.tau if config.tau is not None else PRESET_DEFAULTS["tau"] if preset else None
    if tau is None:
        raise ConfigError("tau is required without a preset", module="event_model")
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}", module="event_model")
    if config.J < 1:
        raise ConfigError(f"J must be >= 1, got {config.J}", module="event_model")

    eta = config.eta if config.eta is not None else PRESET_DEFAULTS["eta"]
    nu = config.nu if config.nu is not None else PRESET_DEFAULTS["nu"]
    censor_eta = config.censor_eta if config.censor_eta is not None else PRESET_DEFAULTS["censor_eta"]

    unknown = set(config.models) - set(Mark.space(config.J))
    if unknown:
        raise ConfigError(f"models given for marks outside the mark space: {sorted(unknown)}",
                          module="event_model")

    models: Dict[str, IntensityModel] = {}
    for mark in Mark.space(config.J):
        if preset is None and mark not in config.models:
            raise ConfigError(f"missing intensity model for mark '{mark}'", module="event_model")
        params: Dict[str, Any] = {"eta": censor_eta if mark == Mark.CENSOR else eta, "nu": nu}
        if preset is not None:
            params.update(preset["betas"].get(mark, {}))
        params.update(config.models.get(mark, {}))
        try:
            if params.get("active", True) is False or params.get("eta") == 0:
                models[mark] = IntensityModel.zero(mark)
            else:
                models[mark] = IntensityModel(mark=mark, **params)
        except ValidationError as e:
            raise ConfigError(f"invalid model for mark '{mark}': {e}", module="event_model") from e

    propensity_value = config.propensity
    if propensity_value is None and preset is not None and preset["treatment"]:
        propensity_value = PRESET_DEFAULTS["propensity"]
    try:
        propensity = _propensity_from(propensity_value)
    except ValidationError as e:
        raise ConfigError(f"invalid propensity: {e}", module="event_model") from e

    l0_sample = None
    if isinstance(config.l0, list):
        if not config.l0:
            raise ConfigError("empirical L0 sample is empty", module="event_model")
        l0_sample = [float(v) for v in config.l0]
    elif config.l0 not in (None, "uniform"):
        raise ConfigError(f"l0 must be 'uniform' or a list, got {config.l0!r}", module="event_model")

    scenario = Scenario(name=config.preset or "custom", models=models, propensity=propensity,
                        l0_sample=l0_sample, tau=float(tau), J=config.J)
    logger.info(f"Built scenario '{scenario.name}' (tau={scenario.tau}, J={scenario.J}, "
                f"treatment={scenario.has_treatment})")
    return scenario


def preset_scenario(name: str, **overrides: Any) -> Scenario:
    return build_scenario(ScenarioConfig(preset=name, **overrides))


def load_scenario_file(path: Union[str, Path], **overrides: Any) -> Scenario:
    """Read a JSON or TOML scenario file; keyword overrides replace its top-level keys."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}", module="event_model")
    try:
        if path.suffix.lower() == ".toml":
            with path.open("rb") as handle:
                raw = tomllib.load(handle)
        else:
            raw = json.loads(path.read_text())
        config = ScenarioConfig(**{**raw, **overrides})
    except (ValueError, TypeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot parse scenario file {path}: {e}", module="event_model") from e
    return build_scenario(config)


def rate_factor(model: IntensityModel, n_ell, n_z, a0, l0) -> np.ndarray:
    """eta * exp(linear predictor), zero where the mark is inadmissible. Vectorised."""
    n_ell = np.asarray(n_ell)
    n_z = np.asarray(n_z)
    l0 = np.asarray(l0, dtype=float)
    a = np.zeros_like(l0) if a0 is None else np.asarray(a0, dtype=float)
    if not model.active:
        return np.zeros(np.broadcast(n_ell, n_z, a, l0).shape)
    lin = model.beta_a0 * a + model.beta_l0 * l0 + model.beta_z * n_z + model.beta_ell * n_ell
    factor = model.eta * np.exp(lin)
    if model.mark == Mark.Z:
        factor = np.where(n_z >= 1, 0.0, factor)
    elif model.mark == Mark.ELL:
        factor = np.where(n_ell >= 1, 0.0, factor)
    return factor


def hazard_at(model: IntensityModel, t: float, state, a0: Optional[int], l0: float) -> float:
    """Weibull-Cox hazard at t > 0 in frozen state (n_ell, n_z)."""
    if not t > 0:
        raise ConfigError(f"hazard evaluated at t={t}; need t > 0", module="event_model")
    n_ell, n_z = state
    if not model.admissible(n_ell, n_z):
        return 0.0
    return float(model.eta * np.exp(model.linear_predictor(n_ell, n_z, a0, l0))
                 * model.nu * t ** (model.nu - 1.0))


def cumulative_hazard(model: IntensityModel, s: float, t: float, state, a0: Optional[int], l0: float) -> float:
    """Closed-form integral of the hazard over [s, t] with frozen state."""
    if s > t:
        raise ConfigError(f"cumulative hazard needs s <= t, got s={s}, t={t}", module="event_model")
    if s < 0:
        raise ConfigError(f"cumulative hazard needs s >= 0, got {s}", module="event_model")
    n_ell, n_z = state
    if s == t or not model.admissible(n_ell, n_z):
        return 0.0
    return float(model.eta * np.exp(model.linear_predictor(n_ell, n_z, a0, l0))
                 * (t ** model.nu - s ** model.nu))


# Transient states ordered by index 2*n_ell + n_z
STATES = ((0, 0), (0, 1), (1, 0), (1, 1))


def state_rate_factors(models: Dict[str, IntensityModel], marks, a0, l0) -> np.ndarray:
    """eta*exp(lin) per request, transient state and mark; shape (R, 4, len(marks))."""
    l0 = np.atleast_1d(np.asarray(l0, dtype=float))
    a = np.zeros_like(l0) if a0 is None else np.broadcast_to(np.asarray(a0, dtype=float), l0.shape)
    out = np.zeros((l0.size, len(STATES), len(marks)))
    for k, (n_ell, n_z) in enumerate(STATES):
        for m, mark in enumerate(marks):
            out[:, k, m] = rate_factor(models[mark], n_ell, n_z, a, l0)
    return out
