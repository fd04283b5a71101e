# Models package initialization
from .schema import (
    Mark,
    COVARIATES,
    IntensityModel,
    Propensity,
    ScenarioConfig,
    Scenario,
    InterventionSpec,
    SubjectPath,
    CurvePoint,
    ContrastResult,
    WeightDiagnostics,
    EstimateReport,
    CalibrationTarget,
    SearchStep,
    SearchTrace,
    DerivativeEstimate,
    FeasibilityReport,
    CompositeReport,
    RunConfig
)
from .event_model import (
    PRESETS,
    build_scenario,
    preset_scenario,
    load_scenario_file,
    hazard_at,
    cumulative_hazard,
    rate_factor,
    STATES,
    state_rate_factors
)

__all__ = [
    'Mark',
    'COVARIATES',
    'IntensityModel',
    'Propensity',
    'ScenarioConfig',
    'Scenario',
    'InterventionSpec',
    'SubjectPath',
    'CurvePoint',
    'ContrastResult',
    'WeightDiagnostics',
    'EstimateReport',
    'CalibrationTarget',
    'SearchStep',
    'SearchTrace',
    'DerivativeEstimate',
    'FeasibilityReport',
    'CompositeReport',
    'RunConfig',
    'PRESETS',
    'build_scenario',
    'preset_scenario',
    'load_scenario_file',
    'hazard_at',
    'cumulative_hazard',
    'rate_factor',
    'STATES',
    'state_rate_factors'
]
