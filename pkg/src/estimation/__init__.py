# Estimation package initialization
from .intervals import CohortIntervals
from .markov_engine import (
    ValueTable,
    backward_solve,
    clever_covariate,
    plugin_psi,
    table_frame
)
from .weights import (
    WeightEvaluator,
    treatment_censoring_weight,
    alpha_weight,
    weight_trace,
    weight_diagnostics
)
from .nuisance import (
    MisspecOption,
    NuisanceSpec,
    NuisanceSet,
    fit_intensity,
    fit_propensity,
    fit_nuisances
)
from .tmle import (
    EICComponents,
    EstimationConfig,
    eic_value,
    target,
    estimate_alpha_fixed
)
from .calibration import (
    CalibrationConfig,
    CurveEvaluator,
    FunctionEvaluator,
    MonteCarloEvaluator,
    ForwardEquationEvaluator,
    TmleEvaluator,
    resolve_level,
    solve_alpha,
    derivative,
    composite_estimate,
    composite_oracle,
    feasibility_report,
    estimate_contrast
)

__all__ = [
    'CohortIntervals',
    'ValueTable',
    'backward_solve',
    'clever_covariate',
    'plugin_psi',
    'table_frame',
    'WeightEvaluator',
    'treatment_censoring_weight',
    'alpha_weight',
    'weight_trace',
    'weight_diagnostics',
    'MisspecOption',
    'NuisanceSpec',
    'NuisanceSet',
    'fit_intensity',
    'fit_propensity',
    'fit_nuisances',
    'EICComponents',
    'EstimationConfig',
    'eic_value',
    'target',
    'estimate_alpha_fixed',
    'CalibrationConfig',
    'CurveEvaluator',
    'FunctionEvaluator',
    'MonteCarloEvaluator',
    'ForwardEquationEvaluator',
    'TmleEvaluator',
    'resolve_level',
    'solve_alpha',
    'derivative',
    'composite_estimate',
    'composite_oracle',
    'feasibility_report',
    'estimate_contrast'
]
