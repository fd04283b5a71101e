"""
Calibrated alpha, composite parameters and their influence curves.

The same solvers run against three kinds of curve evaluators: targeted
estimates from a cohort, the Monte Carlo oracle and the forward-equation
oracle.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..config.settings import CALIBRATION_CONFIG
from ..models.schema import (CalibrationTarget, CompositeReport, ContrastResult, DerivativeEstimate,
                             FeasibilityReport, InterventionSpec, Mark, Scenario, SearchStep, SearchTrace)
from ..simulation.truth import forward_psi, mc_psi
from ..utils.errors import ConfigError, InfeasibleTargetError, NonConvergenceError
from .intervals import CohortIntervals
from .markov_engine import plugin_psi
from .nuisance import NuisanceSet, fit_nuisances
from .tmle import EstimationConfig, baseline_requests, target
from .weights import WeightEvaluator

logger = logging.getLogger(__name__)

OUTCOME = Mark.outcome(1)


@dataclass(frozen=True)
class Evaluation:
    value: float
    se: float = 0.0
    eic: Optional[np.ndarray] = None


class CurveEvaluator(ABC):
    """alpha -> Psi_x^{arm,alpha} with a standard error; results are cached."""

    def __init__(self):
        self._cache: Dict[Tuple[str, Optional[int], float], Evaluation] = {}

    @property
    @abstractmethod
    def n(self) -> Optional[int]:
        """Sample size behind each evaluation (None for exact curves)."""

    @abstractmethod
    def _evaluate(self, alpha: float, x: str, arm: Optional[int]) -> Evaluation:
        pass

    def evaluate(self, alpha: float, x: str = Mark.Z, arm: Optional[int] = None) -> Evaluation:
        key = (x, arm, float(alpha))
        if key not in self._cache:
            self._cache[key] = self._evaluate(float(alpha), x, arm)
        return self._cache[key]

    def limit(self, arm: Optional[int], alpha_large: Optional[float] = None) -> float:
        """Psi_z at a large alpha, the proxy for the maximal susceptible fraction."""
        return self.evaluate(alpha_large or CALIBRATION_CONFIG["large_alpha"], Mark.Z, arm).value

    def curve_value(self, alpha: float, arm: Optional[int]) -> Evaluation:
        return self.evaluate(alpha, Mark.Z, arm)

    def tolerance(self, se: float) -> float:
        """c_n = se / log n, or a fixed tolerance for exact curves."""
        if self.n is None or self.n < 2 or not se > 0:
            return CALIBRATION_CONFIG["exact_tol"]
        return se / math.log(self.n)

    def default_step(self, alpha: float) -> float:
        if self.n is None:
            return 1e-3 * max(alpha, 1.0)
        return self.n ** (-1.0 / 6.0) * max(alpha, 1.0)

    def weight_extremes(self, alphas: Sequence[float], arm: Optional[int]) -> Dict[str, float]:
        return {}


class FunctionEvaluator(CurveEvaluator):
    """Wraps an analytic curve alpha -> value (same curve for every x and arm)."""

    def __init__(self, func: Callable[[float], float], n: Optional[int] = None, se: float = 0.0):
        super().__init__()
        self.func = func
        self._n = n
        self.se = se

    @property
    def n(self) -> Optional[int]:
        return self._n

    def _evaluate(self, alpha: float, x: str, arm: Optional[int]) -> Evaluation:
        return Evaluation(float(self.func(alpha)), self.se)


class MonteCarloEvaluator(CurveEvaluator):
    """Monte Carlo oracle with common random numbers across alpha."""

    def __init__(self, scenario: Scenario, reps: int, seed: int, threads: Optional[int] = None):
        super().__init__()
        self.scenario = scenario
        self.reps = reps
        self.seed = seed
        self.threads = threads

    @property
    def n(self) -> Optional[int]:
        return self.reps

    def _evaluate(self, alpha: float, x: str, arm: Optional[int]) -> Evaluation:
        result = mc_psi(self.scenario, InterventionSpec(arm=arm, alpha=alpha), x, self.reps, self.seed, self.threads)
        return Evaluation(result.value, result.se)


class ForwardEquationEvaluator(CurveEvaluator):
    """Deterministic oracle from the forward equations at the true intensities."""

    def __init__(self, scenario: Scenario):
        super().__init__()
        self.scenario = scenario

    @property
    def n(self) -> Optional[int]:
        return None

    def _evaluate(self, alpha: float, x: str, arm: Optional[int]) -> Evaluation:
        return Evaluation(forward_psi(self.scenario, InterventionSpec(arm=arm, alpha=alpha))[x])


class TmleEvaluator(CurveEvaluator):
    """Targeted estimates from one cohort; every alpha re-targets the shared initial fit."""

    def __init__(self, data: CohortIntervals, nuisances: NuisanceSet, config: Optional[EstimationConfig] = None):
        super().__init__()
        self.data = data
        self.nuisances = nuisances
        self.config = config or EstimationConfig()

    @property
    def n(self) -> Optional[int]:
        return self.data.n

    def _evaluate(self, alpha: float, x: str, arm: Optional[int]) -> Evaluation:
        result = target(self.data, self.nuisances, InterventionSpec(arm=arm, alpha=alpha), x, config=self.config)
        return Evaluation(result.report.psi_hat, result.report.se, result.eic)

    def plugin(self, alpha: float, x: str, arm: Optional[int]) -> float:
        a0, l0, rows = baseline_requests(self.data, arm)
        a0_sample = None if a0 is None else a0[rows]
        return plugin_psi(self.nuisances.models, InterventionSpec(arm=arm, alpha=alpha), x, self.data.tau,
                          l0[rows], a0_sample, threads=self.config.threads)

    def limit(self, arm: Optional[int], alpha_large: Optional[float] = None) -> float:
        # untargeted plug-in
        return self.plugin(alpha_large or CALIBRATION_CONFIG["large_alpha"], Mark.Z, arm)

    def curve_value(self, alpha: float, arm: Optional[int]) -> Evaluation:
        return Evaluation(self.plugin(alpha, Mark.Z, arm))

    def weight_extremes(self, alphas: Sequence[float], arm: Optional[int]) -> Dict[str, float]:
        out = {}
        for alpha in alphas:
            evaluator = WeightEvaluator(self.data, self.nuisances.propensity, self.nuisances.models[Mark.CENSOR],
                                        self.nuisances.models[Mark.Z], arm, alpha)
            out[f"alpha_{alpha:g}"] = float(evaluator.subject_maxima().max())
        return out


def resolve_level(evaluator: CurveEvaluator, calibration: CalibrationTarget) -> float:
    """The Psi_z level the calibrated alpha must reach."""
    arm = calibration.arm
    if calibration.kind == "fixed_theta":
        return float(calibration.value)
    if calibration.kind == "absolute_delta":
        return evaluator.evaluate(1.0, Mark.Z, arm).value + calibration.value
    if calibration.kind == "relative_rho":
        return calibration.value * evaluator.evaluate(1.0, Mark.Z, arm).value
    return evaluator.evaluate(1.0, Mark.Z, 1 - arm).value


def check_feasible(level: float, limit: float) -> None:
    if not 0.0 < level < limit:
        raise InfeasibleTargetError(f"target level {level:.6g} is outside (0, L^a) with L^a ~ {limit:.6g}",
                                    limit=limit, level=level)


def _noise_flags(steps: List[SearchStep], tolerance: float) -> List[str]:
    ordered = sorted(steps, key=lambda s: s.alpha)
    flags = []
    for left, right in zip(ordered, ordered[1:]):
        if right.psi_z < left.psi_z - 2.0 * tolerance:
            flags.append(f"non-monotone evaluations at alpha={left.alpha:.6g} and {right.alpha:.6g}")
    return flags


def solve_alpha(evaluator: CurveEvaluator, calibration: CalibrationTarget, c_n: Optional[float] = None,
                bracket: Optional[Tuple[float, float]] = None, level: Optional[float] = None,
                limit: Optional[float] = None) -> SearchTrace:
    """
    Walk alpha from 1: multiply by 1.25 while Psi_z is below the level, by 0.8
    while above, and bisect once both sides have been seen. Stops at
    |Psi_z(alpha) - level| <= c_n.
    """
    arm = calibration.arm
    level = resolve_level(evaluator, calibration) if level is None else level
    limit = evaluator.limit(arm) if limit is None else limit
    check_feasible(level, limit)
    low_bound, high_bound = bracket or (CALIBRATION_CONFIG["alpha_min"], CALIBRATION_CONFIG["alpha_max"])

    alpha = CALIBRATION_CONFIG["alpha_start"]
    below: Optional[float] = None
    above: Optional[float] = None
    steps: List[SearchStep] = []
    tolerance = c_n
    for step in range(CALIBRATION_CONFIG["max_steps"]):
        result = evaluator.evaluate(alpha, Mark.Z, arm)
        tolerance = c_n if c_n is not None else evaluator.tolerance(result.se)
        steps.append(SearchStep(alpha=alpha, psi_z=result.value, se=result.se))
        gap = result.value - level
        logger.info(f"Step {step}: alpha={alpha:.6g}, psi_z={result.value:.6g}, gap={gap:+.3e}, c_n={tolerance:.3e}")
        if abs(gap) <= tolerance:
            flags = _noise_flags(steps, tolerance)
            for flag in flags:
                logger.warning(flag)
            return SearchTrace(alpha_hat=alpha, level=level, steps=steps, tolerance=tolerance, noise_flags=flags)
        if gap < 0:
            below = alpha if below is None else max(below, alpha)
        else:
            above = alpha if above is None else min(above, alpha)
        if below is not None and above is not None and below < above:
            alpha = 0.5 * (below + above)
        elif gap < 0:
            alpha *= CALIBRATION_CONFIG["expand"]
        else:
            alpha *= CALIBRATION_CONFIG["contract"]
        if not low_bound <= alpha <= high_bound:
            break
    raise NonConvergenceError(f"alpha search left [{low_bound}, {high_bound}] or ran out of steps "
                              f"without reaching level {level:.6g}", module="calibration",
                              detail=steps[-1].alpha if steps else None)


def derivative(source: Union[CurveEvaluator, SearchTrace, Sequence[SearchStep]], alpha: float,
               h: Optional[float] = None, x: str = Mark.Z, arm: Optional[int] = None) -> DerivativeEstimate:
    """Central difference (psi(alpha+h) - psi(alpha-h)) / 2h, or the nearest trace points around alpha."""
    if not isinstance(source, CurveEvaluator):
        steps = source.steps if isinstance(source, SearchTrace) else list(source)
        left = [s for s in steps if s.alpha < alpha]
        right = [s for s in steps if s.alpha > alpha]
        if not left or not right:
            raise ConfigError(f"trace does not surround alpha={alpha}", module="calibration")
        lo = max(left, key=lambda s: s.alpha)
        hi = min(right, key=lambda s: s.alpha)
        kappa = (hi.psi_z - lo.psi_z) / (hi.alpha - lo.alpha)
        noisy = abs(hi.psi_z - lo.psi_z) < 2.0 * math.hypot(hi.se, lo.se)
        return DerivativeEstimate(kappa=kappa, h=0.5 * (hi.alpha - lo.alpha), noise_dominated=noisy)

    h = h or source.default_step(alpha)
    if not h > 0:
        raise ConfigError(f"derivative step must be positive, got {h}", module="calibration")
    if alpha == 0:
        plus, base = source.evaluate(h, x, arm), source.evaluate(0.0, x, arm)
        kappa = (plus.value - base.value) / h
        noisy = abs(plus.value - base.value) < 2.0 * math.hypot(plus.se, base.se)
        return DerivativeEstimate(kappa=kappa, h=h, noise_dominated=noisy)
    if alpha - h <= 0:
        logger.warning(f"Derivative step {h:.4g} reaches below zero at alpha={alpha:.4g}; using {alpha / 2:.4g}")
        h = alpha / 2.0
    plus, minus = source.evaluate(alpha + h, x, arm), source.evaluate(alpha - h, x, arm)
    kappa = (plus.value - minus.value) / (2.0 * h)
    noisy = abs(plus.value - minus.value) < 2.0 * math.hypot(plus.se, minus.se)
    if noisy:
        logger.warning(f"Derivative at alpha={alpha:.4g} (h={h:.4g}) is dominated by evaluator noise")
    return DerivativeEstimate(kappa=kappa, h=h, noise_dominated=noisy)


def _se(phi: np.ndarray) -> float:
    return math.sqrt(float(np.mean(phi ** 2)) / phi.size)


def _alpha_influence(evaluator: CurveEvaluator, calibration: CalibrationTarget, alpha_hat: float,
                     kappa_z: float) -> np.ndarray:
    """Influence curve of the calibrated alpha for each target kind."""
    arm = calibration.arm
    at_hat = evaluator.evaluate(alpha_hat, Mark.Z, arm).eic
    if calibration.kind == "fixed_theta":
        return -at_hat / kappa_z
    if calibration.kind == "absolute_delta":
        return (evaluator.evaluate(1.0, Mark.Z, arm).eic - at_hat) / kappa_z
    if calibration.kind == "relative_rho":
        return (calibration.value * evaluator.evaluate(1.0, Mark.Z, arm).eic - at_hat) / kappa_z
    return (evaluator.evaluate(1.0, Mark.Z, 1 - arm).eic - at_hat) / kappa_z


class CalibrationConfig(BaseModel):
    estimation: EstimationConfig = Field(default_factory=EstimationConfig)
    c_n: Optional[float] = None
    h: Optional[float] = None
    alpha_large: float = CALIBRATION_CONFIG["large_alpha"]


def _calibrate(evaluator: CurveEvaluator, calibration: CalibrationTarget, config: CalibrationConfig):
    arm = calibration.arm
    if calibration.kind == "match_other_arm" and arm is None:
        raise ConfigError("match_other_arm needs an arm", module="calibration")
    level = resolve_level(evaluator, calibration)
    limit = evaluator.limit(arm, config.alpha_large)
    check_feasible(level, limit)
    trace = solve_alpha(evaluator, calibration, config.c_n, level=level, limit=limit)
    kappa_z = derivative(evaluator, trace.alpha_hat, config.h, Mark.Z, arm)
    kappa_1 = derivative(evaluator, trace.alpha_hat, config.h, OUTCOME, arm)
    flags = list(trace.noise_flags)
    if not kappa_z.kappa > 0:
        raise NonConvergenceError(f"estimated derivative of Psi_z at alpha={trace.alpha_hat:.4g} is not positive "
                                  f"({kappa_z.kappa:.4g})", module="calibration", detail=kappa_z.kappa)
    for name, estimate in (("kappa_z", kappa_z), ("kappa_1", kappa_1)):
        if estimate.noise_dominated:
            flags.append(f"{name} dominated by evaluator noise (h={estimate.h:.4g})")
    return level, limit, trace, kappa_z, kappa_1, flags


def composite_estimate(cohort, calibration: CalibrationTarget, config: Optional[CalibrationConfig] = None,
                       nuisances: Optional[NuisanceSet] = None) -> CompositeReport:
    """Psi_1 at the calibrated alpha from a cohort, with its composite influence-curve variance."""
    config = config or CalibrationConfig()
    data = cohort if isinstance(cohort, CohortIntervals) else CohortIntervals.from_cohort(cohort)
    nuisances = nuisances or fit_nuisances(cohort, config.estimation.nuisance)
    evaluator = TmleEvaluator(data, nuisances, config.estimation)
    arm = calibration.arm

    level, limit, trace, kappa_z, kappa_1, flags = _calibrate(evaluator, calibration, config)
    alpha_hat = trace.alpha_hat
    outcome = evaluator.evaluate(alpha_hat, OUTCOME, arm)
    phi_alpha = _alpha_influence(evaluator, calibration, alpha_hat, kappa_z.kappa)
    phi = outcome.eic + kappa_1.kappa * phi_alpha
    se = _se(phi)

    decomposition, decomposition_se = {}, {}
    if calibration.kind == "match_other_arm":
        natural = evaluator.evaluate(1.0, OUTCOME, arm)
        other = evaluator.evaluate(1.0, OUTCOME, 1 - arm)
        indirect = natural.value - outcome.value
        direct = outcome.value - other.value
        decomposition = {"indirect": indirect, "direct": direct, "total": indirect + direct}
        decomposition_se = {"indirect": _se(natural.eic - phi), "direct": _se(phi - other.eic),
                            "total": _se(natural.eic - other.eic)}

    report = CompositeReport(mode="estimation", target=calibration, level=level, alpha_hat=alpha_hat,
                             alpha_se=_se(phi_alpha), psi1_hat=outcome.value, psi1_se=se,
                             ci95=(outcome.value - 1.96 * se, outcome.value + 1.96 * se),
                             kappa_z=kappa_z.kappa, kappa_1=kappa_1.kappa, limit=limit, margin=limit - level,
                             decomposition=decomposition, decomposition_se=decomposition_se,
                             trace=trace.steps, flags=flags)
    logger.info(f"Composite estimate: alpha_hat={alpha_hat:.4g}, psi1={outcome.value:.5f} (se {se:.5f})")
    return report


def composite_oracle(evaluator: CurveEvaluator, calibration: CalibrationTarget,
                     config: Optional[CalibrationConfig] = None) -> CompositeReport:
    """Composite parameter on an oracle curve; standard errors are Monte Carlo errors."""
    config = config or CalibrationConfig()
    arm = calibration.arm
    level, limit, trace, kappa_z, kappa_1, flags = _calibrate(evaluator, calibration, config)
    alpha_hat = trace.alpha_hat
    outcome = evaluator.evaluate(alpha_hat, OUTCOME, arm)
    alpha_se = evaluator.evaluate(alpha_hat, Mark.Z, arm).se / kappa_z.kappa
    se = math.hypot(outcome.se, kappa_1.kappa * alpha_se)

    decomposition, decomposition_se = {}, {}
    if calibration.kind == "match_other_arm":
        natural = evaluator.evaluate(1.0, OUTCOME, arm)
        other = evaluator.evaluate(1.0, OUTCOME, 1 - arm)
        indirect = natural.value - outcome.value
        direct = outcome.value - other.value
        decomposition = {"indirect": indirect, "direct": direct, "total": indirect + direct}
        decomposition_se = {"indirect": math.hypot(natural.se, se), "direct": math.hypot(se, other.se),
                            "total": math.hypot(natural.se, other.se)}

    return CompositeReport(mode="oracle", target=calibration, level=level, alpha_hat=alpha_hat, alpha_se=alpha_se,
                           psi1_hat=outcome.value, psi1_se=se, ci95=(outcome.value - 1.96 * se,
                                                                     outcome.value + 1.96 * se),
                           kappa_z=kappa_z.kappa, kappa_1=kappa_1.kappa, limit=limit, margin=limit - level,
                           decomposition=decomposition, decomposition_se=decomposition_se,
                           trace=trace.steps, flags=flags)


def feasibility_report(evaluator: CurveEvaluator, calibration: CalibrationTarget,
                       alpha_large: Optional[float] = None,
                       grid: Optional[Sequence[float]] = None) -> FeasibilityReport:
    """L^a proxy, target margin, weight extremes and the auxiliary curve; never solves."""
    alpha_large = alpha_large or CALIBRATION_CONFIG["large_alpha"]
    grid = list(grid or CALIBRATION_CONFIG["feasibility_grid"])
    arm = calibration.arm
    limit = evaluator.limit(arm, alpha_large)
    level = resolve_level(evaluator, calibration)
    curve = []
    for alpha in grid:
        point = evaluator.curve_value(alpha, arm)
        curve.append(SearchStep(alpha=alpha, psi_z=point.value, se=point.se))
    feasible = 0.0 < level < limit
    if not feasible:
        logger.warning(f"Target level {level:.6g} infeasible: L^a ~ {limit:.6g}")
    return FeasibilityReport(level=level, limit=limit, margin=limit - level, feasible=feasible,
                             alpha_large=alpha_large, curve=curve,
                             weight_extremes=evaluator.weight_extremes(grid, arm))


def estimate_contrast(evaluator: CurveEvaluator, kind: str, alpha: float, arm: Optional[int] = None) -> ContrastResult:
    """
    Outcome contrasts from any evaluator; with a TmleEvaluator the standard
    errors come from differences of influence curves.
    """
    def pair(first: Evaluation, second: Evaluation) -> Tuple[float, float]:
        value = first.value - second.value
        if first.eic is not None and second.eic is not None:
            return value, _se(first.eic - second.eic)
        return value, math.hypot(first.se, second.se)

    if kind in ("overall", "fixed_arm"):
        if kind == "fixed_arm" and arm is None:
            raise ConfigError("fixed_arm contrast needs an arm", module="calibration")
        value, se = pair(evaluator.evaluate(1.0, OUTCOME, arm), evaluator.evaluate(alpha, OUTCOME, arm))
        return ContrastResult(kind=kind, value=value, se=se)
    if kind == "between_arm":
        value, se = pair(evaluator.evaluate(alpha, OUTCOME, 1), evaluator.evaluate(alpha, OUTCOME, 0))
        return ContrastResult(kind=kind, value=value, se=se)
    if kind == "total_joint":
        natural = evaluator.evaluate(1.0, OUTCOME, 1)
        treated = evaluator.evaluate(alpha, OUTCOME, 1)
        control = evaluator.evaluate(alpha, OUTCOME, 0)
        indirect, indirect_se = pair(natural, treated)
        direct, direct_se = pair(treated, control)
        _, total_se = pair(natural, control)
        return ContrastResult(kind=kind, value=indirect + direct, se=total_se,
                              components={"indirect": indirect, "direct": direct},
                              component_se={"indirect": indirect_se, "direct": direct_se})
    raise ConfigError(f"unknown contrast '{kind}'", module="calibration")
