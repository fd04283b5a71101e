"""
Efficient influence curve and iterative targeting for Psi_x^{a,alpha}.

For every mark family F in (outcome_1..outcome_J, ell, z) the influence curve
carries the weighted martingale term

    sum over jumps of w h^{x,F}  -  integral of w h^{x,F} lambda^F dt,

plus the baseline term g_x(0, 00 | a, L0) - psi. Targeting multiplies each
intensity by e^eps, with eps solving the family's weighted score.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.integrate import quad_vec
from scipy.optimize import minimize_scalar

from ..config.settings import TMLE_CONFIG
from ..models.schema import EstimateReport, InterventionSpec, Mark, SubjectPath
from ..utils.errors import ConfigError, NonConvergenceError
from .intervals import CohortIntervals
from .markov_engine import ValueTable, backward_solve, jump_contrast
from .nuisance import NuisanceSet, NuisanceSpec, fit_nuisances
from .weights import WeightEvaluator

logger = logging.getLogger(__name__)


class EICComponents(BaseModel):
    outcome: float
    ell: float
    z: float
    baseline: float
    total: float


class EstimationConfig(BaseModel):
    grid_size: int = TMLE_CONFIG["grid_size"]
    max_iter: int = TMLE_CONFIG["max_iter"]
    quad_tol: float = TMLE_CONFIG["quad_tol"]
    nuisance: NuisanceSpec = Field(default_factory=NuisanceSpec)
    truncate: Optional[float] = None
    refresh_tables: bool = True
    stop_tol: Optional[float] = None
    threads: Optional[int] = None


@dataclass
class EicTerms:
    """Per-subject influence components and per-family score pieces."""

    outcome: np.ndarray
    ell: np.ndarray
    z: np.ndarray
    baseline: np.ndarray
    jump_sums: Dict[str, float] = field(default_factory=dict)
    compensator_sums: Dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        return self.outcome + self.ell + self.z + self.baseline


@dataclass
class TargetingResult:
    nuisances: NuisanceSet
    report: EstimateReport
    eic: np.ndarray


def _check_x(x: str) -> str:
    x = Mark.parse(x)
    if x not in (Mark.outcome(1), Mark.Z):
        raise ConfigError(f"target mark must be outcome_1 or z, got '{x}'", module="tmle")
    return x


def baseline_requests(data: CohortIntervals, arm: Optional[int]) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """Distinct (a0, l0) pairs needed for the cohort and the row of each subject."""
    if arm is not None:
        a0 = np.full(data.n, float(arm))
    elif data.has_treatment:
        a0 = data.a0
    else:
        a0 = None
    keys = np.column_stack([np.zeros(data.n) if a0 is None else a0, data.l0])
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    return (None if a0 is None else unique[:, 0]), unique[:, 1], np.ravel(inverse)


def _compensators(data: CohortIntervals, table: ValueTable, rows: np.ndarray, evaluator: WeightEvaluator,
                  nuisances: NuisanceSet, families: List[str], x: str, alpha: float,
                  quad_tol: float) -> Dict[str, np.ndarray]:
    """Per-interval integral of w h lambda^F dt, substituting u = t^nu so the integrand is smooth."""
    pieces = []
    for family in families:
        model = nuisances.models[family]
        if not model.active:
            continue
        factor = data.interval_factor(model)
        keep = np.flatnonzero((factor * evaluator.baseline[data.subject] > 0) & (data.stop > data.start))
        if keep.size:
            pieces.append((family, keep, factor[keep], model.nu))
    result = {family: np.zeros(data.start.size) for family in families}
    if not pieces:
        return result

    families_in = [p[0] for p in pieces]
    sizes = [p[1].size for p in pieces]
    intervals = np.concatenate([p[1] for p in pieces])
    factor = np.concatenate([p[2] for p in pieces])
    nu = np.concatenate([np.full(p[1].size, p[3]) for p in pieces])
    u0 = data.start[intervals] ** nu
    u1 = data.stop[intervals] ** nu
    bounds = np.cumsum([0] + sizes)
    subject_rows = rows[data.subject[intervals]]

    def integrand(v: float) -> np.ndarray:
        t = np.clip((u0 + v * (u1 - u0)) ** (1.0 / nu), data.start[intervals], data.stop[intervals])
        h = np.empty(t.size)
        for f, family in enumerate(families_in):
            part = slice(bounds[f], bounds[f + 1])
            k = intervals[part]
            h[part] = jump_contrast(table, x, family, t[part], data.n_ell[k], data.n_z[k], subject_rows[part], alpha)
        return factor * (u1 - u0) * evaluator(intervals, t) * h

    values, _, info = quad_vec(integrand, 0.0, 1.0, epsabs=quad_tol, epsrel=0.0, norm="max",
                               limit=TMLE_CONFIG["quad_limit"], full_output=True)
    if info.status != 0:
        logger.debug(f"Compensator quadrature stopped early: {info.message}")
    for f, family in enumerate(families_in):
        result[family][intervals[bounds[f]:bounds[f + 1]]] = values[bounds[f]:bounds[f + 1]]
    return result


def eic_terms(data: CohortIntervals, nuisances: NuisanceSet, intervention: InterventionSpec, x: str,
              psi_ref: float, table: ValueTable, rows: np.ndarray, truncate: Optional[float] = None,
              quad_tol: Optional[float] = None) -> EicTerms:
    """Influence-curve components for every subject of the cohort."""
    J = sum(1 for mark in nuisances.models if Mark.is_outcome(mark))
    families = Mark.event_marks(J)
    alpha = intervention.alpha
    evaluator = WeightEvaluator(data, nuisances.propensity, nuisances.models[Mark.CENSOR],
                                nuisances.models[Mark.Z], intervention.arm, alpha, truncate)
    compensators = _compensators(data, table, rows, evaluator, nuisances, families, x, alpha,
                                 quad_tol or TMLE_CONFIG["quad_tol"])

    per_subject = {}
    jump_sums, compensator_sums = {}, {}
    for family in families:
        mask = data.jump_mask(family)
        k = data.jump_interval[mask]
        t = data.jump_time[mask]
        jumps = np.zeros(data.n)
        if k.size:
            h = jump_contrast(table, x, family, t, data.n_ell[k], data.n_z[k], rows[data.subject[k]], alpha)
            np.add.at(jumps, data.subject[k], evaluator(k, t) * h)
        compensator = np.bincount(data.subject, weights=compensators[family], minlength=data.n)
        per_subject[family] = jumps - compensator
        jump_sums[family] = math.fsum(jumps)
        compensator_sums[family] = math.fsum(compensator)

    outcome = sum(per_subject[m] for m in Mark.outcomes(J))
    return EicTerms(outcome=outcome, ell=per_subject[Mark.ELL], z=per_subject[Mark.Z],
                    baseline=table.initial(x)[rows] - psi_ref,
                    jump_sums=jump_sums, compensator_sums=compensator_sums)


def eic_value(path: SubjectPath, nuisances: NuisanceSet, intervention: InterventionSpec, x: str, psi_ref: float,
              table: Optional[ValueTable] = None, request: Optional[int] = None,
              grid_size: Optional[int] = None) -> EICComponents:
    """Influence-curve components of one subject; tables solved on demand."""
    x = _check_x(x)
    data = CohortIntervals.from_paths([path], path.tau)
    if table is None:
        a0, l0, rows = baseline_requests(data, intervention.arm)
        table = backward_solve(nuisances.models, intervention, path.tau, grid_size or TMLE_CONFIG["grid_size"],
                               a0, l0)
    else:
        rows = np.array([request or 0])
    terms = eic_terms(data, nuisances, intervention, x, psi_ref, table, rows)
    return EICComponents(outcome=float(terms.outcome[0]), ell=float(terms.ell[0]), z=float(terms.z[0]),
                         baseline=float(terms.baseline[0]), total=float(terms.total[0]))


def solve_fluctuation(jump_sum: float, compensator_sum: float, bound: Optional[float] = None) -> Tuple[Optional[float], str]:
    """eps solving jump_sum - e^eps compensator_sum = 0; None when unsolvable."""
    bound = bound or TMLE_CONFIG["eps_bound"]
    scale = max(1.0, abs(jump_sum), abs(compensator_sum))
    if abs(jump_sum) <= 1e-14 * scale and abs(compensator_sum) <= 1e-14 * scale:
        return None, "inert"
    if compensator_sum != 0 and jump_sum / compensator_sum > 0:
        return math.log(jump_sum / compensator_sum), "closed_form"
    result = minimize_scalar(lambda eps: (jump_sum - math.exp(eps) * compensator_sum) ** 2,
                             bounds=(-bound, bound), method="bounded")
    if abs(jump_sum - math.exp(result.x) * compensator_sum) <= 1e-10 * scale:
        return float(result.x), "bounded"
    return None, "skipped"


def target(cohort, nuisances: NuisanceSet, intervention: InterventionSpec, x: str, tau: Optional[float] = None,
           max_iter: Optional[int] = None, config: Optional[EstimationConfig] = None) -> TargetingResult:
    """Iterate intercept fluctuations until |P_n phi| <= s_n; returns targeted nuisances and the report."""
    config = config or EstimationConfig()
    x = _check_x(x)
    data = cohort if isinstance(cohort, CohortIntervals) else CohortIntervals.from_cohort(cohort)
    tau = tau or data.tau
    max_iter = config.max_iter if max_iter is None else max_iter
    if data.n < 2:
        raise ConfigError("targeting needs at least two subjects", module="tmle")
    if intervention.arm is not None and not data.has_treatment:
        raise ConfigError("an arm was requested for a cohort without baseline treatment", module="tmle")

    J = sum(1 for mark in nuisances.models if Mark.is_outcome(mark))
    families = Mark.event_marks(J)
    a0, l0, rows = baseline_requests(data, intervention.arm)

    def solve(current: NuisanceSet) -> ValueTable:
        return backward_solve(current.models, intervention, tau, config.grid_size, a0, l0, config.threads)

    current = nuisances
    table = solve(current)
    threshold = None
    flags: List[str] = []
    sweeps = 0
    while True:
        if config.refresh_tables and sweeps > 0:
            table = solve(current)
        psi = float(np.mean(table.initial(x)[rows]))
        terms = eic_terms(data, current, intervention, x, psi, table, rows, config.truncate, config.quad_tol)
        phi = terms.total
        if threshold is None:
            threshold = math.sqrt(np.mean(phi ** 2)) / (math.sqrt(data.n) * math.log(data.n))
            if config.stop_tol is not None:
                threshold = min(threshold, config.stop_tol)
            threshold = max(threshold, TMLE_CONFIG["min_threshold"])
        residual = abs(float(np.mean(phi)))
        logger.info(f"Sweep {sweeps}: psi={psi:.6f}, |P_n phi|={residual:.3e}, s_n={threshold:.3e}")
        if residual <= threshold:
            break
        if sweeps >= max_iter:
            raise NonConvergenceError(f"targeting did not reach |P_n phi| <= {threshold:.3e} in {max_iter} sweeps "
                                      f"(last {residual:.3e})", module="tmle", detail=residual)
        updates = {}
        for family in families:
            eps, status = solve_fluctuation(terms.jump_sums[family], terms.compensator_sums[family])
            if eps is None:
                if status == "skipped":
                    flags.append(f"sweep {sweeps}: fluctuation of '{family}' unsolved, skipped")
                    logger.warning(flags[-1])
                continue
            updates[family] = current.models[family].scaled(math.exp(eps))
        current = current.with_models(updates)
        sweeps += 1

    if not config.refresh_tables:
        table = solve(current)
        psi = float(np.mean(table.initial(x)[rows]))
        terms = eic_terms(data, current, intervention, x, psi, table, rows, config.truncate, config.quad_tol)
        phi = terms.total
        residual = abs(float(np.mean(phi)))
        if residual > threshold:
            flags.append(f"frozen-table targeting: final |P_n phi|={residual:.3e} above s_n")

    se = math.sqrt(float(np.mean(phi ** 2)) / data.n)
    diagnostics = WeightEvaluator(data, current.propensity, current.models[Mark.CENSOR], current.models[Mark.Z],
                                  intervention.arm, intervention.alpha, config.truncate).diagnostics()
    report = EstimateReport(x=x, arm=intervention.arm, alpha=intervention.alpha, n=data.n, psi_hat=psi, se=se,
                            ci95=(psi - 1.96 * se, psi + 1.96 * se), eic_residual=residual, threshold=threshold,
                            iterations=sweeps, weight_diagnostics=diagnostics, flags=flags, eic=phi.tolist())
    return TargetingResult(nuisances=current, report=report, eic=phi)


def estimate_alpha_fixed(cohort, intervention: InterventionSpec, x: str,
                         config: Optional[EstimationConfig] = None,
                         nuisances: Optional[NuisanceSet] = None) -> EstimateReport:
    """Fit nuisances (unless given), target and report with se = sqrt(P_n phi^2 / n)."""
    config = config or EstimationConfig()
    data = cohort if isinstance(cohort, CohortIntervals) else CohortIntervals.from_cohort(cohort)
    try:
        if nuisances is None:
            nuisances = fit_nuisances(cohort, config.nuisance)
        result = target(data, nuisances, intervention, x, config=config)
    except Exception as e:
        logger.error(f"Estimation failed for x={x}, intervention={intervention.dict()}: {str(e)}")
        raise
    report = result.report
    logger.info(f"Psi_{report.x}^(arm={report.arm}, alpha={report.alpha}) = {report.psi_hat:.5f} "
                f"(se {report.se:.5f}, {report.iterations} sweeps)")
    return report
