"""
Nuisance fits: Weibull-Cox intensities by exact maximum likelihood, baseline propensity.

The log-likelihood of one mark is

    sum_events [log eta + log nu + (nu-1) log t + beta'x] - sum_intervals eta e^{beta'x} (stop^nu - start^nu)

maximised by Newton-Raphson in (log eta, log nu, beta) with step halving.
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import statsmodels.api as sm
from pydantic import BaseModel, Field
from scipy import linalg

from ..config.settings import NUISANCE_CONFIG
from ..models.schema import COVARIATES, IntensityModel, Mark, Propensity
from ..utils.errors import ConfigError, NonConvergenceError
from ..utils.parallel import parallel_map
from .intervals import CohortIntervals

logger = logging.getLogger(__name__)


class MisspecOption(BaseModel):
    """Deliberate misspecification of one intensity fit."""

    drop: Tuple[str, ...] = ()
    fix_nu: bool = False
    scale: float = 1.0

    @property
    def is_misspecified(self) -> bool:
        return bool(self.drop) or self.fix_nu or self.scale != 1.0


class NuisanceSpec(BaseModel):
    intensities: Dict[str, MisspecOption] = Field(default_factory=dict)
    propensity_kind: str = "logistic"
    propensity_fixed: Optional[float] = None
    threads: Optional[int] = None


class NuisanceSet(BaseModel):
    models: Dict[str, IntensityModel]
    propensity: Propensity
    misspec_flags: Dict[str, str] = Field(default_factory=dict)

    class Config:
        allow_mutation = False

    def with_models(self, updates: Dict[str, IntensityModel]) -> "NuisanceSet":
        models = dict(self.models)
        models.update(updates)
        return NuisanceSet(models=models, propensity=self.propensity, misspec_flags=self.misspec_flags)


class _Design:
    """Event and at-risk arrays for one mark."""

    def __init__(self, data: CohortIntervals, mark: str, names: Sequence[str]):
        covariates = data.covariates()
        template = IntensityModel(mark=mark, eta=1.0)
        at_risk = np.array([template.admissible(e, z) for e, z in zip(data.n_ell, data.n_z)], dtype=bool)
        positive = at_risk & (data.stop > data.start)
        self.start = data.start[positive]
        self.stop = data.stop[positive]
        self.x = np.column_stack([covariates[c][positive] for c in names]) if names else np.zeros((positive.sum(), 0))
        events = data.jump_mask(mark)
        rows = data.jump_interval[events]
        self.event_time = data.jump_time[events]
        self.event_x = (np.column_stack([covariates[c][rows] for c in names]) if names
                        else np.zeros((rows.size, 0)))
        self.exposure = float(np.sum(self.stop - self.start))

    @property
    def n_events(self) -> int:
        return int(self.event_time.size)


def _log_power_terms(design: _Design, nu: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """stop^nu - start^nu and its first two derivatives in nu (0 log 0 = 0)."""
    def parts(t: np.ndarray):
        power = t ** nu
        log_t = np.log(np.where(t > 0, t, 1.0))
        return power, power * log_t, power * log_t ** 2

    p1, d1, e1 = parts(design.stop)
    p0, d0, e0 = parts(design.start)
    return p1 - p0, d1 - d0, e1 - e0


def log_likelihood(theta: np.ndarray, design: _Design, fix_nu: bool) -> Tuple[float, np.ndarray, np.ndarray]:
    """Value, analytic gradient and Hessian in (log eta, [log nu,] beta)."""
    a = theta[0]
    b = 0.0 if fix_nu else theta[1]
    beta = theta[1:] if fix_nu else theta[2:]
    nu = np.exp(b)
    log_t = np.log(design.event_time)

    scale = np.exp(a + design.x @ beta)
    diff, diff_d1, diff_d2 = _log_power_terms(design, nu)
    C = scale * diff
    value = (design.n_events * (a + b) + (nu - 1.0) * log_t.sum() + float(np.sum(design.event_x @ beta))
             - C.sum())

    n_beta = beta.size
    offset = 1 if fix_nu else 2
    size = offset + n_beta
    grad = np.zeros(size)
    hess = np.zeros((size, size))

    grad[0] = design.n_events - C.sum()
    hess[0, 0] = -C.sum()
    if n_beta:
        cx = C @ design.x
        grad[offset:] = design.event_x.sum(axis=0) - cx
        hess[0, offset:] = hess[offset:, 0] = -cx
        hess[offset:, offset:] = -(design.x * C[:, None]).T @ design.x
    if not fix_nu:
        dC_db = scale * nu * diff_d1
        grad[1] = design.n_events + nu * log_t.sum() - dC_db.sum()
        hess[0, 1] = hess[1, 0] = -dC_db.sum()
        hess[1, 1] = nu * log_t.sum() - np.sum(scale * (nu * diff_d1 + nu ** 2 * diff_d2))
        if n_beta:
            hess[1, offset:] = hess[offset:, 1] = -(dC_db @ design.x)
    return float(value), grad, hess


def _newton(design: _Design, theta: np.ndarray, fix_nu: bool, mark: str) -> np.ndarray:
    value, grad, hess = log_likelihood(theta, design, fix_nu)
    initial_value = value
    for iteration in range(NUISANCE_CONFIG["max_iter"]):
        if np.max(np.abs(grad)) <= NUISANCE_CONFIG["grad_tol"]:
            logger.debug(f"{mark}: converged in {iteration} steps, loglik {initial_value:.4f} -> {value:.4f}")
            return theta
        try:
            step = linalg.solve(-hess, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = grad / (np.abs(np.diag(hess)) + 1.0)
            logger.debug(f"{mark}: Hessian not positive definite, gradient step")
        size = 1.0
        for _ in range(NUISANCE_CONFIG["max_halvings"]):
            candidate = theta + size * step
            new_value, new_grad, new_hess = log_likelihood(candidate, design, fix_nu)
            if np.isfinite(new_value) and new_value >= value:
                break
            size *= 0.5
        else:
            break
        theta, value, grad, hess = candidate, new_value, new_grad, new_hess
    norm = float(np.max(np.abs(grad)))
    if norm <= NUISANCE_CONFIG["grad_tol"]:
        return theta
    raise NonConvergenceError(f"Weibull-Cox fit for '{mark}' did not converge (gradient norm {norm:.3e})",
                              module="nuisance", detail=norm)


def _usable_covariates(data: CohortIntervals, mark: str, requested: Sequence[str]) -> List[str]:
    names = []
    for name in requested:
        if name == "a0" and not data.has_treatment:
            continue
        if (mark == Mark.Z and name == "z") or (mark == Mark.ELL and name == "ell"):
            continue
        names.append(name)
    design = _Design(data, mark, names)
    keep = [name for k, name in enumerate(names) if design.x.shape[0] and np.ptp(design.x[:, k]) > 0]
    dropped = set(names) - set(keep)
    if dropped:
        logger.debug(f"{mark}: constant covariates {sorted(dropped)} left out")
    return keep


def fit_intensity(cohort, mark: str, covariates: Sequence[str] = COVARIATES,
                  misspec: Optional[MisspecOption] = None) -> IntensityModel:
    """Maximum-likelihood Weibull-Cox intensity for one mark."""
    misspec = misspec or MisspecOption()
    data = cohort if isinstance(cohort, CohortIntervals) else CohortIntervals.from_cohort(cohort)
    unknown = set(covariates) - set(COVARIATES)
    if unknown:
        raise ConfigError(f"unknown covariates {sorted(unknown)}", module="nuisance")
    names = _usable_covariates(data, mark, [c for c in covariates if c not in misspec.drop])
    design = _Design(data, mark, names)
    if design.n_events == 0:
        logger.warning(f"No '{mark}' events in the cohort; using a zero hazard")
        return IntensityModel.zero(mark)
    if design.exposure <= 0:
        raise ConfigError(f"no exposure time at risk for '{mark}'", module="nuisance")

    theta = np.zeros(1 + (0 if misspec.fix_nu else 1) + len(names))
    theta[0] = np.log(design.n_events / design.exposure)
    theta = _newton(design, theta, misspec.fix_nu, mark)

    offset = 1 if misspec.fix_nu else 2
    params = {f"beta_{name}": float(theta[offset + k]) for k, name in enumerate(names)}
    model = IntensityModel(mark=mark, eta=float(np.exp(theta[0])) * misspec.scale,
                           nu=1.0 if misspec.fix_nu else float(np.exp(theta[1])), **params)
    logger.info(f"Fitted '{mark}': eta={model.eta:.4g}, nu={model.nu:.4g}, "
                f"betas={dict(zip(COVARIATES, np.round(model.betas, 4)))}")
    return model


def fit_propensity(cohort, kind: str = "logistic", fixed: Optional[float] = None) -> Propensity:
    """Constant or logistic-in-L0 propensity; trivial when the cohort has no baseline treatment."""
    data = cohort if isinstance(cohort, CohortIntervals) else CohortIntervals.from_cohort(cohort)
    missing = np.isnan(data.a0)
    if missing.all():
        return Propensity.trivial()
    if missing.any():
        raise ConfigError("baseline treatment recorded for some subjects only", module="nuisance")
    treated = data.a0
    if treated.min() == treated.max():
        raise ConfigError(f"single-arm cohort (all A0={int(treated[0])}); propensity not estimable",
                          module="nuisance")
    if fixed is not None:
        return Propensity(kind="constant", value=fixed)
    if kind == "constant":
        return Propensity(kind="constant", value=float(treated.mean()))
    if kind != "logistic":
        raise ConfigError(f"unknown propensity kind '{kind}'", module="nuisance")
    try:
        result = sm.Logit(treated, sm.add_constant(data.l0, has_constant="add")).fit(disp=0)
    except Exception as e:
        raise NonConvergenceError(f"logistic propensity fit failed: {e}", module="nuisance") from e
    intercept, slope = (float(v) for v in result.params)
    logger.info(f"Fitted propensity: logit P(A0=1|L0) = {intercept:.4f} + {slope:.4f} L0")
    return Propensity(kind="logistic", intercept=intercept, slope=slope)


def fit_nuisances(cohort, spec: Optional[NuisanceSpec] = None) -> NuisanceSet:
    """Every intensity (outcomes, ell, z, censor) plus the propensity."""
    spec = spec or NuisanceSpec()
    data = cohort if isinstance(cohort, CohortIntervals) else CohortIntervals.from_cohort(cohort)
    J = max([1] + [Mark.outcome_index(m) for m in data.outcome_marks()])
    J = max(J, getattr(cohort, "J", 1))
    marks = Mark.space(J)
    fitted = parallel_map(lambda m: fit_intensity(data, m, misspec=spec.intensities.get(m)), marks, spec.threads)
    flags = {mark: option.json() for mark, option in spec.intensities.items() if option.is_misspecified}
    if spec.propensity_fixed is not None:
        flags["propensity"] = f"fixed={spec.propensity_fixed}"
    elif spec.propensity_kind == "constant":
        flags["propensity"] = "constant"
    return NuisanceSet(models=dict(zip(marks, fitted)),
                       propensity=fit_propensity(data, spec.propensity_kind, spec.propensity_fixed),
                       misspec_flags=flags)
