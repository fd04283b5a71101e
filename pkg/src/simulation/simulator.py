"""
Exact path sampling under the observational law and under P^{a,alpha}.

Between jumps every hazard is a frozen Weibull-Cox hazard, so the next event
time solves sum_x cumhaz_x(s, t) = E, E ~ Exp(1), a monotone equation. The mark
is drawn proportionally to the cause-specific hazards at that time.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import brentq

from ..config.settings import SIMULATION_CONFIG
from ..models.schema import IntensityModel, InterventionSpec, Mark, Scenario, SubjectPath
from ..utils.errors import ConfigError, NonConvergenceError
from ..utils.parallel import parallel_map

logger = logging.getLogger(__name__)


class Cohort(BaseModel):
    paths: List[SubjectPath]
    tau: float
    J: int = 1
    seed: Optional[int] = None
    scenario: Optional[Scenario] = None
    intervention: Optional[InterventionSpec] = None

    class Config:
        allow_mutation = False

    @property
    def n(self) -> int:
        return len(self.paths)

    @property
    def has_treatment(self) -> bool:
        return any(path.a0 is not None for path in self.paths)

    def counts(self, mark: str) -> np.ndarray:
        """N^mark(tau) for every subject."""
        return np.array([path.count(mark) for path in self.paths], dtype=float)


def subject_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream for one subject, independent of cohort size."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def law_models(scenario: Scenario, intervention: Optional[InterventionSpec]) -> Dict[str, IntensityModel]:
    """Intensities governing the sampled law: censoring dropped and z scaled under an intervention."""
    models = dict(scenario.models)
    if intervention is None:
        return models
    models.pop(Mark.CENSOR, None)
    z_model = models[Mark.Z]
    models[Mark.Z] = IntensityModel.zero(Mark.Z) if intervention.alpha == 0 else z_model.scaled(intervention.alpha)
    return models


def _draw_baseline(scenario: Scenario, intervention: Optional[InterventionSpec],
                   rng: np.random.Generator) -> Tuple[float, Optional[int]]:
    if scenario.l0_sample is None:
        l0 = float(rng.uniform())
    else:
        l0 = float(scenario.l0_sample[int(rng.integers(len(scenario.l0_sample)))])
    arm = intervention.arm if intervention is not None else None
    if arm is not None and not scenario.has_treatment:
        raise ConfigError("an arm was requested in a scenario without baseline treatment", module="simulator")
    if not scenario.has_treatment:
        return l0, None
    # the treatment uniform is always consumed; later draws line up across arms
    u = float(rng.uniform())
    if arm is not None:
        return l0, arm
    return l0, int(u < float(scenario.propensity.treated(l0)))


def _next_time(factors: List[Tuple[float, float]], s: float, tau: float, target: float) -> float:
    def excess(t: float) -> float:
        return sum(f * (t ** nu - s ** nu) for f, nu in factors) - target

    def rate(t: float) -> float:
        return sum(f * nu * t ** (nu - 1.0) for f, nu in factors)

    try:
        t = brentq(excess, s, tau, xtol=SIMULATION_CONFIG["root_xtol"], maxiter=200)
    except (RuntimeError, ValueError) as e:
        raise NonConvergenceError(f"event-time inversion failed on [{s}, {tau}]: {e}", module="simulator") from e
    tolerance = SIMULATION_CONFIG["residual_tol"] * max(1.0, target)
    for _ in range(5):
        residual = excess(t)
        if abs(residual) <= tolerance:
            return t
        slope = rate(t)
        if not slope > 0 or not np.isfinite(slope):
            break
        t = min(max(t - residual / slope, s), tau)
    residual = excess(t)
    if abs(residual) > tolerance:
        raise NonConvergenceError(f"cumulative-hazard residual {residual:.3e} above tolerance",
                                  module="simulator", detail=float(residual))
    return t


def sample_path(scenario: Scenario, intervention: Optional[InterventionSpec], rng: np.random.Generator,
                subject_id: int = 0) -> SubjectPath:
    """Sample one trajectory from the observational (None) or intervened law."""
    models = [m for m in law_models(scenario, intervention).values() if m.active]
    tau = scenario.tau
    l0, a0 = _draw_baseline(scenario, intervention, rng)
    s, n_ell, n_z = 0.0, 0, 0
    jumps: List[Tuple[float, str]] = []

    for _ in range(SIMULATION_CONFIG["max_jumps"]):
        live = [(m, m.eta * np.exp(m.linear_predictor(n_ell, n_z, a0, l0)))
                for m in models if m.admissible(n_ell, n_z)]
        if not live:
            break
        target = float(rng.exponential())
        factors = [(float(f), m.nu) for m, f in live]
        if sum(f * (tau ** nu - s ** nu) for f, nu in factors) < target:
            break
        t = _next_time(factors, s, tau, target)
        if t <= s:
            t = float(np.nextafter(s, np.inf))
        hazards = np.array([f * nu * t ** (nu - 1.0) for f, nu in factors])
        total = hazards.sum()
        if not total > 0 or not np.isfinite(total):
            raise NonConvergenceError(f"degenerate hazards at sampled time {t}", module="simulator")
        pick = int(np.searchsorted(np.cumsum(hazards) / total, rng.uniform(), side="right"))
        mark = live[min(pick, len(live) - 1)][0].mark
        jumps.append((t, mark))
        if Mark.is_terminal(mark):
            break
        if mark == Mark.ELL:
            n_ell = 1
        elif mark == Mark.Z:
            n_z = 1
        s = t

    return SubjectPath(id=subject_id, l0=l0, a0=a0, jumps=jumps, tau=tau)


def sample_cohort(scenario: Scenario, intervention: Optional[InterventionSpec], n: int, seed: int,
                  start_index: int = 0, threads: Optional[int] = None) -> Cohort:
    """n independent paths; subject i uses substream (seed, start_index + i)."""
    if n < 1:
        raise ConfigError(f"cohort size must be >= 1, got {n}", module="simulator")
    indices = range(start_index, start_index + n)
    paths = parallel_map(lambda i: sample_path(scenario, intervention, subject_rng(seed, i), subject_id=i),
                         indices, threads)
    logger.info(f"Sampled {n} paths (seed={seed}, intervention={intervention.dict() if intervention else None})")
    return Cohort(paths=paths, tau=scenario.tau, J=scenario.J, seed=seed, scenario=scenario,
                  intervention=intervention)
