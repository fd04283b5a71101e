"""
Monte Carlo and forward-equation oracles for Psi_x^{a,alpha} = E^{a,alpha}[N^x(tau)].

Every alpha on a curve reuses the same per-subject substreams (common random
numbers), so contrasts are computed from paired per-subject differences.
"""

import logging
import math
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from ..config.settings import TRUTH_CONFIG
from ..models.event_model import STATES, state_rate_factors
from ..models.schema import ContrastResult, CurvePoint, InterventionSpec, Mark, Scenario
from ..utils.errors import ConfigError
from ..utils.parallel import parallel_map
from .simulator import law_models, sample_path, subject_rng

logger = logging.getLogger(__name__)

CONTRAST_KINDS = ("overall", "fixed_arm", "between_arm", "total_joint")


class MonteCarloValue(NamedTuple):
    value: float
    se: float
    reps: int


def _chunks(reps: int, threads: Optional[int]) -> List[range]:
    size = max(1, math.ceil(reps / max(1, 8 * (threads or 1))))
    return [range(start, min(start + size, reps)) for start in range(0, reps, size)]


def simulate_counts(scenario: Scenario, intervention: InterventionSpec, marks: Sequence[str], reps: int,
                    seed: int, threads: Optional[int] = None) -> np.ndarray:
    """N^x(tau) per replicate (rows, in subject order) and mark (columns)."""
    if reps < 1:
        raise ConfigError(f"reps must be >= 1, got {reps}", module="truth")

    def run(indices: range) -> np.ndarray:
        out = np.zeros((len(indices), len(marks)))
        for row, i in enumerate(indices):
            path = sample_path(scenario, intervention, subject_rng(seed, i), subject_id=i)
            out[row] = [path.count(mark) for mark in marks]
        return out

    return np.concatenate(parallel_map(run, _chunks(reps, threads), threads))


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    variance = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(variance / n)


def mc_psi(scenario: Scenario, intervention: InterventionSpec, mark_x: str, reps: int, seed: int,
           threads: Optional[int] = None) -> MonteCarloValue:
    """Sample mean of N^x(tau) under P^{a,alpha} with its binomial standard error."""
    mark_x = Mark.parse(mark_x)
    if mark_x == Mark.Z and intervention.alpha == 0:
        return MonteCarloValue(0.0, 0.0, reps)
    counts = simulate_counts(scenario, intervention, [mark_x], reps, seed, threads)[:, 0]
    value = math.fsum(counts) / reps
    return MonteCarloValue(value, math.sqrt(value * (1.0 - value) / reps), reps)


def mc_curve(scenario: Scenario, arm: Optional[int], alpha_grid: Sequence[float], reps: int, seed: int,
             threads: Optional[int] = None) -> List[CurvePoint]:
    """Psi_1 and Psi_z on an alpha grid with common random numbers across alpha."""
    grid = [float(a) for a in alpha_grid]
    if not grid:
        raise ConfigError("alpha grid is empty", module="truth")
    if any(a < 0 for a in grid) or grid != sorted(grid):
        raise ConfigError(f"alpha grid must be nonnegative and sorted, got {grid}", module="truth")
    points = []
    for alpha in grid:
        counts = simulate_counts(scenario, InterventionSpec(arm=arm, alpha=alpha),
                                 [Mark.outcome(1), Mark.Z], reps, seed, threads)
        psi1 = math.fsum(counts[:, 0]) / reps
        psi_z = math.fsum(counts[:, 1]) / reps
        points.append(CurvePoint(alpha=alpha, psi1=psi1, psi_z=psi_z,
                                 mc_se_1=math.sqrt(psi1 * (1 - psi1) / reps),
                                 mc_se_z=math.sqrt(psi_z * (1 - psi_z) / reps), reps=reps))
        logger.info(f"alpha={alpha}: psi1={psi1:.5f}, psi_z={psi_z:.5f}")
    return points


def mc_contrasts(scenario: Scenario, kind: str, alpha: float, reps: int, seed: int, arm: Optional[int] = None,
                 threads: Optional[int] = None) -> ContrastResult:
    """
    Outcome contrasts under common random numbers.

    overall:     Psi_1^{arm,1} - Psi_1^{arm,alpha} (arm may be None)
    fixed_arm:   Psi_1^{a,1} - Psi_1^{a,alpha}
    between_arm: Psi_1^{1,alpha} - Psi_1^{0,alpha}
    total_joint: Psi_1^{1,1} - Psi_1^{0,alpha} = indirect + direct
    """
    if kind not in CONTRAST_KINDS:
        raise ConfigError(f"unknown contrast '{kind}'; choose from {CONTRAST_KINDS}", module="truth")
    needs_arms = kind in ("fixed_arm", "between_arm", "total_joint") or arm is not None
    if needs_arms and not scenario.has_treatment:
        raise ConfigError(f"contrast '{kind}' references an arm but the scenario has no baseline treatment",
                          module="truth")
    if kind == "fixed_arm" and arm is None:
        raise ConfigError("fixed_arm contrast needs an arm", module="truth")

    def outcome(a: Optional[int], alpha_value: float) -> np.ndarray:
        return simulate_counts(scenario, InterventionSpec(arm=a, alpha=alpha_value), [Mark.outcome(1)],
                               reps, seed, threads)[:, 0]

    if kind in ("overall", "fixed_arm"):
        diff = outcome(arm, 1.0) - outcome(arm, alpha)
        value, se = _mean_se(diff)
        return ContrastResult(kind=kind, value=value, se=se)
    if kind == "between_arm":
        diff = outcome(1, alpha) - outcome(0, alpha)
        value, se = _mean_se(diff)
        return ContrastResult(kind=kind, value=value, se=se)

    treated_natural, treated_scaled, control_scaled = outcome(1, 1.0), outcome(1, alpha), outcome(0, alpha)
    indirect, indirect_se = _mean_se(treated_natural - treated_scaled)
    direct, direct_se = _mean_se(treated_scaled - control_scaled)
    _, total_se = _mean_se(treated_natural - control_scaled)
    return ContrastResult(kind=kind, value=indirect + direct, se=total_se,
                          components={"indirect": indirect, "direct": direct},
                          component_se={"indirect": indirect_se, "direct": direct_se})


def _baseline_nodes(scenario: Scenario) -> Tuple[np.ndarray, np.ndarray]:
    if scenario.l0_sample is not None:
        values, counts = np.unique(np.asarray(scenario.l0_sample, dtype=float), return_counts=True)
        return values, counts / counts.sum()
    nodes, weights = np.polynomial.legendre.leggauss(TRUTH_CONFIG["quadrature_nodes"])
    return 0.5 * (nodes + 1.0), 0.5 * weights


def forward_psi(scenario: Scenario, intervention: InterventionSpec) -> Dict[str, float]:
    """Psi_1 and Psi_z from the forward equations of the intervened chain, averaged over L0 (and A0)."""
    models = law_models(scenario, intervention)
    marks = Mark.event_marks(scenario.J)
    ell, z = marks.index(Mark.ELL), marks.index(Mark.Z)
    nus = np.array([models[m].nu for m in marks])
    l0, l0_weight = _baseline_nodes(scenario)

    if intervention.arm is not None:
        if not scenario.has_treatment:
            raise ConfigError("an arm was requested in a scenario without baseline treatment", module="truth")
        arms = [(float(intervention.arm), np.ones_like(l0))]
    elif scenario.has_treatment:
        treated = scenario.propensity.treated(l0)
        arms = [(1.0, treated), (0.0, 1.0 - treated)]
    else:
        arms = [(None, np.ones_like(l0))]

    t_start = 0.0 if np.all(nus >= 1.0) else 1e-12
    psi1 = psi_z = 0.0
    for a0, arm_weight in arms:
        factors = state_rate_factors(models, marks, a0, l0)  # (K_l0, 4, marks)
        K = l0.size

        def rhs(t: float, y: np.ndarray) -> np.ndarray:
            p = y[:4 * K].reshape(K, 4)
            rates = factors * (nus * t ** (nus - 1.0))
            dp = -p * rates.sum(axis=-1)
            for s, (n_ell, n_z) in enumerate(STATES):
                if n_ell == 0:
                    dp[:, s + 2] += p[:, s] * rates[:, s, ell]
                if n_z == 0:
                    dp[:, s + 1] += p[:, s] * rates[:, s, z]
            d1 = (p * rates[:, :, 0]).sum(axis=-1)
            dz = (p * rates[:, :, z]).sum(axis=-1)
            return np.concatenate([dp.ravel(), d1, dz])

        y0 = np.zeros(6 * K)
        y0[0:4 * K:4] = 1.0
        solution = solve_ivp(rhs, (t_start, scenario.tau), y0, method="DOP853",
                             rtol=TRUTH_CONFIG["ode_rtol"], atol=TRUTH_CONFIG["ode_atol"])
        if not solution.success:
            raise ConfigError(f"forward equations failed: {solution.message}", module="truth")
        end = solution.y[:, -1]
        weight = l0_weight * arm_weight
        psi1 += float(np.dot(weight, end[4 * K:5 * K]))
        psi_z += float(np.dot(weight, end[5 * K:]))
    return {Mark.outcome(1): psi1, Mark.Z: psi_z}
