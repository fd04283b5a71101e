"""
Backward recursion for g_x(t, state | a0, l0) = E^{a,alpha}[N^x(tau) | state at t].

States are (N^ell, N^z) in {00, 01, 10, 11} plus absorbing outcomes. On each
grid step the intensities are replaced by their step averages (the exact step
integrals divided by the step length) and the augmented system

    d/du [g; c] = [[A, b], [0, 0]] [g; c],   u = tau - t,

is propagated with one matrix exponential, where A is the transient generator
and b collects the absorption rewards (1{j=1} for x = outcome_1 and the current
N^z for x = z).
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import expm

from ..config.settings import MARKOV_CONFIG
from ..models.event_model import STATES, state_rate_factors
from ..models.schema import IntensityModel, InterventionSpec, Mark, Propensity
from ..utils.errors import ConfigError, GridResolutionError
from ..utils.parallel import parallel_map

logger = logging.getLogger(__name__)

# Augmented system: 4 transient states, then the reward columns for outcome_1 and z
_REWARD_1, _REWARD_Z = 4, 5
_N_Z = np.array([n_z for _, n_z in STATES], dtype=float)


@dataclass(frozen=True)
class ValueTable:
    grid: np.ndarray        # (M+1,), uniform on [0, tau]
    g1: np.ndarray          # (R, M+1, 4)
    gz: np.ndarray          # (R, M+1, 4)
    a0: np.ndarray          # (R,), nan where the scenario has no baseline treatment
    l0: np.ndarray          # (R,)
    alpha: float
    arm: Optional[int] = None

    @property
    def tau(self) -> float:
        return float(self.grid[-1])

    def values(self, x: str, t, state, request) -> np.ndarray:
        """Linear interpolation of g_x in t; `state` is the index 2*n_ell + n_z."""
        table = self.g1 if x == Mark.outcome(1) else self.gz if x == Mark.Z else None
        if table is None:
            raise ConfigError(f"value tables exist for outcome_1 and z, not '{x}'", module="markov_engine")
        t = np.asarray(t, dtype=float)
        steps = self.grid.size - 1
        pos = np.clip(t / (self.tau / steps), 0.0, steps)
        k = np.minimum(np.floor(pos).astype(int), steps - 1)
        frac = pos - k
        return table[request, k, state] * (1.0 - frac) + table[request, k + 1, state] * frac

    def initial(self, x: str) -> np.ndarray:
        """g_x(0, 00) for every request."""
        return (self.g1 if x == Mark.outcome(1) else self.gz)[:, 0, 0]


def state_index(n_ell, n_z):
    return 2 * np.asarray(n_ell, dtype=int) + np.asarray(n_z, dtype=int)


def _step_integrals(models: Dict[str, IntensityModel], marks: Sequence[str], alpha: float,
                    grid: np.ndarray, a0, l0) -> np.ndarray:
    """Integrated intensities per request, step, state and mark: (R, M, 4, K)."""
    factors = state_rate_factors(models, marks, a0, l0)
    nus = np.array([models[m].nu for m in marks])
    powers = grid[:, None] ** nus[None, :]
    increments = powers[1:] - powers[:-1]
    integrals = factors[:, None, :, :] * increments[None, :, None, :]
    integrals[..., marks.index(Mark.Z)] *= alpha
    return integrals


def _solve_block(models: Dict[str, IntensityModel], marks: Sequence[str], alpha: float, grid: np.ndarray,
                 a0, l0, J: int) -> Tuple[np.ndarray, np.ndarray]:
    integrals = _step_integrals(models, marks, alpha, grid, a0, l0)
    if np.any(integrals < 0) or not np.all(np.isfinite(integrals)):
        raise ConfigError("negative or non-finite intensity in the intervened generator", module="markov_engine")

    total = integrals.sum(axis=-1)
    # the first cell is exempt; hazards with nu < 1 are singular at t = 0
    if total.shape[1] >= 4:
        curvature = np.abs(total[:, 3:] - 2.0 * total[:, 2:-1] + total[:, 1:-2]).max()
        if curvature > MARKOV_CONFIG["grid_tolerance"]:
            raise GridResolutionError(f"grid of {grid.size - 1} steps too coarse (step error estimate "
                                      f"{curvature:.3g} > {MARKOV_CONFIG['grid_tolerance']})",
                                      module="markov_engine")

    R, M = integrals.shape[:2]
    ell, z = marks.index(Mark.ELL), marks.index(Mark.Z)
    outcome = integrals[..., :J]
    generator = np.zeros((R, M, 6, 6))
    for s, (n_ell, n_z) in enumerate(STATES):
        if n_ell == 0:
            generator[:, :, s, s + 2] = integrals[:, :, s, ell]
        if n_z == 0:
            generator[:, :, s, s + 1] = integrals[:, :, s, z]
        generator[:, :, s, s] = -total[:, :, s]
        generator[:, :, s, _REWARD_1] = outcome[:, :, s, 0]
        generator[:, :, s, _REWARD_Z] = outcome[:, :, s, :].sum(axis=-1) * n_z

    propagators = expm(generator.reshape(R * M, 6, 6)).reshape(R, M, 6, 6)

    carry = np.zeros((R, 6, 2))
    carry[:, _REWARD_1, 0] = 1.0
    carry[:, :4, 1] = _N_Z
    carry[:, _REWARD_Z, 1] = 1.0
    g1 = np.empty((R, M + 1, 4))
    gz = np.empty((R, M + 1, 4))
    g1[:, M], gz[:, M] = carry[:, :4, 0], carry[:, :4, 1]
    for m in range(M - 1, -1, -1):
        carry = np.einsum("rij,rjk->rik", propagators[:, m], carry)
        g1[:, m], gz[:, m] = carry[:, :4, 0], carry[:, :4, 1]
    return np.clip(g1, 0.0, 1.0), np.clip(gz, 0.0, 1.0)


def backward_solve(models: Dict[str, IntensityModel], intervention: InterventionSpec, tau: float,
                   grid_size: Optional[int] = None, a0=None, l0=0.0,
                   threads: Optional[int] = None) -> ValueTable:
    """Value tables under P^{a,alpha} for the request set (a0, l0); a0 None means no treatment covariate."""
    M = grid_size or MARKOV_CONFIG["grid_size"]
    if M < 2:
        raise ConfigError(f"grid size must be >= 2, got {M}", module="markov_engine")
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}", module="markov_engine")
    J = sum(1 for mark in models if Mark.is_outcome(mark))
    marks = Mark.event_marks(J)
    missing = [mark for mark in marks if mark not in models]
    if missing:
        raise ConfigError(f"missing intensity models for {missing}", module="markov_engine")

    l0 = np.atleast_1d(np.asarray(l0, dtype=float))
    a0_values = (np.full(l0.shape, np.nan) if a0 is None
                 else np.broadcast_to(np.asarray(a0, dtype=float), l0.shape).copy())
    a0_covariate = None if a0 is None else a0_values
    grid = np.linspace(0.0, tau, M + 1)

    chunk = max(1, MARKOV_CONFIG["batch_matrices"] // M)
    blocks = [slice(start, min(start + chunk, l0.size)) for start in range(0, l0.size, chunk)]
    results = parallel_map(
        lambda b: _solve_block(models, marks, intervention.alpha, grid,
                               None if a0_covariate is None else a0_covariate[b], l0[b], J),
        blocks, threads)
    g1 = np.concatenate([r[0] for r in results])
    gz = np.concatenate([r[1] for r in results])
    logger.debug(f"Backward recursion: {l0.size} requests, {M} steps, alpha={intervention.alpha}")
    return ValueTable(grid=grid, g1=g1, gz=gz, a0=a0_values, l0=l0, alpha=intervention.alpha,
                      arm=intervention.arm)


def jump_contrast(table: ValueTable, x: str, jump_mark: str, t, n_ell, n_z, request, alpha: float) -> np.ndarray:
    """Vectorised clever covariate; zero where the jump is inadmissible."""
    n_ell = np.asarray(n_ell, dtype=int)
    n_z = np.asarray(n_z, dtype=int)
    current = state_index(n_ell, n_z)
    before = table.values(x, t, current, request)
    if Mark.is_outcome(jump_mark):
        if x == Mark.Z:
            after = n_z.astype(float)
        else:
            after = np.full(np.shape(before), 1.0 if jump_mark == Mark.outcome(1) else 0.0)
        return after - before
    if jump_mark == Mark.ELL:
        after = table.values(x, t, state_index(np.ones_like(n_ell), n_z), request)
        return np.where(n_ell == 0, after - before, 0.0)
    if jump_mark == Mark.Z:
        if alpha == 0:
            return np.zeros(np.shape(before))
        after = table.values(x, t, state_index(n_ell, np.ones_like(n_z)), request)
        return np.where(n_z == 0, alpha * (after - before), 0.0)
    raise ConfigError(f"no clever covariate for mark '{jump_mark}'", module="markov_engine")


def clever_covariate(table: ValueTable, t: float, state: Tuple[int, int], jump_mark: str, alpha: float,
                     x: str = "outcome_1", request: int = 0) -> float:
    """h^{x,j}(t): post-jump value minus no-jump value (times alpha for z)."""
    n_ell, n_z = state
    if (jump_mark == Mark.ELL and n_ell == 1) or (jump_mark == Mark.Z and n_z == 1):
        raise ConfigError(f"jump '{jump_mark}' is inadmissible from state {state}", module="markov_engine")
    if not 0.0 <= t <= table.tau:
        raise ConfigError(f"t={t} outside the table grid [0, {table.tau}]", module="markov_engine")
    return float(jump_contrast(table, x, jump_mark, t, n_ell, n_z, request, alpha))


def plugin_psi(models: Dict[str, IntensityModel], intervention: InterventionSpec, x: str, tau: float,
               l0_sample, a0_sample=None, propensity: Optional[Propensity] = None,
               grid_size: Optional[int] = None, threads: Optional[int] = None) -> float:
    """
    Substitution estimator: mean over the baseline sample of g_x(0, 00 | a, l0).

    The arm comes from the intervention; without one, the observed a0 values are
    used when given, else g is averaged over the propensity.
    """
    l0 = np.atleast_1d(np.asarray(l0_sample, dtype=float))
    if l0.size == 0:
        raise ConfigError("plugin_psi needs a nonempty L0 sample", module="markov_engine")
    if intervention.alpha == 0 and x == Mark.Z:
        return 0.0
    if intervention.arm is not None:
        return float(_mean_initial(models, intervention, x, tau, np.full(l0.shape, intervention.arm), l0,
                                   grid_size, threads).mean())
    if a0_sample is not None:
        return float(_mean_initial(models, intervention, x, tau, np.asarray(a0_sample, dtype=float), l0,
                                   grid_size, threads).mean())
    if propensity is not None and propensity.kind != "trivial":
        treated = propensity.treated(l0)
        g_1 = _mean_initial(models, intervention, x, tau, np.ones(l0.shape), l0, grid_size, threads)
        g_0 = _mean_initial(models, intervention, x, tau, np.zeros(l0.shape), l0, grid_size, threads)
        return float((treated * g_1 + (1.0 - treated) * g_0).mean())
    return float(_mean_initial(models, intervention, x, tau, None, l0, grid_size, threads).mean())


def _mean_initial(models, intervention, x, tau, a0, l0, grid_size, threads) -> np.ndarray:
    """g_x(0, 00) per subject, solving once per distinct (a0, l0)."""
    keys = np.column_stack([np.zeros(l0.shape) if a0 is None else a0, l0])
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    table = backward_solve(models, intervention, tau, grid_size,
                           None if a0 is None else unique[:, 0], unique[:, 1], threads)
    return table.initial(x)[np.ravel(inverse)]


def table_frame(table: ValueTable, request: int = 0) -> pd.DataFrame:
    """Long-format dump of one request's g values over the grid."""
    frames = []
    for s, (n_ell, n_z) in enumerate(STATES):
        frames.append(pd.DataFrame({
            "t": table.grid,
            "state": f"{n_ell}{n_z}",
            "g1": table.g1[request, :, s],
            "gz": table.gz[request, :, s],
        }))
    return pd.concat(frames, ignore_index=True)
