"""
Clever weights w^{a,alpha}_t = w^a_t * w^alpha_t.

    w^a_t     = 1{A0 = a} / (pi(A0|L0) * exp(-Lambda^c(t-)))
    w^alpha_t = alpha^{N^z(t-)} * exp(-(alpha - 1) * Lambda^z(t))

with observed-law cumulative hazards along the subject's own path.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel

from ..models.schema import IntensityModel, Mark, Propensity, SubjectPath, WeightDiagnostics
from ..utils.errors import PositivityError
from .intervals import CohortIntervals

logger = logging.getLogger(__name__)

# Interior evaluation points per interval for weight maxima
_DIAGNOSTIC_POINTS = np.linspace(0.0, 1.0, 9)


class WeightEvaluator:
    """Vectorised w^a * w^alpha at (interval, time) pairs of a cohort."""

    def __init__(self, data: CohortIntervals, propensity: Propensity, censor_model: IntensityModel,
                 z_model: IntensityModel, arm: Optional[int], alpha: float, truncate: Optional[float] = None):
        self.data = data
        self.censor_model = censor_model
        self.z_model = z_model
        self.alpha = float(alpha)
        self.truncate = truncate
        self.baseline = self._baseline_factor(data, propensity, arm)
        self.censor_factor = data.interval_factor(censor_model)
        self.censor_before = data.cumulative_before(censor_model)
        self.z_factor = data.interval_factor(z_model)
        self.z_before = data.cumulative_before(z_model)

    @staticmethod
    def _baseline_factor(data: CohortIntervals, propensity: Propensity, arm: Optional[int]) -> np.ndarray:
        if arm is None:
            return np.ones(data.n)
        in_arm = data.a0 == arm
        prob = propensity.prob(np.nan_to_num(data.a0, nan=-1), data.l0)
        if np.any(in_arm & ~(prob > 0)):
            bad = int(np.flatnonzero(in_arm & ~(prob > 0))[0])
            raise PositivityError(f"estimated propensity of arm {arm} is zero for subject {bad}", module="weights")
        return np.where(in_arm, 1.0 / np.where(prob > 0, prob, 1.0), 0.0)

    def censor_cumulative(self, interval, t) -> np.ndarray:
        start = self.data.start[interval]
        return self.censor_before[interval] + self.censor_factor[interval] * (
            np.asarray(t) ** self.censor_model.nu - start ** self.censor_model.nu)

    def z_cumulative(self, interval, t) -> np.ndarray:
        start = self.data.start[interval]
        return self.z_before[interval] + self.z_factor[interval] * (
            np.asarray(t) ** self.z_model.nu - start ** self.z_model.nu)

    def treatment_censoring(self, interval, t) -> np.ndarray:
        return self.baseline[self.data.subject[interval]] * np.exp(self.censor_cumulative(interval, t))

    def alpha_part(self, interval, t) -> np.ndarray:
        n_z = self.data.n_z[interval]
        cumulative = self.z_cumulative(interval, t)
        if self.alpha == 1.0:
            return np.ones(np.shape(cumulative))
        if self.alpha == 0.0:
            return (1 - n_z) * np.exp(cumulative)
        return self.alpha ** n_z * np.exp(-(self.alpha - 1.0) * cumulative)

    def __call__(self, interval, t) -> np.ndarray:
        weight = self.treatment_censoring(interval, t) * self.alpha_part(interval, t)
        if self.truncate is not None:
            weight = np.minimum(weight, self.truncate)
        return weight

    def subject_maxima(self) -> np.ndarray:
        """Largest untruncated weight per subject over a fine grid of each interval."""
        data = self.data
        span = data.stop - data.start
        times = data.start[:, None] + span[:, None] * _DIAGNOSTIC_POINTS[None, :]
        intervals = np.repeat(np.arange(span.size)[:, None], _DIAGNOSTIC_POINTS.size, axis=1)
        cap, self.truncate = self.truncate, None
        try:
            values = self(intervals, times).max(axis=1)
        finally:
            self.truncate = cap
        maxima = np.zeros(data.n)
        np.maximum.at(maxima, data.subject, values)
        return maxima

    def diagnostics(self) -> WeightDiagnostics:
        maxima = self.subject_maxima()
        data = self.data
        span = data.stop - data.start
        n_truncated = 0
        if self.truncate is not None:
            times = data.start[:, None] + span[:, None] * _DIAGNOSTIC_POINTS[None, :]
            intervals = np.repeat(np.arange(span.size)[:, None], _DIAGNOSTIC_POINTS.size, axis=1)
            cap, self.truncate = self.truncate, None
            try:
                n_truncated = int(np.sum(self(intervals, times) > cap))
            finally:
                self.truncate = cap
        return WeightDiagnostics(max_weight=float(maxima.max()) if maxima.size else 0.0,
                                 mean_max_weight=float(maxima.mean()) if maxima.size else 0.0,
                                 truncation=self.truncate, n_truncated=n_truncated)


def _single(path: SubjectPath) -> CohortIntervals:
    return CohortIntervals.from_paths([path], path.tau)


def _locate(data: CohortIntervals, t: float) -> int:
    """Interval holding the state just before t (the last one if t is past follow-up)."""
    return int(min(np.searchsorted(data.start, t, side="left") - 1, data.start.size - 1)) if t > 0 else 0


def treatment_censoring_weight(pi_hat: Propensity, censor_model: IntensityModel, path: SubjectPath, t: float,
                               arm: Optional[int]) -> float:
    """delta_a(A0) / (pi(A0|L0) exp(-Lambda^c(t-))) along the path; zero outside the arm."""
    data = _single(path)
    evaluator = WeightEvaluator(data, pi_hat, censor_model, IntensityModel.zero(Mark.Z), arm, 1.0)
    interval = _locate(data, t)
    return float(evaluator.treatment_censoring(interval, min(t, data.stop[interval])))


def alpha_weight(z_model: IntensityModel, path: SubjectPath, t: float, alpha: float) -> float:
    """alpha^{N^z(t-)} exp(-(alpha-1) Lambda^z(t)) with the observed z intensity."""
    data = _single(path)
    evaluator = WeightEvaluator(data, Propensity.trivial(), IntensityModel.zero(Mark.CENSOR), z_model, None, alpha)
    interval = _locate(data, t)
    return float(evaluator.alpha_part(interval, min(t, data.stop[interval])))


class WeightPiece(BaseModel):
    start: float
    stop: float
    n_ell: int
    n_z: int
    w_a: List[float]
    w_alpha: List[float]


class WeightTrace(BaseModel):
    """Weights of one path, sampled at evenly spaced points of each frozen-state interval."""

    alpha: float
    arm: Optional[int] = None
    pieces: List[WeightPiece]

    @property
    def max_weight(self) -> float:
        return max((a * b for p in self.pieces for a, b in zip(p.w_a, p.w_alpha)), default=0.0)


def weight_trace(path: SubjectPath, pi_hat: Propensity, censor_model: IntensityModel, z_model: IntensityModel,
                 arm: Optional[int], alpha: float) -> WeightTrace:
    data = _single(path)
    evaluator = WeightEvaluator(data, pi_hat, censor_model, z_model, arm, alpha)
    pieces = []
    for k in range(data.start.size):
        times = data.start[k] + (data.stop[k] - data.start[k]) * _DIAGNOSTIC_POINTS
        pieces.append(WeightPiece(start=float(data.start[k]), stop=float(data.stop[k]), n_ell=int(data.n_ell[k]),
                                  n_z=int(data.n_z[k]),
                                  w_a=evaluator.treatment_censoring(np.full(times.size, k), times).tolist(),
                                  w_alpha=evaluator.alpha_part(np.full(times.size, k), times).tolist()))
    return WeightTrace(alpha=alpha, arm=arm, pieces=pieces)


def weight_diagnostics(data: CohortIntervals, propensity: Propensity, models: Dict[str, IntensityModel],
                       arm: Optional[int], alphas: Sequence[float]) -> pd.DataFrame:
    """Per-subject maximum weight, one column per alpha."""
    frame = pd.DataFrame({"id": np.arange(data.n)})
    for alpha in alphas:
        evaluator = WeightEvaluator(data, propensity, models[Mark.CENSOR], models[Mark.Z], arm, alpha)
        frame[f"max_weight_alpha_{alpha:g}"] = evaluator.subject_maxima()
    return frame
