from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from ..models.schema import IntensityModel, Mark, SubjectPath
from ..models.event_model import rate_factor


@dataclass(frozen=True)
class CohortIntervals:
    """Cohort flattened into frozen-state intervals and jumps.

    Jump k of a subject closes that subject's interval k, so `jump_interval`
    indexes the interval whose state holds just before the jump.
    """

    n: int
    tau: float
    l0: np.ndarray
    a0: np.ndarray            # nan where the subject has no baseline treatment
    subject: np.ndarray
    start: np.ndarray
    stop: np.ndarray
    n_ell: np.ndarray
    n_z: np.ndarray
    jump_subject: np.ndarray
    jump_time: np.ndarray
    jump_mark: np.ndarray
    jump_interval: np.ndarray

    @classmethod
    def from_paths(cls, paths: List[SubjectPath], tau: float) -> "CohortIntervals":
        subject, start, stop, n_ell, n_z = [], [], [], [], []
        j_subject, j_time, j_mark, j_interval = [], [], [], []
        for i, path in enumerate(paths):
            offset = len(start)
            for s, e, state_ell, state_z in path.segments():
                subject.append(i)
                start.append(s)
                stop.append(e)
                n_ell.append(state_ell)
                n_z.append(state_z)
            for k, (time, mark) in enumerate(path.jumps):
                j_subject.append(i)
                j_time.append(time)
                j_mark.append(mark)
                j_interval.append(offset + k)
        a0 = np.array([np.nan if p.a0 is None else p.a0 for p in paths], dtype=float)
        return cls(
            n=len(paths), tau=float(tau),
            l0=np.array([p.l0 for p in paths], dtype=float), a0=a0,
            subject=np.array(subject, dtype=int), start=np.array(start, dtype=float),
            stop=np.array(stop, dtype=float), n_ell=np.array(n_ell, dtype=int), n_z=np.array(n_z, dtype=int),
            jump_subject=np.array(j_subject, dtype=int), jump_time=np.array(j_time, dtype=float),
            jump_mark=np.array(j_mark, dtype=object), jump_interval=np.array(j_interval, dtype=int),
        )

    @classmethod
    def from_cohort(cls, cohort) -> "CohortIntervals":
        return cls.from_paths(cohort.paths, cohort.tau)

    @property
    def has_treatment(self) -> bool:
        return not np.all(np.isnan(self.a0))

    def a0_covariate(self) -> np.ndarray:
        return np.nan_to_num(self.a0, nan=0.0)

    def interval_factor(self, model: IntensityModel) -> np.ndarray:
        """eta*exp(lin) on every interval (zero where inadmissible)."""
        s = self.subject
        return rate_factor(model, self.n_ell, self.n_z, self.a0_covariate()[s], self.l0[s])

    def cumulative_before(self, model: IntensityModel) -> np.ndarray:
        """Integral of the model's hazard from 0 to each interval start along the subject's path."""
        increments = self.interval_factor(model) * (self.stop ** model.nu - self.start ** model.nu)
        totals = np.cumsum(increments)
        before = totals - increments
        first = np.r_[True, self.subject[1:] != self.subject[:-1]]
        base = np.maximum.accumulate(np.where(first, np.arange(self.subject.size), 0))
        return before - before[base]

    def count(self, mark: str) -> np.ndarray:
        """N^mark(tau) per subject."""
        hits = self.jump_subject[self.jump_mark == mark]
        return np.bincount(hits, minlength=self.n).astype(float)

    def covariates(self) -> Dict[str, np.ndarray]:
        s = self.subject
        return {"a0": self.a0_covariate()[s], "l0": self.l0[s], "z": self.n_z.astype(float),
                "ell": self.n_ell.astype(float)}

    def jump_mask(self, mark: str) -> np.ndarray:
        return self.jump_mark == mark

    def outcome_marks(self) -> List[str]:
        return sorted({m for m in self.jump_mark if Mark.is_outcome(m)})
