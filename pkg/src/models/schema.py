from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, root_validator, validator
from scipy.special import expit


class Mark:
    """Mark space {outcome_1..outcome_J, ell, z, censor}."""

    ELL = "ell"
    Z = "z"
    CENSOR = "censor"
    OUTCOME_PREFIX = "outcome_"

    @staticmethod
    def outcome(j: int) -> str:
        if j < 1:
            raise ValueError(f"outcome index must be >= 1, got {j}")
        return f"{Mark.OUTCOME_PREFIX}{j}"

    @staticmethod
    def outcomes(J: int) -> List[str]:
        return [Mark.outcome(j) for j in range(1, J + 1)]

    @staticmethod
    def space(J: int) -> List[str]:
        return Mark.outcomes(J) + [Mark.ELL, Mark.Z, Mark.CENSOR]

    @staticmethod
    def event_marks(J: int) -> List[str]:
        """Marks with an intensity under the intervened law (censoring removed)."""
        return Mark.outcomes(J) + [Mark.ELL, Mark.Z]

    @staticmethod
    def is_outcome(mark: str) -> bool:
        return mark.startswith(Mark.OUTCOME_PREFIX)

    @staticmethod
    def is_terminal(mark: str) -> bool:
        return Mark.is_outcome(mark) or mark == Mark.CENSOR

    @staticmethod
    def outcome_index(mark: str) -> int:
        return int(mark[len(Mark.OUTCOME_PREFIX):])

    @staticmethod
    def parse(text: str) -> str:
        """Accepts `outcome_1`, `outcome1`, `1`, `ell`, `z`, `censor`."""
        value = str(text).strip().lower()
        if value in (Mark.ELL, Mark.Z, Mark.CENSOR):
            return value
        if value.startswith("outcome"):
            value = value[len("outcome"):].lstrip("_")
        if value.isdigit() and int(value) >= 1:
            return Mark.outcome(int(value))
        raise ValueError(f"unknown mark '{text}'")


# Order of the log-linear covariates in every intensity
COVARIATES: Tuple[str, ...] = ("a0", "l0", "z", "ell")


class IntensityModel(BaseModel):
    """Weibull-Cox cause-specific intensity for one mark."""

    mark: str
    eta: float = Field(..., description="Weibull scale-rate")
    nu: float = Field(1.0, description="Weibull shape")
    beta_a0: float = 0.0
    beta_l0: float = 0.0
    beta_z: float = 0.0
    beta_ell: float = 0.0
    active: bool = Field(True, description="False for a structurally zero hazard")

    class Config:
        allow_mutation = False

    @validator("nu")
    def _positive_shape(cls, value):
        if not value > 0 or not np.isfinite(value):
            raise ValueError(f"nu must be positive and finite, got {value}")
        return value

    @root_validator(skip_on_failure=True)
    def _positive_scale(cls, values):
        eta = values.get("eta")
        if values.get("active", True):
            if not eta > 0 or not np.isfinite(eta):
                raise ValueError(f"eta must be positive and finite for mark {values.get('mark')}, got {eta}")
        elif eta < 0:
            raise ValueError("eta must be nonnegative")
        return values

    @classmethod
    def zero(cls, mark: str) -> "IntensityModel":
        return cls(mark=mark, eta=0.0, nu=1.0, active=False)

    @property
    def betas(self) -> np.ndarray:
        return np.array([self.beta_a0, self.beta_l0, self.beta_z, self.beta_ell])

    def admissible(self, n_ell: int, n_z: int) -> bool:
        if not self.active:
            return False
        if self.mark == Mark.Z and n_z >= 1:
            return False
        if self.mark == Mark.ELL and n_ell >= 1:
            return False
        return True

    def linear_predictor(self, n_ell: int, n_z: int, a0: Optional[int], l0: float) -> float:
        a = 0.0 if a0 is None else float(a0)
        return self.beta_a0 * a + self.beta_l0 * l0 + self.beta_z * n_z + self.beta_ell * n_ell

    def scaled(self, factor: float) -> "IntensityModel":
        """Intercept fluctuation: the hazard multiplied by `factor`."""
        if not self.active:
            return self
        return self.copy(update={"eta": self.eta * factor})


class Propensity(BaseModel):
    """P(A0=1 | L0): trivial (no treatment), constant or logistic in L0."""

    kind: Literal["trivial", "constant", "logistic"] = "constant"
    value: Optional[float] = None
    intercept: float = 0.0
    slope: float = 0.0

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def _check_value(cls, values):
        if values.get("kind") == "constant":
            value = values.get("value")
            if value is None or not 0.0 < value < 1.0:
                raise ValueError(f"constant propensity must lie in (0,1), got {value}")
        return values

    @classmethod
    def trivial(cls) -> "Propensity":
        return cls(kind="trivial")

    def treated(self, l0):
        if self.kind == "trivial":
            return np.ones_like(np.asarray(l0, dtype=float))
        if self.kind == "constant":
            return np.full_like(np.asarray(l0, dtype=float), self.value)
        return expit(self.intercept + self.slope * np.asarray(l0, dtype=float))

    def prob(self, a0, l0):
        """P(A0 = a0 | L0 = l0); 1 for the trivial propensity."""
        if self.kind == "trivial":
            return np.ones_like(np.asarray(l0, dtype=float))
        p1 = self.treated(l0)
        return np.where(np.asarray(a0) == 1, p1, 1.0 - p1)


class ScenarioConfig(BaseModel):
    """User-facing scenario description; `build_scenario` turns it into a `Scenario`."""

    preset: Optional[str] = None
    tau: Optional[float] = None
    J: int = 1
    eta: Optional[float] = None
    nu: Optional[float] = None
    censor_eta: Optional[float] = None
    models: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    propensity: Optional[Union[float, Dict[str, Any], str]] = None
    l0: Optional[Union[str, List[float]]] = None


class Scenario(BaseModel):
    """Validated scenario: one intensity per mark, L0 law, propensity, horizon."""

    name: str = "custom"
    models: Dict[str, IntensityModel]
    propensity: Optional[Propensity] = None
    l0_sample: Optional[List[float]] = None
    tau: float
    J: int = 1

    class Config:
        allow_mutation = False

    @property
    def has_treatment(self) -> bool:
        return self.propensity is not None and self.propensity.kind != "trivial"

    @property
    def outcome_marks(self) -> List[str]:
        return Mark.outcomes(self.J)

    @property
    def event_marks(self) -> List[str]:
        return Mark.event_marks(self.J)

    def model(self, mark: str) -> IntensityModel:
        return self.models[mark]


class InterventionSpec(BaseModel):
    """Arm assignment (0, 1 or None) and z-intensity scaling; censoring removed."""

    arm: Optional[int] = None
    alpha: float = 1.0

    class Config:
        allow_mutation = False

    @validator("arm")
    def _binary_arm(cls, value):
        if value is not None and value not in (0, 1):
            raise ValueError(f"arm must be 0, 1 or None, got {value}")
        return value

    @validator("alpha")
    def _nonnegative_alpha(cls, value):
        if not value >= 0 or not np.isfinite(value):
            raise ValueError(f"alpha must be a finite nonnegative number, got {value}")
        return value


class SubjectPath(BaseModel):
    """One subject's marked point-process trajectory on [0, tau]."""

    id: int = 0
    l0: float
    a0: Optional[int] = None
    jumps: List[Tuple[float, str]] = Field(default_factory=list)
    tau: float

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def _check_jumps(cls, values):
        tau = values["tau"]
        if not tau > 0:
            raise ValueError("tau must be positive")
        last = 0.0
        seen = set()
        for k, (time, mark) in enumerate(values["jumps"]):
            if not last < time <= tau:
                raise ValueError(f"jump times must be strictly increasing in (0, tau], got {time}")
            if mark in (Mark.ELL, Mark.Z):
                if mark in seen:
                    raise ValueError(f"at most one jump of mark {mark}")
                seen.add(mark)
            elif Mark.is_terminal(mark):
                if k != len(values["jumps"]) - 1:
                    raise ValueError("terminal jump must be last")
            else:
                raise ValueError(f"unknown mark '{mark}'")
            last = time
        return values

    @property
    def terminal_mark(self) -> Optional[str]:
        if self.jumps and Mark.is_terminal(self.jumps[-1][1]):
            return self.jumps[-1][1]
        return None

    @property
    def end_time(self) -> float:
        """Time at which follow-up stops: terminal jump time or tau."""
        return self.jumps[-1][0] if self.terminal_mark else self.tau

    def count(self, mark: str, t: Optional[float] = None) -> int:
        """N^mark(t), right-continuous; t defaults to tau."""
        t = self.tau if t is None else t
        return sum(1 for time, m in self.jumps if m == mark and time <= t)

    def state_before(self, t: float) -> Tuple[int, int]:
        """(N^ell(t-), N^z(t-))."""
        n_ell = sum(1 for time, m in self.jumps if m == Mark.ELL and time < t)
        n_z = sum(1 for time, m in self.jumps if m == Mark.Z and time < t)
        return n_ell, n_z

    def segments(self) -> List[Tuple[float, float, int, int]]:
        """Frozen-state pieces (start, stop, n_ell, n_z) covering [0, end_time]."""
        pieces = []
        start, n_ell, n_z = 0.0, 0, 0
        for time, mark in self.jumps:
            pieces.append((start, time, n_ell, n_z))
            if mark == Mark.ELL:
                n_ell = 1
            elif mark == Mark.Z:
                n_z = 1
            start = time
        if not self.terminal_mark and start < self.tau:
            pieces.append((start, self.tau, n_ell, n_z))
        return pieces


class CurvePoint(BaseModel):
    alpha: float
    psi1: float
    psi_z: float
    mc_se_1: float
    mc_se_z: float
    reps: int


class ContrastResult(BaseModel):
    kind: str
    value: float
    se: float
    components: Dict[str, float] = Field(default_factory=dict)
    component_se: Dict[str, float] = Field(default_factory=dict)


class WeightDiagnostics(BaseModel):
    max_weight: float = 0.0
    mean_max_weight: float = 0.0
    truncation: Optional[float] = None
    n_truncated: int = 0


class EstimateReport(BaseModel):
    x: str
    arm: Optional[int] = None
    alpha: float
    n: int
    psi_hat: float
    se: float
    ci95: Tuple[float, float]
    eic_residual: float
    threshold: float
    iterations: int
    weight_diagnostics: WeightDiagnostics = Field(default_factory=WeightDiagnostics)
    flags: List[str] = Field(default_factory=list)
    eic: List[float] = Field(default_factory=list, description="Per-subject influence values")

    def summary(self) -> Dict[str, Any]:
        return self.dict(exclude={"eic"})


class CalibrationTarget(BaseModel):
    kind: Literal["fixed_theta", "absolute_delta", "relative_rho", "match_other_arm"]
    value: Optional[float] = None
    arm: Optional[int] = None

    @root_validator(skip_on_failure=True)
    def _check_range(cls, values):
        kind, value, arm = values["kind"], values.get("value"), values.get("arm")
        if kind == "fixed_theta" and (value is None or not 0.0 < value < 1.0):
            raise ValueError(f"theta must lie in (0,1), got {value}")
        if kind == "absolute_delta" and (value is None or not -1.0 < value < 1.0):
            raise ValueError(f"delta must lie in (-1,1), got {value}")
        if kind == "relative_rho" and (value is None or not value > 0):
            raise ValueError(f"rho must be positive, got {value}")
        if kind == "match_other_arm" and arm not in (0, 1):
            raise ValueError("match_other_arm needs arm 0 or 1")
        if arm is not None and arm not in (0, 1):
            raise ValueError(f"arm must be 0, 1 or None, got {arm}")
        return values


class SearchStep(BaseModel):
    alpha: float
    psi_z: float
    se: float = 0.0


class SearchTrace(BaseModel):
    alpha_hat: float
    level: float
    steps: List[SearchStep] = Field(default_factory=list)
    tolerance: float
    noise_flags: List[str] = Field(default_factory=list)


class DerivativeEstimate(BaseModel):
    kappa: float
    h: float
    noise_dominated: bool = False


class FeasibilityReport(BaseModel):
    level: float
    limit: float
    margin: float
    feasible: bool
    alpha_large: float
    curve: List[SearchStep] = Field(default_factory=list)
    weight_extremes: Dict[str, float] = Field(default_factory=dict)


class CompositeReport(BaseModel):
    mode: Literal["estimation", "oracle"]
    target: CalibrationTarget
    level: float
    alpha_hat: float
    alpha_se: float
    psi1_hat: float
    psi1_se: float
    ci95: Tuple[float, float]
    kappa_z: float
    kappa_1: float
    limit: float
    margin: float
    decomposition: Dict[str, float] = Field(default_factory=dict)
    decomposition_se: Dict[str, float] = Field(default_factory=dict)
    trace: List[SearchStep] = Field(default_factory=list)
    flags: List[str] = Field(default_factory=list)


class RunConfig(BaseModel):
    """Everything a CLI run needs; echoed into the run manifest."""

    subcommand: Literal["simulate", "truth-curve", "estimate", "calibrate", "decompose", "feasibility", "replay"]
    preset: Optional[str] = None
    scenario_file: Optional[str] = None
    scenario: Optional[ScenarioConfig] = None
    arm: Optional[int] = None
    alpha: float = 1.0
    alphas: List[float] = Field(default_factory=lambda: [1.0])
    x: str = "outcome_1"
    kind: Optional[str] = None
    value: Optional[float] = None
    mode: Literal["estimation", "oracle"] = "estimation"
    oracle: Literal["mc", "exact"] = "mc"
    seed: int = 1
    reps: int = 100_000
    n: int = 500
    cohort: Optional[str] = None
    tau: Optional[float] = None
    grid_size: Optional[int] = None
    truncate: Optional[float] = None
    threads: Optional[int] = None
    intervene: bool = False
    h: Optional[float] = None
    propensity_kind: Literal["logistic", "constant"] = "logistic"
    misspec: Dict[str, Dict[str, Any]] = Field(default_factory=dict)
    manifest: Optional[str] = None
    out: str = "out"

    @validator("x")
    def _known_mark(cls, value):
        return Mark.parse(value)
