import math

import numpy as np
import pytest

from src.estimation import (CohortIntervals, WeightEvaluator, alpha_weight, treatment_censoring_weight,
                            weight_diagnostics, weight_trace)
from src.models import IntensityModel, Mark, Propensity, SubjectPath
from src.simulation import sample_cohort
from src.utils import PositivityError

Z_MODEL = IntensityModel(mark=Mark.Z, eta=0.2)
CENSOR_MODEL = IntensityModel(mark=Mark.CENSOR, eta=0.05)
HALF = Propensity(kind="constant", value=0.5)


@pytest.fixture
def z_path():
    return SubjectPath(id=0, l0=0.3, a0=1, jumps=[(1.0, Mark.Z), (2.5, "outcome_1")], tau=3.0)


def test_alpha_one_weight_is_exactly_one(z_path):
    for t in (0.5, 1.0, 2.0, 2.5):
        assert alpha_weight(Z_MODEL, z_path, t, 1.0) == 1.0


def test_alpha_weight_uses_left_limit_of_z_count(z_path):
    # at the z jump itself N^z(t-) is still zero
    assert alpha_weight(Z_MODEL, z_path, 1.0, 2.0) == pytest.approx(math.exp(-0.2))
    assert alpha_weight(Z_MODEL, z_path, 2.0, 2.0) == pytest.approx(2.0 * math.exp(-0.2))
    assert alpha_weight(Z_MODEL, z_path, 0.5, 0.5) == pytest.approx(math.exp(0.5 * 0.1))


def test_alpha_zero_weight(z_path):
    assert alpha_weight(Z_MODEL, z_path, 2.0, 0.0) == 0.0
    assert alpha_weight(Z_MODEL, z_path, 0.5, 0.0) == pytest.approx(math.exp(0.1))


def test_treatment_censoring_weight(z_path):
    assert treatment_censoring_weight(HALF, CENSOR_MODEL, z_path, 2.0, 1) == pytest.approx(2.0 * math.exp(0.1))
    assert treatment_censoring_weight(HALF, CENSOR_MODEL, z_path, 2.0, 0) == 0.0
    assert treatment_censoring_weight(HALF, CENSOR_MODEL, z_path, 2.0, None) == pytest.approx(math.exp(0.1))


def test_zero_propensity_in_arm_is_a_positivity_error(z_path):
    data = CohortIntervals.from_paths([z_path], 3.0)
    never = Propensity(kind="logistic", intercept=-800.0)
    with pytest.raises(PositivityError):
        WeightEvaluator(data, never, CENSOR_MODEL, Z_MODEL, 1, 1.0)


def test_truncation_caps_weights(example2):
    cohort = sample_cohort(example2, None, 200, seed=6)
    data = CohortIntervals.from_cohort(cohort)
    models = example2.models
    capped = WeightEvaluator(data, example2.propensity, models[Mark.CENSOR], models[Mark.Z], 0, 3.0, truncate=2.5)
    intervals = np.arange(data.start.size)
    assert np.all(capped(intervals, data.stop) <= 2.5)
    diagnostics = capped.diagnostics()
    assert diagnostics.truncation == 2.5
    assert diagnostics.n_truncated > 0
    assert diagnostics.max_weight > 2.5


def test_weight_trace_and_diagnostics_frame(z_path, example2):
    trace = weight_trace(z_path, HALF, CENSOR_MODEL, Z_MODEL, 1, 2.0)
    assert [(p.n_ell, p.n_z) for p in trace.pieces] == [(0, 0), (0, 1)]
    assert trace.max_weight > 0
    cohort = sample_cohort(example2, None, 30, seed=8)
    frame = weight_diagnostics(CohortIntervals.from_cohort(cohort), example2.propensity, example2.models, 1,
                               [0.5, 2.0])
    assert list(frame.columns) == ["id", "max_weight_alpha_0.5", "max_weight_alpha_2"]
    assert len(frame) == 30


@pytest.fixture(scope="module")
def large_uncensored_cohort(uncensored_example1):
    return sample_cohort(uncensored_example1, None, 3000, seed=19)


@pytest.mark.parametrize("fraction", [0.5, 1.0])
@pytest.mark.parametrize("alpha", [0.5, 2.0])
def test_alpha_weight_has_mean_one(uncensored_example1, large_uncensored_cohort, fraction, alpha):
    z_model = uncensored_example1.model(Mark.Z)
    t = uncensored_example1.tau * fraction
    weights = np.array([alpha_weight(z_model, path, t, alpha) for path in large_uncensored_cohort.paths])
    se = weights.std(ddof=1) / math.sqrt(weights.size)
    assert abs(weights.mean() - 1.0) <= 3 * se


@pytest.mark.parametrize("alpha", [0.3, 0.8, 1.5, 3.0])
def test_alpha_weight_direction(alpha):
    no_z = SubjectPath(id=0, l0=0.3, jumps=[], tau=3.0)
    with_z = SubjectPath(id=1, l0=0.3, jumps=[(1.0, Mark.Z)], tau=3.0)
    # both evaluations carry Lambda^z = 0.2; only N^z(t-) differs
    had_z = alpha_weight(Z_MODEL, with_z, 1.5, alpha)
    no_jump = alpha_weight(Z_MODEL, no_z, 1.0, alpha)
    over_time = np.array([alpha_weight(Z_MODEL, no_z, t, alpha) for t in np.linspace(0.25, 3.0, 12)])
    if alpha < 1:
        assert had_z < no_jump
        assert np.all(np.diff(over_time) > 0)
    else:
        assert had_z > no_jump
        assert np.all(np.diff(over_time) < 0)
