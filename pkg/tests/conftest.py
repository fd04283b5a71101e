import math

import pytest

from src.models import ScenarioConfig, build_scenario, preset_scenario
from src.simulation import sample_cohort

# Constant hazards with no covariate effects: Psi_z and Psi_1 are available in closed form
RATE_OUTCOME = 0.3
RATE_ELL = 0.1
RATE_Z = 0.2
TAU = 3.0


def closed_form_psi_z(alpha: float, r1: float = RATE_OUTCOME, rz: float = RATE_Z, tau: float = TAU) -> float:
    total = alpha * rz + r1
    return alpha * rz / total * (1.0 - math.exp(-total * tau))


def closed_form_kappa_z(alpha: float, r1: float = RATE_OUTCOME, rz: float = RATE_Z, tau: float = TAU) -> float:
    total = alpha * rz + r1
    decay = math.exp(-total * tau)
    return rz * r1 / total ** 2 * (1.0 - decay) + alpha * rz / total * rz * tau * decay


def closed_form_psi_1(r1: float = RATE_OUTCOME, tau: float = TAU) -> float:
    return 1.0 - math.exp(-r1 * tau)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte Carlo experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def exponential_scenario():
    return build_scenario(ScenarioConfig(tau=TAU, models={
        "outcome_1": {"eta": RATE_OUTCOME},
        "ell": {"eta": RATE_ELL},
        "z": {"eta": RATE_Z},
        "censor": {"eta": 0.05},
    }))


@pytest.fixture(scope="session")
def example1():
    return preset_scenario("example1")


@pytest.fixture(scope="session")
def example2():
    return preset_scenario("example2")


@pytest.fixture(scope="session")
def example3():
    return preset_scenario("example3")


@pytest.fixture(scope="session")
def uncensored_example1():
    return preset_scenario("example1", censor_eta=0.0)


@pytest.fixture(scope="session")
def uncensored_cohort(uncensored_example1):
    return sample_cohort(uncensored_example1, None, 300, seed=3)


@pytest.fixture(scope="session")
def example2_cohort(example2):
    return sample_cohort(example2, None, 300, seed=11)
