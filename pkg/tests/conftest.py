import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_scenario():
    from ddmpc.scenario import ScenarioConfig

    return ScenarioConfig()


@pytest.fixture(scope="session")
def default_data(default_scenario):
    from ddmpc.scenario import collect_dictionary_data

    return collect_dictionary_data(default_scenario)


@pytest.fixture(scope="session")
def default_comparison(default_scenario, default_data):
    from ddmpc.scenario import compare_controllers

    return compare_controllers(default_scenario, data=default_data)
