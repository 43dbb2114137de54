import numpy as np
import pytest

from regimeshift.dynamics import DEFAULT_X0, BENCHMARK_SCHEDULES, get_system
from regimeshift.simulate import integrate, sample_observations

STEP = {"lorenz": 0.001}


def benchmark_trajectory(name, dt=None):
    return integrate(get_system(name), BENCHMARK_SCHEDULES[name], DEFAULT_X0[name],
                     dt or STEP.get(name, 0.01))


@pytest.fixture(scope="session")
def trajectories():
    return {name: benchmark_trajectory(name) for name in BENCHMARK_SCHEDULES}


@pytest.fixture(scope="session")
def malthus_data(trajectories):
    return sample_observations(trajectories["malthus"], 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------- acceptance summary

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, text: str) -> None:
    _ACCEPTANCE[number] = (passed, text)
    print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {text}")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        passed, text = _ACCEPTANCE[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if passed else 'FAIL'} - {text}")
