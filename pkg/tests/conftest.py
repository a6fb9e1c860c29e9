import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dynvox.geometry import Pose, rotations_from_quaternions

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_rotation(rng) -> np.ndarray:
    return rotations_from_quaternions(rng.normal(size=(1, 4)))[0]


def random_pose(rng, scale: float = 10.0) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-scale, scale, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
